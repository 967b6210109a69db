import math

import numpy as np
import pytest

from mmwqsdp import core, gibbs, instances, mmw, oracle
from mmwqsdp.errors import ContractViolation, ResourceError, UsageError

Z = np.diag([1.0, -1.0])


def test_exact_examples():
    inst = mmw.SdpInstance([Z], [0.5], 0.1)
    assert oracle.exact_violation_search(inst, np.eye(2) / 2).feasible
    rep = oracle.exact_violation_search(inst, core.basis_state(2, 0))
    assert rep.index == 0 and rep.outcome == "Violation(0)"


def test_exact_smallest_index():
    mats = [Z if j in (1, 4) else np.zeros((2, 2)) for j in range(6)]
    inst = mmw.SdpInstance(mats, np.zeros(6), 0.1)
    assert oracle.exact_violation_search(inst, core.basis_state(2, 0)).index == 1


def test_exact_matches_brute_force():
    rng = core.Rng(9)
    for k in range(20):
        inst, rho = instances.promise_instance(4, 6, k, 0.2, violated=set(rng.integers(0, 6, size=2)))
        viol = [np.trace(a.data @ rho.data).real - b for a, b in zip(inst.constraints, inst.bounds)]
        rep = oracle.exact_violation_search(inst, rho)
        assert rep.feasible == (max(viol) <= inst.epsilon)


def test_swap_test_examples():
    rng = core.Rng(0)
    zero, one = core.basis_state(2, 0), core.basis_state(2, 1)
    assert oracle.swap_test_sample(zero, zero, 1000, rng) == 1.0
    for sigma, rho, p in [(zero, one, 0.5), (np.eye(2) / 2, np.eye(2) / 2, 0.75)]:
        shots = 20000
        f = oracle.swap_test_sample(sigma, rho, shots, rng)
        assert abs(f - p) <= 3 * math.sqrt(p * (1 - p) / shots)
    with pytest.raises(UsageError):
        oracle.swap_test_sample(zero, zero, 0, rng)


def test_swap_frequency_concentration():
    rho = core.random_density(3, core.Rng(1))
    sigma = core.random_density(3, core.Rng(2))
    p = 0.5 + 0.5 * core.trace_inner(sigma, rho)
    shots = 500
    hits = sum(abs(oracle.swap_test_sample(sigma, rho, shots, core.Rng(s)) - p) <= 3 * math.sqrt(p * (1 - p) / shots)
               for s in range(300))
    assert hits / 300 >= 0.99


def test_tables_reconstruct_and_bound():
    inst = instances.to_sdp(instances.planted_feasible(5, 4, seed=2))
    t = oracle.QuantumInputTables.from_instance(inst)
    rec = t.tr_plus[:, None, None] * t.plus - t.tr_minus[:, None, None] * t.minus
    assert np.allclose(rec, inst.stack, atol=1e-10)
    assert np.all(t.tr_plus + t.tr_minus <= t.bound_B + 1e-12)
    with pytest.raises(ContractViolation):
        oracle.QuantumInputTables(t.plus, t.minus, t.tr_plus, t.tr_minus, t.bounds, t.epsilon,
                                  constraints=inst.stack[::-1])


def test_threshold_degenerate_zero():
    inst = mmw.SdpInstance([np.zeros((2, 2))], [-0.2], 0.1)
    t = oracle.QuantumInputTables.from_instance(inst)
    assert oracle.swap_estimate(t, 0, np.eye(2) / 2, 10, core.Rng(0)) == 0.0
    assert oracle.trace_threshold_test(t, 0, np.eye(2) / 2, 10, core.Rng(0))
    inst = mmw.SdpInstance([np.zeros((2, 2))], [0.0], 0.1)
    t = oracle.QuantumInputTables.from_instance(inst)
    assert not oracle.trace_threshold_test(t, 0, np.eye(2) / 2, 10, core.Rng(0))


def _two_sided_tables(offset, eps=0.2, B=2.0):
    rho = core.random_density(4, core.Rng(7))
    a = np.diag([1.0, 1.0, -1.0, -1.0]) * (B / 4)
    t = float(np.trace(a @ rho.data).real)
    inst = mmw.SdpInstance([a], [t - offset], eps)
    return oracle.QuantumInputTables.from_instance(inst), rho


def test_threshold_calibration():
    eps, B, m = 0.2, 2.0, 8
    shots = oracle.default_shots(eps, m, B)
    assert shots == math.ceil(128 * B**2 * math.log(m) / eps**2)
    tab, rho = _two_sided_tables(eps)
    hits = sum(oracle.trace_threshold_test(tab, 0, rho, shots, core.Rng(s)) for s in range(200))
    assert hits >= 198
    tab, rho = _two_sided_tables(0.0)
    misses = sum(not oracle.trace_threshold_test(tab, 0, rho, shots, core.Rng(s)) for s in range(200))
    assert misses >= 198


def test_estimator_unbiased():
    tab, rho = _two_sided_tables(0.0)
    op, om = tab.overlaps(rho)
    pp, pm = 0.5 + 0.5 * op[0], 0.5 + 0.5 * om[0]
    shots = 10000
    var = 4 * (tab.tr_plus[0] ** 2 * pp * (1 - pp) + tab.tr_minus[0] ** 2 * pm * (1 - pm))
    se = math.sqrt(var / shots)
    est = oracle.swap_estimate(tab, 0, rho, shots, core.Rng(3))
    assert abs(est - tab.exact_traces(rho)[0]) <= 4 * se


def test_boost_count():
    assert oracle.boost_count(1e-6, 1e-3) == 1
    L = oracle.boost_count(0.25, 0.01)
    assert L % 2 == 1 and math.exp(-2 * L * 0.25**2) <= 0.01
    assert oracle.boost_count(0.6, 0.01) == oracle.MAX_BOOST


def test_copy_supplier_budget():
    sup = oracle.CopySupplier(np.eye(2) / 2, budget=10)
    sup(6)
    assert sup.remaining == 4
    with pytest.raises(ResourceError, match="budget of 10"):
        sup(5)


def test_sampled_search_exhausts_budget():
    inst, rho = instances.promise_instance(3, 4, 0, 0.2)
    with pytest.raises(ResourceError):
        oracle.sampled_violation_search(inst, oracle.CopySupplier(rho, 100), 1000, 0.05, core.Rng(0))


@pytest.mark.parametrize("quantum", [False, True])
def test_sampled_single_constraint(quantum):
    inst, rho = instances.promise_instance(3, 1, 4, 0.2, violated={0})
    src = oracle.QuantumInputTables.from_instance(inst) if quantum else inst
    shots = oracle.default_shots(0.2, 1, 2.0 if quantum else 1.0)
    rep = oracle.sampled_violation_search(src, oracle.CopySupplier(rho), shots, 0.05, core.Rng(0))
    assert rep.index == 0 and rep.samples_used > 0 and rep.queries_used >= 1


@pytest.mark.parametrize("quantum", [False, True])
def test_sampled_calibration(quantum):
    eps, m = 0.2, 8
    found = feasible = 0
    for s in range(200):
        inst, rho = instances.promise_instance(4, m, s, eps, violated={4})
        orc = oracle.QuantumSampledOracle(inst) if quantum else oracle.PlainSampledOracle(inst)
        found += orc.search(rho, core.Rng(s)).index == 4
        inst, rho = instances.promise_instance(4, m, 1000 + s, eps)
        orc = oracle.QuantumSampledOracle(inst) if quantum else oracle.PlainSampledOracle(inst)
        feasible += orc.search(rho, core.Rng(s)).feasible
    assert found >= 190 and feasible >= 190


def test_counters_monotone():
    inst, rho = instances.promise_instance(4, 5, 3, 0.2, violated={2})
    orc = oracle.QuantumSampledOracle(inst)
    seen = []
    for s in range(5):
        orc.search(rho, core.Rng(s))
        seen.append(dict(orc.counters))
    for a, b in zip(seen, seen[1:]):
        assert all(b[k] >= a[k] for k in a)


def test_promise_flag():
    rho = core.maximally_mixed(2)
    inst = mmw.SdpInstance([Z], [-0.05], 0.2)
    rep = oracle.sampled_violation_search(inst, oracle.CopySupplier(rho), 100, 0.05, core.Rng(0))
    assert rep.promise_violating


def test_swap_violation_probability_matches_simulation():
    tab, rho = _two_sided_tables(0.1, eps=0.2)
    shots = 200
    p = oracle.swap_violation_probability(tab, 0, rho, shots)
    rng = core.Rng(4)
    freq = np.mean([oracle.trace_threshold_test(tab, 0, rho, shots, rng) for _ in range(4000)])
    assert abs(freq - p) <= 4 * math.sqrt(p * (1 - p) / 4000) + 1e-3


def test_or_sim_backend():
    inst, rho = instances.promise_instance(3, 4, 2, 0.25, violated={2})
    orc = oracle.make_oracle("or-sim", inst)
    assert orc.search(rho, core.Rng(0)).index == 2
    inst, rho = instances.promise_instance(3, 4, 5, 0.25)
    orc = oracle.make_oracle("or-sim", inst)
    rep = orc.search(rho, core.Rng(0))
    assert rep.feasible and orc.counters["or_tests"] > 0


def test_make_oracle_unknown():
    inst = mmw.SdpInstance([Z], [0.0], 0.1)
    with pytest.raises(UsageError):
        oracle.make_oracle("nope", inst)


def _spec_two_terms():
    s0, s1 = core.basis_state(3, 0), core.basis_state(3, 1)
    return gibbs.GibbsSpec(3, [(1.0, s0, 1.0), (3.0, s1, 3.0)], [])


def test_linear_combo_single_and_frequencies():
    s0 = core.basis_state(2, 0)
    spec = gibbs.GibbsSpec(2, [(2.0, s0, 2.0)], [])
    assert oracle.linear_combo_sampler(spec, "+", core.Rng(0)) is spec.plus_terms[0][1]
    spec = _spec_two_terms()
    rng = core.Rng(1)
    draws = [oracle.linear_combo_sampler(spec, "+", rng) is spec.plus_terms[1][1] for _ in range(10000)]
    assert abs(np.mean(draws) - 0.75) <= 0.02
    with pytest.raises(UsageError):
        oracle.linear_combo_sampler(spec, "-", rng)


def test_linear_combo_mean():
    rng = core.Rng(2)
    doc = instances.low_rank_gibbs(8, seed=3, rank_plus=3, rank_minus=1)
    spec = instances.to_gibbs_spec(doc)
    kp, _ = spec.k_parts()
    target = kp / np.trace(kp).real
    acc = np.zeros((8, 8), dtype=complex)
    for _ in range(20000):
        acc += oracle.linear_combo_sampler(spec, "+", rng).data
    assert np.linalg.norm(acc / 20000 - target) <= 0.02
