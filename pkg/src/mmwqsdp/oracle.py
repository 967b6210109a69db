"""Violation oracles: given a candidate state, return a violated constraint or FEASIBLE.

Four backends share one interface (``search(rho, rng) -> OracleReport``):

* ``exact``: direct traces, smallest violated index.
* ``plain-sampled``: each constraint is measured as an observable on fresh
  copies of rho and the empirical mean is thresholded at ``a_j + eps/2``.
* ``quantum-sampled``: each constraint is split as ``A = tr+ sigma+ - tr- sigma-``
  and ``Tr[sigma rho]`` is estimated by SWAP tests.
* ``or-sim``: the per-index SWAP tests are wrapped as projectors and every
  range query is answered by the simulated fast OR test (small m only).

Sampled backends decide whether a range of indices contains a violation and
binary-search down to one index, probing the left half first.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import core
from .errors import ContractViolation, ResourceError, UsageError

SHOT_CONSTANT = 128
MAX_BOOST = 101
RECONSTRUCT_TOL = 1e-8


@dataclass
class OracleReport:
    """Result of one violation search.

    ``index`` is the (0-based) violated constraint or None for FEASIBLE.
    """

    index: int = None
    samples_used: int = 0
    queries_used: int = 0
    backend: str = "exact"
    claimed_max_violation: float = None
    promise_violating: bool = False

    @property
    def feasible(self):
        return self.index is None

    @property
    def outcome(self):
        return "Feasible" if self.index is None else f"Violation({self.index})"


class CopySupplier:
    """Hands out copies of a fixed state and counts them against a budget."""

    def __init__(self, state, budget=None):
        self.state = state if isinstance(state, core.DensityMatrix) else core.DensityMatrix(state)
        self.budget = None if budget is None else int(budget)
        self.used = 0

    @property
    def remaining(self):
        return None if self.budget is None else self.budget - self.used

    def __call__(self, count=1):
        count = int(count)
        if self.budget is not None and self.used + count > self.budget:
            raise ResourceError(
                f"copy budget of {self.budget} exhausted ({self.used} used, {count} more requested)")
        self.used += count
        return self.state


def _as_supplier(rho_supplier):
    if isinstance(rho_supplier, CopySupplier) or callable(rho_supplier):
        return rho_supplier
    return CopySupplier(rho_supplier)


# -- exact backend --------------------------------------------------------------

def exact_violation_search(inst, rho):
    """Smallest j with ``Tr[A_j rho] > a_j + eps``, else FEASIBLE."""
    viol = inst.violations(rho)
    hits = np.flatnonzero(viol > inst.epsilon)
    idx = int(hits[0]) if hits.size else None
    return OracleReport(index=idx, queries_used=inst.m, backend="exact",
                        claimed_max_violation=float(viol.max()))


# -- quantum input model --------------------------------------------------------

def _split(a):
    vals, vecs = np.linalg.eigh(core.as_array(a))
    pos = np.clip(vals, 0.0, None)
    neg = np.clip(-vals, 0.0, None)
    tp, tm = float(pos.sum()), float(neg.sum())
    n = len(vals)
    sp = (vecs * pos) @ vecs.conj().T / tp if tp > 0 else np.eye(n) / n
    sm = (vecs * neg) @ vecs.conj().T / tm if tm > 0 else np.eye(n) / n
    return sp, sm, tp, tm


class QuantumInputTables:
    """Normalized positive/negative parts of every constraint plus their traces.

    ``A_j = tr_plus[j] * plus_states[j] - tr_minus[j] * minus_states[j]``.
    When a part has zero trace its state is a placeholder (I/n) that is
    never used.
    """

    def __init__(self, plus_states, minus_states, tr_plus, tr_minus, bounds, epsilon,
                 bound_B=None, constraints=None):
        self.plus = np.stack([core.as_array(s) for s in plus_states])
        self.minus = np.stack([core.as_array(s) for s in minus_states])
        self.tr_plus = np.asarray(tr_plus, dtype=float)
        self.tr_minus = np.asarray(tr_minus, dtype=float)
        self.bounds = np.asarray(bounds, dtype=float)
        self.epsilon = float(epsilon)
        m = len(self.bounds)
        if not (self.plus.shape[0] == self.minus.shape[0] == len(self.tr_plus) == len(self.tr_minus) == m):
            raise UsageError("table columns have inconsistent lengths")
        if np.any(self.tr_plus < 0) or np.any(self.tr_minus < 0):
            raise ContractViolation("trace entries must be nonnegative")
        totals = self.tr_plus + self.tr_minus
        self.bound_B = float(totals.max()) if bound_B is None else float(bound_B)
        if np.any(totals > self.bound_B + 1e-9):
            raise ContractViolation(f"tr_plus + tr_minus exceeds B = {self.bound_B}")
        self.constraints = None
        if constraints is not None:
            stack = np.stack([core.as_array(c) for c in constraints])
            rec = self.tr_plus[:, None, None] * self.plus - self.tr_minus[:, None, None] * self.minus
            err = np.sqrt(np.sum(np.abs(rec - stack) ** 2, axis=(1, 2)))
            if np.any(err > RECONSTRUCT_TOL):
                j = int(np.argmax(err))
                raise ContractViolation(f"tables do not reconstruct constraint {j} (Frobenius error {err[j]:.3g})")
            self.constraints = stack

    @classmethod
    def from_instance(cls, inst):
        parts = [_split(a) for a in inst.constraints]
        sp, sm, tp, tm = zip(*parts)
        B = inst.meta.get("B")
        totals = np.array(tp) + np.array(tm)
        if B is None or B < totals.max() - 1e-9:
            B = float(totals.max())
        return cls(sp, sm, tp, tm, inst.bounds, inst.epsilon, B, constraints=inst.stack)

    @property
    def m(self):
        return len(self.bounds)

    @property
    def dim(self):
        return self.plus.shape[1]

    def overlaps(self, rho):
        """(Tr[sigma+_j rho], Tr[sigma-_j rho]) for every j."""
        r = core.as_array(rho)
        op = np.einsum("jik,ki->j", self.plus, r).real
        om = np.einsum("jik,ki->j", self.minus, r).real
        return np.clip(op, 0.0, 1.0), np.clip(om, 0.0, 1.0)

    def exact_traces(self, rho):
        op, om = self.overlaps(rho)
        return self.tr_plus * op - self.tr_minus * om


def swap_test_sample(sigma, rho, shots, rng):
    """Empirical frequency of outcome 1 in ``shots`` SWAP tests of sigma against rho."""
    if shots < 1:
        raise UsageError("shots must be >= 1")
    p = 0.5 + 0.5 * core.trace_inner(sigma, rho)
    p = min(1.0, max(0.5, p))
    return rng.binomial(int(shots), p) / shots


def swap_estimate(tables, j, rho, shots, rng):
    """``(2 p+ - 1) tr+ - (2 p- - 1) tr-`` from two batches of SWAP tests."""
    val = 0.0
    if tables.tr_plus[j] > 0:
        val += (2 * swap_test_sample(tables.plus[j], rho, shots, rng) - 1) * tables.tr_plus[j]
    if tables.tr_minus[j] > 0:
        val -= (2 * swap_test_sample(tables.minus[j], rho, shots, rng) - 1) * tables.tr_minus[j]
    return float(val)


def trace_threshold_test(tables, j, rho, shots, rng):
    """True when the SWAP-test estimate of ``Tr[A_j rho]`` exceeds ``a_j + eps/2``."""
    return swap_estimate(tables, j, rho, shots, rng) > tables.bounds[j] + tables.epsilon / 2


def default_shots(eps, m, B=1.0):
    """``ceil(128 B^2 ln max(m, 2) / eps^2)``."""
    return math.ceil(SHOT_CONSTANT * B**2 * math.log(max(m, 2)) / eps**2)


def boost_count(p_single, target, cap=MAX_BOOST):
    """Smallest odd number of majority-voted repetitions reaching ``target``.

    Uses the Hoeffding bound ``exp(-2 L (1/2 - p)^2)`` on the majority vote.
    Returns ``cap`` when the single-test error is not below 1/2.
    """
    if p_single <= target:
        return 1
    if p_single >= 0.5:
        return cap
    L = math.ceil(math.log(1.0 / target) / (2.0 * (0.5 - p_single) ** 2))
    L += 1 - L % 2
    return int(min(max(L, 1), cap))


def index_fail_target(delta_fail, m):
    return delta_fail / (m * max(1.0, math.log2(m)))


# -- per-index testers ------------------------------------------------------------

class _SwapTester:
    def __init__(self, tables):
        self.tables = tables
        self.m = tables.m
        self.copies_per_shot = 2

    def single_error(self, shots):
        eps, B = self.tables.epsilon, self.tables.bound_B
        if B <= 0:
            return 0.0
        return min(1.0, 4.0 * math.exp(-2.0 * shots * (eps / (8.0 * B)) ** 2))

    def estimate(self, j, rho, shots, rng):
        return swap_estimate(self.tables, j, rho, shots, rng)

    def exact(self, rho):
        return self.tables.exact_traces(rho) if self.tables.constraints is not None else None


class _PlainTester:
    def __init__(self, inst):
        self.inst = inst
        self.m = inst.m
        self.copies_per_shot = 1
        self._spectra = [core.eigh(a) for a in inst.constraints]
        self.tables = inst

    def single_error(self, shots):
        # outcomes lie in [-1, 1]; one-sided Hoeffding at distance eps/2
        return min(1.0, math.exp(-shots * self.inst.epsilon**2 / 8.0))

    def estimate(self, j, rho, shots, rng):
        spec = self._spectra[j]
        v = spec.eigenvectors
        p = np.einsum("ik,ij,jk->k", v.conj(), core.as_array(rho), v).real
        p = np.clip(p, 0.0, None)
        p /= p.sum()
        counts = rng.multinomial(int(shots), p)
        return float(counts @ spec.eigenvalues / shots)

    def exact(self, rho):
        return self.inst.traces(rho)


def _make_tester(source):
    if isinstance(source, QuantumInputTables):
        return _SwapTester(source)
    if hasattr(source, "constraints") and hasattr(source, "stack"):
        return _PlainTester(source)
    raise UsageError("sampled search needs an SdpInstance or QuantumInputTables")


def _promise_flag(exact, bounds, eps):
    if exact is None:
        return False
    slack = exact - bounds
    return bool(np.any((slack > 0) & (slack < eps)))


def sampled_violation_search(source, rho_supplier, shots_per_test, delta_fail, rng, boost=None,
                             counters=None, _tester=None):
    """Statistical violation search by range tests and binary search.

    Parameters
    ----------
    source : SdpInstance or QuantumInputTables
        Exact matrices select the plain model; tables select SWAP tests.
    rho_supplier : callable
        ``rho_supplier(k)`` returns the state and accounts for ``k`` copies.
    shots_per_test : int
        Shots per estimate (per part for SWAP tests).
    delta_fail : float
        Overall failure budget; each index test is boosted by majority
        vote to ``delta_fail / (m log2 m)``.
    boost : int, optional
        Override the number of majority-vote repetitions.

    Returns
    -------
    OracleReport
    """
    tester = _tester or _make_tester(source)
    tables = tester.tables
    m = tester.m
    supplier = _as_supplier(rho_supplier)
    if shots_per_test < 1 or not 0.0 < delta_fail < 1.0:
        raise UsageError("shots_per_test must be >= 1 and delta_fail in (0, 1)")
    L = boost if boost is not None else boost_count(tester.single_error(shots_per_test),
                                                    index_fail_target(delta_fail, m))
    copies_per_test = tester.copies_per_shot * shots_per_test
    thresholds = tables.bounds + tables.epsilon / 2
    results = {}
    estimates = {}
    used = {"samples": 0, "queries": 0}
    rho = None

    def index_test(j):
        nonlocal rho
        if j in results:
            return results[j]
        votes = 0
        vals = []
        for _ in range(L):
            rho = supplier(copies_per_test)
            est = tester.estimate(j, rho, shots_per_test, rng)
            vals.append(est)
            votes += est > thresholds[j]
        used["samples"] += L * copies_per_test
        used["queries"] += L
        results[j] = 2 * votes > L
        estimates[j] = float(np.median(vals))
        return results[j]

    def range_test(lo, hi):
        return any(index_test(j) for j in range(lo, hi))

    idx = None
    if range_test(0, m):
        lo, hi = 0, m
        while hi - lo > 1:
            mid = lo + (hi - lo) // 2
            if range_test(lo, mid):
                hi = mid
            else:
                lo = mid
        idx = lo
    claimed = None
    if idx is None and estimates:
        claimed = float(max(estimates[j] - tables.bounds[j] for j in estimates))
    exact = tester.exact(rho) if rho is not None else None
    if counters is not None:
        counters["samples"] = counters.get("samples", 0) + used["samples"]
        counters["queries"] = counters.get("queries", 0) + used["queries"]
    backend = "quantum-sampled" if isinstance(tester, _SwapTester) else "plain-sampled"
    return OracleReport(index=idx, samples_used=used["samples"], queries_used=used["queries"],
                        backend=backend, claimed_max_violation=claimed,
                        promise_violating=_promise_flag(exact, tables.bounds, tables.epsilon))


# -- linear combinations ------------------------------------------------------------

def linear_combo_sampler(spec, sign, rng):
    """Draw the normalized part ``A_j^sign / tr A_j^sign`` with probability ~ c_j tr A_j^sign.

    ``spec`` is any object with ``plus_terms`` / ``minus_terms`` lists of
    ``(c, state, trace_weight)``; the draw weight is ``trace_weight``.
    """
    terms = _terms(spec, sign)
    w = np.array([t[2] for t in terms], dtype=float)
    if w.size == 0 or w.sum() <= 0:
        raise UsageError(f"empty mixture on sign {sign!r}")
    k = rng.choice(len(w), p=w / w.sum())
    return terms[k][1]


def _terms(spec, sign):
    if sign in ("+", 1, "plus"):
        return list(spec.plus_terms)
    if sign in ("-", -1, "minus"):
        return list(spec.minus_terms)
    raise UsageError(f"sign must be '+' or '-', got {sign!r}")


# -- backends ---------------------------------------------------------------------

class ExactOracle:
    backend = "exact"
    tolerance = 0.0

    def __init__(self, inst):
        self.inst = inst
        self.dim = inst.dim
        self.counters = {"calls": 0, "queries": 0, "samples": 0}

    def search(self, rho, rng=None):
        rep = exact_violation_search(self.inst, rho)
        self.counters["calls"] += 1
        self.counters["queries"] += rep.queries_used
        return rep


class _SampledOracle:
    tolerance = 0.0

    def __init__(self, inst, shots=None, delta_fail=0.05, boost=None, copy_budget=None):
        self.inst = inst
        self.dim = inst.dim
        self.delta_fail = float(delta_fail)
        self.boost = boost
        self.copy_budget = copy_budget
        self.counters = {"calls": 0, "queries": 0, "samples": 0, "promise_violations": 0}
        self._tester = self._build_tester(inst)
        self.shots = int(shots) if shots else self._default_shots()

    def search(self, rho, rng):
        supplier = CopySupplier(rho, self.copy_budget)
        self.counters["calls"] += 1
        rep = sampled_violation_search(self._tester.tables, supplier, self.shots, self.delta_fail, rng,
                                       boost=self.boost, counters=self.counters, _tester=self._tester)
        if rep.promise_violating:
            self.counters["promise_violations"] += 1
        return rep


class PlainSampledOracle(_SampledOracle):
    backend = "plain-sampled"

    def _build_tester(self, inst):
        return _PlainTester(inst)

    def _default_shots(self):
        return default_shots(self.inst.epsilon, self.inst.m, 1.0)


class QuantumSampledOracle(_SampledOracle):
    backend = "quantum-sampled"

    def _build_tester(self, inst):
        self.tables = inst if isinstance(inst, QuantumInputTables) else QuantumInputTables.from_instance(inst)
        return _SwapTester(self.tables)

    def _default_shots(self):
        return default_shots(self.tables.epsilon, self.tables.m, self.tables.bound_B)


def swap_violation_probability(tables, j, rho, shots):
    """Exact probability that :func:`trace_threshold_test` reports a violation."""
    thr = tables.bounds[j] + tables.epsilon / 2
    op, om = tables.overlaps(rho)
    tp, tm = tables.tr_plus[j], tables.tr_minus[j]
    pp = min(1.0, max(0.5, 0.5 + 0.5 * op[j]))
    pm = min(1.0, max(0.5, 0.5 + 0.5 * om[j]))
    if tp <= 0 and tm <= 0:
        return 1.0 if 0.0 > thr else 0.0
    if tm <= 0:
        # (2X/s - 1) tp > thr  <=>  X > s (thr/tp + 1) / 2
        c = shots * (thr / tp + 1) / 2
        return float(stats.binom.sf(math.floor(c), shots, pp))
    if tp <= 0:
        # -(2Y/s - 1) tm > thr  <=>  Y < s (1 - thr/tm) / 2
        c = shots * (1 - thr / tm) / 2
        return float(stats.binom.cdf(math.ceil(c) - 1, shots, pm))
    xs = np.arange(shots + 1)
    px = stats.binom.pmf(xs, shots, pp)
    keep = px > 1e-300
    xs, px = xs[keep], px[keep]
    c = shots / 2 * (((2 * xs / shots - 1) * tp - thr) / tm + 1)
    py = stats.binom.cdf(np.ceil(c) - 1, shots, pm)
    return float(np.clip(px @ py, 0.0, 1.0))


def majority_probability(p, L):
    """Probability that a majority of L independent tests with success p succeed."""
    return float(stats.binom.sf(L // 2, L, p))


class OrSimOracle:
    """Range queries answered by the simulated fast OR test.

    Each index's boosted SWAP test is embedded as the projector onto
    ``sqrt(p_j)|0> + sqrt(1 - p_j)|j>`` acting on ``|0>``, so the projector
    accepts with exactly the test's violation probability ``p_j``.  A range
    is declared violated when the OR test's acceptance count over
    ``or_repeats`` runs reaches the midpoint of its two case bounds.
    """

    backend = "or-sim"
    tolerance = 0.0

    def __init__(self, inst, shots=None, delta_fail=0.05, boost=None, or_eps=0.1, or_xi=0.03,
                 cap=None):
        from . import orsim

        self._orsim = orsim
        self.tables = inst if isinstance(inst, QuantumInputTables) else QuantumInputTables.from_instance(inst)
        self.dim = self.tables.dim
        self.delta_fail = float(delta_fail)
        self.shots = int(shots) if shots else default_shots(self.tables.epsilon, self.tables.m, self.tables.bound_B)
        self.or_eps = or_eps
        self.or_xi = or_xi
        self.cap = cap or orsim.DEFAULT_CAP
        m = self.tables.m
        self.phi = 1.0 / (30.0 * m)
        p0 = _SwapTester(self.tables).single_error(self.shots)
        target = min(index_fail_target(delta_fail, m), self.phi / 2)
        self.boost = boost if boost is not None else boost_count(p0, target, cap=1001)
        self.counters = {"calls": 0, "queries": 0, "samples": 0, "or_tests": 0}

    def _range_instance(self, p):
        k = len(p)
        d = k + 1
        projs = []
        for j, pj in enumerate(p, start=1):
            u = np.zeros(d)
            u[0] = math.sqrt(pj)
            u[j] = math.sqrt(max(0.0, 1.0 - pj))
            projs.append(np.outer(u, u))
        phi = min(self.phi, ((1 - self.or_eps) ** 2 / 4 - 2 * self.or_xi) / (3 * k) * 0.999)
        return self._orsim.OrInstance(tuple(projs), core.basis_state(d, 0), self.or_eps, phi, self.or_xi)

    def range_test(self, p, rng):
        inst = self._range_instance(p)
        sim = self._orsim.OrSimulator(inst, self.cap)
        margin = (inst.case1_bound - inst.case2_bound) / 2
        target = index_fail_target(self.delta_fail, self.tables.m)
        reps = math.ceil(math.log(2.0 / target) / (2 * margin**2))
        accepts = sim.test_batch(reps, rng)
        self.counters["or_tests"] += reps
        self.counters["samples"] += reps * self.boost * 2 * self.shots
        self.counters["queries"] += reps
        return accepts >= reps * 0.5 * (inst.case1_bound + inst.case2_bound)

    def search(self, rho, rng):
        self.counters["calls"] += 1
        m = self.tables.m
        p = np.array([majority_probability(swap_violation_probability(self.tables, j, rho, self.shots), self.boost)
                      for j in range(m)])
        before = dict(self.counters)
        idx = None
        if self.range_test(p, rng):
            lo, hi = 0, m
            while hi - lo > 1:
                mid = lo + (hi - lo) // 2
                if self.range_test(p[lo:mid], rng):
                    hi = mid
                else:
                    lo = mid
            idx = lo
        exact = self.tables.exact_traces(rho) if self.tables.constraints is not None else None
        return OracleReport(index=idx, samples_used=self.counters["samples"] - before["samples"],
                            queries_used=self.counters["queries"] - before["queries"], backend=self.backend,
                            promise_violating=_promise_flag(exact, self.tables.bounds, self.tables.epsilon))


BACKENDS = {
    "exact": ExactOracle,
    "plain-sampled": PlainSampledOracle,
    "quantum-sampled": QuantumSampledOracle,
    "or-sim": OrSimOracle,
}


def make_oracle(name, inst, **kwargs):
    """Construct a backend by name; unused keyword arguments are ignored by ``exact``."""
    try:
        cls = BACKENDS[name]
    except KeyError:
        raise UsageError(f"unknown backend {name!r}; choose from {sorted(BACKENDS)}") from None
    if cls is ExactOracle:
        return cls(inst)
    kwargs = {k: v for k, v in kwargs.items() if v is not None}
    return cls(inst, **kwargs)
