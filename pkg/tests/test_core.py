import math

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from mmwqsdp import core
from mmwqsdp.errors import ContractViolation, UsageError

LN2 = math.log(2.0)


def test_hermitian_rejects_asymmetric():
    with pytest.raises(ContractViolation):
        core.HermitianMatrix([[0, 1], [0, 0]])


def test_hermitian_is_read_only():
    h = core.HermitianMatrix(np.eye(2))
    with pytest.raises(ValueError):
        h.data[0, 0] = 5


def test_density_rejects_bad_trace_and_negative():
    with pytest.raises(ContractViolation):
        core.DensityMatrix(np.eye(2))
    with pytest.raises(ContractViolation):
        core.DensityMatrix(np.diag([1.5, -0.5]))


def test_density_clamps_tiny_negative():
    rho = core.DensityMatrix(np.diag([1.0 + 5e-10, -5e-10]))
    assert np.all(np.linalg.eigvalsh(rho.data) >= 0)
    assert np.trace(rho.data).real == pytest.approx(1.0, abs=1e-15)


@pytest.mark.parametrize("mat, expected", [
    (np.diag([3.0, 1.0]), [1.0, 3.0]),
    ([[0, 1], [1, 0]], [-1.0, 1.0]),
    (np.zeros((4, 4)), [0.0] * 4),
])
def test_eigh_examples(mat, expected):
    assert np.allclose(core.eigh(mat).eigenvalues, expected, atol=1e-12)


def test_eigh_reconstructs():
    h = core.random_hermitian(6, core.Rng(0))
    assert np.allclose(core.eigh(h).reconstruct(), h.data, atol=1e-12)


def test_exp_neg_examples():
    assert np.allclose(core.exp_neg(np.zeros((2, 2))).data, np.eye(2))
    assert np.allclose(core.exp_neg(np.diag([LN2, 0])).data, np.diag([0.5, 1.0]))
    # cosh(ln 2) = 1.25, sinh(ln 2) = 0.75
    out = core.exp_neg([[0, LN2], [LN2, 0]]).data
    assert np.allclose(out, [[1.25, -0.75], [-0.75, 1.25]], atol=1e-12)


def test_gibbs_of_examples():
    assert np.allclose(core.gibbs_of(np.zeros((3, 3))).data, np.eye(3) / 3)
    assert np.allclose(core.gibbs_of(np.diag([math.log(3), 0])).data, np.diag([0.25, 0.75]))


def test_gibbs_shift_invariance():
    h = core.random_hermitian(5, core.Rng(1)).data
    a = core.gibbs_of(h).data
    b = core.gibbs_of(h + 5 * np.eye(5)).data
    assert np.allclose(a, b, atol=1e-12)


def test_gibbs_large_spectrum_no_overflow():
    rho = core.gibbs_of(np.diag([-2000.0, 0.0]))
    assert np.allclose(rho.data, np.diag([1.0, 0.0]))


def test_trace_inner_examples():
    r = core.random_density(3, core.Rng(2))
    assert core.trace_inner(np.eye(3), r) == pytest.approx(1.0)
    assert core.trace_inner(np.diag([1, -1]), np.eye(2) / 2) == pytest.approx(0.0)
    assert core.trace_inner(np.diag([1, -1]), core.basis_state(2, 0)) == pytest.approx(1.0)
    with pytest.raises(UsageError):
        core.trace_inner(np.eye(2), np.eye(3) / 3)


def test_trace_distance_examples():
    r = core.random_density(3, core.Rng(3))
    assert core.trace_distance(r, r) == pytest.approx(0.0, abs=1e-12)
    assert core.trace_distance(core.basis_state(2, 0), core.basis_state(2, 1)) == pytest.approx(1.0)
    assert core.trace_distance(np.eye(2) / 2, np.diag([0.75, 0.25])) == pytest.approx(0.25)


def test_rng_reproducible_and_children_differ():
    a = core.Rng(42).normal(size=5)
    b = core.Rng(42).normal(size=5)
    c = core.Rng(42).child(1).normal(size=5)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert np.array_equal(c, core.Rng(42).child(1).normal(size=5))


def test_random_density_rank():
    r = core.random_density(6, core.Rng(4), rank=2)
    vals = np.linalg.eigvalsh(r.data)
    assert np.sum(vals > 1e-10) == 2


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10**6), n=st.integers(1, 8), scale=st.floats(0.01, 20.0))
def test_gibbs_matches_expm(seed, n, scale):
    h = core.random_hermitian(n, core.Rng(seed), scale=scale).data
    e = scipy.linalg.expm(-h)
    ref = e / np.trace(e).real
    assert np.allclose(core.gibbs_of(h).data, ref, atol=1e-9)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10**6), n=st.integers(1, 8))
def test_trace_distance_properties(seed, n):
    rng = core.Rng(seed)
    a, b, c = (core.random_density(n, rng) for _ in range(3))
    d_ab = core.trace_distance(a, b)
    assert 0.0 <= d_ab <= 1.0
    assert d_ab == pytest.approx(core.trace_distance(b, a), abs=1e-12)
    assert d_ab <= core.trace_distance(a, c) + core.trace_distance(c, b) + 1e-12
