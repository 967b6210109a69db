"""Shadow tomography: learn a Gibbs-form state matching two-outcome measurements.

Each measurement ``E_i`` (0 <= E_i <= I) gives two one-sided constraints on
the hypothesis sigma, with ``e_i = Tr[E_i rho]``:

* case 1 (sigma under-weights E_i): ``A = -E_i + e_i I``, gain ``(I - A)/2``;
* case 2 (sigma over-weights E_i):  ``A =  E_i - e_i I``, gain ``(I - A)/2``.

Both have bound 0, so the pair is violated exactly when
``|Tr[E_i sigma] - e_i| > eps``.  Under the gain convention of
:mod:`mmwqsdp.mmw` every case-1 round adds ``+delta/2`` to the coefficient
of ``E_i`` and every case-2 round ``-delta/2``; the hypothesis is then
``exp(sum_i lam_i E_i) / Tr[...]``.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import core, mmw, oracle
from .core import DensityMatrix, HermitianMatrix
from .errors import ContractViolation, LearnerFailure, UsageError

SPECTRAL_TOL = 1e-9
LEARN_SHOT_CONSTANT = 512
ROUNDTRIP_TOL = 1e-8


class MeasurementSet:
    """Two-outcome POVM elements ``E_1..E_m`` on C^n, each with 0 <= E <= I."""

    def __init__(self, operators, rank=None):
        ops = [o if isinstance(o, HermitianMatrix) else HermitianMatrix(o) for o in operators]
        if not ops:
            raise UsageError("a measurement set needs at least one operator")
        n = ops[0].dim
        for i, e in enumerate(ops):
            if e.dim != n:
                raise UsageError(f"operator {i} has dimension {e.dim}, expected {n}")
            lo, hi = core.spectral_range(e)
            if lo < -SPECTRAL_TOL or hi > 1.0 + SPECTRAL_TOL:
                raise ContractViolation(f"operator {i} has spectrum [{lo:.6g}, {hi:.6g}] outside [0, 1]")
        self.operators = tuple(ops)
        self.stack = np.stack([e.data for e in ops])
        self.stack.flags.writeable = False
        self.rank = rank

    @property
    def dim(self):
        return self.operators[0].dim

    @property
    def m(self):
        return len(self.operators)

    def expectations(self, state):
        return np.einsum("jik,ki->j", self.stack, core.as_array(state)).real

    def one_sided(self, expectations):
        """The 2m constraints (interleaved case 1, case 2) as an SdpInstance-ready list."""
        n = self.dim
        eye = np.eye(n)
        mats = []
        for e, E in zip(expectations, self.stack):
            mats.append(-E + e * eye)
            mats.append(E - e * eye)
        return mats


@dataclass
class JaynesDescription:
    """Coefficients ``lam_i`` of ``exp(sum_i lam_i E_i) / Tr[...]``.

    ``terms`` lists ``(index, coefficient, sign)`` for every index that
    fired at least once; ``sign`` is the net count of case-1 minus case-2
    rounds.
    """

    dim: int
    terms: list = field(default_factory=list)

    def coefficients(self, m):
        lam = np.zeros(m)
        for i, c, _ in self.terms:
            lam[i] = c
        return lam

    @property
    def nonzero(self):
        return sum(1 for _, c, _ in self.terms if c != 0.0)

    def to_dict(self):
        return {"dim": self.dim, "convention": "exp(+sum lam_i E_i)",
                "terms": [{"index": int(i), "coefficient": float(c), "sign": int(s)} for i, c, s in self.terms]}

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)


def jaynes_reconstruct(desc, meas):
    """Gibbs state ``exp(sum lam_i E_i) / Tr[...]``."""
    n = meas.dim
    H = np.zeros((n, n), dtype=np.complex128)
    for i, c, _ in desc.terms:
        if not 0 <= i < meas.m:
            raise UsageError(f"term index {i} out of range for {meas.m} measurements")
        H += c * meas.stack[i]
    return core.gibbs_of(-H)


def verify_shadow(sigma, rho, meas):
    """``max_i |Tr[E_i sigma] - Tr[E_i rho]|``."""
    return float(np.max(np.abs(meas.expectations(sigma) - meas.expectations(rho))))


def learner_shots(eps, m, rank=1.0):
    """Default SWAP-test shots per expectation estimate."""
    return math.ceil(LEARN_SHOT_CONSTANT * rank**2 * math.log(max(2 * m, 2)) / eps**2)


def gain_for(E, e, case):
    """The gain ``(I - A)/2`` for one side of a two-sided constraint."""
    n = E.shape[0]
    eye = np.eye(n)
    A = -E + e * eye if case == 1 else E - e * eye
    return HermitianMatrix(0.5 * (eye - A), check=False)


class _SwapExpectations:
    """SWAP-test estimates of ``Tr[E_i X]`` via ``tr(E_i) (2 p - 1)`` against ``E_i / tr(E_i)``."""

    def __init__(self, meas):
        self.tr = np.einsum("jii->j", meas.stack).real
        safe = np.where(self.tr > 0, self.tr, 1.0)
        self.sigma = meas.stack / safe[:, None, None]

    def estimate(self, state, shots, rng):
        overlap = np.einsum("jik,ki->j", self.sigma, core.as_array(state)).real
        p = np.clip(0.5 + 0.5 * overlap, 0.5, 1.0)
        freq = rng.binomial(int(shots), p) / shots
        return np.where(self.tr > 0, self.tr * (2 * freq - 1), 0.0)


def learn_state(meas, target, eps, backend="exact", rng=None, shots=None, copy_budget=None, max_rounds=None):
    """Learn sigma with ``|Tr[E_i sigma] - Tr[E_i rho]| <= eps`` for all i.

    Parameters
    ----------
    meas : MeasurementSet
    target : DensityMatrix or CopySupplier
        The unknown state.  The exact backend reads it directly; the
        sampled backend only draws copies for SWAP tests.
    eps : float
    backend : {"exact", "sampled"}
    rng : Rng
        Required for the sampled backend.
    shots : int, optional
        SWAP-test shots per expectation (sampled backend).
    copy_budget : int, optional
        Cap on copies of rho consumed (sampled backend).

    Returns
    -------
    (JaynesDescription, DensityMatrix, int, dict)
        Description, hypothesis sigma, rounds used and counters.
    """
    if not 0.0 < eps < 1.0:
        raise UsageError(f"eps must lie in (0, 1), got {eps}")
    if backend not in ("exact", "sampled"):
        raise UsageError(f"unknown learner backend {backend!r}")
    n, m = meas.dim, meas.m
    delta = eps / 4.0
    cap = mmw.round_cap(n, eps) if max_rounds is None else int(max_rounds)
    state = mmw.MwState.initial(n, delta)
    lam = np.zeros(m)
    net = np.zeros(m, dtype=int)
    counters = {"rounds": 0, "oracle_calls": 0, "swap_tests": 0, "copies": 0}

    if backend == "exact":
        rho = target.state if isinstance(target, oracle.CopySupplier) else target
        rho = rho if isinstance(rho, DensityMatrix) else DensityMatrix(rho)
        if rho.dim != n:
            raise UsageError(f"target dimension {rho.dim} does not match measurement dimension {n}")
        e_rho = meas.expectations(rho)
        inst = mmw.SdpInstance(meas.one_sided(e_rho), np.zeros(2 * m), eps)

        def detect(sigma):
            rep = oracle.exact_violation_search(inst, sigma)
            if rep.feasible:
                return None
            return rep.index // 2, 1 if rep.index % 2 == 0 else 2, e_rho[rep.index // 2]
    else:
        if rng is None:
            raise UsageError("the sampled backend needs an rng")
        supplier = target if isinstance(target, oracle.CopySupplier) else oracle.CopySupplier(target, copy_budget)
        if supplier.state.dim != n:
            raise UsageError(f"target dimension {supplier.state.dim} does not match measurement dimension {n}")
        swap = _SwapExpectations(meas)
        rank = meas.rank or float(np.max(swap.tr))
        shots = int(shots) if shots else learner_shots(eps, m, max(1.0, rank))
        threshold = 0.75 * eps

        def detect(sigma):
            rho = supplier(m * shots)
            e_hat = swap.estimate(rho, shots, rng)
            s_hat = swap.estimate(sigma, shots, rng)
            counters["swap_tests"] += 2 * m * shots
            counters["copies"] += m * shots
            d = s_hat - e_hat
            hits = np.flatnonzero(np.abs(d) > threshold)
            if hits.size == 0:
                return None
            i = int(hits[0])
            return i, 1 if d[i] < 0 else 2, float(np.clip(e_hat[i], 0.0, 1.0))

    while True:
        counters["oracle_calls"] += 1
        found = detect(state.rho)
        if found is None:
            break
        if state.t >= cap:
            sigma = state.rho
            diag = {"rounds": state.t, "round_cap": cap, "backend": backend, **counters}
            if backend == "exact":
                diag["max_deviation"] = verify_shadow(sigma, rho, meas)
            raise LearnerFailure(f"no consistent hypothesis after {cap} rounds", diag)
        i, case, e = found
        gain = gain_for(meas.stack[i], e, case)
        state = mmw.mw_round(state, gain)
        step = delta / 2 if case == 1 else -delta / 2
        lam[i] += step
        net[i] += 1 if case == 1 else -1
        counters["rounds"] = state.t

    touched = np.flatnonzero((lam != 0) | (net != 0))
    desc = JaynesDescription(n, [(int(i), float(lam[i]), int(np.sign(net[i]))) for i in touched])
    sigma = state.rho
    rebuilt = jaynes_reconstruct(desc, meas)
    gap = core.trace_distance(rebuilt, sigma)
    if gap > ROUNDTRIP_TOL:
        raise ContractViolation(f"Jaynes reconstruction differs from the learner state by {gap:.3g}")
    return desc, sigma, state.t, counters


def random_rank1_measurements(n, m, rng):
    """Projectors onto Haar-random unit vectors."""
    ops = []
    for _ in range(m):
        v = core.random_unitary(n, rng)[:, 0]
        ops.append(np.outer(v, v.conj()))
    return MeasurementSet(ops, rank=1)
