"""State-vector simulation of the fast quantum OR test.

Given projectors L_1..L_m on C^d and a state rho, the test builds

    Delta = I (x) |0><0|,   Pi = sum_i L_{i+1} (x) Q|i><i|Q^dagger,
    G = (I - 2 Pi)(I - 2 Delta)

on C^d (x) C^A (A = ancilla dimension, the next power of two >= m, with Q
the Fourier transform on Z_m padded by the identity), runs phase estimation
of G on rho (x) |0><0| and accepts when the estimated rotation angle is
small.

Angle convention: on each two-dimensional Jordan block where Delta Pi Delta
has eigenvalue cos^2(theta), G is a rotation by 2*theta, i.e. its
eigenphases are +-2*theta.  Thresholds a = arccos(sqrt(lam)) and
b = arccos(sqrt(0.8 lam)) are angles theta, so the estimated eigenphase is
halved before it is compared with (a + b) / 2, and the phase-estimation
precision in eigenphase units is b - a.

Phase estimation is simulated at the distribution level: G is
diagonalized once, an eigencomponent is drawn with its Born weight and the
t-bit outcome is drawn from the exact Fejer-kernel law.
"""

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import core
from .errors import ContractViolation, ResourceError, UsageError

DEFAULT_CAP = 4096
PHASE_TOL = 1e-7


def next_pow2(m):
    return 1 if m <= 1 else 1 << (int(m) - 1).bit_length()


def canonical_phase(phi):
    """Map angles to (-pi, pi]."""
    out = np.mod(np.asarray(phi, dtype=float) + np.pi, 2 * np.pi) - np.pi
    out = np.where(out <= -np.pi, out + 2 * np.pi, out)
    out = np.where(np.isclose(out, -np.pi, atol=1e-15), np.pi, out)
    return out if out.ndim else float(out)


@dataclass(frozen=True, eq=False)
class OrInstance:
    """Projectors, input state and the test parameters eps, phi, xi."""

    projectors: tuple
    input_state: core.DensityMatrix
    eps: float
    phi: float = 0.0
    xi: float = 0.05

    def __post_init__(self):
        projs = tuple(np.asarray(core.as_array(p), dtype=np.complex128) for p in self.projectors)
        if not projs:
            raise UsageError("an OR instance needs at least one projector")
        d = projs[0].shape[0]
        for i, p in enumerate(projs):
            if p.shape != (d, d):
                raise UsageError(f"projector {i} has shape {p.shape}, expected {(d, d)}")
            if np.max(np.abs(p - p.conj().T)) > 1e-9 or np.max(np.abs(p @ p - p)) > 1e-9:
                raise ContractViolation(f"projector {i} is not a Hermitian idempotent")
        state = self.input_state
        if not isinstance(state, core.DensityMatrix):
            state = core.DensityMatrix(state)
        if state.dim != d:
            raise UsageError(f"input state dimension {state.dim} does not match projector dimension {d}")
        if not 0.0 < self.eps <= 0.5:
            raise UsageError(f"eps must lie in (0, 1/2], got {self.eps}")
        if self.phi < 0 or self.xi <= 0:
            raise UsageError("phi must be >= 0 and xi > 0")
        for p in projs:
            p.flags.writeable = False
        object.__setattr__(self, "projectors", projs)
        object.__setattr__(self, "input_state", state)

    @property
    def m(self):
        return len(self.projectors)

    @property
    def d(self):
        return self.projectors[0].shape[0]

    @property
    def case1_bound(self):
        return (1.0 - self.eps) ** 2 / 4.0 - self.xi

    @property
    def case2_bound(self):
        return 3.0 * self.phi * self.m + self.xi

    def gap_holds(self):
        return self.case1_bound > self.case2_bound

    def acceptance_traces(self):
        """``Tr[L_i rho]`` for every projector."""
        r = self.input_state.data
        return np.array([float(np.einsum("ij,ji->", p, r).real) for p in self.projectors])

    def average_projector(self):
        return sum(self.projectors) / self.m


@dataclass(frozen=True)
class GroverSpec:
    """Thresholds of the fast amplification test for m projectors."""

    m: int
    eps: float
    lambda_thresh: float = field(init=False)
    angle_a: float = field(init=False)
    angle_b: float = field(init=False)
    ancilla_dim: int = field(init=False)

    def __post_init__(self):
        lam = (1.0 - self.eps) / (2.0 * self.m)
        object.__setattr__(self, "lambda_thresh", lam)
        object.__setattr__(self, "angle_a", math.acos(math.sqrt(lam)))
        object.__setattr__(self, "angle_b", math.acos(math.sqrt(0.8 * lam)))
        object.__setattr__(self, "ancilla_dim", next_pow2(self.m))
        if not 0.0 < self.angle_a < self.angle_b < math.pi / 2:
            raise ContractViolation("threshold angles out of order")

    @property
    def precision(self):
        """Angle precision (b - a) / 2; the eigenphase precision is twice this."""
        return (self.angle_b - self.angle_a) / 2.0

    @property
    def accept_angle(self):
        return (self.angle_a + self.angle_b) / 2.0


def fourier_ancilla(m, dim):
    """Fourier transform on Z_m in the first m levels, identity on the padding."""
    q = np.eye(dim, dtype=np.complex128)
    k = np.arange(m)
    q[:m, :m] = np.exp(2j * np.pi * np.outer(k, k) / m) / np.sqrt(m)
    return q


def build_projectors(inst, cap=DEFAULT_CAP):
    """Return (Pi, Delta) on C^d (x) C^A."""
    spec = GroverSpec(inst.m, inst.eps)
    A = spec.ancilla_dim
    D = inst.d * A
    if D > cap:
        raise ResourceError(f"OR simulation needs dimension {D} (d={inst.d} x ancilla {A}), cap is {cap}")
    q = fourier_ancilla(inst.m, A)
    pi = np.zeros((D, D), dtype=np.complex128)
    for i, lam in enumerate(inst.projectors):
        col = q[:, i]
        pi += np.kron(lam, np.outer(col, col.conj()))
    zero = np.zeros((A, A))
    zero[0, 0] = 1.0
    delta = np.kron(np.eye(inst.d), zero).astype(np.complex128)
    return pi, delta


def build_iterate(inst, cap=DEFAULT_CAP):
    """The Grover iterate ``G = (I - 2 Pi)(I - 2 Delta)``."""
    pi, delta = build_projectors(inst, cap)
    eye = np.eye(pi.shape[0], dtype=np.complex128)
    return (eye - 2 * pi) @ (eye - 2 * delta)


def unitary_eig(U):
    """Eigenphases in (-pi, pi] and an orthonormal eigenbasis of a unitary.

    Uses the complex Schur form, which is diagonal for normal matrices and
    keeps eigenvectors orthonormal inside degenerate clusters.
    """
    T, Z = scipy.linalg.schur(np.asarray(U, dtype=np.complex128), output="complex")
    off = np.max(np.abs(np.triu(T, 1))) if T.shape[0] > 1 else 0.0
    if off > 1e-8:
        raise ContractViolation(f"matrix is not normal (Schur off-diagonal {off:.3g})")
    phases = canonical_phase(np.angle(np.diag(T)))
    return np.atleast_1d(phases), Z


def phase_bits(precision, fail_prob):
    """Ancilla bits for the given eigenphase precision and failure probability."""
    if precision <= 0 or not 0.0 < fail_prob < 1.0:
        raise UsageError("precision must be > 0 and fail_prob in (0, 1)")
    return math.ceil(math.log2(2 * math.pi / precision)) + math.ceil(math.log2(2 + 1 / (2 * fail_prob)))


def fejer_distribution(phase, bits):
    """Outcome law of ideal t-bit phase estimation for one eigenphase.

    Outcome j in [0, 2^t) corresponds to the phase 2*pi*j / 2^t.
    """
    N = 1 << bits
    x = (float(phase) / (2 * np.pi)) % 1.0
    d = x - np.arange(N) / N
    s = np.sin(np.pi * d)
    num = np.sin(np.pi * N * d)
    with np.errstate(divide="ignore", invalid="ignore"):
        p = (num / (N * s)) ** 2
    p[np.abs(s) < 1e-15] = 1.0
    return p / p.sum()


def outcome_phases(bits):
    N = 1 << bits
    return canonical_phase(2 * np.pi * np.arange(N) / N)


def component_weights(Z, state):
    """Born weights of ``state`` on the eigenvectors in the columns of ``Z``."""
    s = core.as_array(state)
    w = np.einsum("ik,ij,jk->k", Z.conj(), s, Z).real
    w = np.clip(w, 0.0, None)
    return w / w.sum()


def phase_estimate(G, state, precision, fail_prob, rng, _eig=None):
    """Sample one phase-estimation outcome of unitary ``G`` on ``state``.

    Parameters
    ----------
    G : array
        Unitary.
    state : DensityMatrix or array
        Input density matrix on G's space.
    precision : float
        Target precision of the eigenphase.
    fail_prob : float
        Probability of missing that precision.

    Returns
    -------
    float
        Measured phase in (-pi, pi].
    """
    phases, Z = _eig if _eig is not None else unitary_eig(G)
    w = component_weights(Z, state)
    k = rng.choice(len(w), p=w)
    bits = phase_bits(precision, fail_prob)
    j = rng.choice(1 << bits, p=fejer_distribution(phases[k], bits))
    return float(outcome_phases(bits)[j])


class OrSimulator:
    """Precomputed spectral data for repeated OR tests on one instance.

    G's eigendecomposition and the per-eigencomponent acceptance
    probabilities are computed once and shared by every trial.
    """

    def __init__(self, inst, cap=DEFAULT_CAP):
        self.inst = inst
        self.spec = GroverSpec(inst.m, inst.eps)
        self.G = build_iterate(inst, cap)
        self.phases, self.Z = unitary_eig(self.G)
        self.bits = phase_bits(2 * self.spec.precision, inst.xi)
        A = self.spec.ancilla_dim
        anc0 = np.zeros((A, A))
        anc0[0, 0] = 1.0
        self.full_state = np.kron(inst.input_state.data, anc0)
        self.weights = component_weights(self.Z, self.full_state)
        self._accept = None

    def accept_given_phase(self):
        """Probability of acceptance for each eigencomponent of G."""
        if self._accept is None:
            ok = np.abs(outcome_phases(self.bits)) / 2.0 <= self.spec.accept_angle
            acc = np.empty(len(self.phases))
            cache = {}
            for k, ph in enumerate(self.phases):
                key = round(float(ph), 12)
                if key not in cache:
                    cache[key] = float(fejer_distribution(ph, self.bits)[ok].sum())
                acc[k] = cache[key]
            self._accept = acc
        return self._accept

    def accept_probability(self):
        """Exact acceptance probability of one run of the test."""
        return float(np.clip(self.weights @ self.accept_given_phase(), 0.0, 1.0))

    def sample_phase(self, rng):
        """Same law as :func:`phase_estimate`, with per-phase outcome CDFs cached."""
        if not hasattr(self, "_cdfs"):
            self._cdfs = {}
            self._outcomes = outcome_phases(self.bits)
            self._wcdf = np.cumsum(self.weights)
        k = min(int(np.searchsorted(self._wcdf, rng.random() * self._wcdf[-1], side="right")), len(self.weights) - 1)
        key = round(float(self.phases[k]), 12)
        if key not in self._cdfs:
            self._cdfs[key] = np.cumsum(fejer_distribution(self.phases[k], self.bits))
        cdf = self._cdfs[key]
        j = min(int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right")), len(cdf) - 1)
        return float(self._outcomes[j])

    def test(self, rng):
        """One run: sample the measured eigenphase and apply the accept rule."""
        return abs(self.sample_phase(rng)) / 2.0 <= self.spec.accept_angle

    def test_batch(self, trials, rng):
        """Number of accepts in ``trials`` independent runs (same law as repeated ``test``)."""
        return int(rng.binomial(int(trials), self.accept_probability()))


def or_test(inst, rng, cap=DEFAULT_CAP):
    """One fast OR test on ``inst``; returns True on accept."""
    return OrSimulator(inst, cap).test(rng)


@dataclass(frozen=True)
class GapVerdict:
    case: str
    rate: float
    threshold: float
    trials: int


def gap_verdict(inst, trials, rng, cap=DEFAULT_CAP, simulator=None):
    """Decide case-1 (some projector nearly accepts) vs case-2 (small average).

    Declares case-1 when the empirical acceptance rate over ``trials`` runs
    reaches the midpoint of the two bounds.
    """
    if not inst.gap_holds():
        raise UsageError(
            f"gap condition fails: {inst.case1_bound:.4g} <= {inst.case2_bound:.4g}")
    if trials < 1:
        raise UsageError("trials must be >= 1")
    sim = simulator or OrSimulator(inst, cap)
    accepts = sim.test_batch(trials, rng)
    rate = accepts / trials
    threshold = 0.5 * (inst.case1_bound + inst.case2_bound)
    return GapVerdict("case-1" if rate >= threshold else "case-2", rate, threshold, int(trials))


# -- structural checks ---------------------------------------------------------

def jordan_defect(inst, cap=DEFAULT_CAP, tol=PHASE_TOL):
    """Largest deviation from the two-phase decomposition of Delta Pi Delta eigenvectors.

    For each eigenvector psi of the average projector with eigenvalue
    cos^2(theta), |psi>|0> must lie entirely in the span of G-eigenvectors
    with eigenphases +-2*theta.  Returns max |1 - norm of that projection|.
    """
    spec = GroverSpec(inst.m, inst.eps)
    G = build_iterate(inst, cap)
    phases, Z = unitary_eig(G)
    vals, vecs = np.linalg.eigh(inst.average_projector())
    A = spec.ancilla_dim
    e0 = np.zeros(A)
    e0[0] = 1.0
    worst = 0.0
    for mu, psi in zip(vals, vecs.T):
        theta = math.acos(math.sqrt(min(1.0, max(0.0, mu))))
        target = canonical_phase(2 * theta)
        dist = np.abs(canonical_phase(phases - target))
        dist_neg = np.abs(canonical_phase(phases + target))
        sel = (dist < tol) | (dist_neg < tol)
        vec = np.kron(psi, e0)
        proj = Z[:, sel].conj().T @ vec
        worst = max(worst, abs(1.0 - float(np.linalg.norm(proj))))
    return worst


def threshold_mass(inst, lam):
    """``Tr[P_{>=lam} rho]`` for the average projector's spectral projector."""
    vals, vecs = np.linalg.eigh(inst.average_projector())
    sel = vals >= lam - 1e-12
    v = vecs[:, sel]
    return float(np.einsum("ik,ij,jk->", v.conj(), inst.input_state.data, v).real)


def grover_instance(m, k, eps=1.0 / 3.0, phi=0.0, xi=0.05):
    """Grover embedding: L_i = |i><i| (i < m) on C^(m+1) and rho = |k><k|.

    ``k < m`` is a marked state (case-1); ``k == m`` is the unmarked one.
    """
    d = m + 1
    projs = [core.basis_state(d, i).data for i in range(m)]
    return OrInstance(tuple(projs), core.basis_state(d, k), eps, phi, xi)
