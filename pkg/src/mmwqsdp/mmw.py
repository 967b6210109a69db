"""Matrix multiplicative weights and the feasibility master loop.

Gains follow the *gain* convention: after observing gain matrices
M(1..t) the next iterate is

    rho(t+1) = exp(+delta * sum M) / Tr[...]

which is the direction under which the regret inequality audited by
:func:`regret_audit` holds.  In the feasibility loop a violated constraint
``A_j`` contributes ``M = (I - A_j) / 2``, so the iterate moves weight away
from ``A_j`` and toward satisfying it.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import core
from .core import DensityMatrix, HermitianMatrix
from .errors import ContractViolation, UsageError

SPECTRAL_TOL = 1e-9


def round_cap(n, eps):
    """``ceil(16 ln n / eps^2)``, with a floor of one round (n = 1 gives zero otherwise)."""
    if n <= 1:
        return 1
    return max(1, math.ceil(16.0 * math.log(n) / eps**2))


def round_failure_budget(n, eps, const=400.0):
    """Per-round oracle error ``eps^2 / (const ln n)`` allowed by the failure accounting.

    Over ``round_cap(n, eps)`` rounds the union bound then gives a total
    failure probability of about ``16 / const`` (0.04 at the default).
    """
    if const <= 0:
        raise UsageError(f"failure constant must be positive, got {const}")
    return eps**2 / (const * math.log(max(n, 2)))


@dataclass(frozen=True, eq=False)
class SdpInstance:
    """Feasibility instance: find unit-trace X >= 0 with Tr[A_j X] <= a_j + eps.

    Every ``A_j`` is checked to satisfy ``-I <= A_j <= I`` at construction.
    ``meta`` carries the optional trace-norm bound ``B``, rank ``r`` and
    sparsity ``s``; they are informational only.
    """

    constraints: tuple
    bounds: np.ndarray
    epsilon: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        mats = tuple(c if isinstance(c, HermitianMatrix) else HermitianMatrix(c) for c in self.constraints)
        if not mats:
            raise UsageError("an SDP instance needs at least one constraint")
        n = mats[0].dim
        for j, a in enumerate(mats):
            if a.dim != n:
                raise UsageError(f"constraint {j} has dimension {a.dim}, expected {n}")
            lo, hi = core.spectral_range(a)
            if lo < -1.0 - SPECTRAL_TOL or hi > 1.0 + SPECTRAL_TOL:
                raise ContractViolation(f"constraint {j} has spectrum [{lo:.6g}, {hi:.6g}] outside [-1, 1]")
        bounds = np.asarray(self.bounds, dtype=float).reshape(-1)
        if bounds.shape[0] != len(mats):
            raise UsageError(f"{len(mats)} constraints but {bounds.shape[0]} bounds")
        if not 0.0 < float(self.epsilon) < 1.0:
            raise UsageError(f"epsilon must lie in (0, 1), got {self.epsilon}")
        bounds.flags.writeable = False
        stack = np.stack([a.data for a in mats])
        stack.flags.writeable = False
        object.__setattr__(self, "constraints", mats)
        object.__setattr__(self, "bounds", bounds)
        object.__setattr__(self, "epsilon", float(self.epsilon))
        object.__setattr__(self, "meta", dict(self.meta or {}))
        object.__setattr__(self, "_stack", stack)

    @property
    def dim(self):
        return self.constraints[0].dim

    @property
    def m(self):
        return len(self.constraints)

    @property
    def stack(self):
        """All constraint matrices as one read-only (m, n, n) array."""
        return self._stack

    def traces(self, rho):
        """Vector of ``Tr[A_j rho]`` for every constraint."""
        r = core.as_array(rho)
        if r.shape != (self.dim, self.dim):
            raise UsageError(f"state has shape {r.shape}, instance dimension is {self.dim}")
        return np.einsum("jik,ki->j", self._stack, r).real

    def violations(self, rho):
        """``Tr[A_j rho] - a_j`` for every j."""
        return self.traces(rho) - self.bounds


@dataclass(frozen=True, eq=False)
class MwState:
    """One round of matrix multiplicative weights.

    ``rho`` always equals ``gibbs_of(-delta * sum(gains))``; it is recomputed
    from the full history each round rather than updated incrementally.
    """

    t: int
    gains: tuple
    delta: float
    rho: DensityMatrix

    @classmethod
    def initial(cls, n, delta):
        if not 0.0 < delta:
            raise UsageError(f"delta must be positive, got {delta}")
        return cls(0, (), float(delta), core.maximally_mixed(n))

    @property
    def dim(self):
        return self.rho.dim

    def exponent(self):
        """``delta * sum_tau M(tau)`` as a plain array."""
        if not self.gains:
            return np.zeros((self.dim, self.dim), dtype=np.complex128)
        return self.delta * np.sum([g.data for g in self.gains], axis=0)


def check_gain(gain, n, tol=SPECTRAL_TOL):
    g = gain if isinstance(gain, HermitianMatrix) else HermitianMatrix(gain)
    if g.dim != n:
        raise UsageError(f"gain has dimension {g.dim}, state dimension is {n}")
    lo, hi = core.spectral_range(g)
    if lo < -tol or hi > 1.0 + tol:
        raise ContractViolation(f"gain spectrum [{lo:.6g}, {hi:.6g}] is outside [0, 1]")
    return g


def mw_round(state, gain):
    """Append ``gain`` (0 <= gain <= I) and return the next state."""
    g = check_gain(gain, state.dim)
    gains = state.gains + (g,)
    total = state.delta * np.sum([x.data for x in gains], axis=0)
    rho = core.gibbs_of(-total)
    return MwState(state.t + 1, gains, state.delta, rho)


@dataclass(frozen=True)
class AuditReport:
    lhs: float
    rhs: float
    passed: bool

    @property
    def slack(self):
        return self.lhs - self.rhs


def regret_audit(history, delta, probe, tol=1e-8):
    """Check the MMW regret inequality against a fixed probe state.

    ``history`` is a sequence of ``(gain, rho_t)`` pairs where each gain is
    PSD or NSD.  Returns LHS = (1-delta) sum_{M<=0} Tr[M rho_t]
    + (1+delta) sum_{M>=0} Tr[M rho_t] and RHS = sum Tr[M probe] - ln n / delta.
    """
    if not 0.0 < delta <= 0.5:
        raise UsageError(f"delta must lie in (0, 1/2], got {delta}")
    p = core.as_array(probe)
    n = p.shape[0]
    lhs = 0.0
    probe_total = 0.0
    for t, (gain, rho_t) in enumerate(history):
        g = core.as_array(gain)
        lo, hi = core.spectral_range(g)
        if lo >= -SPECTRAL_TOL:
            factor = 1.0 + delta
        elif hi <= SPECTRAL_TOL:
            factor = 1.0 - delta
        else:
            raise ContractViolation(f"gain {t} is neither PSD nor NSD (spectrum [{lo:.3g}, {hi:.3g}])")
        lhs += factor * core.trace_inner(g, rho_t)
        probe_total += core.trace_inner(g, p)
    rhs = probe_total - math.log(n) / delta
    return AuditReport(lhs, rhs, lhs >= rhs - tol)


@dataclass(eq=False)
class FeasibilityResult:
    """Outcome of :func:`solve_feasibility`.

    ``witness`` and ``certificate`` are set only for a feasible verdict.
    ``history`` keeps every (gain, rho_t) pair so the regret bound can be
    audited after the fact.
    """

    verdict: str
    witness: DensityMatrix = None
    certificate: tuple = ()
    rounds_used: int = 0
    round_cap: int = 0
    delta: float = 0.0
    oracle_calls: dict = field(default_factory=dict)
    violated: list = field(default_factory=list)
    history: list = field(default_factory=list)
    backend: str = "exact"
    claimed_max_violation: float = None
    exact_max_violation: float = None
    tolerance: float = 0.0
    round_failure_budget: float = None

    @property
    def feasible(self):
        return self.verdict == "Feasible"

    def to_report(self):
        """JSON-ready dict (no matrices)."""
        return {
            "verdict": self.verdict,
            "rounds": self.rounds_used,
            "round_cap": self.round_cap,
            "delta": self.delta,
            "backend": self.backend,
            "violated_per_round": list(self.violated),
            "oracle_calls": dict(self.oracle_calls),
            "claimed_max_violation": self.claimed_max_violation,
            "final_max_violation": self.exact_max_violation,
            "round_failure_budget": self.round_failure_budget,
        }

    def to_json(self):
        return json.dumps(self.to_report(), sort_keys=True)


def solve_feasibility(inst, oracle, rng, delta=None, max_rounds=None, failure_const=400.0):
    """Run the MMW feasibility loop with a violation oracle.

    Parameters
    ----------
    inst : SdpInstance
    oracle : object with ``search(rho, rng) -> OracleReport``
        Any backend from :mod:`mmwqsdp.oracle`.
    rng : Rng
    delta : float, optional
        Step size; ``eps / 4`` by default.
    max_rounds : int, optional
        Override for the round cap ``ceil(16 ln n / eps^2)``.
    failure_const : float
        Constant in the per-round oracle error budget reported with the
        result (see :func:`round_failure_budget`).

    Returns
    -------
    FeasibilityResult
        ``Feasible`` with the current iterate as witness as soon as the
        oracle reports no violation, ``Infeasible`` after the round cap.
    """
    n, eps = inst.dim, inst.epsilon
    delta = eps / 4.0 if delta is None else float(delta)
    cap = round_cap(n, eps) if max_rounds is None else int(max_rounds)
    if getattr(oracle, "dim", n) != n:
        raise UsageError(f"oracle dimension {oracle.dim} does not match instance dimension {n}")
    eye = np.eye(n, dtype=np.complex128)
    state = MwState.initial(n, delta)
    result = FeasibilityResult("Infeasible", round_cap=cap, delta=delta, backend=getattr(oracle, "backend", "custom"),
                               tolerance=getattr(oracle, "tolerance", 0.0),
                               round_failure_budget=round_failure_budget(n, eps, failure_const))
    for _ in range(cap):
        report = oracle.search(state.rho, rng)
        result.rounds_used += 1
        if report.feasible:
            result.verdict = "Feasible"
            result.witness = state.rho
            result.certificate = state.gains
            result.violated.append(None)
            break
        j = report.index
        result.violated.append(int(j))
        gain = HermitianMatrix(0.5 * (eye - inst.stack[j]), check=False)
        result.history.append((gain, state.rho))
        state = mw_round(state, gain)
    result.oracle_calls = dict(getattr(oracle, "counters", {}))
    if result.witness is not None:
        exact = float(np.max(inst.violations(result.witness)))
        result.exact_max_violation = exact
        result.claimed_max_violation = getattr(report, "claimed_max_violation", None)
        if result.claimed_max_violation is None:
            result.claimed_max_violation = exact
    return result
