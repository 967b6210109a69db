"""Low-rank Gibbs states exp(-K)/Z for K = K+ - K-.

The quantum subroutines are modeled at the level of their output laws:

* consistent phase estimation returns ``f(s, lam) = delta*round((lam+s)/delta) - s``
  for a shift s fixed per estimator, optionally corrupted by +-delta with
  probability ``xi``;
* eigenvalues sharing a rounded value form one *group* (they are
  indistinguishable to the estimator); inside a group the operator
  K+ + K- is diagonalized and equal eigenvalues ``mu`` form a *block*;
* a post-measurement state is the normalized projector onto its block.

Every sampler draws from the exact distribution over (sign, block,
corruption) outcomes, so a batch of N draws costs one multinomial.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import core
from .core import DensityMatrix, HermitianMatrix
from .errors import ContractViolation, ResourceError, UsageError

RANK_TOL = 1e-8
MU_TOL = 1e-9
Z_REPS = 16
LMIN_REPS = 4
KER_REPS = 16
ATTEMPT_CONST = 8
MIX_CONST = 64


class GibbsSpec:
    """K+ and K- given as weighted mixtures of normalized states.

    Each term is ``(c, state, trace_weight)`` where ``trace_weight`` is
    ``c * Tr[A]`` for the unnormalized part ``A``, so that
    ``K+- = sum trace_weight * state``.
    """

    def __init__(self, dim, plus_terms=(), minus_terms=(), bound_B=None, rank_bound=None):
        self.dim = int(dim)
        self.plus_terms = [self._term(t) for t in plus_terms]
        self.minus_terms = [self._term(t) for t in minus_terms]
        total = sum(t[2] for t in self.plus_terms) + sum(t[2] for t in self.minus_terms)
        self.bound_B = float(total if bound_B is None else bound_B)
        if total > self.bound_B + 1e-9:
            raise ContractViolation(f"total trace weight {total:.6g} exceeds B = {self.bound_B:.6g}")
        self.rank_bound = rank_bound
        self._cache = {}

    def _term(self, t):
        c, state, w = t
        if c <= 0 or w < 0:
            raise ContractViolation(f"term coefficient must be > 0 and trace weight >= 0, got {c}, {w}")
        s = state if isinstance(state, DensityMatrix) else DensityMatrix(state)
        if s.dim != self.dim:
            raise UsageError(f"term state has dimension {s.dim}, spec dimension is {self.dim}")
        return (float(c), s, float(w))

    @classmethod
    def from_parts(cls, kplus, kminus=None, bound_B=None, rank_bound=None):
        """Spec with one term per sign from dense PSD matrices K+ and K-."""
        kp = core.as_array(kplus)
        n = kp.shape[0]
        terms = []
        for k in (kp, core.as_array(kminus) if kminus is not None else np.zeros((n, n))):
            tr = float(np.trace(k).real)
            terms.append([(1.0, DensityMatrix(k / tr), tr)] if tr > 1e-15 else [])
        return cls(n, terms[0], terms[1], bound_B, rank_bound)

    @property
    def trace_plus(self):
        return sum(t[2] for t in self.plus_terms)

    @property
    def trace_minus(self):
        return sum(t[2] for t in self.minus_terms)

    def k_parts(self):
        n = self.dim
        kp = sum((t[2] * t[1].data for t in self.plus_terms), np.zeros((n, n), dtype=np.complex128))
        km = sum((t[2] * t[1].data for t in self.minus_terms), np.zeros((n, n), dtype=np.complex128))
        return kp, km


def assemble_k(spec):
    """Dense K = K+ - K- and its spectrum; checks rank(K) <= 2 r_K."""
    kp, km = spec.k_parts()
    K = HermitianMatrix(kp - km, check=False)
    spectrum = core.eigh(K)
    if spec.rank_bound is not None:
        rank = int(np.sum(np.abs(spectrum.eigenvalues) > RANK_TOL))
        if rank > 2 * spec.rank_bound:
            raise ContractViolation(f"K has rank {rank} > 2 * r_K = {2 * spec.rank_bound}")
    return K, spectrum


def rank_of(spec):
    if spec.rank_bound is not None:
        return int(spec.rank_bound)
    _, spectrum = assemble_k(spec)
    return max(1, int(np.sum(np.abs(spectrum.eigenvalues) > RANK_TOL)))


@dataclass(frozen=True)
class ConsistentEstimator:
    """Shifted-grid rounding with grid ``delta`` and shift ``shift`` in [0, delta)."""

    delta: float
    shift: float
    xi: float = 0.0

    def __post_init__(self):
        if self.delta <= 0 or not 0.0 <= self.shift < self.delta or not 0.0 <= self.xi < 1.0:
            raise UsageError("need delta > 0, shift in [0, delta) and xi in [0, 1)")

    @classmethod
    def draw(cls, delta, rng, xi=0.0):
        return cls(float(delta), float(rng.uniform(0.0, delta)), float(xi))

    def grid_index(self, lam):
        return np.floor((np.asarray(lam, dtype=float) + self.shift) / self.delta + 0.5).astype(np.int64)

    def f(self, lam):
        """Rounded value; depends on (shift, lam) only."""
        out = self.delta * self.grid_index(lam) - self.shift
        return out if np.ndim(out) else float(out)

    def corruption_law(self):
        """Offsets (in units of delta) and their probabilities."""
        if self.xi == 0.0:
            return np.array([0]), np.array([1.0])
        return np.array([-1, 0, 1]), np.array([self.xi / 2, 1.0 - self.xi, self.xi / 2])


def consistent_eig_sample(est, spectrum, state, rng):
    """Measure K's eigenbasis on ``state``; return (rounded eigenvalue, eigenprojector)."""
    v = spectrum.eigenvectors
    p = np.einsum("ik,ij,jk->k", v.conj(), core.as_array(state), v).real
    p = np.clip(p, 0.0, None)
    i = rng.choice(len(p), p=p / p.sum())
    lam = est.f(spectrum.eigenvalues[i])
    if est.xi > 0 and rng.random() < est.xi:
        lam += est.delta * (1 if rng.random() < 0.5 else -1)
    return float(lam), core.pure_state(v[:, i])


class GibbsModel:
    """Groups and blocks of K for one estimator (see module docstring)."""

    def __init__(self, spec, est):
        self.spec, self.est = spec, est
        kp, km = spec.k_parts()
        self.K, self.spectrum = assemble_k(spec)
        lam = self.spectrum.eigenvalues
        vecs = self.spectrum.eigenvectors
        idx = est.grid_index(lam)
        n = spec.dim
        self.n = n
        grp_lam, grp_dim, grp_proj = [], [], []
        blk = {"lam": [], "mu": [], "dim": [], "wp": [], "wm": [], "proj": [], "group": []}
        kk = kp + km
        for g in np.unique(idx):
            V = vecs[:, idx == g]
            gi = len(grp_lam)
            grp_lam.append(est.delta * g - est.shift)
            grp_dim.append(V.shape[1])
            grp_proj.append(V @ V.conj().T)
            mu, W = np.linalg.eigh(V.conj().T @ kk @ V)
            Y = V @ W
            start = 0
            for stop in range(1, len(mu) + 1):
                if stop == len(mu) or mu[stop] - mu[start] > MU_TOL * max(1.0, abs(mu[start])):
                    cols = Y[:, start:stop]
                    P = cols @ cols.conj().T
                    blk["lam"].append(grp_lam[gi])
                    blk["mu"].append(float(np.mean(mu[start:stop])))
                    blk["dim"].append(stop - start)
                    blk["wp"].append(max(0.0, float(np.einsum("ij,ji->", P, kp).real)))
                    blk["wm"].append(max(0.0, float(np.einsum("ij,ji->", P, km).real)))
                    blk["proj"].append(P)
                    blk["group"].append(gi)
                    start = stop
        self.grp_lam = np.array(grp_lam)
        self.grp_dim = np.array(grp_dim)
        self.grp_proj = grp_proj
        self.blk_lam = np.array(blk["lam"])
        self.blk_mu = np.array(blk["mu"])
        self.blk_dim = np.array(blk["dim"])
        self.blk_wp = np.array(blk["wp"])
        self.blk_wm = np.array(blk["wm"])
        self.blk_proj = blk["proj"]
        self.trace_plus = float(np.trace(kp).real)
        self.trace_minus = float(np.trace(km).real)
        self.offsets, self.offset_p = est.corruption_law()

    @classmethod
    def of(cls, spec, est):
        key = (est.delta, est.shift, est.xi)
        if key not in spec._cache:
            spec._cache[key] = cls(spec, est)
        return spec._cache[key]

    @property
    def total_trace(self):
        return self.trace_plus + self.trace_minus

    def block_state(self, b):
        return DensityMatrix.trusted(self.blk_proj[b] / self.blk_dim[b])

    def group_state(self, g):
        return DensityMatrix.trusted(self.grp_proj[g] / self.grp_dim[g])

    def signed_law(self):
        """Outcome law of sign coin + eigen-sampling: arrays (sign, block, offset, prob, lam~)."""
        T = self.total_trace
        rows = []
        for sgn, w in ((1, self.blk_wp), (-1, self.blk_wm)):
            if T <= 0:
                break
            for o, po in zip(self.offsets, self.offset_p):
                p = w / T * po
                rows.append((np.full(len(w), sgn), np.arange(len(w)), p, self.blk_lam + o * self.est.delta))
        if not rows:
            return np.zeros(0, int), np.zeros(0, int), np.zeros(0), np.zeros(0)
        sg, b, p, lt = (np.concatenate(x) for x in zip(*rows))
        return sg, b, p, lt

    def passes(self, lt, lam_min):
        ok = np.abs(lt) >= self.est.delta
        if np.isfinite(lam_min):
            ok &= lt >= lam_min - 1e-12
        return ok

    def rounded_z_supp(self, lam_min=-np.inf):
        """Sum of exp(-lam~) over eigenvalues (with multiplicity) passing the thresholds."""
        ok = self.passes(self.blk_lam, lam_min)
        return float(np.sum(self.blk_dim[ok] * np.exp(-self.blk_lam[ok])))

    def z_single_mean(self, lam_min=-np.inf):
        """Exact expectation of one Z_supp draw X (before scaling by the total trace)."""
        sg, b, p, lt = self.signed_law()
        ok = self.passes(lt, lam_min)
        return float(np.sum(p[ok] * sg[ok] * np.exp(-lt[ok]) / lt[ok]))

    def kernel_law(self):
        """Outcome law of eigen-sampling on I/n: (group, prob, lam~)."""
        rows = []
        for o, po in zip(self.offsets, self.offset_p):
            rows.append((np.arange(len(self.grp_dim)), self.grp_dim / self.n * po, self.grp_lam + o * self.est.delta))
        g, p, lt = (np.concatenate(x) for x in zip(*rows))
        return g, p, lt

    def kernel_count(self):
        """Number of eigenvalues whose rounded value is below delta in magnitude."""
        return int(np.sum(self.grp_dim[np.abs(self.grp_lam) < self.est.delta]))


@dataclass
class EstimatorReport:
    value: float
    repetitions: int
    target_error: float
    success: bool = None
    extras: dict = field(default_factory=dict)

    def to_dict(self):
        return {"value": self.value, "repetitions": self.repetitions, "target_error": self.target_error,
                "success": self.success, **self.extras}


def z_repetitions(B, delta, eps):
    return math.ceil(Z_REPS * B**2 / (delta**2 * eps**2))


def estimate_lambda_min(spec, est, gamma, rng):
    """Smallest above-threshold rounded eigenvalue seen in ``ceil(4 B ln(1/gamma) / delta)`` draws.

    Returns ``inf`` when no draw passes ``|lam~| >= delta``.
    """
    if not 0.0 < gamma < 1.0:
        raise UsageError(f"gamma must lie in (0, 1), got {gamma}")
    model = GibbsModel.of(spec, est)
    sg, b, p, lt = model.signed_law()
    if p.size == 0:
        return math.inf
    reps = math.ceil(LMIN_REPS * max(spec.bound_B, 1e-12) * math.log(1 / gamma) / est.delta)
    counts = rng.multinomial(reps, p / p.sum())
    seen = (counts > 0) & (np.abs(lt) >= est.delta)
    return float(lt[seen].min()) if seen.any() else math.inf


def estimate_z_supp(spec, est, eps, rng, lam_min=None, gamma=0.01, reference=None):
    """Estimate Z_supp = sum over |lam~| >= delta of exp(-lam~).

    Each draw flips the sign coin (P(+) = tr K+ / (tr K+ + tr K-)), samples
    an eigencomponent of K+-/tr, and outputs +-exp(-lam~)/lam~ when the
    rounded eigenvalue passes both thresholds.  The estimate is the mean of
    ``ceil(16 B^2 / (delta^2 eps^2))`` draws times tr K+ + tr K-.
    """
    if not 0.0 < eps < 1.0:
        raise UsageError(f"eps must lie in (0, 1), got {eps}")
    model = GibbsModel.of(spec, est)
    if model.total_trace <= 0:
        return EstimatorReport(0.0, 0, eps, None if reference is None else reference == 0.0)
    if lam_min is None:
        lam_min = estimate_lambda_min(spec, est, gamma, rng)
    sg, b, p, lt = model.signed_law()
    reps = z_repetitions(spec.bound_B, est.delta, eps)
    counts = rng.multinomial(reps, p / p.sum())
    ok = model.passes(lt, lam_min)
    x = np.where(ok, sg * np.exp(-lt) / np.where(ok, lt, 1.0), 0.0)
    mean = float(counts @ x / reps)
    second = float(counts @ x**2 / reps)
    value = mean * model.total_trace
    success = None if reference is None else abs(value - reference) <= eps * abs(reference)
    return EstimatorReport(value, reps, eps, success,
                           {"lambda_min": lam_min, "mean_x": mean, "second_moment_x": second,
                            "delta": est.delta})


def estimate_kernel_dim(spec, est, eps, rng):
    """Estimate n - R as n times the fraction of I/n draws with |lam~| < delta."""
    if not 0.0 < eps < 1.0:
        raise UsageError(f"eps must lie in (0, 1), got {eps}")
    model = GibbsModel.of(spec, est)
    g, p, lt = model.kernel_law()
    p_ker = float(np.sum(p[np.abs(lt) < est.delta]))
    reps = math.ceil(KER_REPS * rank_of(spec) / eps**2)
    hits = int(rng.binomial(reps, min(1.0, p_ker)))
    return EstimatorReport(spec.dim * hits / reps, reps, eps, extras={"kernel_hits": hits})


# -- samplers ----------------------------------------------------------------------

def _mu_observed(model):
    mu = model.blk_mu
    if model.est.xi > 0:
        step = math.sqrt(model.est.xi) * model.est.delta
        mu = np.maximum(step, step * np.round(mu / step))
    return mu


def _supp_law(model, z_supp_estimate, eps, lam_min, safety_halving):
    """Per-attempt outcome law of the support sampler.

    Returns (block index, attempt probability, acceptance probability).
    The sign coin is summed out since acceptance does not depend on it.
    """
    T = model.total_trace
    if T <= 0:
        return np.zeros(0, int), np.zeros(0), np.zeros(0)
    mu = _mu_observed(model)
    blocks, pa, pacc = [], [], []
    for o, po in zip(model.offsets, model.offset_p):
        lt = model.blk_lam + o * model.est.delta
        ok = model.passes(lt, lam_min) & (mu > 0)
        acc = np.zeros(len(lt))
        acc[ok] = (model.est.delta / mu[ok]) * (1 - eps) * np.exp(-lt[ok]) / z_supp_estimate
        acc = np.clip(acc, 0.0, 1.0) * (0.5 if safety_halving else 1.0)
        blocks.append(np.arange(len(lt)))
        pa.append((model.blk_wp + model.blk_wm) / T * po)
        pacc.append(acc)
    return np.concatenate(blocks), np.concatenate(pa), np.concatenate(pacc)


def attempt_budget(B, delta, eps):
    return math.ceil(ATTEMPT_CONST * B / (delta * (1 - eps)) * math.log(100))


def supp_attempt(spec, est, z_supp_estimate, eps, rng, lam_min=-np.inf, safety_halving=False):
    """One attempt of the support sampler: a block state or None on reject."""
    model = GibbsModel.of(spec, est)
    blocks, pa, pacc = _supp_law(model, z_supp_estimate, eps, lam_min, safety_halving)
    if pa.sum() <= 0:
        return None
    k = rng.choice(len(pa), p=pa / pa.sum())
    return model.block_state(blocks[k]) if rng.random() < pacc[k] else None


def sample_rho_supp(spec, est, z_supp_estimate, eps, rng, lam_min=-np.inf, safety_halving=False):
    """Repeat :func:`supp_attempt` until acceptance, within the attempt budget."""
    if z_supp_estimate <= 0:
        raise UsageError("z_supp_estimate must be positive")
    budget = attempt_budget(spec.bound_B, est.delta, eps)
    for _ in range(budget):
        out = supp_attempt(spec, est, z_supp_estimate, eps, rng, lam_min, safety_halving)
        if out is not None:
            return out
    raise ResourceError(f"support sampler exceeded its attempt budget of {budget}")


def sample_supp_batch(spec, est, z_supp_estimate, eps, count, rng, lam_min=-np.inf, safety_halving=False):
    """``count`` accepted support draws as per-block counts, plus attempts used.

    Draws from the exact accepted-outcome law; the attempts per success are
    geometric and any success needing more than the budget raises.
    """
    model = GibbsModel.of(spec, est)
    nb = len(model.blk_dim)
    if count == 0:
        return np.zeros(nb, int), 0
    blocks, pa, pacc = _supp_law(model, z_supp_estimate, eps, lam_min, safety_halving)
    joint = pa * pacc
    p_acc = float(joint.sum())
    budget = attempt_budget(spec.bound_B, est.delta, eps)
    if p_acc <= 0:
        raise ResourceError(f"support sampler exceeded its attempt budget of {budget} (acceptance probability 0)")
    tries = rng.geometric(min(1.0, p_acc), size=count)
    if tries.max() > budget:
        raise ResourceError(f"support sampler exceeded its attempt budget of {budget}")
    draws = rng.multinomial(count, joint / p_acc)
    return np.bincount(blocks, weights=draws, minlength=nb).astype(int), int(tries.sum())


def supp_acceptance(spec, est, z_supp_estimate, eps, lam_min=-np.inf, safety_halving=False):
    """Exact per-attempt acceptance probability of the support sampler."""
    model = GibbsModel.of(spec, est)
    _, pa, pacc = _supp_law(model, z_supp_estimate, eps, lam_min, safety_halving)
    return float(pa @ pacc)


def kernel_acceptance(spec, est):
    """Exact acceptance probability of the kernel sampler."""
    model = GibbsModel.of(spec, est)
    g, p, lt = model.kernel_law()
    return float(np.sum(p[np.abs(lt) < est.delta]))


def sample_rho_ker(spec, est, rng):
    """One kernel attempt: the group state when |lam~| < delta, else None."""
    model = GibbsModel.of(spec, est)
    g, p, lt = model.kernel_law()
    k = rng.choice(len(p), p=p / p.sum())
    return model.group_state(g[k]) if abs(lt[k]) < est.delta else None


def sample_ker_batch(spec, est, count, rng):
    """``count`` accepted kernel draws as per-group counts, plus attempts used."""
    model = GibbsModel.of(spec, est)
    ng = len(model.grp_dim)
    if count == 0:
        return np.zeros(ng, int), 0
    g, p, lt = model.kernel_law()
    joint = np.where(np.abs(lt) < est.delta, p, 0.0)
    p_acc = float(joint.sum())
    if p_acc <= 0:
        raise ResourceError("kernel sampler never accepts (no eigenvalue rounds below delta)")
    tries = rng.geometric(min(1.0, p_acc), size=count)
    draws = rng.multinomial(count, joint / p_acc)
    return np.bincount(g, weights=draws, minlength=ng).astype(int), int(tries.sum())


# -- full preparation ---------------------------------------------------------------

def exact_mixture(spec, est, lam_min=-np.inf):
    """The mixture the sampler targets, computed from exact (not estimated) weights."""
    model = GibbsModel.of(spec, est)
    n = spec.dim
    rho = np.zeros((n, n), dtype=np.complex128)
    ok = model.passes(model.blk_lam, lam_min)
    for b in np.flatnonzero(ok):
        rho += np.exp(-model.blk_lam[b]) * model.blk_proj[b]
    ker = np.abs(model.grp_lam) < est.delta
    for g in np.flatnonzero(ker):
        rho += model.grp_proj[g]
    return DensityMatrix.trusted(rho / np.trace(rho).real)


def mixture_bound_check(spec, est):
    """(trace distance of the exact mixture to exp(-K)/Z, the 4 delta bound)."""
    K, _ = assemble_k(spec)
    dist = core.trace_distance(exact_mixture(spec, est), core.gibbs_of(K))
    return dist, 4 * est.delta


def prepare_gibbs(spec, eps, rng, safety_halving=False, xi=0.0, delta=None, gamma=0.01):
    """Approximate exp(-K)/Z as an empirical mixture of support and kernel draws.

    Parameters
    ----------
    spec : GibbsSpec
    eps : float
        Target trace distance.
    rng : Rng
    safety_halving : bool
        Halve the support acceptance probability.
    xi : float
        Failure probability of each eigenvalue estimate.
    delta : float, optional
        Rounding grid, ``eps / 8`` by default.

    Returns
    -------
    (DensityMatrix, dict)
    """
    if not 0.0 < eps < 1.0:
        raise UsageError(f"eps must lie in (0, 1), got {eps}")
    n = spec.dim
    delta = eps / 8.0 if delta is None else float(delta)
    est = ConsistentEstimator.draw(delta, rng, xi)
    lam_min = estimate_lambda_min(spec, est, gamma, rng) if GibbsModel.of(spec, est).total_trace > 0 else math.inf
    z = estimate_z_supp(spec, est, eps, rng, lam_min=lam_min)
    kd = estimate_kernel_dim(spec, est, eps, rng)
    zs = max(0.0, z.value)
    zk = kd.value
    diag = {"delta": delta, "shift": est.shift, "xi": xi, "lambda_min": lam_min, "z_supp": zs,
            "z_supp_repetitions": z.repetitions, "kernel_dim": zk, "kernel_repetitions": kd.repetitions,
            "safety_halving": bool(safety_halving)}
    Zp = zs + zk
    N = math.ceil(MIX_CONST * n / eps**2)
    diag["samples"] = N
    if Zp <= 0:
        diag.update(n_supp=0, n_kernel=0, note="both branches estimated empty; returned I/n")
        return core.maximally_mixed(n), diag
    n_supp = int(rng.binomial(N, zs / Zp))
    n_ker = N - n_supp
    model = GibbsModel.of(spec, est)
    rho = np.zeros((n, n), dtype=np.complex128)
    blk_counts, supp_tries = sample_supp_batch(spec, est, zs, eps, n_supp, rng, lam_min, safety_halving)
    for b in np.flatnonzero(blk_counts):
        rho += blk_counts[b] * model.blk_proj[b] / model.blk_dim[b]
    grp_counts, ker_tries = sample_ker_batch(spec, est, n_ker, rng)
    for g in np.flatnonzero(grp_counts):
        rho += grp_counts[g] * model.grp_proj[g] / model.grp_dim[g]
    diag.update(n_supp=n_supp, n_kernel=n_ker,
                supp_acceptance_rate=n_supp / supp_tries if supp_tries else None,
                kernel_acceptance_rate=n_ker / ker_tries if ker_tries else None)
    return DensityMatrix.trusted(rho / N), diag
