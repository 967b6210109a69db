"""JSON instance files and random instance generators.

Every file is a JSON object with a ``kind`` tag (``sdp``, ``gibbs-spec``,
``measurement-set``, ``or-instance`` or ``state``).  Matrices are nested
lists of ``[re, im]`` pairs; Python's float repr is the shortest
round-trip form, so load(save(x)) is bit-exact.
"""

import json

import numpy as np

from . import core
from .errors import ContractViolation, UsageError
from .gibbs import GibbsSpec
from .learn import MeasurementSet
from .mmw import SdpInstance
from .orsim import OrInstance, next_pow2

KINDS = ("sdp", "gibbs-spec", "measurement-set", "or-instance", "state")
MAX_N = 128
MAX_M = 4096
OR_CAP = 4096


# -- encoding ---------------------------------------------------------------------

def encode_matrix(a):
    a = core.as_array(a)
    return [[[float(z.real), float(z.imag)] for z in row] for row in a]


def decode_matrix(obj, where="matrix"):
    try:
        arr = np.asarray(obj, dtype=float)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"{where}: not a nested list of [re, im] pairs") from exc
    if arr.ndim != 3 or arr.shape[2] != 2 or arr.shape[0] != arr.shape[1]:
        raise UsageError(f"{where}: expected an n x n x 2 array, got shape {arr.shape}")
    return arr[..., 0] + 1j * arr[..., 1]


def dumps(doc):
    return json.dumps(doc, sort_keys=True, indent=1) + "\n"


def save(doc, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(doc))


def read(path):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    if not isinstance(doc, dict) or doc.get("kind") not in KINDS:
        raise UsageError(f"{path}: field 'kind' must be one of {', '.join(KINDS)}")
    return doc


def _field(doc, name, kind):
    if name not in doc:
        raise UsageError(f"{kind} file: missing field '{name}'")
    return doc[name]


def _labeled(fn, where):
    try:
        return fn()
    except (ContractViolation, UsageError) as exc:
        raise type(exc)(f"{where}: {exc}") from exc


def expect_kind(doc, kind):
    if doc.get("kind") != kind:
        raise UsageError(f"expected a '{kind}' file, got '{doc.get('kind')}'")


# -- documents <-> objects ----------------------------------------------------------

def sdp_doc(inst, witness=None, seed=None):
    doc = {"kind": "sdp", "n": inst.dim, "m": inst.m, "epsilon": inst.epsilon,
           "constraints": [encode_matrix(a) for a in inst.constraints],
           "bounds": [float(b) for b in inst.bounds],
           "meta": {**inst.meta, "seed": seed}}
    if witness is not None:
        doc["witness"] = encode_matrix(witness)
    return doc


def to_sdp(doc):
    expect_kind(doc, "sdp")
    mats = [decode_matrix(a, f"constraints[{j}]") for j, a in enumerate(_field(doc, "constraints", "sdp"))]
    meta = {k: v for k, v in doc.get("meta", {}).items() if k in ("B", "r", "s")}
    return _labeled(lambda: SdpInstance(mats, _field(doc, "bounds", "sdp"), _field(doc, "epsilon", "sdp"), meta),
                    "sdp file")


def gibbs_doc(spec, seed=None):
    def terms(ts):
        return [{"c": c, "state": encode_matrix(s), "trace_weight": w} for c, s, w in ts]
    return {"kind": "gibbs-spec", "n": spec.dim, "plus_terms": terms(spec.plus_terms),
            "minus_terms": terms(spec.minus_terms),
            "meta": {"B": spec.bound_B, "r": spec.rank_bound, "seed": seed}}


def to_gibbs_spec(doc):
    expect_kind(doc, "gibbs-spec")
    n = int(_field(doc, "n", "gibbs-spec"))

    def terms(name):
        out = []
        for j, t in enumerate(doc.get(name, [])):
            where = f"{name}[{j}]"
            try:
                out.append((t["c"], decode_matrix(t["state"], where + ".state"), t["trace_weight"]))
            except KeyError as exc:
                raise UsageError(f"{where}: missing field {exc}") from None
        return out

    meta = doc.get("meta", {})
    return _labeled(lambda: GibbsSpec(n, terms("plus_terms"), terms("minus_terms"), meta.get("B"), meta.get("r")),
                    "gibbs-spec file")


def measurement_doc(meas, target=None, seed=None):
    doc = {"kind": "measurement-set", "n": meas.dim, "m": meas.m,
           "operators": [encode_matrix(e) for e in meas.operators], "meta": {"r": meas.rank, "seed": seed}}
    if target is not None:
        doc["target"] = encode_matrix(target)
    return doc


def to_measurement_set(doc):
    expect_kind(doc, "measurement-set")
    ops = [decode_matrix(e, f"operators[{j}]") for j, e in enumerate(_field(doc, "operators", "measurement-set"))]
    return _labeled(lambda: MeasurementSet(ops, doc.get("meta", {}).get("r")), "measurement-set file")


def or_doc(inst, seed=None, k=None):
    return {"kind": "or-instance", "d": inst.d, "m": inst.m, "eps": inst.eps, "phi": inst.phi, "xi": inst.xi,
            "projectors": [encode_matrix(p) for p in inst.projectors], "state": encode_matrix(inst.input_state),
            "meta": {"seed": seed, "k": k}}


def to_or_instance(doc):
    expect_kind(doc, "or-instance")
    projs = [decode_matrix(p, f"projectors[{j}]") for j, p in enumerate(_field(doc, "projectors", "or-instance"))]
    state = decode_matrix(_field(doc, "state", "or-instance"), "state")
    return _labeled(lambda: OrInstance(tuple(projs), core.DensityMatrix(state), doc.get("eps", 1 / 3),
                                       doc.get("phi", 0.0), doc.get("xi", 0.05)), "or-instance file")


def state_doc(rho, seed=None):
    return {"kind": "state", "n": core.as_array(rho).shape[0], "matrix": encode_matrix(rho), "meta": {"seed": seed}}


def to_state(doc, field_name="matrix"):
    mat = decode_matrix(_field(doc, field_name, doc.get("kind", "state")), field_name)
    return _labeled(lambda: core.DensityMatrix(mat), f"{doc.get('kind')} file")


# -- generators ---------------------------------------------------------------------

def _check_range(n=None, m=None):
    if n is not None and not 1 <= n <= MAX_N:
        raise UsageError(f"n must lie in [1, {MAX_N}], got {n}")
    if m is not None and not 1 <= m <= MAX_M:
        raise UsageError(f"m must lie in [1, {MAX_M}], got {m}")


def lower_bound(n, m, seed, eps=0.25, i_star=None, j_star=None, feasible_twin=False):
    """Every ``A_j = |i*><i*|``; ``a_{j*} = -1/2`` and the rest ``1/2`` (infeasible).

    With ``feasible_twin`` the bound at ``j*`` is also 1/2, which X = I/n satisfies.
    """
    _check_range(n, m)
    rng = core.Rng(seed)
    i_star = int(rng.integers(n)) if i_star is None else int(i_star)
    j_star = int(rng.integers(m)) if j_star is None else int(j_star)
    if not (0 <= i_star < n and 0 <= j_star < m):
        raise UsageError("i_star / j_star out of range")
    proj = core.basis_state(n, i_star).data
    bounds = np.full(m, 0.5)
    if not feasible_twin:
        bounds[j_star] = -0.5
    inst = SdpInstance([proj] * m, bounds, eps, {"B": 1.0, "r": 1, "s": 1})
    doc = sdp_doc(inst, seed=seed)
    doc["meta"].update(i_star=i_star, j_star=j_star, fixture="lower-bound")
    return doc


def random_constraint(n, rng, rank=None):
    """Random Hermitian matrix scaled to spectral norm 1 (optionally low rank)."""
    if rank is None:
        h = core.random_hermitian(n, rng).data
    else:
        u = core.random_unitary(n, rng)[:, :rank]
        h = (u * rng.uniform(-1, 1, size=rank)) @ u.conj().T
    return h / np.max(np.abs(np.linalg.eigvalsh(h)))


def planted_feasible(n, m, seed, eps=0.1, margin=0.05, rank=2):
    """Random constraints with bounds ``Tr[A_j X0] + margin`` for a planted low-rank X0."""
    _check_range(n, m)
    if margin < 0:
        raise UsageError("margin must be >= 0")
    rng = core.Rng(seed)
    x0 = core.random_density(n, rng, min(rank, n))
    mats = [random_constraint(n, rng) for _ in range(m)]
    bounds = [float(np.einsum("ij,ji->", a, x0.data).real) + margin for a in mats]
    B = max(float(np.abs(np.linalg.eigvalsh(a)).sum()) for a in mats)
    inst = SdpInstance(mats, bounds, eps, {"B": B, "r": n, "s": n})
    doc = sdp_doc(inst, witness=x0, seed=seed)
    doc["meta"].update(margin=margin, fixture="planted-feasible")
    return doc


def promise_instance(n, m, seed, eps, violated=(), B=2.0, rank=2):
    """Constraints with slack either >= eps (violated) or <= 0 at a random state.

    Returns (SdpInstance, state).  Each A_j has trace norm at most B.
    """
    rng = core.Rng(seed)
    rho = core.random_density(n, rng)
    mats, bounds = [], []
    for j in range(m):
        a = random_constraint(n, rng, rank=min(rank, n))
        norm1 = float(np.abs(np.linalg.eigvalsh(a)).sum())
        if norm1 > B:
            a = a * (B / norm1)
        t = float(np.einsum("ij,ji->", a, rho.data).real)
        gap = rng.uniform(0.0, 0.5) * eps
        bounds.append(t - eps - gap if j in violated else t + gap)
        mats.append(a)
    return SdpInstance(mats, bounds, eps, {"B": B}), rho


def grover_or(m, k, eps=1.0 / 3.0, phi=0.0, xi=0.05, seed=None):
    """``L_i = |i><i|`` on C^(m+1) and ``rho = |k><k|``; ``k = m`` is the unmarked state."""
    if not 0 <= k <= m:
        raise UsageError(f"k must lie in [0, m], got {k}")
    if (m + 1) * next_pow2(m) > OR_CAP:
        raise UsageError(f"d * ancilla = {(m + 1) * next_pow2(m)} exceeds {OR_CAP}")
    from .orsim import grover_instance
    return or_doc(grover_instance(m, k, eps, phi, xi), seed=seed, k=k)


def low_rank_gibbs(n, seed, rank_plus=2, rank_minus=1, B=4.0):
    """K+ and K- as sums of random pure states with total trace weight in [B/2, B]."""
    _check_range(n)
    rng = core.Rng(seed)
    total = rng.uniform(0.5, 1.0) * B
    weights = rng.dirichlet(np.ones(rank_plus + rank_minus)) * total
    terms = []
    for w in weights:
        v = core.random_unitary(n, rng)[:, 0]
        terms.append((1.0, core.pure_state(v), float(w)))
    spec = GibbsSpec(n, terms[:rank_plus], terms[rank_plus:], B, max(rank_plus, rank_minus, 1))
    return gibbs_doc(spec, seed=seed)


def rank1_measurements(n, m, seed, aligned=0.5, target_rank=2):
    """Rank-one projectors ``V P V^dagger`` plus a random low-rank target state.

    A fraction ``aligned`` of the projectors point into the target's
    support, so the target is far from I/n on those measurements.
    """
    _check_range(n, m)
    rng = core.Rng(seed)
    rho = core.random_density(n, rng, min(target_rank, n))
    _, vecs = np.linalg.eigh(rho.data)
    supp = vecs[:, -min(target_rank, n):]
    ops = []
    for j in range(m):
        if rng.random() < aligned:
            c = rng.normal(size=supp.shape[1]) + 1j * rng.normal(size=supp.shape[1])
            v = supp @ c
        else:
            v = core.random_unitary(n, rng)[:, 0]
        v = v / np.linalg.norm(v)
        ops.append(np.outer(v, v.conj()))
    return measurement_doc(MeasurementSet(ops, rank=1), target=rho, seed=seed)


def random_state(n, seed, rank=None):
    _check_range(n)
    return state_doc(core.random_density(n, core.Rng(seed), rank), seed=seed)


GENERATORS = ("lower-bound", "planted-feasible", "grover-or", "low-rank-gibbs", "rank1-measurements", "random-state")


def generate(kind, seed, **params):
    """Build a fixture document by name; unknown parameters raise a usage error."""
    table = {
        "lower-bound": lambda n=4, m=3, eps=0.25, feasible_twin=False: lower_bound(n, m, seed, eps, feasible_twin=feasible_twin),
        "planted-feasible": lambda n=8, m=8, eps=0.1, margin=0.05: planted_feasible(n, m, seed, eps, margin),
        "grover-or": lambda m=8, k=0, eps=1 / 3, xi=0.05: grover_or(m, k, eps, 0.0, xi, seed),
        "low-rank-gibbs": lambda n=4, rank_plus=2, rank_minus=1, B=4.0: low_rank_gibbs(n, seed, rank_plus, rank_minus, B),
        "rank1-measurements": lambda n=8, m=16, aligned=0.5: rank1_measurements(n, m, seed, aligned),
        "random-state": lambda n=4, rank=None: random_state(n, seed, rank),
    }
    if kind not in table:
        raise UsageError(f"unknown instance kind {kind!r}; choose from {', '.join(GENERATORS)}")
    params = {k: v for k, v in params.items() if v is not None}
    try:
        return table[kind](**params)
    except TypeError as exc:
        raise UsageError(f"bad parameters for {kind}: {exc}") from None
