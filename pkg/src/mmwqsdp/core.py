"""Dense Hermitian linear algebra used by every other module.

Matrices are small (n <= 128 by default), so everything goes through an
exact eigendecomposition: matrix exponentials, Gibbs states, trace
distances.  Hermitian and density matrices are immutable wrappers around a
read-only ``complex128`` array; they convert to numpy transparently.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation, NumericFailure, UsageError

HERMITIAN_TOL = 1e-12
PSD_TOL = 1e-9
TRACE_TOL = 1e-9
IMAG_TOL = 1e-9


def as_array(x):
    """Return the complex ndarray behind ``x`` (no copy when possible)."""
    if isinstance(x, HermitianMatrix):
        return x.data
    return np.asarray(x, dtype=np.complex128)


class HermitianMatrix:
    """Immutable n x n complex Hermitian matrix.

    Construction checks ``H[i, j] == conj(H[j, i])`` to within 1e-12
    (relative to the largest entry) and then stores the exactly symmetrized
    matrix.
    """

    __slots__ = ("_data",)

    def __init__(self, data, *, check=True):
        arr = np.array(data, dtype=np.complex128)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1] or arr.shape[0] < 1:
            raise UsageError(f"expected a non-empty square matrix, got shape {arr.shape}")
        if check:
            scale = max(1.0, float(np.max(np.abs(arr))))
            asym = float(np.max(np.abs(arr - arr.conj().T)))
            if asym > HERMITIAN_TOL * scale:
                raise ContractViolation(f"matrix is not Hermitian (max asymmetry {asym:.3g})")
        arr = 0.5 * (arr + arr.conj().T)
        arr.flags.writeable = False
        self._data = arr

    @property
    def data(self):
        return self._data

    @property
    def dim(self):
        return self._data.shape[0]

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self._data
        return self._data.astype(dtype)

    def __repr__(self):
        return f"{type(self).__name__}(dim={self.dim})"

    def __eq__(self, other):
        if not isinstance(other, HermitianMatrix):
            return NotImplemented
        return self._data.shape == other._data.shape and bool(np.array_equal(self._data, other._data))

    __hash__ = None


class DensityMatrix(HermitianMatrix):
    """Positive semidefinite, unit-trace Hermitian matrix.

    Eigenvalues in [-1e-9, 0) are clamped to zero and the trace renormalized;
    anything more negative, or a trace off by more than 1e-9, is rejected.
    """

    __slots__ = ()

    def __init__(self, data, *, check=True):
        super().__init__(data, check=check)
        if not check:
            return
        arr = self._data
        tr = float(np.trace(arr).real)
        if abs(tr - 1.0) > TRACE_TOL:
            raise ContractViolation(f"density matrix trace is {tr!r}, expected 1")
        vals, vecs = _eigh_raw(arr)
        if vals[0] < -PSD_TOL:
            raise ContractViolation(f"density matrix has eigenvalue {vals[0]:.3g} < 0")
        if vals[0] < 0.0:
            vals = np.clip(vals, 0.0, None)
            vals = vals / vals.sum()
            fixed = (vecs * vals) @ vecs.conj().T
            fixed = 0.5 * (fixed + fixed.conj().T)
            fixed.flags.writeable = False
            self._data = fixed

    @classmethod
    def trusted(cls, data):
        """Wrap an array already known to be a valid state (skips the eigen-check)."""
        obj = cls.__new__(cls)
        arr = np.array(data, dtype=np.complex128)
        arr = 0.5 * (arr + arr.conj().T)
        arr.flags.writeable = False
        obj._data = arr
        return obj


@dataclass(frozen=True)
class Spectrum:
    """Ascending eigenvalues with the matching orthonormal eigenvectors (columns)."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def reconstruct(self):
        v = self.eigenvectors
        return (v * self.eigenvalues) @ v.conj().T


class Rng:
    """Seeded counter-based random stream (numpy's Philox).

    Identical seeds give bit-identical streams.  ``child(i)`` derives an
    independent stream from ``(seed, i)`` for fan-out.  All the usual
    ``numpy.random.Generator`` methods are available directly.
    """

    algorithm = "philox4x64-10"

    def __init__(self, seed, stream=()):
        self.seed = int(seed) % (1 << 64)
        self.stream = tuple(int(s) for s in stream)
        ss = np.random.SeedSequence(self.seed, spawn_key=self.stream)
        self._gen = np.random.Generator(np.random.Philox(ss))

    def child(self, index):
        return Rng(self.seed, self.stream + (int(index),))

    @property
    def generator(self):
        return self._gen

    def __getattr__(self, name):
        return getattr(self._gen, name)

    def __repr__(self):
        return f"Rng(seed={self.seed}, stream={self.stream})"


def _eigh_raw(arr):
    try:
        vals, vecs = np.linalg.eigh(arr)
    except np.linalg.LinAlgError as exc:
        raise NumericFailure(f"eigensolver failed to converge on a {arr.shape[0]}x{arr.shape[0]} matrix") from exc
    if not np.all(np.isfinite(vals)):
        raise NumericFailure(f"eigensolver returned non-finite values for a {arr.shape[0]}x{arr.shape[0]} matrix")
    return vals, vecs


def eigh(H):
    """Eigendecomposition of a Hermitian matrix, eigenvalues ascending."""
    arr = as_array(H)
    vals, vecs = _eigh_raw(arr)
    return Spectrum(vals, vecs)


def exp_neg(H):
    """Return ``exp(-H)`` computed spectrally; the result is PSD."""
    spec = eigh(H)
    v = spec.eigenvectors
    return HermitianMatrix((v * np.exp(-spec.eigenvalues)) @ v.conj().T, check=False)


def gibbs_weights(eigenvalues):
    """Normalized Boltzmann weights ``exp(-l_i) / sum_k exp(-l_k)`` (shift-stable)."""
    lam = np.asarray(eigenvalues, dtype=float)
    w = np.exp(-(lam - lam.min()))
    return w / w.sum()


def gibbs_of(H):
    """Gibbs state ``exp(-H) / Tr exp(-H)``.

    Adding a multiple of the identity to ``H`` leaves the result unchanged;
    the exponent is shifted by the smallest eigenvalue before exponentiating
    so large spectra do not overflow.
    """
    spec = eigh(H)
    v = spec.eigenvectors
    w = gibbs_weights(spec.eigenvalues)
    return DensityMatrix.trusted((v * w) @ v.conj().T)


def _check_same_dim(a, b):
    if a.shape != b.shape:
        raise UsageError(f"dimension mismatch: {a.shape} vs {b.shape}")


def trace_inner(A, R):
    """Real part of ``Tr[A R]``; asserts the imaginary part is negligible."""
    a, r = as_array(A), as_array(R)
    _check_same_dim(a, r)
    val = np.einsum("ij,ji->", a, r)
    if abs(val.imag) > IMAG_TOL * max(1.0, abs(val.real)):
        raise ContractViolation(f"Tr[A R] has imaginary part {val.imag:.3g}")
    return float(val.real)


def trace_distance(R1, R2):
    """Half the trace norm of ``R1 - R2``."""
    a, b = as_array(R1), as_array(R2)
    _check_same_dim(a, b)
    vals = np.linalg.eigvalsh(a - b)
    return float(min(1.0, 0.5 * np.abs(vals).sum()))


def spectral_range(H):
    """(min eigenvalue, max eigenvalue) of a Hermitian matrix."""
    vals = np.linalg.eigvalsh(as_array(H))
    return float(vals[0]), float(vals[-1])


# -- small constructors used by generators and tests -------------------------

def basis_state(n, i):
    """Pure state |i><i| in dimension n."""
    m = np.zeros((n, n), dtype=np.complex128)
    m[i, i] = 1.0
    return DensityMatrix.trusted(m)


def pure_state(vec):
    v = np.asarray(vec, dtype=np.complex128)
    v = v / np.linalg.norm(v)
    return DensityMatrix.trusted(np.outer(v, v.conj()))


def maximally_mixed(n):
    return DensityMatrix.trusted(np.eye(n, dtype=np.complex128) / n)


def random_unitary(n, rng):
    """Haar-random unitary via QR of a complex Gaussian matrix."""
    z = (rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))) / np.sqrt(2.0)
    q, r = np.linalg.qr(z)
    d = np.diag(r)
    return q * (d / np.abs(d))


def random_hermitian(n, rng, scale=1.0):
    z = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    return HermitianMatrix(scale * 0.5 * (z + z.conj().T), check=False)


def random_density(n, rng, rank=None):
    """Random density matrix of the given rank (full rank by default)."""
    k = n if rank is None else int(rank)
    g = rng.normal(size=(n, k)) + 1j * rng.normal(size=(n, k))
    m = g @ g.conj().T
    return DensityMatrix.trusted(m / np.trace(m).real)
