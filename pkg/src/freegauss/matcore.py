"""Dense matrices, spectral decompositions, and counter-based seeded sampling.

Matrices are plain float64 numpy arrays in row-major order. Every entry point
validates finiteness so spectral code downstream never sees NaN/Inf.
"""

from dataclasses import dataclass

import numpy as np

from .errors import (
    NoConvergenceError,
    NonFiniteError,
    NotSymmetricError,
    ParseError,
    ShapeError,
)
from .records import fmt

_MASK64 = 0xFFFFFFFFFFFFFFFF
_GOLDEN = 0x9E3779B97F4A7C15


def _mix64(x: int) -> int:
    # splitmix64 output function
    x &= _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def derive_seed(seed: int, index: int) -> int:
    """Derive an independent 64-bit child seed from (seed, index).

    Children for distinct indices give statistically independent streams, so
    workers can consume them in any order without affecting results.
    """
    if index < 0:
        raise ValueError("index must be >= 0")
    return _mix64((int(seed) + (index + 1) * _GOLDEN) & _MASK64)


class Rng:
    """Deterministic counter-based random stream (Philox core, Box-Muller normals).

    The same 64-bit seed reproduces the same stream on every platform. One Rng
    instance must be owned by a single consumer; derive children with
    `derive_seed` for parallel work.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK64
        self._bitgen = np.random.Philox(key=self.seed)

    def _raw(self, n: int) -> np.ndarray:
        return self._bitgen.random_raw(n)

    def uniform(self, n: int) -> np.ndarray:
        """n i.i.d. uniforms on (0, 1] (53-bit resolution, never exactly 0)."""
        return ((self._raw(n) >> np.uint64(11)) + np.uint64(1)) * 2.0**-53

    def normal(self, shape) -> np.ndarray:
        """i.i.d. standard normals via the Box-Muller transform."""
        shape = (shape,) if np.isscalar(shape) else tuple(shape)
        n = int(np.prod(shape)) if shape else 1
        m = (n + 1) // 2
        u1 = self.uniform(m)
        u2 = self.uniform(m)
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
        return z.reshape(shape)

    def chisq1(self, shape) -> np.ndarray:
        """i.i.d. chi-squared(1) draws, i.e. squared standard normals."""
        return self.normal(shape) ** 2

    def permutation(self, n: int) -> np.ndarray:
        """Uniformly random permutation of range(n)."""
        return np.argsort(self.uniform(n), kind="stable")

    def spawn(self, index: int) -> "Rng":
        """Independent child generator keyed by (seed, index)."""
        return Rng(derive_seed(self.seed, index))


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Coerce to a finite float64 2-D array; raise on NaN/Inf or wrong rank."""
    m = np.ascontiguousarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got ndim={m.ndim}")
    if not np.all(np.isfinite(m)):
        raise NonFiniteError(f"{name} contains NaN or Inf entries")
    return m


def sample_gaussian(rng: Rng, rows: int, cols: int) -> np.ndarray:
    """rows x cols matrix of i.i.d. N(0,1) entries."""
    if rows < 1 or cols < 1:
        raise ShapeError(f"need rows, cols >= 1, got ({rows}, {cols})")
    return rng.normal((rows, cols))


def sample_chisq1(rng: Rng, rows: int, cols: int) -> np.ndarray:
    """rows x cols matrix of i.i.d. chi-squared(1) entries (all >= 0)."""
    if rows < 1 or cols < 1:
        raise ShapeError(f"need rows, cols >= 1, got ({rows}, {cols})")
    return rng.chisq1((rows, cols))


@dataclass(frozen=True)
class Svd:
    """Thin singular value decomposition of a d x b matrix with d <= b.

    u is d x d with orthonormal columns, s holds the d singular values sorted
    descending, vt is d x b with orthonormal rows; u @ diag(s) @ vt
    reconstructs the input.
    """

    u: np.ndarray
    s: np.ndarray
    vt: np.ndarray


def svd(m) -> Svd:
    """Thin SVD of a wide matrix (rows <= cols), singular values descending."""
    m = as_matrix(m)
    d, b = m.shape
    if d > b:
        raise ShapeError(f"svd expects rows <= cols, got ({d}, {b})")
    try:
        u, s, vt = np.linalg.svd(m, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NoConvergenceError(f"SVD did not converge: {exc}") from exc
    return Svd(u=u, s=s, vt=vt)


def singular_values(m) -> np.ndarray:
    """Singular values only (descending), skipping the U/V computation."""
    m = as_matrix(m)
    try:
        return np.linalg.svd(m, compute_uv=False)
    except np.linalg.LinAlgError as exc:
        raise NoConvergenceError(f"SVD did not converge: {exc}") from exc


def eig_sym(m, tol: float = 1e-12) -> np.ndarray:
    """Eigenvalues of a symmetric matrix, sorted descending.

    Raises NotSymmetricError when max |m - m^T| exceeds tol.
    """
    m = as_matrix(m)
    if m.shape[0] != m.shape[1]:
        raise ShapeError(f"eig_sym expects a square matrix, got {m.shape}")
    asym = float(np.max(np.abs(m - m.T))) if m.size else 0.0
    if asym > tol:
        raise NotSymmetricError(f"max |m - m^T| = {asym:.3e} exceeds tol {tol:.1e}")
    try:
        w = np.linalg.eigvalsh(m)
    except np.linalg.LinAlgError as exc:
        raise NoConvergenceError(f"symmetric eigensolver failed: {exc}") from exc
    return w[::-1].copy()


def save_matrix_csv(m, path) -> None:
    """Write a matrix as CSV: one row per line, '.' decimal, no header."""
    m = as_matrix(m)
    with open(path, "w", newline="\n") as fh:
        for row in m:
            fh.write(",".join(fmt(float(v)) for v in row) + "\n")


def load_matrix_csv(path) -> np.ndarray:
    """Read a headerless CSV matrix; errors report the offending line."""
    rows = []
    width = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            try:
                vals = [float(p) for p in parts]
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: not a number ({exc})") from exc
            if width is None:
                width = len(vals)
            elif len(vals) != width:
                raise ParseError(
                    f"{path}:{lineno}: expected {width} columns, got {len(vals)}"
                )
            rows.append(vals)
    if not rows:
        raise ParseError(f"{path}: empty matrix file")
    try:
        return as_matrix(np.array(rows))
    except NonFiniteError as exc:
        raise ParseError(f"{path}: {exc}") from exc
