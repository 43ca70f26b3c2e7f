"""Marchenko-Pastur analytics and log-energy functionals of discrete spectra.

The continuous side: density, CDF, and curve dumps for the limiting spectral
law of normalized Gaussian sample covariance matrices with aspect ratio
c = rows/cols in (0, 1]. The discrete side: weighted atomic measures carrying
eigenvalue spectra, their pairwise log-gap entropy, and two potential
functionals linked by an exact rescaling identity (pushforward_check).
"""

import math
from dataclasses import dataclass

import numpy as np

from . import matcore
from .errors import CoalescedAtomsError, NonPositiveAtomError, ShapeError
from .records import write_csv


@dataclass(frozen=True)
class MpParams:
    """Shape parameter c in (0,1] and derived support edges (1 +- sqrt(c))^2."""

    c: float
    a_minus: float
    a_plus: float

    def __post_init__(self):
        if not (0.0 < self.c <= 1.0):
            raise ValueError(f"c must lie in (0, 1], got {self.c}")

    @classmethod
    def from_c(cls, c: float) -> "MpParams":
        c = float(c)
        if not (0.0 < c <= 1.0) or not math.isfinite(c):
            raise ValueError(f"c must lie in (0, 1], got {c}")
        sq = math.sqrt(c)
        return cls(c=c, a_minus=(1.0 - sq) ** 2, a_plus=(1.0 + sq) ** 2)

    @classmethod
    def from_shape(cls, d: int, b: int) -> "MpParams":
        if not (1 <= d <= b):
            raise ShapeError(f"need 1 <= d <= b, got ({d}, {b})")
        return cls.from_c(d / b)


@dataclass(frozen=True)
class DiscreteMeasure:
    """Probability measure with finitely many weighted atoms on the real line."""

    atoms: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        atoms = np.ascontiguousarray(self.atoms, dtype=np.float64)
        weights = np.ascontiguousarray(self.weights, dtype=np.float64)
        if atoms.ndim != 1 or weights.ndim != 1:
            raise ShapeError("atoms and weights must be 1-D")
        if atoms.size != weights.size or atoms.size < 1:
            raise ShapeError(
                f"need matching atom/weight counts >= 1, got {atoms.size}, {weights.size}"
            )
        if not (np.all(np.isfinite(atoms)) and np.all(np.isfinite(weights))):
            raise ValueError("atoms and weights must be finite")
        if np.any(weights < 0.0):
            raise ValueError("weights must be non-negative")
        if abs(float(weights.sum()) - 1.0) > 1e-12:
            raise ValueError(f"weights must sum to 1, got {weights.sum()!r}")
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def uniform(cls, atoms) -> "DiscreteMeasure":
        """Equal-weight measure on the given atoms."""
        atoms = np.ascontiguousarray(atoms, dtype=np.float64)
        n = atoms.size
        if n < 1:
            raise ShapeError("need at least one atom")
        return cls(atoms=atoms, weights=np.full(n, 1.0 / n))

    @property
    def n(self) -> int:
        return self.atoms.size


def mp_density(p: MpParams, lam: float) -> float:
    """Density sqrt((a+ - x)(x - a-)) / (2 pi c x); zero off the support."""
    lam = float(lam)
    if not math.isfinite(lam):
        raise ValueError("lambda must be finite")
    if lam <= 0.0 or lam < p.a_minus or lam > p.a_plus:
        return 0.0
    rad = (p.a_plus - lam) * (lam - p.a_minus)
    if rad <= 0.0:
        return 0.0
    return math.sqrt(rad) / (2.0 * math.pi * p.c * lam)


def _adaptive_simpson(f, a, b, fa, fm, fb, whole, tol, depth):
    m = 0.5 * (a + b)
    lm = 0.5 * (a + m)
    rm = 0.5 * (m + b)
    flm = f(lm)
    frm = f(rm)
    left = (m - a) / 6.0 * (fa + 4.0 * flm + fm)
    right = (b - m) / 6.0 * (fm + 4.0 * frm + fb)
    err = left + right - whole
    if depth <= 0 or abs(err) <= 15.0 * tol:
        return left + right + err / 15.0
    half = 0.5 * tol
    return _adaptive_simpson(
        f, a, m, fa, flm, fm, left, half, depth - 1
    ) + _adaptive_simpson(f, m, b, fm, frm, fb, right, half, depth - 1)


def _integrate(f, a, b, tol=1e-11):
    if b <= a:
        return 0.0
    m = 0.5 * (a + b)
    fa, fm, fb = f(a), f(m), f(b)
    whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    return _adaptive_simpson(f, a, b, fa, fm, fb, whole, tol, depth=48)


def _arc_integrand(p: MpParams):
    # substitute lam = mid + rad*sin(phi): the square-root edge factors of the
    # density combine with d(lam) into a smooth cos^2 term on [-pi/2, pi/2]
    mid = 0.5 * (p.a_plus + p.a_minus)
    rad = 0.5 * (p.a_plus - p.a_minus)
    norm = 2.0 * math.pi * p.c
    if p.a_minus == 0.0:
        # c = 1: lam = rad*(1+sin), cancel the shared (1+sin) factor to avoid 0/0
        def g(phi):
            return rad * (1.0 - math.sin(phi)) / norm

    else:

        def g(phi):
            s = math.sin(phi)
            co = math.cos(phi)
            return rad * rad * co * co / (norm * (mid + rad * s))

    return g, mid, rad


def mp_cdf(p: MpParams, lam: float) -> float:
    """CDF of the density by adaptive quadrature; clamped to [0, 1]."""
    lam = float(lam)
    if not math.isfinite(lam):
        raise ValueError("lambda must be finite")
    if lam <= p.a_minus:
        return 0.0
    if lam > p.a_plus:
        return 1.0
    g, mid, rad = _arc_integrand(p)
    x = (lam - mid) / rad
    phi_hi = math.asin(min(1.0, max(-1.0, x)))
    val = _integrate(g, -0.5 * math.pi, phi_hi)
    return min(1.0, max(0.0, val))


def esd_from_matrix(y, normalize_by_b: bool = True) -> DiscreteMeasure:
    """Uniform measure on the eigenvalues of y yT (divided by cols if set)."""
    y = matcore.as_matrix(y)
    d, b = y.shape
    if d > b:
        raise ShapeError(f"expected rows <= cols, got ({d}, {b})")
    s = y @ y.T
    s = 0.5 * (s + s.T)  # scrub matmul rounding asymmetry
    atoms = matcore.eig_sym(s)
    if normalize_by_b:
        atoms = atoms / b
    return DiscreteMeasure.uniform(atoms)


def free_entropy(m: DiscreteMeasure) -> float:
    """Off-diagonal average of log|atom gaps|: sum of w_i w_j log|l_i - l_j|
    over i != j, divided by the off-diagonal weight mass 1 - sum w_i^2.

    For uniform weights on n atoms this is the plain 1/(n(n-1)) average. The
    diagonal is excluded by convention; duplicate atoms are rejected.
    """
    n = m.n
    if n < 2:
        raise CoalescedAtomsError("free entropy needs at least two atoms")
    diff = np.abs(m.atoms[:, None] - m.atoms[None, :])
    off = ~np.eye(n, dtype=bool)
    gaps = diff[off]
    if np.any(gaps == 0.0):
        raise CoalescedAtomsError("duplicate atoms: zero pairwise gap")
    wprod = np.outer(m.weights, m.weights)[off]
    mass = float(wprod.sum())
    if mass <= 0.0:
        raise CoalescedAtomsError("all weight sits on a single atom")
    return float(np.dot(wprod, np.log(gaps)) / mass)


def _check_positive_atoms(m: DiscreteMeasure):
    if np.any(m.atoms <= 0.0):
        raise NonPositiveAtomError(
            f"atoms must be strictly positive, min = {m.atoms.min()!r}"
        )


def phi_c(m: DiscreteMeasure, c: float) -> float:
    """Log-gap entropy minus the potential sum w_i (l_i/c - (1/c - 1) log l_i).

    c may exceed 1 here; only positivity is required.
    """
    c = float(c)
    if not (c > 0.0) or not math.isfinite(c):
        raise ValueError(f"c must be positive and finite, got {c}")
    _check_positive_atoms(m)
    ent = free_entropy(m)
    pot = float(
        np.dot(m.weights, m.atoms / c - (1.0 / c - 1.0) * np.log(m.atoms))
    )
    return ent - pot


def psi_theta(m: DiscreteMeasure, theta: float) -> float:
    """Log-gap entropy minus the potential sum w_i (l_i - (theta - 1) log l_i)."""
    theta = float(theta)
    if not (theta > 0.0) or not math.isfinite(theta):
        raise ValueError(f"theta must be positive and finite, got {theta}")
    _check_positive_atoms(m)
    ent = free_entropy(m)
    pot = float(np.dot(m.weights, m.atoms - (theta - 1.0) * np.log(m.atoms)))
    return ent - pot


def pushforward_check(m: DiscreteMeasure, theta: float) -> float:
    """Defect of the rescaling identity linking the two potential functionals.

    Dividing the atoms by theta turns psi_theta into phi_{1/theta} up to the
    constant theta*log(theta); the returned absolute defect is ~1e-15 in exact
    arithmetic and must stay below 1e-10.
    """
    theta = float(theta)
    if not (theta > 0.0) or not math.isfinite(theta):
        raise ValueError(f"theta must be positive and finite, got {theta}")
    nu = DiscreteMeasure(atoms=m.atoms / theta, weights=m.weights)
    lhs = phi_c(nu, 1.0 / theta)
    rhs = psi_theta(m, theta) - theta * math.log(theta)
    return abs(lhs - rhs)


def sup_distance_to_mp(m: DiscreteMeasure, p: MpParams) -> float:
    """Kolmogorov sup distance between the measure's CDF and the MP CDF."""
    order = np.argsort(m.atoms, kind="stable")
    atoms = m.atoms[order]
    cum = np.cumsum(m.weights[order])
    dist = 0.0
    prev = 0.0
    for lam, hi in zip(atoms, cum):
        f = mp_cdf(p, lam)
        dist = max(dist, abs(hi - f), abs(prev - f))
        prev = hi
    return dist


def mp_curve(p: MpParams, n_points: int):
    """(lambda, density, cdf) rows on an even grid spanning the support."""
    if n_points < 2:
        raise ValueError("need at least 2 grid points")
    grid = np.linspace(p.a_minus, p.a_plus, n_points)
    return [(float(x), mp_density(p, x), mp_cdf(p, x)) for x in grid]


def save_mp_curve(p: MpParams, n_points: int, path) -> None:
    """Dump the density/CDF curve as CSV for figure overlays."""
    write_csv(path, ("lambda", "density", "cdf"), mp_curve(p, n_points))
