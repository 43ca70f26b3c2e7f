"""Deviation-from-Gaussianity metrics for code matrices.

Three granularities: entrywise (Kolmogorov-Smirnov distance to the standard
normal CDF, sample central moments vs the N(0,1) references), columnwise
(exact permutation optimal-transport cost against a fresh Gaussian cloud,
relative to a Monte Carlo baseline), and spectral (relative error of the
free loss against its Gaussian reference, computed in freeloss).
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.special import erfc

from . import freeloss, matcore
from .errors import DegenerateSampleError, ShapeError
from .records import read_kv, write_csv, write_kv

MOMENT_REFS = {2: 1.0, 4: 3.0, 6: 15.0, 8: 105.0}

MAX_OT_POINTS = 1024

REPORT_HEADER = ("ks", "delta_ot", "m2", "m4", "m6", "m8", "rel_free", "n_entries")


def normal_cdf(x):
    """Standard normal CDF, exact to complementary-error-function accuracy."""
    return 0.5 * erfc(-np.asarray(x, dtype=np.float64) / math.sqrt(2.0))


# rational approximation constants for the inverse normal CDF (central
# region and tails), accurate to ~1e-9 relative before refinement
_QA = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
       1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_QB = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
       6.680131188771972e+01, -1.328068155288572e+01)
_QC = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
       -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_QD = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
       3.754408661907416e+00)
_P_LOW = 0.02425


def _quantile_raw(p: float) -> float:
    if p < _P_LOW:
        q = math.sqrt(-2.0 * math.log(p))
        return (((((_QC[0] * q + _QC[1]) * q + _QC[2]) * q + _QC[3]) * q + _QC[4]) * q + _QC[5]) / (
            (((_QD[0] * q + _QD[1]) * q + _QD[2]) * q + _QD[3]) * q + 1.0
        )
    if p > 1.0 - _P_LOW:
        q = math.sqrt(-2.0 * math.log(1.0 - p))
        return -(((((_QC[0] * q + _QC[1]) * q + _QC[2]) * q + _QC[3]) * q + _QC[4]) * q + _QC[5]) / (
            (((_QD[0] * q + _QD[1]) * q + _QD[2]) * q + _QD[3]) * q + 1.0
        )
    q = p - 0.5
    r = q * q
    return (((((_QA[0] * r + _QA[1]) * r + _QA[2]) * r + _QA[3]) * r + _QA[4]) * r + _QA[5]) * q / (
        (((((_QB[0] * r + _QB[1]) * r + _QB[2]) * r + _QB[3]) * r + _QB[4]) * r + 1.0)
    )


def normal_quantile(p: float) -> float:
    """Inverse standard normal CDF; rational seed plus one Halley step."""
    p = float(p)
    if not (0.0 < p < 1.0):
        raise ValueError(f"quantile needs p in (0, 1), got {p}")
    x = _quantile_raw(p)
    h = 0.5 * x * x
    if h < 700.0:  # refinement is numerically safe away from extreme tails
        e = 0.5 * math.erfc(-x / math.sqrt(2.0)) - p
        u = e * math.sqrt(2.0 * math.pi) * math.exp(h)
        x = x - u / (1.0 + 0.5 * x * u)
    return x


def _as_vector(values) -> np.ndarray:
    v = np.ascontiguousarray(values, dtype=np.float64).ravel()
    if v.size < 2:
        raise ShapeError(f"need at least 2 values, got {v.size}")
    if not np.all(np.isfinite(v)):
        raise ValueError("values must be finite")
    return v


def ks_statistic(values, standardize: bool = False) -> float:
    """Sup distance between the empirical CDF and the standard normal CDF.

    Both one-sided limits are checked at every sample point. With
    standardize=True the values are first shifted and scaled to zero mean
    and unit variance.
    """
    v = _as_vector(values)
    if standardize:
        sd = float(v.std())
        if sd == 0.0:
            raise DegenerateSampleError("zero variance: cannot standardize")
        v = (v - v.mean()) / sd
    x = np.sort(v)
    n = x.size
    f = normal_cdf(x)
    grid = np.arange(1, n + 1) / n
    d_plus = float(np.max(grid - f))
    d_minus = float(np.max(f - (grid - 1.0 / n)))
    return max(d_plus, d_minus)


@dataclass(frozen=True)
class OtReference:
    """Monte Carlo mean assignment cost between two Gaussian d x b clouds."""

    d: int
    b: int
    mean_cost: float
    n_samples: int
    seed: int


def ot_cost(a, b) -> float:
    """Exact optimal-transport cost between two equal-size point clouds.

    Columns are points; cost is the minimum over permutations pi of
    (1/b) sum_j ||a_j - b_pi(j)||^2, solved exactly on the b x b
    squared-distance matrix.
    """
    a = matcore.as_matrix(a)
    b = matcore.as_matrix(b)
    if a.shape != b.shape:
        raise ShapeError(f"point clouds differ in shape: {a.shape} vs {b.shape}")
    n = a.shape[1]
    if n > MAX_OT_POINTS:
        raise ValueError(
            f"exact assignment limited to {MAX_OT_POINTS} points, got {n}"
        )
    # expanded form ||x||^2 + ||y||^2 - 2 x.y locates the optimum fast; the
    # final value is then recomputed from direct differences, which is exact
    # for coinciding points where the expansion leaves rounding residue
    sq_a = np.sum(a * a, axis=0)[:, None]
    sq_b = np.sum(b * b, axis=0)[None, :]
    cost = np.maximum(sq_a + sq_b - 2.0 * (a.T @ b), 0.0)
    rows, cols = linear_sum_assignment(cost)
    value = float(np.sum((a[:, rows] - b[:, cols]) ** 2))
    return value / n


def ot_reference(d: int, b: int, n_samples: int, seed: int) -> OtReference:
    """Mean ot_cost over independent Gaussian cloud pairs; seeded."""
    if n_samples < 2:
        raise ValueError(f"need n_samples >= 2, got {n_samples}")
    costs = np.empty(n_samples)
    for i in range(n_samples):
        rng = matcore.Rng(matcore.derive_seed(seed, i))
        g = matcore.sample_gaussian(rng, d, b)
        g2 = matcore.sample_gaussian(rng, d, b)
        costs[i] = ot_cost(g, g2)
    return OtReference(
        d=d, b=b, mean_cost=float(costs.mean()), n_samples=n_samples, seed=int(seed)
    )


def delta_ot(z, ref: OtReference, rng: matcore.Rng) -> float:
    """Relative excess transport cost of z against one fresh Gaussian cloud."""
    z = matcore.as_matrix(z)
    if z.shape != (ref.d, ref.b):
        raise ShapeError(f"matrix shape {z.shape} != reference ({ref.d}, {ref.b})")
    g = matcore.sample_gaussian(rng, ref.d, ref.b)
    return abs(ot_cost(z, g) - ref.mean_cost) / ref.mean_cost


def central_moments(values, orders=(2, 4, 6, 8)) -> dict:
    """Sample central moments (1/n) sum (x - mean)^k for each order."""
    v = _as_vector(values)
    centered = v - v.mean()
    return {int(k): float(np.mean(centered**k)) for k in orders}


@dataclass(frozen=True)
class MetricReport:
    """One matrix's full deviation-from-Gaussianity summary."""

    ks: float
    delta_ot: float
    moments: dict
    rel_err_moments: dict
    rel_err_free_loss: float
    n_entries: int


def full_report(
    z,
    gref: freeloss.GaussianReference,
    otref: OtReference,
    rng: matcore.Rng,
    standardize_ks: bool = False,
    checked: bool = True,
) -> MetricReport:
    """Assemble every metric for one code matrix (entries flattened).

    checked=False evaluates the spectral metric without the coalescence
    floor, so badly non-Gaussian (near-degenerate) codes still get a report.
    """
    z = matcore.as_matrix(z)
    flat = z.ravel()
    moments = central_moments(flat)
    rel_moments = {
        k: abs((MOMENT_REFS[k] - m) / MOMENT_REFS[k]) for k, m in moments.items()
    }
    return MetricReport(
        ks=ks_statistic(flat, standardize=standardize_ks),
        delta_ot=delta_ot(z, otref, rng),
        moments=moments,
        rel_err_moments=rel_moments,
        rel_err_free_loss=freeloss.rel_err_free_loss(z, gref, checked=checked),
        n_entries=z.size,
    )


def report_row(r: MetricReport):
    """Fixed-order CSV row matching REPORT_HEADER."""
    return (
        r.ks,
        r.delta_ot,
        r.moments[2],
        r.moments[4],
        r.moments[6],
        r.moments[8],
        r.rel_err_free_loss,
        r.n_entries,
    )


def save_report_csv(reports, path) -> None:
    rows = [report_row(r) for r in reports]
    write_csv(path, REPORT_HEADER, rows)


def qq_dump(values, n_quantiles: int):
    """(theoretical, empirical) quantile pairs against N(0,1), ascending.

    Empirical quantile at level p is the ceil(p*N)-th order statistic, so a
    sample placed exactly at the theoretical quantiles lands on the diagonal.
    """
    v = np.sort(_as_vector(values))
    n_total = v.size
    if not (2 <= n_quantiles <= n_total):
        raise ShapeError(
            f"need 2 <= n_quantiles <= {n_total}, got {n_quantiles}"
        )
    rows = []
    for i in range(1, n_quantiles + 1):
        p = (i - 0.5) / n_quantiles
        idx = math.ceil(p * n_total) - 1
        rows.append((normal_quantile(p), float(v[idx])))
    return rows


def save_qq(values, n_quantiles: int, path) -> None:
    write_csv(path, ("theoretical", "empirical"), qq_dump(values, n_quantiles))


def hist_dump(values, n_bins: int, lo: float = None, hi: float = None):
    """(bin_left, bin_right, count) rows over an even grid."""
    v = _as_vector(values)
    if n_bins < 1:
        raise ValueError("need at least one bin")
    lo = float(v.min()) if lo is None else float(lo)
    hi = float(v.max()) if hi is None else float(hi)
    if hi <= lo:
        hi = lo + 1.0
    counts, edges = np.histogram(v, bins=n_bins, range=(lo, hi))
    return [
        (float(edges[i]), float(edges[i + 1]), int(counts[i])) for i in range(n_bins)
    ]


def save_hist(values, n_bins: int, path, lo: float = None, hi: float = None) -> None:
    write_csv(path, ("bin_left", "bin_right", "count"), hist_dump(values, n_bins, lo, hi))


_OT_FIELDS = ("d", "b", "mean_cost", "n_samples", "seed")


def save_ot_reference(ref: OtReference, path) -> None:
    write_kv(path, [(k, getattr(ref, k)) for k in _OT_FIELDS])


def load_ot_reference(path) -> OtReference:
    kv = read_kv(path)
    return OtReference(
        d=int(kv["d"]),
        b=int(kv["b"]),
        mean_cost=float(kv["mean_cost"]),
        n_samples=int(kv["n_samples"]),
        seed=int(kv["seed"]),
    )
