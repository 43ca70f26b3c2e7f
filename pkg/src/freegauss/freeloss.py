"""Spectral free-energy loss for wide matrices and its analytic gradient.

For a d x b matrix Y (2 <= d < b, c = d/b) with singular values sigma_i, the
free energy is

    entropy_term   = (1/(d(d-1))) sum_{i != j} log|sigma_i^2 - sigma_j^2|
    potential_term = (1/d) sum_i [sigma_i^2 / d - (1/c - 1) log sigma_i^2]

and the loss is the negated difference, loss = potential_term - entropy_term.
Minimizing the loss pushes the squared singular values toward the spectrum of
an i.i.d. Gaussian matrix of the same shape: the log-gap term repels
coalescing values while the potential confines them. `gaussian_reference`
estimates the attainable minimum by Monte Carlo over Gaussian draws.

The trace term sigma_i^2/d carries an extra 1/d compared to a naive reading
of the energy as a plain sum; only this scaling reproduces the Gaussian
reference level (about -34.69 at d=32, b=256). The plain-sum variant is kept
behind `unscaled_trace=True` for comparison.
"""

from dataclasses import dataclass

import numpy as np

from . import matcore
from .errors import (
    CoalescedSingularValuesError,
    NoConvergenceError,
    ShapeError,
    ZeroSingularValueError,
)
from .records import read_kv, write_kv


@dataclass(frozen=True)
class FreeLossReport:
    """Loss value with its entropy and potential constituents."""

    loss: float
    entropy_term: float
    potential_term: float
    c: float
    d: int
    b: int


@dataclass(frozen=True)
class GaussianReference:
    """Monte Carlo mean/std of the loss over i.i.d. Gaussian d x b draws."""

    d: int
    b: int
    mean_loss: float
    std_loss: float
    n_samples: int
    seed: int


def _check_shape(d: int, b: int):
    if d < 2:
        raise ShapeError(f"need at least 2 rows, got {d}")
    if d >= b:
        raise ShapeError(f"need rows < cols strictly, got ({d}, {b})")


def _spectrum(y) -> tuple[np.ndarray, int, int]:
    y = matcore.as_matrix(y)
    d, b = y.shape
    _check_shape(d, b)
    return matcore.singular_values(y), d, b


def gap_floor(s2_max: float) -> float:
    """Smallest squared-singular-value gap the log terms can resolve."""
    return 1e-12 * (s2_max + 1.0)


def _check_spectrum(s2: np.ndarray, checked: bool = True):
    """Reject degenerate spectra.

    checked=True enforces the gap floor relative to the largest squared
    singular value. checked=False only rejects exact zeros and exact ties:
    training loops use this mode because freshly initialized encoders on
    low-dimensional data produce spectra spanning many decades, which the
    absolute floor would reject even though every log and reciprocal is
    still finite; the huge early gradients are what pushes the spectrum
    apart in the first place.
    """
    floor = gap_floor(float(s2[0])) if checked else 0.0
    if float(s2[-1]) <= floor:
        raise ZeroSingularValueError(
            f"smallest squared singular value {s2[-1]:.3e} is at or below "
            f"the resolvable floor {floor:.3e}"
        )
    min_gap = float(np.min(np.diff(s2[::-1])))  # s2 is descending
    if min_gap <= floor:
        raise CoalescedSingularValuesError(
            f"squared singular values coalesce: min gap {min_gap:.3e} "
            f"<= floor {floor:.3e}"
        )
    return floor


def _terms(s2: np.ndarray, d: int, c: float, unscaled_trace: bool):
    diff = np.abs(s2[:, None] - s2[None, :])
    off = ~np.eye(d, dtype=bool)
    entropy = float(np.sum(np.log(diff[off]))) / (d * (d - 1))
    trace = s2 if unscaled_trace else s2 / d
    potential = float(np.sum(trace - (1.0 / c - 1.0) * np.log(s2))) / d
    return entropy, potential


def free_energy(y, unscaled_trace: bool = False, checked: bool = True) -> FreeLossReport:
    """Full report (loss and both terms) for one matrix."""
    s, d, b = _spectrum(y)
    s2 = s * s
    _check_spectrum(s2, checked)
    c = d / b
    entropy, potential = _terms(s2, d, c, unscaled_trace)
    return FreeLossReport(
        loss=-(entropy - potential),
        entropy_term=entropy,
        potential_term=potential,
        c=c,
        d=d,
        b=b,
    )


def free_loss(y, unscaled_trace: bool = False, checked: bool = True) -> float:
    """Scalar loss; lower means spectrally closer to a Gaussian draw."""
    return free_energy(y, unscaled_trace=unscaled_trace, checked=checked).loss


def _grad_coeffs(s: np.ndarray, s2: np.ndarray, d: int, c: float, unscaled_trace: bool):
    diff = s2[:, None] - s2[None, :]
    np.fill_diagonal(diff, 1.0)  # placeholder, masked out below
    inv = 1.0 / diff
    np.fill_diagonal(inv, 0.0)
    repulsion = -(4.0 * s / (d * (d - 1))) * inv.sum(axis=1)
    trace_d = s if unscaled_trace else s / d
    confinement = (2.0 / d) * (trace_d - (1.0 / c - 1.0) / s)
    return repulsion + confinement


def free_loss_grad(y, unscaled_trace: bool = False, checked: bool = True) -> np.ndarray:
    """Gradient of the loss with respect to the matrix entries.

    Computed through the singular value decomposition: if Y = U diag(s) V^T
    with distinct singular values, the gradient is U diag(dL/ds) V^T.
    """
    y = matcore.as_matrix(y)
    d, b = y.shape
    _check_shape(d, b)
    dec = matcore.svd(y)
    s2 = dec.s * dec.s
    _check_spectrum(s2, checked)
    g = _grad_coeffs(dec.s, s2, d, d / b, unscaled_trace)
    return (dec.u * g) @ dec.vt


def free_energy_and_grad(y, unscaled_trace: bool = False, checked: bool = True):
    """(report, gradient) sharing one decomposition; the training hot path."""
    y = matcore.as_matrix(y)
    d, b = y.shape
    _check_shape(d, b)
    dec = matcore.svd(y)
    s2 = dec.s * dec.s
    _check_spectrum(s2, checked)
    c = d / b
    entropy, potential = _terms(s2, d, c, unscaled_trace)
    report = FreeLossReport(
        loss=-(entropy - potential),
        entropy_term=entropy,
        potential_term=potential,
        c=c,
        d=d,
        b=b,
    )
    g = _grad_coeffs(dec.s, s2, d, c, unscaled_trace)
    return report, (dec.u * g) @ dec.vt


def gaussian_reference(d: int, b: int, n_samples: int, seed: int) -> GaussianReference:
    """Mean/std of the loss over n_samples independent Gaussian d x b draws.

    Deterministic per seed; draw i uses its own child stream, so the result
    does not depend on evaluation order. A draw whose spectrum trips the
    coalescence floor is redrawn from the same stream (at most 10 times; the
    event has probability zero for continuous draws).
    """
    _check_shape(d, b)
    if n_samples < 2:
        raise ValueError(f"need n_samples >= 2, got {n_samples}")
    losses = np.empty(n_samples)
    for i in range(n_samples):
        rng = matcore.Rng(matcore.derive_seed(seed, i))
        for _ in range(10):
            try:
                losses[i] = free_loss(matcore.sample_gaussian(rng, d, b))
                break
            except CoalescedSingularValuesError:
                continue
        else:
            raise NoConvergenceError(
                f"10 consecutive degenerate Gaussian draws at sample {i}"
            )
    return GaussianReference(
        d=d,
        b=b,
        mean_loss=float(losses.mean()),
        std_loss=float(losses.std(ddof=1)),
        n_samples=n_samples,
        seed=int(seed),
    )


def rel_err_free_loss(y, ref: GaussianReference, checked: bool = True) -> float:
    """|(reference mean - loss(y)) / reference mean|."""
    y = matcore.as_matrix(y)
    if y.shape != (ref.d, ref.b):
        raise ShapeError(f"matrix shape {y.shape} != reference ({ref.d}, {ref.b})")
    return abs((ref.mean_loss - free_loss(y, checked=checked)) / ref.mean_loss)


_REF_FIELDS = ("d", "b", "mean_loss", "std_loss", "n_samples", "seed")


def save_gaussian_reference(ref: GaussianReference, path) -> None:
    write_kv(path, [(k, getattr(ref, k)) for k in _REF_FIELDS])


def load_gaussian_reference(path) -> GaussianReference:
    kv = read_kv(path)
    return GaussianReference(
        d=int(kv["d"]),
        b=int(kv["b"]),
        mean_loss=float(kv["mean_loss"]),
        std_loss=float(kv["std_loss"]),
        n_samples=int(kv["n_samples"]),
        seed=int(kv["seed"]),
    )


_REPORT_FIELDS = ("loss", "entropy_term", "potential_term", "c", "d", "b")


def save_report(report: FreeLossReport, path) -> None:
    write_kv(path, [(k, getattr(report, k)) for k in _REPORT_FIELDS])


def load_report(path) -> FreeLossReport:
    kv = read_kv(path)
    return FreeLossReport(
        loss=float(kv["loss"]),
        entropy_term=float(kv["entropy_term"]),
        potential_term=float(kv["potential_term"]),
        c=float(kv["c"]),
        d=int(kv["d"]),
        b=int(kv["b"]),
    )
