"""Spectral free-energy regularization and Gaussianity diagnostics.

Training a network so that its batch-code matrix looks like an i.i.d.
Gaussian draw, by descending a loss built from the code spectrum: pairwise
log-gap repulsion between squared singular values plus a trace-and-log
confinement. Submodules: matcore (seeded RNG, SVD, matrix IO), rmt
(Marchenko-Pastur law, discrete free entropy), freeloss (the loss, its
gradient, Gaussian references), gaussmetrics (KS / transport / moment
diagnostics), neural (from-scratch MLP and Adam), experiments (training
drivers and sweeps), cli (command line front end).
"""

__version__ = "0.1.0"

from . import errors, matcore, rmt, freeloss, gaussmetrics, neural, experiments
from .errors import FreeGaussError
from .freeloss import (
    FreeLossReport,
    GaussianReference,
    free_energy,
    free_energy_and_grad,
    free_loss,
    free_loss_grad,
    gaussian_reference,
)
from .gaussmetrics import MetricReport, delta_ot, full_report, ks_statistic, ot_cost
from .matcore import Rng, derive_seed
from .rmt import DiscreteMeasure, MpParams, free_entropy, mp_cdf, mp_density

__all__ = [
    "__version__",
    "errors",
    "matcore",
    "rmt",
    "freeloss",
    "gaussmetrics",
    "neural",
    "experiments",
    "FreeGaussError",
    "FreeLossReport",
    "GaussianReference",
    "free_energy",
    "free_energy_and_grad",
    "free_loss",
    "free_loss_grad",
    "gaussian_reference",
    "MetricReport",
    "delta_ot",
    "full_report",
    "ks_statistic",
    "ot_cost",
    "Rng",
    "derive_seed",
    "DiscreteMeasure",
    "MpParams",
    "free_entropy",
    "mp_cdf",
    "mp_density",
]
