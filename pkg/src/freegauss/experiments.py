"""Experiment drivers: mixture data, encoder/autoencoder training with
spectral regularization, tau and batch/dimension sweeps, and inverse
recovery through a frozen autoencoder.

Every run is a pure function of its config: all randomness flows through
child streams derived from the config seed, so re-running reproduces logs
bit for bit. Spectral losses inside training use checked=False (exact-zero
guards only): fresh encoders on low-dimensional data start with spectra
spanning many decades, and the early repulsion gradients are exactly what
spreads them out.
"""

import os
import time
from collections import namedtuple
from dataclasses import dataclass, field

import numpy as np

from . import freeloss, gaussmetrics, matcore, neural, rmt
from .errors import (
    CoalescedSingularValuesError,
    ParseError,
    ShapeError,
    ZeroSingularValueError,
)
from .records import read_kv, write_csv, write_kv

REGULARIZERS = ("free", "tikhonov", "none")

_DEGENERATE = (CoalescedSingularValuesError, ZeroSingularValueError)

# child-stream indices off a run seed; fixed so that every consumer is
# independent of the others and of evaluation order
_S_ENC, _S_DEC, _S_SHUFFLE, _S_TESTSEL, _S_TRAINSEL = 1, 2, 3, 4, 5
_S_MET_TRAIN, _S_MET_TEST, _S_GREF, _S_OTREF = 6, 7, 8, 9
_S_TRAIN_DATA, _S_TEST_DATA = 101, 102


@dataclass(frozen=True)
class MixtureConfig:
    """Two shifted chi-squared clusters: x = scale*u + s*mu, u entries
    i.i.d. chi-squared(1), s the balanced +-1 label."""

    n_per_class: int
    p: int = 2
    mu: tuple = (5.0, 5.0)
    scale: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.n_per_class < 1:
            raise ValueError("n_per_class must be >= 1")
        if len(self.mu) != self.p:
            raise ShapeError(f"mu has {len(self.mu)} entries, p = {self.p}")


def gen_mixture(cfg: MixtureConfig, rng: matcore.Rng = None):
    """(X, labels): X is p x 2n with shuffled balanced columns."""
    rng = rng if rng is not None else matcore.Rng(cfg.seed)
    n = 2 * cfg.n_per_class
    u = rng.chisq1((cfg.p, n))
    labels = np.concatenate(
        [np.ones(cfg.n_per_class), -np.ones(cfg.n_per_class)]
    )
    labels = labels[rng.permutation(n)]
    mu = np.asarray(cfg.mu, dtype=np.float64)
    x = cfg.scale * u + labels[None, :] * mu[:, None]
    return x, labels


@dataclass(frozen=True)
class Dataset:
    train_x: np.ndarray
    train_labels: np.ndarray
    test_x: np.ndarray
    test_labels: np.ndarray


def default_dataset(
    seed: int,
    n_per_class: int = 1280,
    test_per_class: int = 1280,
    p: int = 2,
    mu: tuple = (5.0, 5.0),
    scale: float = 0.5,
) -> Dataset:
    """Independent train/test mixtures from one master seed."""
    tr_cfg = MixtureConfig(n_per_class, p, mu, scale, matcore.derive_seed(seed, _S_TRAIN_DATA))
    te_cfg = MixtureConfig(test_per_class, p, mu, scale, matcore.derive_seed(seed, _S_TEST_DATA))
    tr_x, tr_l = gen_mixture(tr_cfg)
    te_x, te_l = gen_mixture(te_cfg)
    return Dataset(train_x=tr_x, train_labels=tr_l, test_x=te_x, test_labels=te_l)


@dataclass(frozen=True)
class TrainConfig:
    d: int = 32
    b: int = 256
    epochs: int = 2000
    lr: float = 1e-3
    tau: float = 1.0
    regularizer: str = "free"
    seed: int = 0
    snapshot_epochs: tuple = ()

    def __post_init__(self):
        if self.d >= self.b:
            raise ShapeError(f"need d < b, got ({self.d}, {self.b})")
        if self.d < 2:
            raise ShapeError(f"need d >= 2, got {self.d}")
        if self.tau < 0:
            raise ValueError("tau must be >= 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.regularizer not in REGULARIZERS:
            raise ValueError(
                f"regularizer must be one of {REGULARIZERS}, got {self.regularizer!r}"
            )
        object.__setattr__(
            self, "snapshot_epochs", tuple(sorted(int(e) for e in self.snapshot_epochs))
        )


EpochRow = namedtuple(
    "EpochRow",
    "epoch train_loss_total train_mse train_reg train_free_loss test_free_loss",
)

EPOCH_HEADER = EpochRow._fields


@dataclass
class RunRecord:
    config: TrainConfig
    rows: list
    final_train: gaussmetrics.MetricReport
    final_test: gaussmetrics.MetricReport
    final_train_mse: float
    final_test_mse: float
    snapshots: list  # (relative path, data row count)
    checkpoints: list  # relative paths
    wall_seconds: float = field(compare=False, default=0.0)
    enc: neural.Mlp = field(compare=False, default=None, repr=False)
    dec: neural.Mlp = field(compare=False, default=None, repr=False)


def encoder_shape(d: int, p: int = 2, width: int = 32):
    """Widen, three tanh blocks, linear head down to the code dimension."""
    return (
        (p, width, "identity"),
        (width, width, "tanh"),
        (width, width, "tanh"),
        (width, width, "tanh"),
        (width, d, "identity"),
    )


def decoder_shape(d: int, p: int = 2, width: int = 32):
    """Mirror of the encoder back to data space."""
    return (
        (d, width, "tanh"),
        (width, width, "tanh"),
        (width, width, "tanh"),
        (width, p, "identity"),
    )


def _pick_columns(x: np.ndarray, b: int, rng: matcore.Rng) -> np.ndarray:
    n = x.shape[1]
    if b > n:
        raise ShapeError(f"batch size {b} exceeds available columns {n}")
    return x[:, rng.permutation(n)[:b]].copy()


def _free_diag(codes) -> float:
    """Free loss as a diagnostic; nan when the spectrum has exact ties."""
    try:
        return freeloss.free_loss(codes, checked=False)
    except _DEGENERATE:
        return float("nan")


def _snapshot(codes, epoch: int, out_dir: str, snapshots: list):
    tag = f"snap_ep{epoch:05d}"
    flat = codes.ravel()
    hist_rows = gaussmetrics.hist_dump(flat, 40)
    gaussmetrics.save_hist(flat, 40, os.path.join(out_dir, f"{tag}_hist.csv"))
    nq = min(100, flat.size)
    qq_rows = gaussmetrics.qq_dump(flat, nq)
    gaussmetrics.save_qq(flat, nq, os.path.join(out_dir, f"{tag}_qq.csv"))
    atoms = rmt.esd_from_matrix(codes).atoms
    write_csv(
        os.path.join(out_dir, f"{tag}_spectrum.csv"),
        ("eigenvalue",),
        [(float(a),) for a in atoms],
    )
    snapshots.append((f"{tag}_hist.csv", len(hist_rows)))
    snapshots.append((f"{tag}_qq.csv", len(qq_rows)))
    snapshots.append((f"{tag}_spectrum.csv", len(atoms)))


def _references(cfg: TrainConfig, gref, otref):
    if gref is None:
        gref = freeloss.gaussian_reference(
            cfg.d, cfg.b, 200, matcore.derive_seed(cfg.seed, _S_GREF)
        )
    if otref is None:
        otref = gaussmetrics.ot_reference(
            cfg.d, cfg.b, 50, matcore.derive_seed(cfg.seed, _S_OTREF)
        )
    return gref, otref


def _train(cfg: TrainConfig, data: Dataset, with_decoder: bool,
           out_dir=None, gref=None, otref=None) -> RunRecord:
    t0 = time.perf_counter()
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
    elif cfg.snapshot_epochs:
        raise ValueError("snapshot_epochs set but no out_dir given")

    enc = neural.init_params(
        encoder_shape(cfg.d, p=data.train_x.shape[0]),
        matcore.Rng(matcore.derive_seed(cfg.seed, _S_ENC)),
    )
    dec = None
    params = neural.param_list(enc)
    if with_decoder:
        dec = neural.init_params(
            decoder_shape(cfg.d, p=data.train_x.shape[0]),
            matcore.Rng(matcore.derive_seed(cfg.seed, _S_DEC)),
        )
        params = params + neural.param_list(dec)
    state = neural.AdamState.fresh(params, lr=cfg.lr)

    shuffle_rng = matcore.Rng(matcore.derive_seed(cfg.seed, _S_SHUFFLE))
    test_batch = _pick_columns(
        data.test_x, cfg.b, matcore.Rng(matcore.derive_seed(cfg.seed, _S_TESTSEL))
    )

    n = data.train_x.shape[1]
    if cfg.b > n:
        raise ShapeError(f"batch size {cfg.b} exceeds training set size {n}")
    steps = n // cfg.b
    # tau == 0 short-circuits the regularizer entirely so that free, tikhonov
    # and none configurations follow bitwise-identical trajectories
    reg = cfg.regularizer if cfg.tau > 0 else "none"

    rows = []
    snapshots = []
    snapshot_set = set(cfg.snapshot_epochs)
    for epoch in range(1, cfg.epochs + 1):
        perm = shuffle_rng.permutation(n)
        acc_total = acc_mse = acc_reg = 0.0
        last_free = float("nan")
        failures = 0
        k = 0
        while k < steps:
            cols = perm[k * cfg.b : (k + 1) * cfg.b]
            xb = data.train_x[:, cols]
            try:
                codes, tape_e = neural.forward(enc, xb)
                if with_decoder:
                    recon, tape_d = neural.forward(dec, codes)
                    resid = recon - xb
                    mse = float(np.sum(resid * resid)) / cfg.b
                    gdec, dcodes = neural.backward(dec, tape_d, 2.0 * resid / cfg.b)
                else:
                    mse = 0.0
                    gdec = []
                    dcodes = 0.0
                if reg == "free" or not with_decoder:
                    rep, gfree = freeloss.free_energy_and_grad(codes, checked=False)
                    reg_val = rep.loss
                    last_free = rep.loss
                    scale = cfg.tau if with_decoder else 1.0
                    dcodes = dcodes + scale * gfree
                else:
                    if reg == "tikhonov":
                        reg_val = float(np.sum(codes * codes))
                        dcodes = dcodes + cfg.tau * 2.0 * codes
                    else:
                        reg_val = 0.0
                    if k == steps - 1:
                        last_free = _free_diag(codes)
                genc, _ = neural.backward(enc, tape_e, dcodes)
            except _DEGENERATE as exc:
                failures += 1
                if failures >= 2:
                    raise type(exc)(
                        f"epoch {epoch}: two consecutive degenerate batches "
                        f"(regularizer={cfg.regularizer}, seed={cfg.seed}): {exc}"
                    ) from exc
                perm = shuffle_rng.permutation(n)  # fresh batch, same epoch slot
                continue
            failures = 0
            grads = neural.grad_list(genc)
            if with_decoder:
                grads = grads + neural.grad_list(gdec)
            neural.adam_step(state, params, grads)
            tau_eff = cfg.tau if with_decoder else 1.0
            acc_total += mse + tau_eff * reg_val
            acc_mse += mse
            acc_reg += reg_val
            k += 1

        test_codes, _ = neural.forward(enc, test_batch)
        test_free = _free_diag(test_codes)
        rows.append(
            EpochRow(
                epoch=epoch,
                train_loss_total=acc_total / steps,
                train_mse=acc_mse / steps,
                train_reg=acc_reg / steps,
                train_free_loss=last_free,
                test_free_loss=test_free,
            )
        )
        if epoch in snapshot_set:
            _snapshot(test_codes, epoch, out_dir, snapshots)

    gref, otref = _references(cfg, gref, otref)
    train_batch = _pick_columns(
        data.train_x, cfg.b, matcore.Rng(matcore.derive_seed(cfg.seed, _S_TRAINSEL))
    )
    train_codes, _ = neural.forward(enc, train_batch)
    test_codes, _ = neural.forward(enc, test_batch)
    final_train = gaussmetrics.full_report(
        train_codes, gref, otref,
        matcore.Rng(matcore.derive_seed(cfg.seed, _S_MET_TRAIN)),
        standardize_ks=True, checked=False,
    )
    final_test = gaussmetrics.full_report(
        test_codes, gref, otref,
        matcore.Rng(matcore.derive_seed(cfg.seed, _S_MET_TEST)),
        standardize_ks=True, checked=False,
    )
    if with_decoder:
        tr_recon, _ = neural.forward(dec, train_codes)
        te_recon, _ = neural.forward(dec, test_codes)
        final_train_mse = float(np.sum((tr_recon - train_batch) ** 2)) / cfg.b
        final_test_mse = float(np.sum((te_recon - test_batch) ** 2)) / cfg.b
    else:
        final_train_mse = final_test_mse = 0.0

    checkpoints = []
    if out_dir is not None:
        neural.save_mlp(enc, os.path.join(out_dir, "enc.ckpt"))
        checkpoints.append("enc.ckpt")
        if dec is not None:
            neural.save_mlp(dec, os.path.join(out_dir, "dec.ckpt"))
            checkpoints.append("dec.ckpt")

    record = RunRecord(
        config=cfg,
        rows=rows,
        final_train=final_train,
        final_test=final_test,
        final_train_mse=final_train_mse,
        final_test_mse=final_test_mse,
        snapshots=snapshots,
        checkpoints=checkpoints,
        wall_seconds=time.perf_counter() - t0,
        enc=enc,
        dec=dec,
    )
    if out_dir is not None:
        save_run_record(record, out_dir)
    return record


def train_encoder(cfg: TrainConfig, data: Dataset, out_dir=None,
                  gref=None, otref=None) -> RunRecord:
    """Train the encoder on the spectral loss alone (no reconstruction)."""
    if cfg.regularizer != "free":
        raise ValueError("encoder-only training uses the free regularizer")
    return _train(cfg, data, with_decoder=False, out_dir=out_dir,
                  gref=gref, otref=otref)


def train_autoencoder(cfg: TrainConfig, data: Dataset, out_dir=None,
                      gref=None, otref=None) -> RunRecord:
    """Train encoder+decoder on reconstruction MSE plus tau * regularizer."""
    return _train(cfg, data, with_decoder=True, out_dir=out_dir,
                  gref=gref, otref=otref)


def sweep_tau(taus, regularizer: str, base_cfg: TrainConfig, trials: int,
              data: Dataset = None, gref=None, otref=None, out_path=None):
    """Final (test MSE, test free loss) per tau per trial, plus the
    Gaussian reference level in every row."""
    if not taus:
        raise ValueError("need at least one tau")
    if trials < 1:
        raise ValueError("need at least one trial")
    if data is None:
        data = default_dataset(base_cfg.seed)
    gref, otref = _references(base_cfg, gref, otref)
    rows = []
    for tau in taus:
        for trial in range(trials):
            cfg = TrainConfig(
                d=base_cfg.d, b=base_cfg.b, epochs=base_cfg.epochs,
                lr=base_cfg.lr, tau=float(tau), regularizer=regularizer,
                seed=matcore.derive_seed(base_cfg.seed, trial),
            )
            rec = train_autoencoder(cfg, data, gref=gref, otref=otref)
            rows.append((
                regularizer, float(tau), trial, cfg.seed,
                rec.final_test_mse,
                rec.rows[-1].test_free_loss,
                gref.mean_loss,
            ))
    if out_path is not None:
        write_csv(out_path, SWEEP_TAU_HEADER, rows)
    return rows


SWEEP_TAU_HEADER = (
    "regularizer", "tau", "trial", "seed",
    "final_test_mse", "final_test_free_loss", "ref_free_loss",
)


def sweep_batch_dim(bs, ds, trials: int, base_cfg: TrainConfig,
                    data: Dataset = None, out_path=None):
    """Per-(d, b) mean and standard error of the final test metrics over
    independently seeded encoder-only runs."""
    if not bs or not ds:
        raise ValueError("need at least one batch size and one dimension")
    if trials < 1:
        raise ValueError("need at least one trial")
    if data is None:
        data = default_dataset(base_cfg.seed)
    rows = []
    for d in ds:
        for b in bs:
            if d >= b:
                raise ShapeError(f"need d < b in every cell, got ({d}, {b})")
            cell = {"ks": [], "delta_ot": [], "rel_free": []}
            gref = freeloss.gaussian_reference(
                d, b, 200, matcore.derive_seed(base_cfg.seed, _S_GREF)
            )
            otref = gaussmetrics.ot_reference(
                d, b, 50, matcore.derive_seed(base_cfg.seed, _S_OTREF)
            )
            for trial in range(trials):
                cfg = TrainConfig(
                    d=d, b=b, epochs=base_cfg.epochs, lr=base_cfg.lr,
                    tau=1.0, regularizer="free",
                    seed=matcore.derive_seed(base_cfg.seed, 7000 + trial),
                )
                rec = train_encoder(cfg, data, gref=gref, otref=otref)
                cell["ks"].append(rec.final_test.ks)
                cell["delta_ot"].append(rec.final_test.delta_ot)
                cell["rel_free"].append(rec.final_test.rel_err_free_loss)

            def sem(v):
                return float(np.std(v, ddof=1) / np.sqrt(len(v))) if len(v) > 1 else 0.0

            rows.append((
                d, b, trials,
                float(np.mean(cell["ks"])), sem(cell["ks"]),
                float(np.mean(cell["delta_ot"])), sem(cell["delta_ot"]),
                float(np.mean(cell["rel_free"])), sem(cell["rel_free"]),
            ))
    if out_path is not None:
        write_csv(out_path, SWEEP_BD_HEADER, rows)
    return rows


SWEEP_BD_HEADER = (
    "d", "b", "trials", "ks_mean", "ks_sem",
    "delta_ot_mean", "delta_ot_sem", "rel_free_mean", "rel_free_sem",
)


@dataclass(frozen=True)
class InverseConfig:
    """Recovery of x from z = P x through a frozen autoencoder."""

    projection: tuple = ((1.0, 0.0),)
    rho: float = 5e-4
    steps: int = 5000
    lr: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.rho < 0:
            raise ValueError("rho must be >= 0")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")

    def matrix(self) -> np.ndarray:
        return np.asarray(self.projection, dtype=np.float64)


def invert(z, enc: neural.Mlp, dec: neural.Mlp, icfg: InverseConfig,
           rng: matcore.Rng) -> np.ndarray:
    """Gradient-descend ||z - P D(E(x))||^2 + rho ||E(x)||^2 over x.

    z is one measurement (length k) or a k x m batch; columns are solved
    jointly since the objective is separable. Start point is P^T z with
    small seeded noise on the unobserved coordinates.
    """
    p_mat = icfg.matrix()
    k, p_dim = p_mat.shape
    z = np.asarray(z, dtype=np.float64)
    single = z.ndim == 1
    zc = z[:, None] if single else z
    if zc.shape[0] != k:
        raise ShapeError(f"measurement has {zc.shape[0]} rows, projection has {k}")
    m = zc.shape[1]
    x = p_mat.T @ zc
    unobserved = np.all(p_mat == 0.0, axis=0)
    if np.any(unobserved):
        x[unobserved, :] += 0.1 * rng.normal((int(unobserved.sum()), m))
    for _ in range(icfg.steps):
        codes, tape_e = neural.forward(enc, x)
        recon, tape_d = neural.forward(dec, codes)
        resid = p_mat @ recon - zc
        _, dcodes = neural.backward(dec, tape_d, 2.0 * (p_mat.T @ resid))
        dcodes = dcodes + 2.0 * icfg.rho * codes
        _, dx = neural.backward(enc, tape_e, dcodes)
        x = x - icfg.lr * dx
    return x[:, 0] if single else x


@dataclass(frozen=True)
class InverseReport:
    mse_given: float
    mse_missing: float
    n_points: int


def inverse_eval(test_x, enc: neural.Mlp, dec: neural.Mlp,
                 icfg: InverseConfig, out_dir=None, n_bins: int = 40):
    """Recover every test point from its projection; report coordinate MSEs
    and a histogram of the recovered missing coordinate split by sign(z).

    Returns (InverseReport, histogram rows (group, bin_left, bin_right, count)).
    """
    test_x = matcore.as_matrix(test_x)
    p_mat = icfg.matrix()
    z = p_mat @ test_x
    rng = matcore.Rng(matcore.derive_seed(icfg.seed, 0))
    x_rec = invert(z, enc, dec, icfg, rng)
    observed = ~np.all(p_mat == 0.0, axis=0)
    err2 = (x_rec - test_x) ** 2
    mse_given = float(err2[observed].mean()) if observed.any() else 0.0
    mse_missing = float(err2[~observed].mean()) if (~observed).any() else 0.0
    report = InverseReport(
        mse_given=mse_given, mse_missing=mse_missing, n_points=test_x.shape[1]
    )

    hist_rows = []
    missing_idx = np.flatnonzero(~observed)
    if missing_idx.size and z.shape[0] == 1:
        # shared bins across the two measurement-sign groups
        vals = x_rec[missing_idx[0]]
        pos = z[0] >= 0.0
        lo, hi = float(vals.min()), float(vals.max())
        if hi <= lo:
            hi = lo + 1.0
        for name, mask in (("pos", pos), ("neg", ~pos)):
            counts, edges = np.histogram(vals[mask], bins=n_bins, range=(lo, hi))
            for i in range(n_bins):
                hist_rows.append(
                    (name, float(edges[i]), float(edges[i + 1]), int(counts[i]))
                )
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        write_kv(
            os.path.join(out_dir, "inverse_summary.kv"),
            [
                ("mse_given", report.mse_given),
                ("mse_missing", report.mse_missing),
                ("n_points", report.n_points),
                ("rho", icfg.rho),
                ("steps", icfg.steps),
                ("lr", icfg.lr),
                ("seed", icfg.seed),
            ],
        )
        write_csv(
            os.path.join(out_dir, "inverse_hist.csv"),
            ("group", "bin_left", "bin_right", "count"),
            hist_rows,
        )
    return report, hist_rows


def _report_pairs(prefix: str, r: gaussmetrics.MetricReport):
    pairs = [(f"{prefix}_ks", r.ks), (f"{prefix}_delta_ot", r.delta_ot)]
    for k in sorted(r.moments):
        pairs.append((f"{prefix}_m{k}", r.moments[k]))
    pairs.append((f"{prefix}_rel_free", r.rel_err_free_loss))
    pairs.append((f"{prefix}_n_entries", r.n_entries))
    return pairs


def _report_from_kv(prefix: str, kv: dict) -> gaussmetrics.MetricReport:
    moments = {k: float(kv[f"{prefix}_m{k}"]) for k in (2, 4, 6, 8)}
    rel = {
        k: abs((gaussmetrics.MOMENT_REFS[k] - m) / gaussmetrics.MOMENT_REFS[k])
        for k, m in moments.items()
    }
    return gaussmetrics.MetricReport(
        ks=float(kv[f"{prefix}_ks"]),
        delta_ot=float(kv[f"{prefix}_delta_ot"]),
        moments=moments,
        rel_err_moments=rel,
        rel_err_free_loss=float(kv[f"{prefix}_rel_free"]),
        n_entries=int(kv[f"{prefix}_n_entries"]),
    )


def save_run_record(rec: RunRecord, out_dir) -> None:
    """epochs.csv (one row per epoch) plus summary.kv in out_dir."""
    os.makedirs(out_dir, exist_ok=True)
    for rel, _ in rec.snapshots:
        if not os.path.exists(os.path.join(out_dir, rel)):
            raise FileNotFoundError(f"snapshot artifact missing: {rel}")
    for rel in rec.checkpoints:
        if not os.path.exists(os.path.join(out_dir, rel)):
            raise FileNotFoundError(f"checkpoint missing: {rel}")
    write_csv(os.path.join(out_dir, "epochs.csv"), EPOCH_HEADER, rec.rows)
    cfg = rec.config
    pairs = [
        ("d", cfg.d), ("b", cfg.b), ("epochs", cfg.epochs), ("lr", cfg.lr),
        ("tau", cfg.tau), ("regularizer", cfg.regularizer), ("seed", cfg.seed),
        ("snapshot_epochs", ",".join(str(e) for e in cfg.snapshot_epochs)),
        ("wall_seconds", rec.wall_seconds),
        ("final_train_mse", rec.final_train_mse),
        ("final_test_mse", rec.final_test_mse),
        ("snapshots", ";".join(f"{p}:{n}" for p, n in rec.snapshots)),
        ("checkpoints", ";".join(rec.checkpoints)),
    ]
    pairs += _report_pairs("train", rec.final_train)
    pairs += _report_pairs("test", rec.final_test)
    write_kv(os.path.join(out_dir, "summary.kv"), pairs)


def load_run_record(out_dir) -> RunRecord:
    """Rebuild a RunRecord from save_run_record output (checkpoints included)."""
    kv = read_kv(os.path.join(out_dir, "summary.kv"))
    snaps_raw = kv.get("snapshots", "")
    snapshots = []
    if snaps_raw:
        for part in snaps_raw.split(";"):
            rel, _, count = part.rpartition(":")
            snapshots.append((rel, int(count)))
    checkpoints = [p for p in kv.get("checkpoints", "").split(";") if p]
    cfg = TrainConfig(
        d=int(kv["d"]), b=int(kv["b"]), epochs=int(kv["epochs"]),
        lr=float(kv["lr"]), tau=float(kv["tau"]),
        regularizer=kv["regularizer"], seed=int(kv["seed"]),
        snapshot_epochs=tuple(
            int(e) for e in kv["snapshot_epochs"].split(",") if e
        ),
    )
    rows = []
    epochs_path = os.path.join(out_dir, "epochs.csv")
    with open(epochs_path) as fh:
        header = fh.readline().strip().split(",")
        if tuple(header) != EPOCH_HEADER:
            raise ParseError(f"{epochs_path}:1: unexpected header {header}")
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != len(EPOCH_HEADER):
                raise ParseError(
                    f"{epochs_path}:{lineno}: expected {len(EPOCH_HEADER)} columns"
                )
            try:
                rows.append(EpochRow(int(parts[0]), *map(float, parts[1:])))
            except ValueError as exc:
                raise ParseError(f"{epochs_path}:{lineno}: {exc}") from exc
    enc = dec = None
    if "enc.ckpt" in checkpoints:
        enc = neural.load_mlp(os.path.join(out_dir, "enc.ckpt"))
    if "dec.ckpt" in checkpoints:
        dec = neural.load_mlp(os.path.join(out_dir, "dec.ckpt"))
    return RunRecord(
        config=cfg,
        rows=rows,
        final_train=_report_from_kv("train", kv),
        final_test=_report_from_kv("test", kv),
        final_train_mse=float(kv["final_train_mse"]),
        final_test_mse=float(kv["final_test_mse"]),
        snapshots=snapshots,
        checkpoints=checkpoints,
        wall_seconds=float(kv["wall_seconds"]),
        enc=enc,
        dec=dec,
    )


def aggregate_records(records):
    """Group by regularizer: mean and std of the final test metrics."""
    groups = {}
    for rec in records:
        groups.setdefault(rec.config.regularizer, []).append(rec)
    rows = []
    for reg in sorted(groups):
        rs = groups[reg]
        def ms(vals):
            arr = np.array(vals, dtype=np.float64)
            return float(arr.mean()), float(arr.std(ddof=1)) if len(arr) > 1 else 0.0
        ks_m, ks_s = ms([r.final_test.ks for r in rs])
        do_m, do_s = ms([r.final_test.delta_ot for r in rs])
        rf_m, rf_s = ms([r.final_test.rel_err_free_loss for r in rs])
        mse_m, mse_s = ms([r.final_test_mse for r in rs])
        rows.append((reg, len(rs), ks_m, ks_s, do_m, do_s, rf_m, rf_s, mse_m, mse_s))
    return rows


AGGREGATE_HEADER = (
    "regularizer", "trials", "ks_mean", "ks_std", "delta_ot_mean",
    "delta_ot_std", "rel_free_mean", "rel_free_std", "mse_mean", "mse_std",
)
