"""Command line front end.

One command per process. Configuration comes from an INI-style file plus
--set key=value overrides; every randomized command derives all of its
streams from one recorded master seed. Each command writes its outputs
under out_dir and finishes with an atomically written manifest.json naming
the resolved config, input hashes and produced files.

Exit codes: 0 success, 1 usage or config-key error, 2 data or file error,
3 numerical failure.
"""

import argparse
import configparser
import datetime
import hashlib
import json
import os
import sys

from . import __version__, experiments, freeloss, gaussmetrics, matcore
from .errors import (
    CoalescedAtomsError,
    CoalescedSingularValuesError,
    ConstraintViolationError,
    FreeGaussError,
    NoConvergenceError,
    NonPositiveAtomError,
    ParseError,
    UnknownKeyError,
    ZeroSingularValueError,
)
from .records import atomic_write, fmt, read_kv, write_csv

OUT_DIR_ENV = "FREEGAUSS_OUT_DIR"

_NUMERICAL = (
    NoConvergenceError,
    CoalescedSingularValuesError,
    ZeroSingularValueError,
    CoalescedAtomsError,
    NonPositiveAtomError,
    FloatingPointError,
    OverflowError,
    ZeroDivisionError,
)


def _int_list(s):
    return tuple(int(t) for t in s.split(",") if t.strip())


def _float_list(s):
    return tuple(float(t) for t in s.split(",") if t.strip())


# key -> (conversion, protocol default, help line)
SCHEMA = {
    "d": (int, 32, "code dimension (rows of the batch-code matrix)"),
    "b": (int, 256, "batch size (columns of the batch-code matrix)"),
    "epochs": (int, 2000, "training epochs"),
    "lr": (float, 1e-3, "Adam / descent learning rate"),
    "tau": (float, 1.0, "regularization weight"),
    "regularizer": (str, "free", "free | tikhonov | none"),
    "seed": (int, 0, "master seed; every stream derives from it"),
    "snapshot_epochs": (_int_list, (), "epochs at which to dump hist/QQ/spectrum"),
    "n_per_class": (int, 1280, "training points per mixture class"),
    "test_per_class": (int, 1280, "test points per mixture class"),
    "p": (int, 2, "data space dimension"),
    "mu": (_float_list, (5.0, 5.0), "class shift vector, comma separated"),
    "scale": (float, 0.5, "chi-squared noise scale"),
    "rho": (float, 5e-4, "latent prior weight for inverse recovery"),
    "steps": (int, 5000, "gradient steps for inverse recovery"),
    "projection": (_float_list, (1.0, 0.0), "single measurement row of P"),
    "taus": (_float_list, (0.0, 0.01, 0.1, 1.0, 10.0), "tau grid for sweep-tau"),
    "bs": (_int_list, (64, 128, 256, 512), "batch sizes for sweep-batch-dim"),
    "ds": (_int_list, (2, 4, 8, 16, 32), "code dimensions for sweep-batch-dim"),
    "trials": (int, 10, "independent trials per sweep cell"),
    "ref_samples": (int, 200, "Gaussian draws for the free-loss reference"),
    "ot_samples": (int, 50, "cloud pairs for the transport reference"),
    "n_bins": (int, 40, "histogram bins"),
}


def _convert(key: str, raw: str, where: str):
    cast = SCHEMA[key][0]
    try:
        return cast(raw)
    except ValueError as exc:
        raise ParseError(f"{where}: key '{key}': cannot parse {raw!r}") from exc


def parse_config(path=None, overrides=()):
    """Resolved config dict: protocol defaults, then file, then overrides."""
    cfg = {k: v for k, (_, v, _) in SCHEMA.items()}
    if path is not None:
        cp = configparser.ConfigParser()
        try:
            with open(path) as fh:
                cp.read_file(fh, source=path)
        except configparser.Error as exc:
            lineno = getattr(exc, "lineno", None)
            if lineno is None and getattr(exc, "errors", None):
                lineno = exc.errors[0][0]
            loc = f"{path}:{lineno}" if lineno else path
            raise ParseError(f"{loc}: {exc.message}") from exc
        sections = [configparser.DEFAULTSECT] + cp.sections()
        for sec in sections:
            for key, raw in cp.items(sec):
                if sec != configparser.DEFAULTSECT and key in cp.defaults():
                    continue  # inherited copy of a DEFAULT key
                if key not in SCHEMA:
                    raise UnknownKeyError(f"{path}: unknown key '{key}' in [{sec}]")
                cfg[key] = _convert(key, raw, path)
    for item in overrides:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ParseError(f"override {item!r} is not of the form key=value")
        key = key.strip().lower()
        if key not in SCHEMA:
            raise UnknownKeyError(f"unknown override key '{key}'")
        cfg[key] = _convert(key, raw.strip(), "override")
    _validate(cfg)
    cfg["c"] = cfg["d"] / cfg["b"]  # derived, recomputed after overrides
    return cfg


def _validate(cfg) -> None:
    def need(cond, msg):
        if not cond:
            raise ConstraintViolationError(msg)

    need(cfg["d"] >= 2, f"d must be >= 2, got {cfg['d']}")
    need(cfg["d"] < cfg["b"], f"d < b required, got d={cfg['d']} b={cfg['b']}")
    need(cfg["lr"] > 0, "lr must be > 0")
    need(cfg["epochs"] >= 1, "epochs must be >= 1")
    need(cfg["tau"] >= 0, "tau must be >= 0")
    need(cfg["regularizer"] in experiments.REGULARIZERS,
         f"regularizer must be one of {experiments.REGULARIZERS}")
    need(cfg["rho"] >= 0, "rho must be >= 0")
    need(cfg["steps"] >= 1, "steps must be >= 1")
    need(cfg["trials"] >= 1, "trials must be >= 1")
    need(cfg["n_per_class"] >= 1, "n_per_class must be >= 1")
    need(cfg["test_per_class"] >= 1, "test_per_class must be >= 1")
    need(cfg["scale"] > 0, "scale must be > 0")
    need(len(cfg["mu"]) == cfg["p"],
         f"mu has {len(cfg['mu'])} entries but p = {cfg['p']}")
    need(all(t >= 0 for t in cfg["taus"]), "taus must all be >= 0")
    need(all(e >= 1 for e in cfg["snapshot_epochs"]),
         "snapshot epochs must be >= 1")
    need(cfg["ref_samples"] >= 2, "ref_samples must be >= 2")
    need(cfg["ot_samples"] >= 2, "ot_samples must be >= 2")
    need(cfg["n_bins"] >= 1, "n_bins must be >= 1")


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _now() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


def _write_manifest(out_dir, command, cfg, inputs, outputs, started) -> None:
    for rel in outputs:
        if not os.path.exists(os.path.join(out_dir, rel)):
            raise FileNotFoundError(f"manifest lists missing output: {rel}")
    data = {
        "tool": f"freegauss {__version__}",
        "command": command,
        "config": {k: list(v) if isinstance(v, tuple) else v for k, v in cfg.items()},
        "inputs": {p: _sha256(p) for p in inputs},
        "outputs": sorted(outputs),
        "started": started,
        "finished": _now(),
    }
    atomic_write(
        os.path.join(out_dir, "manifest.json"),
        json.dumps(data, indent=2, sort_keys=True) + "\n",
    )


def _resolve_out_dir(arg) -> str:
    out = arg or os.environ.get(OUT_DIR_ENV) or "runs"
    os.makedirs(out, exist_ok=True)
    return out


def _dataset(cfg, seed) -> experiments.Dataset:
    return experiments.default_dataset(
        seed,
        n_per_class=cfg["n_per_class"],
        test_per_class=cfg["test_per_class"],
        p=cfg["p"],
        mu=tuple(cfg["mu"]),
        scale=cfg["scale"],
    )


def _train_config(cfg) -> experiments.TrainConfig:
    return experiments.TrainConfig(
        d=cfg["d"], b=cfg["b"], epochs=cfg["epochs"], lr=cfg["lr"],
        tau=cfg["tau"], regularizer=cfg["regularizer"], seed=cfg["seed"],
        snapshot_epochs=cfg["snapshot_epochs"],
    )


def cmd_reference(d, b, n, seed, out_dir, cfg, command="reference") -> int:
    started = _now()
    gref = freeloss.gaussian_reference(d, b, n, seed)
    otref = gaussmetrics.ot_reference(d, b, n, seed)
    freeloss.save_gaussian_reference(gref, os.path.join(out_dir, "gaussian_reference.kv"))
    gaussmetrics.save_ot_reference(otref, os.path.join(out_dir, "ot_reference.kv"))
    print(
        f"free loss reference d={d} b={b}: mean {fmt(gref.mean_loss)} "
        f"std {fmt(gref.std_loss)} over {n} draws (seed {seed})"
    )
    print(f"transport reference: mean cost {fmt(otref.mean_cost)} over {n} pairs")
    _write_manifest(out_dir, command, cfg, [],
                    ["gaussian_reference.kv", "ot_reference.kv"], started)
    return 0


def cmd_eval(matrix_path, cfg, out_dir, gref_path=None, otref_path=None,
             standardize=False) -> int:
    started = _now()
    y = matcore.load_matrix_csv(matrix_path)
    d, b = y.shape
    inputs = [matrix_path]
    if gref_path:
        gref = freeloss.load_gaussian_reference(gref_path)
        inputs.append(gref_path)
    else:
        gref = freeloss.gaussian_reference(d, b, cfg["ref_samples"], cfg["seed"])
    if otref_path:
        otref = gaussmetrics.load_ot_reference(otref_path)
        inputs.append(otref_path)
    else:
        otref = gaussmetrics.ot_reference(d, b, cfg["ot_samples"], cfg["seed"])
    rng = matcore.Rng(matcore.derive_seed(cfg["seed"], 1))
    report = gaussmetrics.full_report(y, gref, otref, rng, standardize_ks=standardize)
    print(",".join(gaussmetrics.REPORT_HEADER))
    print(",".join(fmt(v) for v in gaussmetrics.report_row(report)))
    gaussmetrics.save_report_csv([report], os.path.join(out_dir, "eval.csv"))
    _write_manifest(out_dir, "eval", cfg, inputs, ["eval.csv"], started)
    return 0


def cmd_train(cfg, out_dir, with_decoder) -> int:
    started = _now()
    data = _dataset(cfg, cfg["seed"])
    tcfg = _train_config(cfg)
    if with_decoder:
        rec = experiments.train_autoencoder(tcfg, data, out_dir=out_dir)
    else:
        rec = experiments.train_encoder(tcfg, data, out_dir=out_dir)
    last = rec.rows[-1]
    print(
        f"{'autoencoder' if with_decoder else 'encoder'} trained "
        f"{tcfg.epochs} epochs in {rec.wall_seconds:.1f} s"
    )
    print(
        f"final test: free loss {fmt(last.test_free_loss)} "
        f"ks {fmt(rec.final_test.ks)} rel err {fmt(rec.final_test.rel_err_free_loss)}"
        + (f" mse {fmt(rec.final_test_mse)}" if with_decoder else "")
    )
    outputs = ["epochs.csv", "summary.kv"] + rec.checkpoints
    outputs += [rel for rel, _ in rec.snapshots]
    _write_manifest(out_dir, "train-autoencoder" if with_decoder else "train-encoder",
                    cfg, [], outputs, started)
    return 0


def cmd_sweep_tau(cfg, out_dir) -> int:
    started = _now()
    data = _dataset(cfg, cfg["seed"])
    base = _train_config(cfg)
    out_path = os.path.join(out_dir, "sweep_tau.csv")
    rows = experiments.sweep_tau(
        cfg["taus"], cfg["regularizer"], base, cfg["trials"],
        data=data, out_path=out_path,
    )
    print(f"sweep-tau: {len(rows)} rows ({len(cfg['taus'])} taus x "
          f"{cfg['trials']} trials) -> {out_path}")
    _write_manifest(out_dir, "sweep-tau", cfg, [], ["sweep_tau.csv"], started)
    return 0


def cmd_sweep_batch_dim(cfg, out_dir) -> int:
    started = _now()
    data = _dataset(cfg, cfg["seed"])
    base = _train_config(cfg)
    out_path = os.path.join(out_dir, "sweep_batch_dim.csv")
    rows = experiments.sweep_batch_dim(
        cfg["bs"], cfg["ds"], cfg["trials"], base, data=data, out_path=out_path,
    )
    print(f"sweep-batch-dim: {len(rows)} cells -> {out_path}")
    _write_manifest(out_dir, "sweep-batch-dim", cfg, [], ["sweep_batch_dim.csv"],
                    started)
    return 0


def cmd_invert(run_dir, cfg, out_dir) -> int:
    started = _now()
    rec = experiments.load_run_record(run_dir)
    if rec.enc is None or rec.dec is None:
        raise ParseError(f"{run_dir}: run record lacks encoder/decoder checkpoints")
    data = _dataset(cfg, rec.config.seed)  # same mixture the run trained on
    icfg = experiments.InverseConfig(
        projection=(tuple(cfg["projection"]),),
        rho=cfg["rho"], steps=cfg["steps"], lr=cfg["lr"], seed=cfg["seed"],
    )
    report, _ = experiments.inverse_eval(
        data.test_x, rec.enc, rec.dec, icfg, out_dir=out_dir, n_bins=cfg["n_bins"]
    )
    print(
        f"inverse recovery over {report.n_points} points: "
        f"given-coordinate mse {fmt(report.mse_given)}, "
        f"missing-coordinate mse {fmt(report.mse_missing)}"
    )
    inputs = [os.path.join(run_dir, "summary.kv"),
              os.path.join(run_dir, "enc.ckpt"),
              os.path.join(run_dir, "dec.ckpt")]
    _write_manifest(out_dir, "invert", cfg, inputs,
                    ["inverse_summary.kv", "inverse_hist.csv"], started)
    return 0


def cmd_report(run_dir, cfg, out_dir) -> int:
    started = _now()
    if not os.path.isdir(run_dir):
        raise ParseError(f"{run_dir}: not a directory")
    candidates = [run_dir] + sorted(
        os.path.join(run_dir, n) for n in os.listdir(run_dir)
        if os.path.isdir(os.path.join(run_dir, n))
    )
    records, skipped = [], []
    for cand in candidates:
        if not os.path.exists(os.path.join(cand, "summary.kv")):
            continue
        try:
            records.append(experiments.load_run_record(cand))
        except (FreeGaussError, OSError, KeyError, ValueError) as exc:
            skipped.append((cand, f"{type(exc).__name__}: {exc}"))
    for cand, msg in skipped:
        print(f"skipped {cand}: {msg}", file=sys.stderr)
    if not records:
        raise ParseError(f"{run_dir}: no readable run records")
    rows = experiments.aggregate_records(records)
    out_path = os.path.join(out_dir, "report.csv")
    write_csv(out_path, experiments.AGGREGATE_HEADER, rows)
    print(",".join(experiments.AGGREGATE_HEADER))
    for row in rows:
        print(",".join(fmt(v) for v in row))
    inputs = [os.path.join(r_dir, "summary.kv")
              for r_dir in candidates
              if os.path.exists(os.path.join(r_dir, "summary.kv"))]
    _write_manifest(out_dir, "report", cfg, inputs, ["report.csv"], started)
    return 0


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse default exits 2; contract says 1
        raise _UsageError(message)


def _config_epilog() -> str:
    lines = ["configuration keys (set in the config file or via --set):"]
    for key in sorted(SCHEMA):
        _, default, blurb = SCHEMA[key]
        shown = ",".join(str(v) for v in default) if isinstance(default, tuple) else default
        lines.append(f"  {key:<16} {blurb} [protocol default: {shown}]")
    return "\n".join(lines)


def _add_common(sub) -> None:
    sub.add_argument("--config", help="INI config file")
    sub.add_argument("--out-dir", help=f"output directory (else ${OUT_DIR_ENV} or ./runs)")
    sub.add_argument("--seed", type=int, help="master seed (overrides config)")
    sub.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                     help="config override, applied last; repeatable")


def _build_parser() -> _Parser:
    parser = _Parser(
        prog="freegauss",
        description="Spectral free-energy regularization experiments.",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=_config_epilog(),
    )
    sub = parser.add_subparsers(dest="command", required=True)
    kw = dict(formatter_class=argparse.RawDescriptionHelpFormatter,
              epilog=_config_epilog())

    p = sub.add_parser("reference", help="Gaussian free-loss and transport references", **kw)
    p.add_argument("d", type=int)
    p.add_argument("b", type=int)
    p.add_argument("n", type=int, help="Monte Carlo draws")
    _add_common(p)

    p = sub.add_parser("eval", help="deviation-from-Gaussianity report for a saved matrix", **kw)
    p.add_argument("matrix_csv")
    p.add_argument("--gref", help="saved gaussian_reference.kv (else recomputed)")
    p.add_argument("--otref", help="saved ot_reference.kv (else recomputed)")
    p.add_argument("--standardize", action="store_true",
                   help="center/scale entries before the KS statistic")
    _add_common(p)

    for name in ("train-encoder", "train-autoencoder"):
        p = sub.add_parser(name, help=f"{name.replace('-', ' ')} run", **kw)
        _add_common(p)

    p = sub.add_parser("sweep-tau", help="regularization-weight sweep", **kw)
    _add_common(p)

    p = sub.add_parser("sweep-batch-dim", help="batch-size / code-dimension sweep", **kw)
    _add_common(p)

    p = sub.add_parser("invert", help="inverse recovery through a trained run", **kw)
    p.add_argument("run_dir", help="directory of a train-autoencoder run")
    _add_common(p)

    p = sub.add_parser("report", help="aggregate run records by regularizer", **kw)
    p.add_argument("run_dir")
    _add_common(p)
    return parser


def _dispatch(args) -> int:
    cfg = parse_config(args.config, args.set)
    if args.seed is not None:
        cfg["seed"] = args.seed
    out_dir = _resolve_out_dir(args.out_dir)
    if args.command == "reference":
        return cmd_reference(args.d, args.b, args.n, cfg["seed"], out_dir, cfg)
    if args.command == "eval":
        return cmd_eval(args.matrix_csv, cfg, out_dir, gref_path=args.gref,
                        otref_path=args.otref, standardize=args.standardize)
    if args.command == "train-encoder":
        return cmd_train(cfg, out_dir, with_decoder=False)
    if args.command == "train-autoencoder":
        return cmd_train(cfg, out_dir, with_decoder=True)
    if args.command == "sweep-tau":
        return cmd_sweep_tau(cfg, out_dir)
    if args.command == "sweep-batch-dim":
        return cmd_sweep_batch_dim(cfg, out_dir)
    if args.command == "invert":
        return cmd_invert(args.run_dir, cfg, out_dir)
    if args.command == "report":
        return cmd_report(args.run_dir, cfg, out_dir)
    raise _UsageError(f"unknown command {args.command!r}")


def main(argv=None) -> int:
    try:
        args = _build_parser().parse_args(argv)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    try:
        return _dispatch(args)
    except (UnknownKeyError, ConstraintViolationError, _UsageError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except _NUMERICAL as exc:
        print(f"numerical error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    except (ParseError, FreeGaussError, OSError) as exc:
        print(f"data error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
