import json
import os

import numpy as np
import pytest

from freegauss import cli, experiments, freeloss, gaussmetrics, matcore
from freegauss.errors import (
    ConstraintViolationError,
    ParseError,
    UnknownKeyError,
)

TINY = [
    "--set", "d=6", "--set", "b=32", "--set", "epochs=2",
    "--set", "n_per_class=60", "--set", "test_per_class=60",
    "--set", "ref_samples=10", "--set", "ot_samples=5",
]


def test_defaults_resolved():
    cfg = cli.parse_config()
    assert cfg["d"] == 32 and cfg["b"] == 256
    assert cfg["epochs"] == 2000 and cfg["lr"] == 1e-3
    assert cfg["tau"] == 1.0 and cfg["rho"] == 5e-4 and cfg["steps"] == 5000
    assert cfg["c"] == 0.125


def test_override_recomputes_aspect_ratio():
    cfg = cli.parse_config(overrides=["d=8", "b=16"])
    assert cfg["c"] == 0.5


def test_config_file_sections(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text("[DEFAULT]\nseed = 9\n[train]\nd = 4\nb = 8\n[data]\nscale = 0.25\n")
    cfg = cli.parse_config(str(path))
    assert cfg["seed"] == 9 and cfg["d"] == 4 and cfg["b"] == 8
    assert cfg["scale"] == 0.25


def test_config_file_unknown_key(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text("[train]\nwibble = 3\n")
    with pytest.raises(UnknownKeyError):
        cli.parse_config(str(path))


def test_config_file_bad_value(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text("[train]\nd = many\n")
    with pytest.raises(ParseError):
        cli.parse_config(str(path))


def test_config_file_syntax_error_has_line(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text("[train]\nthis line has no delimiter\n")
    with pytest.raises(ParseError, match=r":\d+"):
        cli.parse_config(str(path))


def test_constraint_violations():
    with pytest.raises(ConstraintViolationError):
        cli.parse_config(overrides=["d=256", "b=256"])
    with pytest.raises(ConstraintViolationError):
        cli.parse_config(overrides=["tau=-1"])
    with pytest.raises(ConstraintViolationError):
        cli.parse_config(overrides=["regularizer=ridge"])
    with pytest.raises(ConstraintViolationError):
        cli.parse_config(overrides=["mu=1,2,3"])


def test_override_syntax():
    with pytest.raises(ParseError):
        cli.parse_config(overrides=["d32"])
    with pytest.raises(UnknownKeyError):
        cli.parse_config(overrides=["frob=1"])


def test_usage_errors_exit_one(capsys):
    assert cli.main([]) == 1
    assert cli.main(["bogus"]) == 1
    assert cli.main(["train-encoder", "--set", "frob=1", "--out-dir", "/tmp"]) == 1
    capsys.readouterr()


def test_help_exits_zero(capsys):
    assert cli.main(["--help"]) == 0
    out = capsys.readouterr().out
    assert "reference" in out and "sweep-tau" in out
    assert cli.main(["train-encoder", "--help"]) == 0
    out = capsys.readouterr().out
    assert "protocol default" in out and "regularizer" in out


def test_reference_round_trip(tmp_path, capsys):
    out = tmp_path / "ref"
    code = cli.main(["reference", "6", "32", "10", "--seed", "3",
                     "--out-dir", str(out)])
    assert code == 0
    printed = capsys.readouterr().out
    assert "mean" in printed
    gref = freeloss.load_gaussian_reference(str(out / "gaussian_reference.kv"))
    assert gref.d == 6 and gref.b == 32 and gref.n_samples == 10 and gref.seed == 3
    otref = gaussmetrics.load_ot_reference(str(out / "ot_reference.kv"))
    assert otref.mean_cost > 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert sorted(manifest["outputs"]) == ["gaussian_reference.kv", "ot_reference.kv"]
    for rel in manifest["outputs"]:
        assert (out / rel).exists()


def test_reference_idempotent(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["reference", "6", "32", "10", "--seed", "3", "--out-dir", str(a)]) == 0
    assert cli.main(["reference", "6", "32", "10", "--seed", "3", "--out-dir", str(b)]) == 0
    capsys.readouterr()
    assert (a / "gaussian_reference.kv").read_bytes() == (b / "gaussian_reference.kv").read_bytes()
    ma = json.loads((a / "manifest.json").read_text())
    mb = json.loads((b / "manifest.json").read_text())
    for key in ("started", "finished"):
        ma.pop(key), mb.pop(key)
    assert ma == mb


def test_seed_flag_wins_over_set(tmp_path, capsys):
    out = tmp_path / "ref"
    assert cli.main(["reference", "6", "32", "10", "--set", "seed=5",
                     "--seed", "9", "--out-dir", str(out)]) == 0
    capsys.readouterr()
    gref = freeloss.load_gaussian_reference(str(out / "gaussian_reference.kv"))
    assert gref.seed == 9


def test_out_dir_env_default(tmp_path, capsys, monkeypatch):
    target = tmp_path / "from-env"
    monkeypatch.setenv(cli.OUT_DIR_ENV, str(target))
    assert cli.main(["reference", "6", "32", "10", "--seed", "1"]) == 0
    capsys.readouterr()
    assert (target / "gaussian_reference.kv").exists()


def test_eval_with_saved_refs(tmp_path, capsys):
    ref_dir = tmp_path / "ref"
    assert cli.main(["reference", "6", "32", "10", "--seed", "3",
                     "--out-dir", str(ref_dir)]) == 0
    g = matcore.sample_gaussian(matcore.Rng(8), 6, 32)
    mat = tmp_path / "g.csv"
    matcore.save_matrix_csv(g, str(mat))
    out = tmp_path / "eval"
    code = cli.main(["eval", str(mat),
                     "--gref", str(ref_dir / "gaussian_reference.kv"),
                     "--otref", str(ref_dir / "ot_reference.kv"),
                     "--seed", "3", "--out-dir", str(out)])
    assert code == 0
    lines = capsys.readouterr().out.splitlines()[-2:]
    assert lines[0] == ",".join(gaussmetrics.REPORT_HEADER)
    assert len(lines[1].split(",")) == len(gaussmetrics.REPORT_HEADER)
    assert (out / "eval.csv").exists()
    manifest = json.loads((out / "manifest.json").read_text())
    assert str(mat) in manifest["inputs"]


def test_eval_malformed_csv_exit_two(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("1,2\n3,oops\n")
    assert cli.main(["eval", str(bad), "--out-dir", str(tmp_path / "o")]) == 2
    err = capsys.readouterr().err
    assert "bad.csv:2" in err


def test_train_encoder_emits_run(tmp_path, capsys):
    out = tmp_path / "enc"
    assert cli.main(["train-encoder", "--seed", "4", "--out-dir", str(out)] + TINY) == 0
    capsys.readouterr()
    rec = experiments.load_run_record(str(out))
    assert len(rec.rows) == 2
    assert rec.config.d == 6 and rec.config.regularizer == "free"
    manifest = json.loads((out / "manifest.json").read_text())
    for rel in manifest["outputs"]:
        assert (out / rel).exists()


def test_train_autoencoder_and_invert(tmp_path, capsys):
    run = tmp_path / "ae"
    assert cli.main(["train-autoencoder", "--seed", "4", "--out-dir", str(run)] + TINY) == 0
    out = tmp_path / "inv"
    code = cli.main(["invert", str(run), "--seed", "2", "--out-dir", str(out)]
                    + TINY + ["--set", "steps=20"])
    assert code == 0
    printed = capsys.readouterr().out
    assert "given-coordinate mse" in printed
    assert (out / "inverse_summary.kv").exists()
    assert (out / "inverse_hist.csv").exists()


def test_invert_requires_decoder(tmp_path, capsys):
    run = tmp_path / "enc"
    assert cli.main(["train-encoder", "--seed", "4", "--out-dir", str(run)] + TINY) == 0
    code = cli.main(["invert", str(run), "--out-dir", str(tmp_path / "o")] + TINY)
    assert code == 2
    capsys.readouterr()


def test_sweep_tau_csv(tmp_path, capsys):
    out = tmp_path / "sw"
    code = cli.main(["sweep-tau", "--seed", "5", "--out-dir", str(out)] + TINY
                    + ["--set", "taus=0,1", "--set", "trials=2"])
    assert code == 0
    capsys.readouterr()
    lines = (out / "sweep_tau.csv").read_text().splitlines()
    assert lines[0] == ",".join(experiments.SWEEP_TAU_HEADER)
    assert len(lines) == 1 + 4


def test_sweep_batch_dim_csv(tmp_path, capsys):
    out = tmp_path / "sw"
    code = cli.main(["sweep-batch-dim", "--seed", "5", "--out-dir", str(out)] + TINY
                    + ["--set", "bs=32", "--set", "ds=4", "--set", "trials=2"])
    assert code == 0
    capsys.readouterr()
    lines = (out / "sweep_batch_dim.csv").read_text().splitlines()
    assert lines[0] == ",".join(experiments.SWEEP_BD_HEADER)
    assert len(lines) == 2


def test_report_aggregates_and_skips(tmp_path, capsys):
    for seed, reg in (("1", "free"), ("2", "free"), ("3", "tikhonov")):
        run = tmp_path / f"run{seed}"
        assert cli.main(["train-autoencoder", "--seed", seed, "--out-dir", str(run)]
                        + TINY + ["--set", f"regularizer={reg}"]) == 0
    broken = tmp_path / "broken"
    broken.mkdir()
    (broken / "summary.kv").write_text("d = not-a-number\n")
    out = tmp_path / "rep"
    assert cli.main(["report", str(tmp_path), "--out-dir", str(out)]) == 0
    captured = capsys.readouterr()
    assert "skipped" in captured.err and "broken" in captured.err
    lines = (out / "report.csv").read_text().splitlines()
    assert lines[0] == ",".join(experiments.AGGREGATE_HEADER)
    rows = {line.split(",")[0]: line.split(",") for line in lines[1:]}
    assert rows["free"][1] == "2" and rows["tikhonov"][1] == "1"


def test_report_empty_dir_exit_two(tmp_path, capsys):
    empty = tmp_path / "empty"
    empty.mkdir()
    assert cli.main(["report", str(empty), "--out-dir", str(tmp_path / "o")]) == 2
    capsys.readouterr()
