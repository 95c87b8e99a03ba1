import csv
import subprocess
import sys

import numpy as np
import pytest

from conftest import TINY_RUN
from saec import cli
from saec.config import ConfigError, RunConfig, format_config, load_config, parse_config
from saec.run import CSV_COLUMNS, OUTPUT_ROOT_ENV, run_eval, run_train
from saec.trainer import NumericalError, Temperature

TINY_TEXT = "".join(f"{k}={','.join(map(str, v)) if isinstance(v, tuple) else v}\n" for k, v in TINY_RUN.items())


def write_config(tmp_path, extra="", name="run.cfg"):
    path = tmp_path / name
    path.write_text(TINY_TEXT + extra)
    return path


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


# -- config ----------------------------------------------------------------------


def test_empty_text_gives_defaults():
    assert parse_config("") == RunConfig()
    assert parse_config("# only a comment\n\n") == RunConfig()


def test_values_and_comments_parse():
    cfg = parse_config("gamma = 0.9  # discount\nwidths=8,16\nuse_skips=false\nreward=ssim\n")
    assert cfg.gamma == 0.9 and cfg.widths == (8, 16) and cfg.use_skips is False and cfg.reward == "ssim"


def test_invalid_gamma_names_the_invariant_and_line():
    with pytest.raises(ConfigError, match=r"line 2: gamma must lie in \[0, 1\]"):
        parse_config("tau=0.01\ngamma=1.5\n")


@pytest.mark.parametrize("text,pattern", [
    ("gamm=0.9", "line 1: unknown key 'gamm'"),
    ("seed=abc", "line 1: cannot parse"),
    ("just words", "line 1: expected key=value"),
    ("use_skips=maybe", "line 1: cannot parse"),
    ("horizon=0", "horizon must be >= 1"),
    ("lr_q=-1", "lr_q must be >= 0"),
    ("dataset=directory", "requires data_dir"),
])
def test_config_errors(text, pattern):
    with pytest.raises(ConfigError, match=pattern):
        parse_config(text)


def test_latent_dim_sets_target_entropy():
    cfg = parse_config("z_dim=16")
    assert cfg.target_entropy == -16.0
    assert Temperature(cfg.z_dim).target_entropy == -16.0


def test_resolved_config_round_trips():
    cfg = parse_config("gamma=0.95\nlr_q=1e-3\nwidths=4,8\nimage_size=16\nuse_skips=false\nout_dir=x/y\n")
    assert parse_config(format_config(cfg)) == cfg
    assert parse_config(format_config(RunConfig())) == RunConfig()


def test_overrides_win_over_file(tmp_path):
    path = write_config(tmp_path, "seed=3\n")
    cfg = load_config(path, seed=9, out_dir=None)
    assert cfg.seed == 9 and cfg.image_size == 16


# -- train -----------------------------------------------------------------------


def test_zero_iterations_writes_config_and_header(out_root):
    cfg = parse_config(TINY_TEXT + "iterations=0\n", out_dir=str(out_root / "run"))
    run_train(cfg)
    rows = read_csv(out_root / "run" / "metrics.csv")
    assert rows == [CSV_COLUMNS]
    assert parse_config((out_root / "run" / "resolved_config.txt").read_text()) == cfg


def test_checkpoints_and_grids_at_every_interval(out_root):
    cfg = parse_config(TINY_TEXT + "iterations=5\ncheckpoint_interval=2\n", out_dir=str(out_root / "run"))
    run_train(cfg)
    out = out_root / "run"
    assert sorted(p.name for p in (out / "checkpoints").iterdir()) == [
        "ckpt_000002.saec", "ckpt_000004.saec", "final.saec"]
    grids = sorted(p.name for p in (out / "samples").iterdir())
    assert grids[0] == "iter_000002_0.pgm" and len(grids) == 2 * 3
    rows = read_csv(out / "metrics.csv")
    assert rows[0] == CSV_COLUMNS and len(rows) == 6
    assert [r[1] for r in rows[1:]] == ["0", "1", "2", "3", "4"]
    assert [r[0] for r in rows[1:]] == ["3", "6", "9", "12", "15"]
    # first iteration is warm-up: loss columns blank; later ones filled
    assert rows[1][5] == "" and rows[2][5] != ""
    assert not (out / ".lock").exists()


def test_grid_is_input_steps_target(out_root):
    from PIL import Image

    cfg = parse_config(TINY_TEXT + "iterations=2\ncheckpoint_interval=2\n", out_dir=str(out_root / "run"))
    run_train(cfg)
    with Image.open(out_root / "run" / "samples" / "iter_000002_0.pgm") as im:
        # input, one panel per refinement step, target
        assert im.size == (16 * (cfg.horizon + 2), 16)


def test_outputs_stay_inside_output_directory(out_root, monkeypatch):
    monkeypatch.chdir(out_root)
    cfg = parse_config(TINY_TEXT + "iterations=2\n", out_dir="nested/run")
    run_train(cfg)
    assert sorted(p.name for p in out_root.iterdir()) == ["nested"]


def test_output_root_environment_override(out_root, monkeypatch):
    monkeypatch.setenv(OUTPUT_ROOT_ENV, str(out_root / "ci"))
    run_train(parse_config(TINY_TEXT + "iterations=0\n", out_dir="rel"))
    assert (out_root / "ci" / "rel" / "metrics.csv").exists()


def test_identical_seeds_give_identical_csv(out_root):
    for name in ("a", "b"):
        run_train(parse_config(TINY_TEXT + "iterations=4\n", out_dir=str(out_root / name)))
    assert (out_root / "a" / "metrics.csv").read_bytes() == (out_root / "b" / "metrics.csv").read_bytes()


def test_locked_directory_is_refused(out_root):
    (out_root / "run").mkdir()
    (out_root / "run" / ".lock").write_text("123")
    with pytest.raises(FileExistsError):
        run_train(parse_config(TINY_TEXT + "iterations=0\n", out_dir=str(out_root / "run")))


# -- eval ------------------------------------------------------------------------


def test_eval_is_deterministic_and_writes_reports(out_root):
    cfg = parse_config(TINY_TEXT + "iterations=2\n", out_dir=str(out_root / "run"))
    run_train(cfg)
    ckpt = out_root / "run" / "checkpoints" / "final.saec"
    s1 = run_eval(cfg.replace(out_dir=str(out_root / "e1")), ckpt)
    s2 = run_eval(cfg.replace(out_dir=str(out_root / "e2")), ckpt)
    assert s1 == s2 and s1["n"] == 3 and np.isfinite(s1["psnr_mean"]) and np.isfinite(s1["ssim_mean"])
    assert (out_root / "e1" / "eval.csv").read_bytes() == (out_root / "e2" / "eval.csv").read_bytes()
    assert len(read_csv(out_root / "e1" / "eval.csv")) == 4
    assert (out_root / "e1" / "eval_summary.txt").exists()
    assert len(list((out_root / "e1" / "eval_samples").iterdir())) == 3


# -- command line ----------------------------------------------------------------


def test_cli_train_eval_export(tmp_path, monkeypatch):
    monkeypatch.delenv(OUTPUT_ROOT_ENV, raising=False)
    path = write_config(tmp_path, "iterations=2\n")
    assert cli.main(["train", "--config", str(path), "--out", str(tmp_path / "run"), "--seed", "4"]) == cli.EXIT_OK
    assert "seed=4" in (tmp_path / "run" / "resolved_config.txt").read_text()
    ckpt = tmp_path / "run" / "checkpoints" / "final.saec"
    assert cli.main(["eval", "--config", str(path), "--out", str(tmp_path / "ev"), "--checkpoint", str(ckpt),
                     "--seed", "4"]) == cli.EXIT_OK
    assert cli.main(["export-samples", "--config", str(path), "--out", str(tmp_path / "ex")]) == cli.EXIT_OK
    assert len(list((tmp_path / "ex" / "samples").glob("stripes_*.pgm"))) == 3


def test_cli_resume_continues_the_run(tmp_path, monkeypatch):
    monkeypatch.delenv(OUTPUT_ROOT_ENV, raising=False)
    path = write_config(tmp_path, "iterations=2\n")
    cli.main(["train", "--config", str(path), "--out", str(tmp_path / "run")])
    more = write_config(tmp_path, "iterations=4\n", name="more.cfg")
    ckpt = tmp_path / "run" / "checkpoints" / "final.saec"
    assert cli.main(["train", "--config", str(more), "--out", str(tmp_path / "run"), "--checkpoint", str(ckpt)]) == 0
    assert [r[1] for r in read_csv(tmp_path / "run" / "metrics.csv")[1:]] == ["0", "1", "2", "3"]


def test_exit_codes(tmp_path, monkeypatch, capsys):
    monkeypatch.delenv(OUTPUT_ROOT_ENV, raising=False)
    bad = tmp_path / "bad.cfg"
    bad.write_text("gamma=1.5\n")
    assert cli.main(["train", "--config", str(bad)]) == cli.EXIT_CONFIG
    assert "gamma" in capsys.readouterr().err
    assert cli.main(["train", "--config", str(tmp_path / "missing.cfg")]) == cli.EXIT_IO
    good = write_config(tmp_path, "iterations=0\n")
    assert cli.main(["eval", "--config", str(good), "--out", str(tmp_path / "e")]) == cli.EXIT_CONFIG
    junk = tmp_path / "junk.saec"
    junk.write_bytes(b"not a checkpoint")
    assert cli.main(["eval", "--config", str(good), "--out", str(tmp_path / "e"), "--checkpoint", str(junk)]) \
        == cli.EXIT_CONFIG

    def explode(cfg, resume=None):
        raise NumericalError("j_q1 is not finite")

    monkeypatch.setattr(cli, "run_train", explode)
    assert cli.main(["train", "--config", str(good), "--out", str(tmp_path / "n")]) == cli.EXIT_NUMERIC
    assert len({cli.EXIT_OK, cli.EXIT_CONFIG, cli.EXIT_NUMERIC, cli.EXIT_IO}) == 4


def test_console_entry_point_runs(tmp_path):
    path = write_config(tmp_path, "iterations=0\n")
    proc = subprocess.run([sys.executable, "-m", "saec.cli", "train", "--config", str(path), "--out",
                           str(tmp_path / "run")], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "run" / "metrics.csv").exists()
