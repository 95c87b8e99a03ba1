"""Run orchestration: training, evaluation and sample export into an output directory."""

from __future__ import annotations

import contextlib
import csv
import logging
import os
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, format_config
from .env import InpaintingEnv, SyntheticSource, image_suffix, load_image_directory, split_source, write_image
from .trainer import IterationResult, Trainer

log = logging.getLogger(__name__)

OUTPUT_ROOT_ENV = "SAEC_OUTPUT_ROOT"
CSV_COLUMNS = ["step", "episode", "reward_mean", "psnr", "ssim", "l_rec", "l_adv", "j_q1", "j_q2", "j_pi",
               "alpha", "mean_logprob"]
METRICS_FILE = "metrics.csv"
RESOLVED_CONFIG_FILE = "resolved_config.txt"


def resolve_out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out_dir)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not out.is_absolute():
        out = Path(root) / out
    return out


@contextlib.contextmanager
def locked(out: Path):
    """Exclusive ownership of ``out`` for the duration of a run."""
    out.mkdir(parents=True, exist_ok=True)
    lock = out / ".lock"
    fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield out
    finally:
        lock.unlink(missing_ok=True)


def build_sources(cfg: RunConfig):
    """(training source, held-out samples)."""
    if cfg.dataset == "directory":
        full = load_image_directory(cfg.data_dir, cfg.image_channels, cfg.image_size, cfg.resize)
        train, test = split_source(full, cfg.split_fraction, cfg.seed)
        return train, test.held_out(cfg.eval_samples, cfg.seed)
    src = SyntheticSource(cfg.dataset, cfg.image_channels, cfg.image_size)
    return src, src.held_out(cfg.eval_samples, cfg.seed)


def build_trainer(cfg: RunConfig) -> tuple[Trainer, list]:
    train, held_out = build_sources(cfg)
    env = InpaintingEnv(train, cfg.horizon, cfg.reward, cfg.reward_mode, cfg.reward_scale, cfg.mask_fill)
    return Trainer(cfg, env), held_out


def csv_row(res: IterationResult, horizon: int) -> list[str]:
    L = res.losses
    losses = ["", "", "", "", "", "", ""] if L is None else [
        repr(L.l_rec), repr(L.l_adv), repr(L.j_q1), repr(L.j_q2), repr(L.j_pi), repr(L.alpha_value),
        repr(L.mean_logprob)]
    return [str((res.iteration + 1) * horizon), str(res.iteration), repr(res.reward_mean), repr(res.psnr),
            repr(res.ssim)] + losses


def grid(states: list[np.ndarray], target: np.ndarray) -> np.ndarray:
    """input | prediction after each step | target, side by side."""
    return np.concatenate(list(states) + [target], axis=-1)


def write_grids(trainer: Trainer, samples, path_stem: Path, count: int = 4) -> None:
    rows = trainer.evaluate(samples[:count])
    suffix = image_suffix(trainer.cfg.image_channels)
    for row in rows:
        write_image(f"{path_stem}_{row['index']}{suffix}", grid(row["states"], row["target"]))


def _truncate_metrics(path: Path, iteration: int) -> None:
    """Drop rows at or after ``iteration`` so a resumed run appends cleanly."""
    if not path.exists():
        return
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    keep = [rows[0]] + [r for r in rows[1:] if int(r[1]) < iteration]
    with path.open("w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows(keep)


def run_train(cfg: RunConfig, resume: str | os.PathLike | None = None) -> Trainer:
    out = resolve_out_dir(cfg)
    with locked(out):
        (out / RESOLVED_CONFIG_FILE).write_text(format_config(cfg))
        trainer, held_out = build_trainer(cfg)
        metrics_path = out / METRICS_FILE
        if resume is not None:
            load_checkpoint(resume, trainer)
            _truncate_metrics(metrics_path, trainer.iteration)
        if resume is None or not metrics_path.exists():
            with metrics_path.open("w", newline="") as fh:
                csv.writer(fh, lineterminator="\n").writerow(CSV_COLUMNS)
        ckpt_dir = out / "checkpoints"
        sample_dir = out / "samples"
        ckpt_dir.mkdir(exist_ok=True)
        sample_dir.mkdir(exist_ok=True)
        with metrics_path.open("a", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            while trainer.iteration < cfg.iterations:
                res = trainer.train_iteration()
                writer.writerow(csv_row(res, cfg.horizon))
                fh.flush()
                if trainer.iteration % cfg.checkpoint_interval == 0:
                    save_checkpoint(ckpt_dir / f"ckpt_{trainer.iteration:06d}.saec", trainer)
                    write_grids(trainer, held_out, sample_dir / f"iter_{trainer.iteration:06d}")
                    log.info("iteration %d psnr %.3f", trainer.iteration, res.psnr)
        save_checkpoint(ckpt_dir / "final.saec", trainer)
    return trainer


def run_eval(cfg: RunConfig, checkpoint: str | os.PathLike) -> dict:
    out = resolve_out_dir(cfg)
    with locked(out):
        trainer, held_out = build_trainer(cfg)
        load_checkpoint(checkpoint, trainer)
        rows = trainer.evaluate(held_out)
        with (out / "eval.csv").open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["index", "psnr", "ssim"])
            for r in rows:
                w.writerow([r["index"], repr(r["psnr"]), repr(r["ssim"])])
        eval_dir = out / "eval_samples"
        eval_dir.mkdir(exist_ok=True)
        write_grids(trainer, held_out, eval_dir / "sample")
        p = np.array([r["psnr"] for r in rows])
        s = np.array([r["ssim"] for r in rows])
        summary = {"n": len(rows), "psnr_mean": float(p.mean()), "psnr_std": float(p.std()),
                   "ssim_mean": float(s.mean()), "ssim_std": float(s.std())}
        (out / "eval_summary.txt").write_text("".join(f"{k}={v!r}\n" for k, v in summary.items()))
    return summary


def export_samples(cfg: RunConfig) -> list[Path]:
    out = resolve_out_dir(cfg)
    with locked(out):
        _, held_out = build_sources(cfg)
        target = out / "samples"
        target.mkdir(exist_ok=True)
        suffix = image_suffix(cfg.image_channels)
        paths = []
        for i, sample in enumerate(held_out):
            p = target / f"{cfg.dataset}_{i:04d}{suffix}"
            write_image(p, sample.image)
            paths.append(p)
    return paths


def trainer_from_checkpoint(cfg: RunConfig, checkpoint) -> Trainer:
    trainer, _ = build_trainer(cfg)
    load_checkpoint(checkpoint, trainer)
    return trainer

