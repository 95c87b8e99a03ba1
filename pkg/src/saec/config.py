"""Run configuration: plain ``key=value`` lines, ``#`` starts a comment."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .agent import Architecture


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    # images / architecture
    image_channels: int = 1
    image_size: int = 32
    z_dim: int = 16
    widths: tuple[int, ...] = (16, 32, 64)
    use_skips: bool = True
    # MDP
    horizon: int = 3
    reward: str = "psnr"
    reward_mode: str = "absolute"
    reward_scale: float = 0.1
    mask_fill: float = 0.0
    # RL / DL objectives
    gamma: float = 0.99
    tau: float = 0.005
    lr_dl: float = 3e-4
    lr_q: float = 3e-4
    lr_pi: float = 3e-4
    lr_alpha: float = 3e-4
    lambda_rec: float = 10.0
    lambda_adv: float = 1.0
    init_log_alpha: float = 0.0
    optimizer: str = "adam"
    grad_clip: float = 0.0
    # schedule
    batch_size: int = 32
    buffer_capacity: int = 10000
    min_buffer: int = 32
    grad_steps: int = 2
    iterations: int = 1000
    checkpoint_interval: int = 250
    # data
    dataset: str = "stripes"
    data_dir: str = ""
    split_fraction: float = 0.9
    resize: str = "bilinear"
    eval_samples: int = 64
    # run
    seed: int = 0
    out_dir: str = "runs/default"

    @property
    def levels(self) -> int:
        return len(self.widths)

    @property
    def target_entropy(self) -> float:
        return -float(self.z_dim)

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return (self.image_channels, self.image_size, self.image_size)

    def architecture(self) -> Architecture:
        return Architecture(channels=self.image_channels, size=self.image_size, z_dim=self.z_dim,
                            widths=tuple(self.widths), use_skips=self.use_skips)

    def replace(self, **changes) -> RunConfig:
        cfg = dataclasses.replace(self, **changes)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        for msg in self.violations():
            raise ConfigError(msg)

    def violations(self) -> list[str]:
        out = []
        for name in ("lr_dl", "lr_q", "lr_pi", "lr_alpha", "lambda_rec", "lambda_adv", "reward_scale", "grad_clip"):
            if getattr(self, name) < 0:
                out.append(f"{name} must be >= 0")
        if not 0.0 <= self.gamma <= 1.0:
            out.append("gamma must lie in [0, 1]")
        if not 0.0 <= self.tau <= 1.0:
            out.append("tau must lie in [0, 1]")
        if self.horizon < 1:
            out.append("horizon must be >= 1")
        if self.batch_size < 1:
            out.append("batch_size must be >= 1")
        if self.buffer_capacity < 1:
            out.append("buffer_capacity must be >= 1")
        if self.min_buffer < 1:
            out.append("min_buffer must be >= 1")
        if self.grad_steps < 0 or self.iterations < 0:
            out.append("grad_steps and iterations must be >= 0")
        if self.checkpoint_interval < 1:
            out.append("checkpoint_interval must be >= 1")
        if self.z_dim < 1:
            out.append("z_dim must be >= 1")
        if self.image_channels not in (1, 3):
            out.append("image_channels must be 1 or 3")
        if not self.widths or any(w < 1 for w in self.widths):
            out.append("widths must be a non-empty list of positive integers")
        elif self.image_size < 4 or self.image_size % 2 ** len(self.widths) or self.image_size % 4:
            out.append("image_size must be divisible by 4 and by 2^len(widths)")
        if self.reward not in ("psnr", "ssim"):
            out.append("reward must be psnr or ssim")
        if self.reward_mode not in ("absolute", "delta"):
            out.append("reward_mode must be absolute or delta")
        if self.dataset not in ("stripes", "blobs", "gradients", "directory"):
            out.append("dataset must be stripes, blobs, gradients or directory")
        if self.dataset == "directory" and not self.data_dir:
            out.append("dataset=directory requires data_dir")
        if not 0.0 < self.split_fraction <= 1.0:
            out.append("split_fraction must lie in (0, 1]")
        if self.resize not in ("nearest", "bilinear"):
            out.append("resize must be nearest or bilinear")
        if self.optimizer not in ("adam", "sgd"):
            out.append("optimizer must be adam or sgd")
        if self.eval_samples < 1:
            out.append("eval_samples must be >= 1")
        return out


_FIELDS = {f.name: f for f in fields(RunConfig)}


def _parse_value(name: str, raw: str):
    default = getattr(RunConfig, name)
    if isinstance(default, bool):
        low = raw.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if isinstance(default, tuple):
        return tuple(int(p) for p in raw.split(",") if p.strip())
    return raw


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_config(text: str, **overrides) -> RunConfig:
    values: dict = {}
    lines: dict[str, int] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            values[key] = _parse_value(key, raw)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: cannot parse {key}={raw!r}: {exc}") from None
        lines[key] = lineno
    values.update({k: v for k, v in overrides.items() if v is not None})
    cfg = RunConfig(**values)
    problems = cfg.violations()
    if problems:
        # point at the offending line when the key was set explicitly
        msg = problems[0]
        key = msg.split()[0]
        where = f"line {lines[key]}: " if key in lines else ""
        raise ConfigError(f"{where}{msg}")
    return cfg


def load_config(path: str | Path | None, **overrides) -> RunConfig:
    text = Path(path).read_text() if path else ""
    return parse_config(text, **overrides)


def format_config(cfg: RunConfig) -> str:
    return "".join(f"{f.name}={_format_value(getattr(cfg, f.name))}\n" for f in fields(RunConfig))
