"""Episodic inpainting environment, synthetic data and image-directory ingestion."""

from __future__ import annotations

import os
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from . import metrics

SYNTHETIC_KINDS = ("stripes", "blobs", "gradients")


@dataclass
class Sample:
    image: np.ndarray  # [C, H, W] in [-1, 1]
    mask: np.ndarray  # [C, H, W], 1 = region to synthesize


@dataclass
class EnvState:
    current: np.ndarray
    target: np.ndarray
    mask: np.ndarray
    t: int
    horizon: int
    metric: float = 0.0  # reward metric of ``current`` against ``target``


def center_mask(channels: int, size: int) -> np.ndarray:
    """Centered square of side size/2 (a quarter of the image area)."""
    m = np.zeros((channels, size, size))
    lo = size // 4
    m[:, lo : lo + size // 2, lo : lo + size // 2] = 1.0
    return m


def make_synthetic_sample(kind: str, seed, channels: int = 1, size: int = 32) -> Sample:
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    if kind == "stripes":
        angle = rng.uniform(0.0, np.pi)
        period = rng.uniform(8.0, 16.0)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        base = np.sin(2.0 * np.pi * (xx * np.cos(angle) + yy * np.sin(angle)) / period + phase)
    elif kind == "blobs":
        base = np.zeros((size, size))
        for _ in range(rng.integers(3, 6)):
            cy, cx = rng.uniform(0, size, size=2)
            width = rng.uniform(size / 8, size / 3)
            base += rng.choice([-1.0, 1.0]) * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * width**2))
        base = np.tanh(1.5 * base)
    elif kind == "gradients":
        gy, gx = rng.uniform(-2.0, 2.0, size=2) / size
        base = np.clip(gy * (yy - size / 2) + gx * (xx - size / 2) + rng.uniform(-0.5, 0.5), -1.0, 1.0)
    else:
        raise ValueError(f"unknown synthetic kind {kind!r}; expected one of {SYNTHETIC_KINDS}")
    gains = rng.uniform(0.6, 1.0, size=channels) if channels > 1 else np.ones(1)
    image = np.stack([g * base for g in gains])
    return Sample(image=image, mask=center_mask(channels, size))


class SyntheticSource:
    """Unbounded procedural source; every draw generates a fresh sample."""

    def __init__(self, kind: str, channels: int = 1, size: int = 32):
        if kind not in SYNTHETIC_KINDS:
            raise ValueError(f"unknown synthetic kind {kind!r}; expected one of {SYNTHETIC_KINDS}")
        self.kind, self.channels, self.size = kind, channels, size

    def __len__(self) -> int:
        return 2**31

    def draw(self, rng: np.random.Generator) -> Sample:
        return make_synthetic_sample(self.kind, int(rng.integers(2**63)), self.channels, self.size)

    def held_out(self, n: int, seed: int) -> list[Sample]:
        # different seed stream from training draws
        return [make_synthetic_sample(self.kind, [seed, 1, i], self.channels, self.size) for i in range(n)]


class ImageSource:
    """Fixed list of images sharing one centered mask."""

    def __init__(self, images: np.ndarray, names: list[str] | None = None):
        if len(images) == 0:
            raise ValueError("image source is empty")
        self.images = np.asarray(images, dtype=np.float64)
        self.names = names or [str(i) for i in range(len(images))]
        _, c, h, _ = self.images.shape
        self.mask = center_mask(c, h)

    def __len__(self) -> int:
        return len(self.images)

    def __getitem__(self, i: int) -> Sample:
        return Sample(self.images[i].copy(), self.mask.copy())

    def draw(self, rng: np.random.Generator) -> Sample:
        return self[int(rng.integers(len(self)))]

    def held_out(self, n: int, seed: int) -> list[Sample]:
        return [self[i] for i in range(min(n, len(self)))]


# -- image files ---------------------------------------------------------------------

_RESAMPLE = {"nearest": Image.Resampling.NEAREST, "bilinear": Image.Resampling.BILINEAR}


def decode_image(path: str | os.PathLike, channels: int, size: int, resize: str = "bilinear") -> np.ndarray:
    with Image.open(path) as im:
        im = im.convert("L" if channels == 1 else "RGB")
        if im.size != (size, size):
            im = im.resize((size, size), _RESAMPLE[resize])
        arr = np.asarray(im, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None]
    else:
        arr = arr.transpose(2, 0, 1)
    return arr / 127.5 - 1.0


def to_uint8(image: np.ndarray) -> np.ndarray:
    return np.clip(np.rint((np.asarray(image) + 1.0) * 127.5), 0, 255).astype(np.uint8)


def write_image(path: str | os.PathLike, image: np.ndarray) -> None:
    """Write a [C,H,W] image in [-1,1] as binary PGM (C=1) or PPM (C=3)."""
    px = to_uint8(image)
    if px.shape[0] == 1:
        Image.fromarray(px[0], mode="L").save(path, format="PPM")
    elif px.shape[0] == 3:
        Image.fromarray(px.transpose(1, 2, 0), mode="RGB").save(path, format="PPM")
    else:
        raise ValueError(f"cannot write an image with {px.shape[0]} channels")


def image_suffix(channels: int) -> str:
    return ".pgm" if channels == 1 else ".ppm"


def load_image_directory(path: str | os.PathLike, channels: int, size: int, resize: str = "bilinear") -> ImageSource:
    """Decode every readable image in ``path`` in lexicographic filename order."""
    root = Path(path)
    if not root.is_dir():
        raise FileNotFoundError(f"image directory {root} is not readable")
    if resize not in _RESAMPLE:
        raise ValueError(f"unknown resize mode {resize!r}")
    images, names = [], []
    for entry in sorted(root.iterdir()):
        if not entry.is_file():
            continue
        try:
            images.append(decode_image(entry, channels, size, resize))
        except (UnidentifiedImageError, OSError):
            continue
        names.append(entry.name)
    if not images:
        raise ValueError(f"no decodable images in {root}")
    return ImageSource(np.stack(images), names)


def split_source(source: ImageSource, fraction: float, seed: int) -> tuple[ImageSource, ImageSource]:
    """Seeded shuffle, then the first ``fraction`` goes to training."""
    order = np.random.default_rng([seed, 3]).permutation(len(source))
    n_train = min(len(source), max(1, int(round(fraction * len(source)))))
    tr, te = order[:n_train], order[n_train:]
    if len(te) == 0:
        te = tr
    return (
        ImageSource(source.images[tr], [source.names[i] for i in tr]),
        ImageSource(source.images[te], [source.names[i] for i in te]),
    )


# -- the MDP -------------------------------------------------------------------------


def compose_state(current, y_tilde, mask):
    """Replace masked pixels of ``current`` with ``y_tilde``.

    Works on ndarrays or Tensors (gradients flow to ``y_tilde``).
    """
    cs = np.shape(getattr(current, "data", current))
    ys = np.shape(getattr(y_tilde, "data", y_tilde))
    ms = np.shape(getattr(mask, "data", mask))
    if cs != ys or cs[-len(ms):] != ms:
        raise ValueError(f"compose_state shape mismatch: current {cs}, y_tilde {ys}, mask {ms}")
    if len(ms) < len(cs):
        mask = np.reshape(getattr(mask, "data", mask), (1,) * (len(cs) - len(ms)) + ms)
    return mask * y_tilde + (1.0 - mask) * current


@dataclass
class StepResult:
    state: EnvState
    reward: float
    done: bool
    metric: float


class InpaintingEnv:
    """Progressive inpainting: each step overwrites the masked region.

    ``reward_mode='absolute'`` emits ``scale * metric(next, target)``;
    ``'delta'`` emits the scaled change of the metric over the step.
    """

    def __init__(self, source, horizon: int = 3, reward: str = "psnr", reward_mode: str = "absolute",
                 reward_scale: float = 0.1, fill: float = 0.0):
        if horizon < 1:
            raise ValueError(f"horizon must be >= 1, got {horizon}")
        if reward not in ("psnr", "ssim"):
            raise ValueError(f"unknown reward {reward!r}")
        if reward_mode not in ("absolute", "delta"):
            raise ValueError(f"unknown reward mode {reward_mode!r}")
        if source is None or len(source) == 0:
            raise ValueError("data source is empty")
        self.source = source
        self.horizon = horizon
        self.reward_name = reward
        self.reward_mode = reward_mode
        self.reward_scale = reward_scale
        self.fill = fill

    def metric(self, a: np.ndarray, b: np.ndarray) -> float:
        return metrics.psnr(a, b) if self.reward_name == "psnr" else metrics.ssim(a, b)

    def start(self, sample: Sample) -> EnvState:
        current = np.where(sample.mask > 0, self.fill, sample.image)
        return EnvState(current, sample.image.copy(), sample.mask.copy(), 0, self.horizon,
                        self.metric(current, sample.image))

    def reset(self, rng: np.random.Generator) -> tuple[EnvState, np.ndarray]:
        state = self.start(self.source.draw(rng))
        return state, state.target

    def step(self, state: EnvState, y_tilde: np.ndarray) -> StepResult:
        if state.t >= state.horizon:
            raise RuntimeError("episode already finished; call reset()")
        y_tilde = np.asarray(y_tilde, dtype=np.float64).reshape(state.current.shape)
        current = compose_state(state.current, y_tilde, state.mask)
        m = self.metric(current, state.target)
        raw = m if self.reward_mode == "absolute" else m - state.metric
        nxt = replace(state, current=current, t=state.t + 1, metric=m)
        return StepResult(nxt, self.reward_scale * raw, nxt.t == nxt.horizon, m)
