"""Actor, executor, twin critics and discriminator.

All forwards are pure functions of ``(params, inputs)``; the stochastic part
lives in :func:`sample_latent`, which takes an explicit generator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .nn import ParamSet, ParamSpec, conv_spec, conv_t_spec, dense_spec, init_params
from .tensor import Tensor

LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0
SQUASH_EPS = 1e-6
# tanh rounds to exactly +-1 in double precision once |u| > ~19; keep latents strictly inside (-1, 1)
Z_LIMIT = 1.0 - 1e-12
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class Architecture:
    channels: int = 1
    size: int = 32
    z_dim: int = 16
    widths: tuple[int, ...] = (16, 32, 64)
    use_skips: bool = True
    critic_widths: tuple[int, int] = (16, 32)
    critic_hidden: int = 64
    disc_widths: tuple[int, int] = (16, 32)

    @property
    def levels(self) -> int:
        return len(self.widths)

    @property
    def bottleneck(self) -> int:
        return self.size // 2**self.levels

    def validate(self) -> None:
        if self.levels < 1:
            raise ValueError("need at least one down-sampling level")
        if self.size % 2**self.levels:
            raise ValueError(f"image size {self.size} not divisible by 2^{self.levels}")
        if self.size % 4:
            raise ValueError(f"image size {self.size} must be divisible by 4 for the critic/discriminator")
        if self.z_dim < 1 or self.channels < 1:
            raise ValueError("z_dim and channels must be positive")


@dataclass
class ActorOutput:
    mean: Tensor
    log_std: Tensor
    skips: list[Tensor] = field(default_factory=list)


@dataclass
class LatentAction:
    z: Tensor
    log_prob: Tensor
    u: Tensor


# -- parameter layouts -------------------------------------------------------------


def actor_spec(a: Architecture) -> list[ParamSpec]:
    spec: list[ParamSpec] = []
    c = a.channels
    for i, w in enumerate(a.widths):
        spec += conv_spec(f"down{i}", c, w, 3)
        c = w
    flat = a.widths[-1] * a.bottleneck**2
    spec += dense_spec("mean", flat, a.z_dim)
    spec += dense_spec("log_std", flat, a.z_dim)
    return spec


def executor_spec(a: Architecture) -> list[ParamSpec]:
    top = a.widths[-1]
    spec = dense_spec("project", a.z_dim, top * a.bottleneck**2)
    spec += conv_t_spec("stem", top, top, 2)
    c = top
    for level in reversed(range(a.levels)):
        c_in = c + (a.widths[level] if a.use_skips else 0)
        if level > 0:
            c_out = a.widths[level - 1]
            spec += conv_t_spec(f"up{level}", c_in, c_out, 2)
        else:
            c_out = a.channels
            spec += conv_t_spec(f"up{level}", c_in, c_out, 3)
        c = c_out
    return spec


def critic_spec(a: Architecture) -> list[ParamSpec]:
    c1, c2 = a.critic_widths
    flat = c2 * (a.size // 4) ** 2
    return (
        conv_spec("conv0", a.channels, c1, 3)
        + conv_spec("conv1", c1, c2, 3)
        + dense_spec("feat", flat, a.critic_hidden)
        + dense_spec("hidden", a.critic_hidden + a.z_dim, a.critic_hidden)
        + dense_spec("q", a.critic_hidden, 1)
    )


def discriminator_spec(a: Architecture) -> list[ParamSpec]:
    c1, c2 = a.disc_widths
    flat = c2 * (a.size // 4) ** 2
    return conv_spec("conv0", a.channels, c1, 3) + conv_spec("conv1", c1, c2, 3) + dense_spec("logit", flat, 1)


# -- forwards ------------------------------------------------------------------


def _check_image(x: Tensor, a: Architecture) -> None:
    if x.ndim != 4 or x.shape[1:] != (a.channels, a.size, a.size):
        raise ValueError(f"expected images of shape [N,{a.channels},{a.size},{a.size}], got {x.shape}")


def _conv(x, p, name, stride=1, padding=1):
    return T.conv2d(x, p[f"{name}.w"], stride, padding) + p[f"{name}.b"]


def _dense(x, p, name):
    return T.linear(x, p[f"{name}.w"], p[f"{name}.b"])


def actor_forward(params: ParamSet, x: Tensor, a: Architecture) -> ActorOutput:
    h, w = x.shape[2:] if x.ndim == 4 else (None, None)
    if h is not None and (h % 2**a.levels or w % 2**a.levels):
        raise ValueError(f"spatial dims {(h, w)} not divisible by 2^{a.levels}")
    _check_image(x, a)
    skips = []
    h = x
    for i in range(a.levels):
        h = T.leaky_relu(_conv(h, params, f"down{i}"))
        skips.append(h)
        h = T.max_pool2d(h)
    flat = T.reshape(h, (x.shape[0], -1))
    mean = _dense(flat, params, "mean")
    log_std = T.clip(_dense(flat, params, "log_std"), LOG_STD_MIN, LOG_STD_MAX)
    return ActorOutput(mean, log_std, skips)


def squash(u: Tensor) -> Tensor:
    return T.clip(T.tanh(u), -Z_LIMIT, Z_LIMIT)


def squashed_log_prob(u: Tensor, mean: Tensor, log_std: Tensor) -> Tensor:
    """Log-density of z = tanh(u) with u ~ Normal(mean, exp(log_std)), summed over the last axis."""
    z = squash(u)
    scaled = (u - mean) / T.exp(log_std)
    gauss = -0.5 * T.square(scaled) - log_std - _HALF_LOG_2PI
    correction = T.log(1.0 - T.square(z) + SQUASH_EPS)
    return T.tsum(gauss - correction, axis=-1)


def sample_latent(out: ActorOutput, rng: np.random.Generator) -> LatentAction:
    """Reparameterized draw; gradients reach ``mean`` and ``log_std``."""
    eps = Tensor(rng.standard_normal(out.mean.shape))
    std = T.exp(out.log_std)
    u = out.mean + std * eps
    z = squash(u)
    gauss = -0.5 * T.square(eps) - out.log_std - _HALF_LOG_2PI
    correction = T.log(1.0 - T.square(z) + SQUASH_EPS)
    log_prob = T.tsum(gauss - correction, axis=-1)
    return LatentAction(z, log_prob, u)


def deterministic_latent(out: ActorOutput) -> Tensor:
    return squash(out.mean)


def executor_forward(params: ParamSet, x: Tensor, z: Tensor, skips: list[Tensor], a: Architecture) -> Tensor:
    n = z.shape[0]
    if z.ndim != 2 or z.shape[1] != a.z_dim:
        raise ValueError(f"expected z of shape [N,{a.z_dim}], got {z.shape}")
    if a.use_skips:
        if len(skips) != a.levels:
            raise ValueError(f"expected {a.levels} skips, got {len(skips)}")
        for level, s in enumerate(skips):
            want = (n, a.widths[level], a.size // 2**level, a.size // 2**level)
            if s.shape != want:
                raise ValueError(f"skip {level} has shape {s.shape}, expected {want}")
    b = a.bottleneck
    h = T.leaky_relu(_dense(z, params, "project"))
    h = T.reshape(h, (n, a.widths[-1], b, b))
    h = T.leaky_relu(T.conv2d_transpose(h, params["stem.w"], 2, 0) + params["stem.b"])
    for level in reversed(range(a.levels)):
        if a.use_skips:
            h = T.concat([h, skips[level]], axis=1)
        if level > 0:
            h = T.leaky_relu(T.conv2d_transpose(h, params[f"up{level}.w"], 2, 0) + params[f"up{level}.b"])
        else:
            h = T.tanh(T.conv2d_transpose(h, params[f"up{level}.w"], 1, 1) + params[f"up{level}.b"])
    return h


def critic_forward(params: ParamSet, x: Tensor, z: Tensor, a: Architecture) -> Tensor:
    _check_image(x, a)
    if z.ndim != 2 or z.shape != (x.shape[0], a.z_dim):
        raise ValueError(f"expected z of shape [{x.shape[0]},{a.z_dim}], got {z.shape}")
    h = T.leaky_relu(_conv(x, params, "conv0", stride=2))
    h = T.leaky_relu(_conv(h, params, "conv1", stride=2))
    feat = T.leaky_relu(_dense(T.reshape(h, (x.shape[0], -1)), params, "feat"))
    h = T.leaky_relu(_dense(T.concat([feat, z], axis=1), params, "hidden"))
    return T.reshape(_dense(h, params, "q"), (x.shape[0],))


def discriminator_forward(params: ParamSet, img: Tensor, a: Architecture) -> Tensor:
    _check_image(img, a)
    h = T.leaky_relu(_conv(img, params, "conv0", stride=2))
    h = T.leaky_relu(_conv(h, params, "conv1", stride=2))
    return T.reshape(_dense(T.reshape(h, (img.shape[0], -1)), params, "logit"), (img.shape[0],))


# -- container -------------------------------------------------------------------


class Agent:
    """All SAEC parameter sets for one architecture.

    The target critics start as exact copies of the online critics.
    """

    NETWORKS = ("actor", "executor", "critic1", "critic2", "critic1_target", "critic2_target", "discriminator")

    def __init__(self, arch: Architecture, seed: int = 0):
        arch.validate()
        self.arch = arch
        self.actor = init_params(actor_spec(arch), [seed, 2, 0])
        self.executor = init_params(executor_spec(arch), [seed, 2, 1])
        self.critic1 = init_params(critic_spec(arch), [seed, 2, 2])
        self.critic2 = init_params(critic_spec(arch), [seed, 2, 3])
        self.discriminator = init_params(discriminator_spec(arch), [seed, 2, 4])
        self.critic1_target = self.critic1.copy()
        self.critic2_target = self.critic2.copy()
        for t in (self.critic1_target, self.critic2_target):
            for p in t.tensors():
                p.requires_grad = False

    def param_sets(self) -> dict[str, ParamSet]:
        return {name: getattr(self, name) for name in self.NETWORKS}

    def actor_out(self, x: Tensor) -> ActorOutput:
        return actor_forward(self.actor, x, self.arch)

    def execute(self, x: Tensor, z: Tensor, skips: list[Tensor]) -> Tensor:
        return executor_forward(self.executor, x, z, skips, self.arch)

    def q(self, params: ParamSet, x: Tensor, z: Tensor) -> Tensor:
        return critic_forward(params, x, z, self.arch)

    def discriminate(self, img: Tensor, params: ParamSet | None = None) -> Tensor:
        return discriminator_forward(params or self.discriminator, img, self.arch)

    def act(self, x: np.ndarray, rng: np.random.Generator | None) -> tuple[np.ndarray, np.ndarray]:
        """Graph-free rollout step: returns (z, y_tilde). ``rng=None`` uses the policy mean."""
        with T.no_grad():
            xt = Tensor(x)
            out = self.actor_out(xt)
            z = deterministic_latent(out) if rng is None else sample_latent(out, rng).z
            y = self.execute(xt, z, out.skips)
        return z.data, y.data
