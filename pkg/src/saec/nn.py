"""Parameter containers, initialization, optimizers and soft target updates."""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .tensor import Tensor


@dataclass(frozen=True)
class ParamSpec:
    """One named parameter. ``fan_in=None`` marks a zero-initialized bias."""

    name: str
    shape: tuple[int, ...]
    fan_in: int | None = None


def dense_spec(prefix: str, n_in: int, n_out: int) -> list[ParamSpec]:
    return [ParamSpec(f"{prefix}.w", (n_in, n_out), n_in), ParamSpec(f"{prefix}.b", (1, n_out))]


def conv_spec(prefix: str, c_in: int, c_out: int, k: int) -> list[ParamSpec]:
    return [ParamSpec(f"{prefix}.w", (c_out, c_in, k, k), c_in * k * k), ParamSpec(f"{prefix}.b", (1, c_out, 1, 1))]


def conv_t_spec(prefix: str, c_in: int, c_out: int, k: int) -> list[ParamSpec]:
    # fan-in of a transposed conv: input channels contributing to one output pixel
    fan_in = c_in * k * k
    return [ParamSpec(f"{prefix}.w", (c_in, c_out, k, k), fan_in), ParamSpec(f"{prefix}.b", (1, c_out, 1, 1))]


class ParamSet:
    """Ordered name -> Tensor map; iteration order is insertion order."""

    def __init__(self, tensors: dict[str, Tensor] | None = None):
        self._tensors: OrderedDict[str, Tensor] = OrderedDict()
        for name, t in (tensors or {}).items():
            self[name] = t

    def __setitem__(self, name: str, t: Tensor) -> None:
        if name in self._tensors:
            raise KeyError(f"duplicate parameter name {name!r}")
        self._tensors[name] = t

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __iter__(self) -> Iterator[str]:
        return iter(self._tensors)

    def __len__(self) -> int:
        return len(self._tensors)

    def items(self):
        return self._tensors.items()

    def tensors(self) -> list[Tensor]:
        return list(self._tensors.values())

    def shapes(self) -> dict[str, tuple[int, ...]]:
        return {k: v.shape for k, v in self._tensors.items()}

    def zero_grad(self) -> None:
        for t in self._tensors.values():
            t.grad = None

    def copy(self) -> ParamSet:
        return ParamSet({k: Tensor(v.data, requires_grad=v.requires_grad) for k, v in self._tensors.items()})

    def detached(self) -> ParamSet:
        """Same values, no gradient tracking: used as stop-gradient weights."""
        return ParamSet({k: Tensor(v.data) for k, v in self._tensors.items()})

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for k, t in self._tensors.items():
            arr = np.asarray(arrays[k], dtype=np.float64)
            if arr.shape != t.shape:
                raise ValueError(f"shape mismatch for {k!r}: expected {t.shape}, got {arr.shape}")
            t.data = arr.copy()


def init_params(spec: list[ParamSpec], seed) -> ParamSet:
    """Uniform(-b, b) weights with b = sqrt(1/fan_in); zero biases."""
    rng = np.random.default_rng(seed)
    params = ParamSet()
    for p in spec:
        if p.fan_in is None:
            data = np.zeros(p.shape)
        else:
            if p.fan_in <= 0:
                raise ValueError(f"parameter {p.name!r} has non-positive fan-in {p.fan_in}")
            bound = np.sqrt(1.0 / p.fan_in)
            data = rng.uniform(-bound, bound, size=p.shape)
        params[p.name] = Tensor(data, requires_grad=True)
    return params


def check_same_layout(a: ParamSet, b: ParamSet) -> None:
    if list(a) != list(b) or a.shapes() != b.shapes():
        raise ValueError("parameter sets differ in names or shapes")


def ema_update(target: ParamSet, online: ParamSet, tau: float) -> None:
    """target <- tau * online + (1 - tau) * target, in place."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must lie in [0, 1], got {tau}")
    check_same_layout(target, online)
    for name, t in target.items():
        t.data = tau * online[name].data + (1.0 - tau) * t.data


class Optimizer:
    """First-order optimizer over a list of parameter sets.

    ``kind='adam'`` is the adaptive-moment update with bias correction;
    ``kind='sgd'`` is the plain gradient step. ``clip > 0`` rescales the
    joint gradient to that global L2 norm.
    """

    def __init__(self, params: ParamSet | list[tuple[str, ParamSet]], lr: float, kind: str = "adam",
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8, clip: float = 0.0):
        if kind not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer kind {kind!r}")
        if lr < 0:
            raise ValueError(f"learning rate must be >= 0, got {lr}")
        groups = [("", params)] if isinstance(params, ParamSet) else list(params)
        self.named: list[tuple[str, Tensor]] = []
        for prefix, ps in groups:
            for name, t in ps.items():
                self.named.append((f"{prefix}{name}", t))
        self.lr = lr
        self.kind = kind
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.clip = clip
        self.step_count = 0
        self.m = {name: np.zeros(t.shape) for name, t in self.named}
        self.v = {name: np.zeros(t.shape) for name, t in self.named}

    def zero_grad(self) -> None:
        for _, t in self.named:
            t.grad = None

    def step(self) -> None:
        grads = {}
        for name, t in self.named:
            if t.grad is None:
                raise ValueError(f"parameter {name!r} has no gradient")
            grads[name] = t.grad
        if self.clip > 0:
            norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
            if norm > self.clip:
                scale = self.clip / norm
                grads = {k: g * scale for k, g in grads.items()}
        self.step_count += 1
        if self.kind == "sgd":
            for name, t in self.named:
                t.data = t.data - self.lr * grads[name]
            return
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.step_count
        c2 = 1.0 - b2**self.step_count
        for name, t in self.named:
            g = grads[name]
            m = self.m[name] = b1 * self.m[name] + (1.0 - b1) * g
            v = self.v[name] = b2 * self.v[name] + (1.0 - b2) * g * g
            t.data = t.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {"step": np.array([float(self.step_count)])}
        for name, _ in self.named:
            out[f"m/{name}"] = self.m[name]
            out[f"v/{name}"] = self.v[name]
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        self.step_count = int(arrays["step"][0])
        for name, t in self.named:
            for key, store in (("m", self.m), ("v", self.v)):
                arr = arrays[f"{key}/{name}"]
                if arr.shape != t.shape:
                    raise ValueError(f"optimizer state shape mismatch for {name!r}")
                store[name] = np.array(arr, dtype=np.float64)
