"""FIFO experience pool with uniform with-replacement sampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class Transition:
    y: np.ndarray
    x_t: np.ndarray
    z_t: np.ndarray
    r_t: float
    x_next: np.ndarray
    done: bool


@dataclass
class Batch:
    """Stacked transitions; leading axis is the batch."""

    y: np.ndarray
    x_t: np.ndarray
    z_t: np.ndarray
    r_t: np.ndarray
    x_next: np.ndarray
    done: np.ndarray

    def __len__(self) -> int:
        return len(self.r_t)


class ReplayBuffer:
    FIELDS = ("y", "x_t", "z_t", "r_t", "x_next", "done")

    def __init__(self, capacity: int, image_shape: tuple[int, ...], z_dim: int):
        if capacity < 1:
            raise ValueError(f"capacity must be positive, got {capacity}")
        self.capacity = capacity
        self.image_shape = tuple(image_shape)
        self.z_dim = z_dim
        self.y = np.zeros((capacity, *self.image_shape))
        self.x_t = np.zeros((capacity, *self.image_shape))
        self.x_next = np.zeros((capacity, *self.image_shape))
        self.z_t = np.zeros((capacity, z_dim))
        self.r_t = np.zeros(capacity)
        self.done = np.zeros(capacity)
        self.size = 0
        self.cursor = 0

    def __len__(self) -> int:
        return self.size

    def push(self, tr: Transition) -> None:
        if np.shape(tr.x_t) != self.image_shape or np.shape(tr.x_next) != self.image_shape or np.shape(tr.y) != self.image_shape:
            raise ValueError(f"transition images must have shape {self.image_shape}")
        if np.shape(tr.z_t) != (self.z_dim,):
            raise ValueError(f"latent action must have shape ({self.z_dim},), got {np.shape(tr.z_t)}")
        if not np.isfinite(tr.r_t):
            raise ValueError(f"non-finite reward {tr.r_t}")
        i = self.cursor
        self.y[i] = tr.y
        self.x_t[i] = tr.x_t
        self.z_t[i] = tr.z_t
        self.r_t[i] = tr.r_t
        self.x_next[i] = tr.x_next
        self.done[i] = float(tr.done)
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def get(self, i: int) -> Transition:
        """Transition by age: 0 is the oldest entry still stored."""
        if not 0 <= i < self.size:
            raise IndexError(i)
        j = (self.cursor - self.size + i) % self.capacity
        return Transition(self.y[j].copy(), self.x_t[j].copy(), self.z_t[j].copy(), float(self.r_t[j]),
                          self.x_next[j].copy(), bool(self.done[j]))

    def sample_indices(self, batch: int, rng: np.random.Generator) -> np.ndarray:
        if self.size == 0:
            raise ValueError("cannot sample from an empty replay buffer")
        if batch < 1:
            raise ValueError(f"batch must be positive, got {batch}")
        return rng.integers(0, self.size, size=batch)

    def sample(self, batch: int, rng: np.random.Generator) -> Batch:
        idx = self.sample_indices(batch, rng)
        # slots [0, size) are exactly the live entries, full or not
        return Batch(self.y[idx], self.x_t[idx], self.z_t[idx], self.r_t[idx], self.x_next[idx], self.done[idx])

    def state_arrays(self) -> dict[str, np.ndarray]:
        n = self.size
        out = {name: getattr(self, name)[:n].copy() for name in self.FIELDS}
        out["meta"] = np.array([float(self.size), float(self.cursor)])
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        size, cursor = (int(v) for v in arrays["meta"])
        if size > self.capacity:
            raise ValueError(f"stored buffer size {size} exceeds capacity {self.capacity}")
        for name in self.FIELDS:
            arr = arrays[name]
            if arr.shape[0] != size or arr.shape[1:] != getattr(self, name).shape[1:]:
                raise ValueError(f"replay field {name!r} has shape {arr.shape}")
            getattr(self, name)[:size] = arr
        self.size, self.cursor = size, cursor
