"""Reverse-mode automatic differentiation over dense float64 arrays.

Every ``Tensor`` holds its value as a contiguous row-major ``numpy`` array.
Operations build a DAG of nodes; :meth:`Tensor.backward` walks it once in
reverse topological order and accumulates into ``.grad`` of every leaf
that has ``requires_grad=True``.

Ops never alias their inputs: every forward result is a fresh array.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

DTYPE = np.float64

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


_branch_log: list | None = None


@contextlib.contextmanager
def record_branches():
    """Collect the branch taken by every piecewise op evaluated inside the block.

    Yields a list that receives one boolean/int array per piecewise op call
    (relu, leaky_relu, abs, clip, minimum, max_pool2d).  Two evaluations whose
    logs are equal lie on the same smooth piece of the function.
    """
    global _branch_log
    prev = _branch_log
    _branch_log = []
    try:
        yield _branch_log
    finally:
        _branch_log = prev


def _note_branch(choice: np.ndarray) -> None:
    if _branch_log is not None:
        _branch_log.append(choice)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")
    # make ndarray <op> Tensor dispatch to Tensor's reflected operators
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=DTYPE, copy=True, order="C")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.op = "leaf"

    # -- construction helpers -------------------------------------------------

    @classmethod
    def _from_op(cls, data: np.ndarray, parents: tuple[Tensor, ...], backward, op: str) -> Tensor:
        out = cls.__new__(cls)
        arr = np.asarray(data, dtype=DTYPE)
        # np.ascontiguousarray would promote 0-d results to shape (1,); results never alias their inputs
        if not arr.flags.c_contiguous or any(np.may_share_memory(arr, p.data) for p in parents):
            arr = arr.copy(order="C")
        out.data = arr
        out.grad = None
        out.op = op
        needs = _grad_enabled and any(p.requires_grad for p in parents)
        out.requires_grad = needs
        if needs:
            out._parents = parents
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_item(self)

    def detach(self) -> Tensor:
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def is_finite(self) -> bool:
        ok = bool(np.all(np.isfinite(self.data)))
        if self.grad is not None:
            ok = ok and bool(np.all(np.isfinite(self.grad)))
        return ok

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    # -- backward -------------------------------------------------------------

    def backward(self) -> int:
        """Accumulate d(self)/d(leaf) into every reachable leaf's ``grad``.

        Returns the number of graph nodes visited. Gradients add into any
        existing ``grad``; callers zero them between steps.
        """
        if self.data.size != 1:
            raise ValueError(f"backward() needs a scalar loss, got shape {self.shape}")
        order = _topological_order(self)
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        visited = 0
        for node in reversed(order):
            g = grads.pop(id(node), None)
            visited += 1
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        return visited

    # -- operator sugar -------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def _raise_item(t: Tensor):
    raise ValueError(f"item() needs a single-element tensor, got shape {t.shape}")


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def zeros(shape, requires_grad=False) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad)


def ones(shape, requires_grad=False) -> Tensor:
    return Tensor(np.ones(shape), requires_grad)


def ones_like(t: Tensor) -> Tensor:
    return Tensor(np.ones_like(t.data))


# -- broadcasting -------------------------------------------------------------


def broadcast_shape(a: tuple[int, ...], b: tuple[int, ...]) -> tuple[int, ...]:
    """Singleton-dimension broadcasting only.

    Shapes must have equal rank with each dimension equal or 1; a
    single-element operand (any rank up to the other's) is also accepted.
    """
    if a == b:
        return a
    size_a, size_b = int(np.prod(a)), int(np.prod(b))
    if size_a == 1 and len(a) <= len(b):
        return b
    if size_b == 1 and len(b) <= len(a):
        return a
    if len(a) != len(b):
        raise ValueError(f"cannot broadcast shapes {a} and {b}")
    out = []
    for da, db in zip(a, b):
        if da == db or db == 1:
            out.append(da)
        elif da == 1:
            out.append(db)
        else:
            raise ValueError(f"cannot broadcast shapes {a} and {b}")
    return tuple(out)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    if len(shape) < g.ndim:
        g = g.sum(axis=tuple(range(g.ndim - len(shape))))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- elementwise binary -------------------------------------------------------


def elementwise_binary(op: str, a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    broadcast_shape(a.shape, b.shape)
    x, y = a.data, b.data
    sa, sb = a.shape, b.shape
    if op == "add":
        out = x + y

        def backward(g):
            return _unbroadcast(g, sa), _unbroadcast(g, sb)
    elif op == "sub":
        out = x - y

        def backward(g):
            return _unbroadcast(g, sa), _unbroadcast(-g, sb)
    elif op == "mul":
        out = x * y

        def backward(g):
            return _unbroadcast(g * y, sa), _unbroadcast(g * x, sb)
    elif op == "div":
        out = x / y

        def backward(g):
            return _unbroadcast(g / y, sa), _unbroadcast(-g * x / (y * y), sb)
    else:
        raise ValueError(f"unknown binary op {op!r}")
    return Tensor._from_op(out, (a, b), backward, op)


def add(a, b) -> Tensor:
    return elementwise_binary("add", a, b)


def sub(a, b) -> Tensor:
    return elementwise_binary("sub", a, b)


def mul(a, b) -> Tensor:
    return elementwise_binary("mul", a, b)


def div(a, b) -> Tensor:
    return elementwise_binary("div", a, b)


def minimum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise min; ties send the gradient to ``a``."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"minimum needs equal shapes, got {a.shape} and {b.shape}")
    pick_a = a.data <= b.data
    _note_branch(pick_a)
    out = np.where(pick_a, a.data, b.data)

    def backward(g):
        return g * pick_a, g * ~pick_a

    return Tensor._from_op(out, (a, b), backward, "minimum")


# -- unary --------------------------------------------------------------------


def _unary(x: Tensor, out: np.ndarray, local_grad: Callable[[], np.ndarray], op: str) -> Tensor:
    def backward(g):
        return (g * local_grad(),)

    return Tensor._from_op(out, (x,), backward, op)


def neg(x: Tensor) -> Tensor:
    x = as_tensor(x)
    return Tensor._from_op(-x.data, (x,), lambda g: (-g,), "neg")


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _unary(x, out, lambda: out, "exp")


def log(x: Tensor) -> Tensor:
    d = x.data
    return _unary(x, np.log(d), lambda: 1.0 / d, "log")


def square(x: Tensor) -> Tensor:
    d = x.data
    return _unary(x, d * d, lambda: 2.0 * d, "square")


def absolute(x: Tensor) -> Tensor:
    d = x.data
    _note_branch(d > 0)
    return _unary(x, np.abs(d), lambda: np.sign(d), "abs")


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    d = x.data
    _note_branch(np.sign(d - lo) + np.sign(d - hi))
    return _unary(x, np.clip(d, lo, hi), lambda: ((d >= lo) & (d <= hi)).astype(DTYPE), "clip")


def relu(x: Tensor) -> Tensor:
    d = x.data
    _note_branch(d > 0)
    return _unary(x, np.maximum(d, 0.0), lambda: (d > 0).astype(DTYPE), "relu")


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    d = x.data
    factor = np.where(d > 0, 1.0, slope)
    _note_branch(factor)
    out = d * factor
    return Tensor._from_op(out, (x,), lambda g: (g * factor,), "leaky_relu")


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return _unary(x, out, lambda: 1.0 - out * out, "tanh")


def _sigmoid(d: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(d))
    return np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(x: Tensor) -> Tensor:
    out = _sigmoid(x.data)
    return _unary(x, out, lambda: out * (1.0 - out), "sigmoid")


def softplus(x: Tensor) -> Tensor:
    d = x.data
    out = np.maximum(d, 0.0) + np.log1p(np.exp(-np.abs(d)))
    return _unary(x, out, lambda: _sigmoid(d), "softplus")


def log_sigmoid(x: Tensor) -> Tensor:
    """log(sigmoid(x)) = -softplus(-x), stable for large |x|."""
    return neg(softplus(neg(x)))


ACTIVATIONS = {
    "relu": relu,
    "tanh": tanh,
    "sigmoid": sigmoid,
    "softplus": softplus,
    "leaky_relu": leaky_relu,
}


def activation(kind: str, x: Tensor) -> Tensor:
    try:
        fn = ACTIVATIONS[kind]
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}") from None
    return fn(x)


# -- reductions and shape ops -------------------------------------------------


def tsum(x: Tensor, axis=None) -> Tensor:
    shape = x.shape
    out = np.sum(x.data, axis=axis)

    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return Tensor._from_op(np.asarray(out), (x,), backward, "sum")


def mean(x: Tensor, axis=None) -> Tensor:
    n = x.data.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return tsum(x, axis) * (1.0 / n)


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    out = x.data.reshape(shape).copy()
    return Tensor._from_op(out, (x,), lambda g: (g.reshape(old),), "reshape")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    sizes = [t.shape[axis] for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        idx = [slice(None)] * g.ndim
        parts = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            idx[axis] = slice(lo, hi)
            parts.append(g[tuple(idx)].copy())
        return parts

    return Tensor._from_op(out, tensors, backward, "concat")


# -- linear algebra -----------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul needs rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    x, y = a.data, b.data

    def backward(g):
        return g @ y.T, x.T @ g

    return Tensor._from_op(x @ y, (a, b), backward, "matmul")


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """x [N, in] @ w [in, out] + b [1, out]."""
    out = matmul(x, w)
    return out if b is None else add(out, b)


# -- convolution ----------------------------------------------------------------


def conv_output_size(size: int, k: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - k) // stride + 1


def _pad(x: np.ndarray, padding: int) -> np.ndarray:
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, padding: int, ho: int, wo: int) -> np.ndarray:
    """[N,C,H,W] -> [N*Ho*Wo, C*kh*kw] patch matrix."""
    n, c = x.shape[:2]
    win = np.lib.stride_tricks.sliding_window_view(_pad(x, padding), (kh, kw), axis=(2, 3))
    win = win[:, :, : stride * (ho - 1) + 1 : stride, : stride * (wo - 1) + 1 : stride]
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)


def _col2im(cols: np.ndarray, x_shape, kh: int, kw: int, stride: int, padding: int, ho: int, wo: int) -> np.ndarray:
    """Adjoint of :func:`_im2col`: scatter-add patches back into an image."""
    n, c, h, w = x_shape
    if stride == kh == kw and padding == 0 and h == ho * kh and w == wo * kw:
        # non-overlapping patches: pure rearrangement
        return np.ascontiguousarray(cols.reshape(n, ho, wo, c, kh, kw).transpose(0, 3, 1, 4, 2, 5)).reshape(x_shape)
    blocks = cols.reshape(n, ho, wo, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
    out = np.zeros((n, c, h + 2 * padding, w + 2 * padding))
    for i in range(kh):
        for j in range(kw):
            out[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += blocks[:, :, i, j]
    if padding:
        return out[:, :, padding:-padding, padding:-padding].copy()
    return out


def _rows(y: np.ndarray) -> np.ndarray:
    """[N,F,H,W] -> [N*H*W, F]."""
    return y.transpose(0, 2, 3, 1).reshape(-1, y.shape[1])


def _unrows(m: np.ndarray, n: int, h: int, w: int) -> np.ndarray:
    return np.ascontiguousarray(m.reshape(n, h, w, -1).transpose(0, 3, 1, 2))


def _conv_forward(x: np.ndarray, w: np.ndarray, stride: int, padding: int, cols: np.ndarray | None = None) -> np.ndarray:
    n, _, h, wd = x.shape
    f, _, kh, kw = w.shape
    ho = conv_output_size(h, kh, stride, padding)
    wo = conv_output_size(wd, kw, stride, padding)
    if cols is None:
        cols = _im2col(x, kh, kw, stride, padding, ho, wo)
    return _unrows(cols @ w.reshape(f, -1).T, n, ho, wo)


def _conv_input_grad(dy: np.ndarray, w: np.ndarray, stride: int, padding: int, x_shape) -> np.ndarray:
    f, _, kh, kw = w.shape
    _, _, ho, wo = dy.shape
    dcols = _rows(dy) @ w.reshape(f, -1)
    return _col2im(dcols, x_shape, kh, kw, stride, padding, ho, wo)


def _conv_weight_grad(x: np.ndarray, dy: np.ndarray, stride: int, padding: int, w_shape,
                      cols: np.ndarray | None = None) -> np.ndarray:
    f, _, kh, kw = w_shape
    _, _, ho, wo = dy.shape
    if cols is None:
        cols = _im2col(x, kh, kw, stride, padding, ho, wo)
    return (_rows(dy).T @ cols).reshape(w_shape)


def conv2d(x: Tensor, kernel: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    if x.ndim != 4 or kernel.ndim != 4:
        raise ValueError(f"conv2d expects [N,C,H,W] and [F,C,kh,kw], got {x.shape} and {kernel.shape}")
    if stride < 1 or padding < 0:
        raise ValueError(f"invalid stride={stride} padding={padding}")
    if x.shape[1] != kernel.shape[1]:
        raise ValueError(f"conv2d channel mismatch: input {x.shape}, kernel {kernel.shape}")
    _, _, h, w = x.shape
    kh, kw = kernel.shape[2:]
    if h + 2 * padding < kh or w + 2 * padding < kw:
        raise ValueError(f"kernel {kernel.shape[2:]} larger than padded input {(h, w)} with padding {padding}")
    xd, kd = x.data, kernel.data
    ho = conv_output_size(h, kh, stride, padding)
    wo = conv_output_size(w, kw, stride, padding)
    cols = _im2col(xd, kh, kw, stride, padding, ho, wo)
    out = _conv_forward(xd, kd, stride, padding, cols)

    def backward(g):
        return (
            _conv_input_grad(g, kd, stride, padding, xd.shape) if x.requires_grad else None,
            _conv_weight_grad(xd, g, stride, padding, kd.shape, cols) if kernel.requires_grad else None,
        )

    return Tensor._from_op(out, (x, kernel), backward, "conv2d")


def conv2d_transpose(x: Tensor, kernel: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Adjoint of :func:`conv2d`; ``kernel`` is [C_in, F_out, kh, kw]."""
    if x.ndim != 4 or kernel.ndim != 4:
        raise ValueError(f"conv2d_transpose expects [N,C,H,W] and [C,F,kh,kw], got {x.shape} and {kernel.shape}")
    if x.shape[1] != kernel.shape[0]:
        raise ValueError(f"conv2d_transpose channel mismatch: input {x.shape}, kernel {kernel.shape}")
    if stride < 1 or padding < 0:
        raise ValueError(f"invalid stride={stride} padding={padding}")
    n, _, h, w = x.shape
    _, f, kh, kw = kernel.shape
    ho = (h - 1) * stride - 2 * padding + kh
    wo = (w - 1) * stride - 2 * padding + kw
    if ho < 1 or wo < 1 or conv_output_size(ho, kh, stride, padding) != h or conv_output_size(wo, kw, stride, padding) != w:
        raise ValueError(f"invalid transposed-conv geometry: input {x.shape}, kernel {kernel.shape}, stride {stride}, padding {padding}")
    xd, kd = x.data, kernel.data
    out_shape = (n, f, ho, wo)
    out = _conv_input_grad(xd, kd, stride, padding, out_shape)

    def backward(g):
        return (
            _conv_forward(g, kd, stride, padding) if x.requires_grad else None,
            _conv_weight_grad(g, xd, stride, padding, kd.shape) if kernel.requires_grad else None,
        )

    return Tensor._from_op(out, (x, kernel), backward, "conv2d_transpose")


def max_pool2d(x: Tensor, window: int = 2) -> Tensor:
    if window != 2:
        raise ValueError("only 2x2 max pooling is supported")
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"max_pool2d needs even spatial dims, got {(h, w)}")
    d = x.data
    # window positions in row-major order: (0,0), (0,1), (1,0), (1,1)
    views = [d[:, :, i::2, j::2] for i in (0, 1) for j in (0, 1)]
    out = np.maximum(np.maximum(views[0], views[1]), np.maximum(views[2], views[3]))
    if _branch_log is not None:
        _note_branch(np.argmax(np.stack(views), axis=0))

    def backward(g):
        gx = np.zeros_like(d)
        taken = np.zeros(out.shape, dtype=bool)
        for k, v in enumerate(views):
            hit = (v == out) & ~taken
            taken |= hit
            gx[:, :, k // 2 :: 2, k % 2 :: 2] = g * hit
        return (gx,)

    return Tensor._from_op(out, (x,), backward, "max_pool2d")


# -- gradient checking --------------------------------------------------------


def numerical_grad(fn: Callable[[Tensor], Tensor], point: np.ndarray, step: float = 1e-3) -> np.ndarray:
    point = np.array(point, dtype=DTYPE)
    grad = np.zeros_like(point)
    flat = point.reshape(-1)
    gflat = grad.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            fp = fn(Tensor(point)).item()
            flat[i] = orig - step
            fm = fn(Tensor(point)).item()
            flat[i] = orig
            gflat[i] = (fp - fm) / (2.0 * step)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)
    return float(np.max(np.abs(a - b) / denom)) if np.size(a) else 0.0


def grad_check(fn: Callable[[Tensor], Tensor], point, step: float = 1e-3) -> float:
    """Max relative error between backward() and central differences."""
    x = Tensor(point, requires_grad=True)
    loss = fn(x)
    loss.backward()
    analytic = x.grad if x.grad is not None else np.zeros_like(x.data)
    numeric = numerical_grad(fn, x.data, step)
    return relative_error(analytic, numeric)


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None
