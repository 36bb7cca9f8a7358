"""Minimal reverse-mode automatic differentiation over dense float64 tensors.

Operations executed on tensors that require gradients are recorded, in
execution order, on a per-thread tape. ``backward`` walks the tape in exact
reverse order, accumulating adjoints, and deposits gradients on leaf
tensors. The engine is deliberately small: only the operations needed by
the depth and pose networks exist, there is no broadcasting beyond scalars,
and everything is 64-bit so finite-difference checks are meaningful.
"""

from __future__ import annotations

import threading

import numpy as np


class Tensor:
    """Dense n-d value buffer, optionally participating in differentiation."""

    __slots__ = ("data", "requires_grad", "grad", "is_leaf")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.is_leaf = True

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError("item() requires a single-element tensor")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # arithmetic sugar; scalars are python floats
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)


class Tape:
    """Ordered record of executed operations; single-owner, per thread."""

    def __init__(self):
        self._records: list[tuple[Tensor, tuple[Tensor, ...], object]] = []

    def __len__(self) -> int:
        return len(self._records)

    def clear(self) -> None:
        self._records.clear()


_LOCAL = threading.local()


def active_tape() -> Tape:
    tape = getattr(_LOCAL, "tape", None)
    if tape is None:
        tape = Tape()
        _LOCAL.tape = tape
    return tape


def constant(data) -> Tensor:
    """Tensor that never requires gradients."""
    return Tensor(data, requires_grad=False)


def _promote(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def _make(data, inputs: tuple[Tensor, ...], backward_fn) -> Tensor:
    out = Tensor(data, requires_grad=any(t.requires_grad for t in inputs))
    out.is_leaf = False
    if out.requires_grad:
        active_tape()._records.append((out, inputs, backward_fn))
    return out


def custom_op(data, inputs: tuple[Tensor, ...], backward_fn) -> Tensor:
    """Register an externally computed operation on the tape.

    ``backward_fn(g)`` must return one gradient array (or None) per input.
    """
    return _make(data, inputs, backward_fn)


def backward(loss: Tensor, retain_tape: bool = False) -> None:
    """Populate leaf gradients of everything the scalar loss depends on.

    The tape is cleared afterwards unless ``retain_tape`` is set (used when
    several losses over one graph are backpropagated separately).
    """
    if loss.size != 1:
        raise ValueError("backward expects a scalar loss")
    tape = active_tape()
    if not tape._records:
        raise ValueError("backward called with an empty tape")
    adjoints: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for out, inputs, backward_fn in reversed(tape._records):
        g = adjoints.pop(id(out), None)
        if g is None:
            continue
        grads = backward_fn(g)
        for tensor, grad in zip(inputs, grads):
            if grad is None or not tensor.requires_grad:
                continue
            if tensor.is_leaf:
                tensor.grad = grad if tensor.grad is None else tensor.grad + grad
            else:
                held = adjoints.get(id(tensor))
                adjoints[id(tensor)] = grad if held is None else held + grad
    if not retain_tape:
        tape.clear()


def zero_grads(params) -> None:
    for p in params:
        p.grad = None


def sgd_step(params, lr: float) -> None:
    """Plain gradient step ``p <- p - lr * grad``; gradients are cleared."""
    params = list(params)
    for p in params:
        if p.grad is None:
            raise ValueError("sgd_step: parameter has no gradient")
    for p in params:
        p.data = p.data - lr * p.grad
        p.grad = None


# ---------------------------------------------------------------------------
# primitives


def _check_pair(a: Tensor, b: Tensor, op: str) -> None:
    # identical shapes, or one side scalar-shaped
    if a.shape != b.shape and a.size != 1 and b.size != 1:
        raise ValueError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def _reduce_to(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == tuple(shape):
        return g
    return np.sum(g).reshape(shape)


def add(a, b) -> Tensor:
    a, b = _promote(a), _promote(b)
    _check_pair(a, b, "add")
    return _make(
        a.data + b.data,
        (a, b),
        lambda g: (_reduce_to(g, a.shape), _reduce_to(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = _promote(a), _promote(b)
    _check_pair(a, b, "sub")
    return _make(
        a.data - b.data,
        (a, b),
        lambda g: (_reduce_to(g, a.shape), _reduce_to(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = _promote(a), _promote(b)
    _check_pair(a, b, "mul")
    return _make(
        a.data * b.data,
        (a, b),
        lambda g: (_reduce_to(g * b.data, a.shape), _reduce_to(g * a.data, b.shape)),
    )


def neg(a) -> Tensor:
    a = _promote(a)
    return _make(-a.data, (a,), lambda g: (-g,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _promote(a), _promote(b)
    if a.ndim != 2 or b.ndim not in (1, 2):
        raise ValueError("matmul supports 2-D @ 2-D and 2-D @ 1-D")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: inner dimensions differ ({a.shape} @ {b.shape})")
    if b.ndim == 1:
        return _make(
            a.data @ b.data,
            (a, b),
            lambda g: (np.outer(g, b.data), a.data.T @ g),
        )
    return _make(
        a.data @ b.data,
        (a, b),
        lambda g: (g @ b.data.T, a.data.T @ g),
    )


def _im2col(padded: np.ndarray, k: int, out_h: int, out_w: int) -> np.ndarray:
    win = np.lib.stride_tricks.sliding_window_view(padded, (k, k), axis=(1, 2))
    # (C, H, W, k, k) -> (H*W, C*k*k)
    return win.transpose(1, 2, 0, 3, 4).reshape(out_h * out_w, -1)


def _conv_forward(x: np.ndarray, w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    c_out, _, k, _ = w.shape
    _, h, wd = x.shape
    p = k // 2
    padded = np.pad(x, ((0, 0), (p, p), (p, p)))
    cols = _im2col(padded, k, h, wd)
    out = (cols @ w.reshape(c_out, -1).T).T.reshape(c_out, h, wd)
    return out, cols


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Stride-1 zero-padded 2-D convolution, kernels 1x1 or 3x3.

    ``x`` is (C, H, W), ``w`` is (C_out, C, k, k), ``b`` is (C_out,).
    """
    x, w = _promote(x), _promote(w)
    if x.ndim != 3 or w.ndim != 4:
        raise ValueError("conv2d expects x (C,H,W) and w (C_out,C,k,k)")
    c_out, c_in, k, k2 = w.shape
    if k != k2 or k not in (1, 3):
        raise ValueError("conv2d kernels must be square, 1x1 or 3x3")
    if c_in != x.shape[0]:
        raise ValueError(f"conv2d: {x.shape[0]} input channels, kernel wants {c_in}")
    if b is not None and b.shape != (c_out,):
        raise ValueError("conv2d bias must have one entry per output channel")

    out, cols = _conv_forward(x.data, w.data)
    if b is not None:
        out = out + b.data[:, None, None]

    def backward_fn(g):
        g_flat = g.reshape(c_out, -1).T  # (H*W, C_out)
        gw = (g_flat.T @ cols).reshape(w.shape)
        # grad wrt input: same-pad correlation with the spatially flipped,
        # channel-swapped kernel
        w_rot = w.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
        gx, _ = _conv_forward(g, np.ascontiguousarray(w_rot))
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=(1, 2))

    inputs = (x, w) if b is None else (x, w, b)
    return _make(out, inputs, backward_fn)


def relu(x) -> Tensor:
    x = _promote(x)
    return _make(
        np.maximum(x.data, 0.0),
        (x,),
        lambda g: (g * (x.data > 0.0),),
    )


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid(x) -> Tensor:
    x = _promote(x)
    s = _sigmoid(x.data)
    return _make(s, (x,), lambda g: (g * s * (1.0 - s),))


def softsign(x) -> Tensor:
    """x / (1 + |x|): a smooth, exp-free squash onto (-1, 1)."""
    x = _promote(x)
    denom = 1.0 + np.abs(x.data)
    return _make(x.data / denom, (x,), lambda g: (g / denom**2,))


def exp(x) -> Tensor:
    x = _promote(x)
    e = np.exp(x.data)
    return _make(e, (x,), lambda g: (g * e,))


def abs(x) -> Tensor:  # noqa: A001 - mirrors the primitive's conventional name
    x = _promote(x)
    return _make(np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),))


def sum(x, axis: int | None = None) -> Tensor:  # noqa: A001
    x = _promote(x)
    if axis is None:
        return _make(
            np.sum(x.data),
            (x,),
            lambda g: (np.broadcast_to(g, x.shape).copy(),),
        )
    return _make(
        np.sum(x.data, axis=axis),
        (x,),
        lambda g: (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),),
    )


def mean(x) -> Tensor:
    x = _promote(x)
    n = x.size
    return _make(
        np.mean(x.data),
        (x,),
        lambda g: (np.broadcast_to(g / n, x.shape).copy(),),
    )


def reshape(x: Tensor, shape) -> Tensor:
    x = _promote(x)
    return _make(
        x.data.reshape(shape),
        (x,),
        lambda g: (g.reshape(x.shape),),
    )


def gradient_reversal(x: Tensor) -> Tensor:
    """Identity in the forward pass; negates the gradient in the backward pass."""
    x = _promote(x)
    return _make(x.data.copy(), (x,), lambda g: (-g,))
