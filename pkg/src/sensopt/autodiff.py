"""Dense float32 tensors with tape-based reverse-mode differentiation.

Values are stored in row-major float32 buffers; reductions and softmax
accumulate in float64 before rounding back to float32. Any operation that
would store a NaN or Inf raises :class:`NonFiniteError` instead.

Gradients are recorded on a :class:`Tape`. Ops executed while a tape is
active append one entry each; with no active tape they run forward-only,
which is the cheap path for evaluation-only code. ``backward(tape, out)``
fills ``.grad`` on the leaf tensors of that tape. Leaf gradients accumulate
additively: calling backward twice without clearing grads doubles them.

A tape is confined to one logical thread. Tensors are immutable after
construction (grad accumulation aside), so read-only sharing across threads
is safe.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import NonFiniteError, ShapeError

Array = np.ndarray

_BackwardRule = Callable[[Array], tuple[Array | None, ...]]


def _require_finite(arr: Array, context: str) -> None:
    if not np.isfinite(arr).all():
        bad = "NaN" if np.isnan(arr).any() else "Inf"
        raise NonFiniteError(f"{context} produced {bad}")


class Tensor:
    """Multidimensional float32 array with an optional gradient buffer."""

    __slots__ = ("data", "grad")

    def __init__(self, data, context: str = "tensor"):
        # note: ascontiguousarray would promote 0-d scalars to shape (1,)
        arr = np.asarray(data, dtype=np.float32)
        if arr.ndim and not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        _require_finite(arr, context)
        self.data: Array = arr
        self.grad: Array | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a scalar tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape})"

    # Ops below are defined at module level; the operators just forward.
    def __add__(self, other):
        return add(self, _lift(other))

    def __radd__(self, other):
        return add(_lift(other), self)

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __getitem__(self, idx):
        return take(self, idx)


def tensor(data) -> Tensor:
    return data if isinstance(data, Tensor) else Tensor(data)


def _lift(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float32))


class _TapeEntry:
    __slots__ = ("inputs", "output", "backward")

    def __init__(self, inputs: tuple[Tensor, ...], output: Tensor, backward: _BackwardRule):
        self.inputs = inputs
        self.output = output
        self.backward = backward


_TAPE_STACK: list["Tape"] = []


class Tape:
    """Ordered record of operations, topological by construction.

    Use as a context manager; ops run inside the block are recorded on the
    innermost active tape. Replaying the recorded forward from the same leaf
    values is bit-for-bit deterministic because every op is a pure function
    of its inputs.
    """

    def __init__(self):
        self._entries: list[_TapeEntry] = []

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        popped = _TAPE_STACK.pop()
        assert popped is self, "tapes must be exited in LIFO order"

    def __len__(self) -> int:
        return len(self._entries)

    def record(self, inputs: Sequence[Tensor], output: Tensor, backward: _BackwardRule) -> None:
        self._entries.append(_TapeEntry(tuple(inputs), output, backward))


def record_op(inputs: Sequence[Tensor], out_data: Array, backward: _BackwardRule,
              context: str = "op") -> Tensor:
    """Wrap ``out_data`` in a Tensor and register it on the active tape.

    This is the extension point other modules use to define fused ops
    (e.g. Gram accumulation, spectral decodes) without touching the tape
    internals. ``backward`` maps the upstream gradient to one gradient per
    input (or None for inputs that do not need one).
    """
    out = Tensor(out_data, context=context)
    if _TAPE_STACK:
        _TAPE_STACK[-1].record(inputs, out, backward)
    return out


def backward(tape: Tape, output: Tensor) -> None:
    """Populate ``.grad`` on the leaf tensors reachable from ``output``.

    ``output`` must be a scalar recorded on ``tape``. Gradients accumulate
    additively across fan-out and across repeated backward calls; callers
    that want fresh gradients must ``zero_grad()`` the leaves first.
    """
    if output.size != 1:
        raise ShapeError(f"backward needs a scalar output, got shape {output.shape}")
    produced = {id(e.output) for e in tape._entries}
    if id(output) not in produced:
        raise ShapeError("output tensor was not recorded on this tape")

    grads: dict[int, Array] = {id(output): np.ones_like(output.data)}
    holders: dict[int, Tensor] = {id(output): output}
    for entry in reversed(tape._entries):
        g_out = grads.get(id(entry.output))
        if g_out is None:
            continue
        in_grads = entry.backward(g_out)
        for inp, g_in in zip(entry.inputs, in_grads):
            if g_in is None:
                continue
            g_in = np.asarray(g_in, dtype=np.float32)
            _require_finite(g_in, "backward rule")
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + g_in
            else:
                grads[key] = g_in
                holders[key] = inp

    for key, t in holders.items():
        if key in produced:
            continue
        if t.grad is None:
            t.grad = grads[key].copy()
        else:
            t.grad = t.grad + grads[key]


def _unbroadcast(g: Array, shape: tuple[int, ...]) -> Array:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.astype(np.float32, copy=False)


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a: Tensor, b: Tensor) -> Tensor:
    return record_op(
        (a, b), a.data + b.data,
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
        context="add",
    )


def sub(a: Tensor, b: Tensor) -> Tensor:
    return record_op(
        (a, b), a.data - b.data,
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
        context="sub",
    )


def mul(a: Tensor, b: Tensor) -> Tensor:
    return record_op(
        (a, b), a.data * b.data,
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
        context="mul",
    )


def scale(a: Tensor, k: float) -> Tensor:
    k = float(k)
    return record_op((a,), a.data * np.float32(k), lambda g: (g * np.float32(k),), context="scale")


def square(a: Tensor) -> Tensor:
    return record_op((a,), a.data * a.data, lambda g: (g * (2.0 * a.data),), context="square")


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return record_op((a,), out, lambda g: (g * (0.5 / out),), context="sqrt")


def absolute(a: Tensor) -> Tensor:
    # subgradient at 0 is 0, matching the relu convention
    return record_op((a,), np.abs(a.data), lambda g: (g * np.sign(a.data),), context="abs")


def reciprocal(a: Tensor) -> Tensor:
    out = 1.0 / a.data
    return record_op((a,), out, lambda g: (g * (-out * out),), context="reciprocal")


def sin(a: Tensor) -> Tensor:
    return record_op((a,), np.sin(a.data), lambda g: (g * np.cos(a.data),), context="sin")


def cos(a: Tensor) -> Tensor:
    return record_op((a,), np.cos(a.data), lambda g: (g * (-np.sin(a.data)),), context="cos")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return record_op((a,), np.where(mask, a.data, np.float32(0.0)),
                     lambda g: (g * mask,), context="relu")


def sigmoid(a: Tensor) -> Tensor:
    # stable two-sided form, no overflow for large |x|
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return record_op((a,), out, lambda g: (g * (out * (1.0 - out)),), context="sigmoid")


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    # zero subgradient outside the interval
    mask = (a.data > lo) & (a.data < hi)
    return record_op((a,), np.clip(a.data, lo, hi), lambda g: (g * mask,), context="clamp")


# ---------------------------------------------------------------------------
# shape manipulation


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    old = a.shape
    return record_op((a,), a.data.reshape(shape),
                     lambda g: (g.reshape(old),), context="reshape")


def transpose(a: Tensor, axes: tuple[int, ...]) -> Tensor:
    inv = tuple(np.argsort(axes))
    return record_op((a,), np.ascontiguousarray(a.data.transpose(axes)),
                     lambda g: (np.ascontiguousarray(g.transpose(inv)),), context="transpose")


def take(a: Tensor, idx) -> Tensor:
    """Basic (slice / integer) indexing; scatters the gradient back."""
    out = a.data[idx]  # Tensor() below copies to contiguous storage as needed

    def back(g: Array):
        full = np.zeros_like(a.data)
        full[idx] = g
        return (full,)

    return record_op((a,), out, back, context="take")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    ts = tuple(tensors)
    out = np.stack([t.data for t in ts], axis=axis)

    def back(g: Array):
        parts = np.moveaxis(g, axis, 0)
        return tuple(np.ascontiguousarray(parts[i]) for i in range(len(ts)))

    return record_op(ts, out, back, context="stack")


def roll2d(a: Tensor, dy: int, dx: int) -> Tensor:
    """Circular shift of the last two axes (used for synthesis jitter)."""
    return record_op((a,), np.roll(a.data, (dy, dx), axis=(-2, -1)),
                     lambda g: (np.roll(g, (-dy, -dx), axis=(-2, -1)),), context="roll2d")


def upsample2d(a: Tensor, factor: int) -> Tensor:
    """Nearest-neighbour upsampling of the last two axes by ``factor``."""
    out = np.repeat(np.repeat(a.data, factor, axis=-2), factor, axis=-1)

    def back(g: Array):
        s = g.shape
        blocked = g.reshape(s[:-2] + (s[-2] // factor, factor, s[-1] // factor, factor))
        return (blocked.sum(axis=(-3, -1), dtype=np.float64).astype(np.float32),)

    return record_op((a,), out, back, context="upsample2d")


# ---------------------------------------------------------------------------
# reductions (float64 accumulation)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims, dtype=np.float64).astype(np.float32)

    def back(g: Array):
        if axis is None:
            return (np.broadcast_to(g.reshape(()), a.shape).astype(np.float32),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.shape).astype(np.float32),)

    return record_op((a,), out, back, context="sum")


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        n = int(np.prod([a.shape[ax] for ax in axes]))
    out = a.data.mean(axis=axis, keepdims=keepdims, dtype=np.float64).astype(np.float32)

    def back(g: Array):
        if axis is None:
            return ((np.broadcast_to(g.reshape(()), a.shape) / n).astype(np.float32),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return ((np.broadcast_to(gg, a.shape) / n).astype(np.float32),)

    return record_op((a,), out, back, context="mean")


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dims disagree: {a.shape[1]} vs {b.shape[0]}")
    out = (a.data.astype(np.float64) @ b.data.astype(np.float64)).astype(np.float32)
    return record_op(
        (a, b), out,
        lambda g: (g @ b.data.T, a.data.T @ g),
        context="matmul",
    )


def affine(x: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
    """x @ weights + bias for x: (N, D), weights: (D, M), bias: (M,)."""
    if x.ndim != 2 or weights.ndim != 2:
        raise ShapeError(f"affine needs 2-D input/weights, got {x.shape} and {weights.shape}")
    if x.shape[1] != weights.shape[0]:
        raise ShapeError(
            f"affine input features {x.shape[1]} != weight rows {weights.shape[0]}")
    if bias.shape != (weights.shape[1],):
        raise ShapeError(f"affine bias shape {bias.shape} != ({weights.shape[1]},)")
    out = (x.data.astype(np.float64) @ weights.data.astype(np.float64)
           + bias.data.astype(np.float64)).astype(np.float32)

    def back(g: Array):
        return (g @ weights.data.T,
                x.data.T @ g,
                g.sum(axis=0, dtype=np.float64).astype(np.float32))

    return record_op((x, weights, bias), out, back, context="affine")


# ---------------------------------------------------------------------------
# convolution and pooling


def _im2col(x: Array, kh: int, kw: int, stride: int) -> Array:
    """(N, C, H, W) already padded -> (N*oh*ow, C*kh*kw)."""
    n, c, h, w = x.shape
    oh = (h - kh) // stride + 1
    ow = (w - kw) // stride + 1
    cols = np.empty((n, c, kh, kw, oh, ow), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j, :, :] = x[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride]
    return cols.transpose(0, 4, 5, 1, 2, 3).reshape(n * oh * ow, c * kh * kw)


def _col2im(cols: Array, x_shape: tuple[int, ...], kh: int, kw: int, stride: int) -> Array:
    n, c, h, w = x_shape
    oh = (h - kh) // stride + 1
    ow = (w - kw) // stride + 1
    blocks = cols.reshape(n, oh, ow, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
    x = np.zeros(x_shape, dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            x[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += blocks[:, :, i, j, :, :]
    return x


def conv2d(x: Tensor, weights: Tensor, bias: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation (no kernel flip) over NCHW input with OIKK weights."""
    if x.ndim != 4:
        raise ShapeError(f"conv2d input must be NCHW, got {x.ndim}-D shape {x.shape}")
    if weights.ndim != 4:
        raise ShapeError(f"conv2d weights must be OIKK, got shape {weights.shape}")
    n, c, h, w = x.shape
    o, i, kh, kw = weights.shape
    if c != i:
        raise ShapeError(f"conv2d input channels {c} != weight input channels {i}")
    if bias.shape != (o,):
        raise ShapeError(f"conv2d bias shape {bias.shape} != ({o},)")
    if h + 2 * pad < kh or w + 2 * pad < kw:
        raise ShapeError(
            f"conv2d kernel {kh}x{kw} does not fit padded input {h + 2 * pad}x{w + 2 * pad}")
    if stride < 1:
        raise ShapeError(f"conv2d stride must be positive, got {stride}")

    if pad:
        xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    else:
        xp = x.data
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    cols = _im2col(xp, kh, kw, stride)
    wm = weights.data.reshape(o, i * kh * kw)
    out64 = cols.astype(np.float64) @ wm.T.astype(np.float64) + bias.data.astype(np.float64)
    out = out64.astype(np.float32).reshape(n, oh, ow, o).transpose(0, 3, 1, 2)

    def back(g: Array):
        gm = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(n * oh * ow, o)
        db = gm.sum(axis=0, dtype=np.float64).astype(np.float32)
        dw = (gm.T @ cols).reshape(o, i, kh, kw)
        dcols = gm @ wm
        dxp = _col2im(dcols, xp.shape, kh, kw, stride)
        dx = dxp[:, :, pad:pad + h, pad:pad + w] if pad else dxp
        return (np.ascontiguousarray(dx), dw, db)

    return record_op((x, weights, bias), np.ascontiguousarray(out), back, context="conv2d")


def pool2d(x: Tensor, window: int = 2, stride: int = 2) -> Tensor:
    """2x2 max pooling; ties route to the first window index in row-major scan."""
    if window != 2 or stride != 2:
        raise ShapeError("pool2d supports window=2, stride=2 only")
    if x.ndim != 4:
        raise ShapeError(f"pool2d input must be NCHW, got shape {x.shape}")
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"pool2d needs even spatial dims, got {h}x{w}")
    h2, w2 = h // 2, w // 2
    windows = x.data.reshape(n, c, h2, 2, w2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h2, w2, 4)
    idx = windows.argmax(axis=-1)  # argmax returns the first maximum
    out = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]

    def back(g: Array):
        gw = np.zeros((n, c, h2, w2, 4), dtype=np.float32)
        np.put_along_axis(gw, idx[..., None], g[..., None], axis=-1)
        gx = gw.reshape(n, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
        return (np.ascontiguousarray(gx),)

    return record_op((x,), np.ascontiguousarray(out), back, context="pool2d")


# ---------------------------------------------------------------------------
# softmax family (float64 internals)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    z = a.data.astype(np.float64)
    z = z - z.max(axis=axis, keepdims=True)
    ez = np.exp(z)
    p = ez / ez.sum(axis=axis, keepdims=True)
    out = p.astype(np.float32)

    def back(g: Array):
        gp = g.astype(np.float64)
        dot = (gp * p).sum(axis=axis, keepdims=True)
        return ((p * (gp - dot)).astype(np.float32),)

    return record_op((a,), out, back, context="softmax")


def softmax_cross_entropy(logits: Tensor, labels: Sequence[int]) -> tuple[Tensor, Tensor]:
    """Mean negative log-likelihood plus the (detached) row probabilities.

    Gradients flow through the loss only; use :func:`softmax` when the
    probabilities themselves must be differentiable.
    """
    if logits.ndim != 2:
        raise ShapeError(f"softmax_cross_entropy needs (N, K) logits, got {logits.shape}")
    n, k = logits.shape
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (n,):
        raise ShapeError(f"expected {n} labels, got {labels.shape}")
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= k:
        raise ShapeError(f"labels must be in [0, {k}), got range "
                         f"[{labels.min()}, {labels.max()}]")

    z = logits.data.astype(np.float64)
    z = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - lse
    probs = np.exp(logp)
    loss_val = -logp[np.arange(n), labels].mean()

    def back(g: Array):
        gs = float(g.reshape(()))
        d = probs.copy()
        d[np.arange(n), labels] -= 1.0
        return ((d * (gs / n)).astype(np.float32),)

    loss = record_op((logits,), np.float32(loss_val), back, context="softmax_cross_entropy")
    return loss, Tensor(probs.astype(np.float32), context="softmax probs")


def add_n(tensors: Iterable[Tensor]) -> Tensor:
    """Sum a sequence of same-shaped (usually scalar) tensors."""
    acc = None
    for t in tensors:
        acc = t if acc is None else add(acc, t)
    if acc is None:
        raise ShapeError("add_n needs at least one tensor")
    return acc
