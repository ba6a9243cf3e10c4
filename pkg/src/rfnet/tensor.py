"""Dense tensors with reverse-mode differentiation.

A ``Tensor`` is one node of the computation graph: it owns a numpy array
(`data`), an accumulated gradient of the same shape (`grad`), and a closure
that routes the output gradient back to its parents. Calling ``backward()``
on a scalar walks the graph once in reverse topological order.

Training runs in float32; gradient checking builds the same graphs in
float64 (finite differences are unreliable at single precision). Every
primitive verifies its output is finite: overflow raises instead of
propagating inf/nan.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np

MAX_RANK = 5  # batch x angle x H x W x C is the deepest layout any op needs


class ShapeError(ValueError):
    """Operand shapes incompatible with the requested operation."""


class OverflowInComputeError(ArithmeticError):
    """An op produced non-finite values from finite inputs."""


_grad_enabled = True
_finite_checks = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (evaluation fast path)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _as_array(data, dtype):
    if dtype is not None:
        arr = np.asarray(data, dtype=dtype)
    else:
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
    if arr.ndim > MAX_RANK:
        raise ShapeError(f"rank {arr.ndim} exceeds supported maximum {MAX_RANK}")
    return arr


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad=False, dtype=None):
        self.data = _as_array(data, dtype)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._backward: Callable[[], None] | None = None
        self._parents: tuple[Tensor, ...] = ()

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def _accumulate(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self):
        """Reverse-mode sweep from a scalar output.

        Each reachable node is visited exactly once, in reverse topological
        order of the recorded graph.
        """
        if self.data.size != 1:
            raise ShapeError(f"backward() needs a scalar, got shape {self.shape}")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        with np.errstate(over="ignore", invalid="ignore"):
            for node in reversed(topo):
                if node._backward is not None and node.grad is not None:
                    node._backward()

    # Operator sugar for the common arithmetic.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return affine(self, -1.0, 0.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={tuple(self.shape)}, dtype={self.dtype.name}, requires_grad={self.requires_grad})"

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def sum(self):
        return reduce_sum(self)

    def mean(self):
        return mean(self)


def _guard(data: np.ndarray, op: str) -> np.ndarray:
    if _finite_checks and not np.all(np.isfinite(data)):
        raise OverflowInComputeError(f"{op} produced non-finite values")
    return data


def _node(data, parents: Sequence[Tensor], bwd: Callable[["Tensor"], Callable[[], None]], op: str) -> Tensor:
    """Wrap `data` as a graph node; `bwd(out)` builds the gradient closure."""
    data = _guard(np.asarray(data), op)
    req = _grad_enabled and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=req)
    if req:
        out._parents = tuple(parents)
        out._backward = bwd(out)
    return out


def _coerce(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype))


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a: Tensor, b) -> Tensor:
    b = _coerce(b, a)
    if b.shape not in ((), a.shape):
        raise ShapeError(f"add shapes {a.shape} vs {b.shape}")

    def bwd(out):
        def run():
            if a.requires_grad:
                a._accumulate(out.grad)
            if b.requires_grad:
                g = out.grad if b.shape == a.shape else out.grad.sum()
                b._accumulate(np.asarray(g, dtype=b.dtype))
        return run

    return _node(a.data + b.data, (a, b), bwd, "add")


def sub(a: Tensor, b) -> Tensor:
    b = _coerce(b, a)
    if b.shape not in ((), a.shape):
        raise ShapeError(f"sub shapes {a.shape} vs {b.shape}")

    def bwd(out):
        def run():
            if a.requires_grad:
                a._accumulate(out.grad)
            if b.requires_grad:
                g = -out.grad if b.shape == a.shape else -out.grad.sum()
                b._accumulate(np.asarray(g, dtype=b.dtype))
        return run

    return _node(a.data - b.data, (a, b), bwd, "sub")


def mul(a: Tensor, b) -> Tensor:
    """Elementwise product; `b` may be a same-shape tensor or a scalar."""
    b = _coerce(b, a)
    if b.shape not in ((), a.shape):
        raise ShapeError(f"mul shapes {a.shape} vs {b.shape}")

    def bwd(out):
        def run():
            if a.requires_grad:
                a._accumulate(out.grad * b.data)
            if b.requires_grad:
                g = out.grad * a.data
                if b.shape != a.shape:
                    g = g.sum()
                b._accumulate(np.asarray(g, dtype=b.dtype))
        return run

    with np.errstate(over="ignore"):
        data = a.data * b.data
    return _node(data, (a, b), bwd, "mul")


def affine(t: Tensor, scale: float, shift: float) -> Tensor:
    """scale * t + shift with python-scalar coefficients."""

    def bwd(out):
        def run():
            t._accumulate(out.grad * scale)
        return run

    return _node(t.data * scale + shift, (t,), bwd, "affine")


def exp(t: Tensor) -> Tensor:
    def bwd(out):
        def run():
            t._accumulate(out.grad * out.data)
        return run

    with np.errstate(over="raise"):
        try:
            data = np.exp(t.data)
        except FloatingPointError as e:
            raise OverflowInComputeError("exp overflow") from e
    return _node(data, (t,), bwd, "exp")


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shapes {a.shape} vs {b.shape}")

    def bwd(out):
        def run():
            if a.requires_grad:
                a._accumulate(out.grad @ b.data.T)
            if b.requires_grad:
                b._accumulate(a.data.T @ out.grad)
        return run

    return _node(a.data @ b.data, (a, b), bwd, "matmul")


def linear(x: Tensor, w: Tensor) -> Tensor:
    """Bias-free linear layer: (B, Din) @ (Din, Dout)."""
    return matmul(x, w)


def conv2d(x: Tensor, k: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of (B, H, W, Cin) with (kh, kw, Cin, Cout).

    Zero padding of `padding` pixels on every spatial edge; no kernel flip.
    Odd kernel extents only, so 'same' output is always reachable with
    padding = (kh - 1) // 2 at stride 1.
    """
    if x.data.ndim != 4 or k.data.ndim != 4:
        raise ShapeError(f"conv2d expects rank-4 operands, got {x.shape} and {k.shape}")
    kh, kw, cin, cout = k.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"conv2d kernel extents must be odd, got {kh}x{kw}")
    if x.shape[3] != cin:
        raise ShapeError(f"conv2d channel mismatch: input {x.shape} vs kernel {k.shape}")
    bsz, h, w, _ = x.shape
    xp = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding), (0, 0))) if padding else x.data
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (w + 2 * padding - kw) // stride + 1
    if oh <= 0 or ow <= 0:
        raise ShapeError(f"conv2d output would be empty for input {x.shape}, kernel {k.shape}")

    out_data = np.zeros((bsz, oh, ow, cout), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            patch = xp[:, i : i + stride * oh : stride, j : j + stride * ow : stride, :]
            out_data += (patch.reshape(-1, cin) @ k.data[i, j]).reshape(bsz, oh, ow, cout)

    def bwd(out):
        def run():
            g = out.grad
            gm = g.reshape(-1, cout)
            if k.requires_grad:
                dk = np.zeros_like(k.data)
                for i in range(kh):
                    for j in range(kw):
                        patch = xp[:, i : i + stride * oh : stride, j : j + stride * ow : stride, :]
                        dk[i, j] = patch.reshape(-1, cin).T @ gm
                k._accumulate(dk)
            if x.requires_grad:
                dxp = np.zeros_like(xp)
                for i in range(kh):
                    for j in range(kw):
                        dxp[:, i : i + stride * oh : stride, j : j + stride * ow : stride, :] += (
                            gm @ k.data[i, j].T
                        ).reshape(bsz, oh, ow, cin)
                dx = dxp[:, padding : padding + h, padding : padding + w, :] if padding else dxp
                x._accumulate(dx)
        return run

    return _node(out_data, (x, k), bwd, "conv2d")


# ---------------------------------------------------------------------------
# activations


def relu(t: Tensor) -> Tensor:
    def bwd(out):
        mask = t.data > 0

        def run():
            t._accumulate(out.grad * mask)
        return run

    return _node(np.maximum(t.data, 0), (t,), bwd, "relu")


def sigmoid(t: Tensor) -> Tensor:
    """Numerically stable logistic; output clamped into the open (0, 1)."""
    x = t.data
    s = np.empty_like(x)
    pos = x >= 0
    s[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    s[~pos] = ex / (1.0 + ex)
    tiny = np.finfo(x.dtype).tiny
    top = np.nextafter(x.dtype.type(1.0), x.dtype.type(0.0))
    s = np.clip(s, tiny, top)

    def bwd(out):
        def run():
            t._accumulate(out.grad * out.data * (1.0 - out.data))
        return run

    return _node(s, (t,), bwd, "sigmoid")


def activation(t: Tensor, mode: str) -> Tensor:
    if mode == "relu":
        return relu(t)
    if mode == "sigmoid":
        return sigmoid(t)
    raise ValueError(f"unknown activation mode {mode!r}")


# ---------------------------------------------------------------------------
# shape plumbing


def reshape(t: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in (shape if isinstance(shape, (tuple, list)) else (shape,)))

    def bwd(out):
        def run():
            t._accumulate(out.grad.reshape(t.shape))
        return run

    return _node(t.data.reshape(shape), (t,), bwd, "reshape")


def stack(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not parts:
        raise ShapeError("stack of zero tensors")

    def bwd(out):
        def run():
            slabs = np.moveaxis(out.grad, axis, 0)
            for i, p in enumerate(parts):
                if p.requires_grad:
                    p._accumulate(slabs[i])
        return run

    return _node(np.stack([p.data for p in parts], axis=axis), tuple(parts), bwd, "stack")


def concat(parts: Sequence[Tensor], axis: int = -1) -> Tensor:
    if not parts:
        raise ShapeError("concat of zero tensors")

    def bwd(out):
        def run():
            offset = 0
            for p in parts:
                extent = p.shape[axis]
                idx = [slice(None)] * out.grad.ndim
                idx[axis] = slice(offset, offset + extent)
                if p.requires_grad:
                    p._accumulate(out.grad[tuple(idx)])
                offset += extent
        return run

    return _node(np.concatenate([p.data for p in parts], axis=axis), tuple(parts), bwd, "concat")


# ---------------------------------------------------------------------------
# reductions


def reduce_sum(t: Tensor, axis: int | None = None) -> Tensor:
    def bwd(out):
        def run():
            if axis is None:
                t._accumulate(np.full_like(t.data, out.grad))
            else:
                t._accumulate(np.repeat(np.expand_dims(out.grad, axis), t.shape[axis], axis=axis))
        return run

    return _node(t.data.sum(axis=axis), (t,), bwd, "sum")


def mean(t: Tensor) -> Tensor:
    n = t.data.size

    def bwd(out):
        def run():
            t._accumulate(np.full_like(t.data, out.grad / n))
        return run

    return _node(t.data.mean(), (t,), bwd, "mean")


def reduce_max(t: Tensor, axis: int) -> Tensor:
    """Max along one axis; ties route the gradient to the first attaining index."""
    idx = np.argmax(t.data, axis=axis)
    data = np.take_along_axis(t.data, np.expand_dims(idx, axis), axis=axis).squeeze(axis)

    def bwd(out):
        def run():
            g = np.zeros_like(t.data)
            np.put_along_axis(g, np.expand_dims(idx, axis), np.expand_dims(out.grad, axis), axis=axis)
            t._accumulate(g)
        return run

    return _node(data, (t,), bwd, "max")


def axis_scale(t: Tensor, w: Tensor, axis: int = 1) -> Tensor:
    """Multiply slab i along `axis` of t by w[..., i].

    `w` carries one weight per slab: shape (n,) for an unbatched stack or
    (B, n) when t's leading axis is the batch (then axis must be 1).
    """
    n = t.shape[axis]
    if w.data.ndim == 1:
        if w.shape[0] != n:
            raise ShapeError(f"axis_scale weight length {w.shape[0]} vs extent {n}")
        wshape = [1] * t.data.ndim
        wshape[axis] = n
    elif w.data.ndim == 2:
        if axis != 1 or w.shape != (t.shape[0], n):
            raise ShapeError(f"axis_scale batched weights {w.shape} vs stack {t.shape}")
        wshape = [1] * t.data.ndim
        wshape[0], wshape[1] = w.shape
    else:
        raise ShapeError(f"axis_scale weights must be rank 1 or 2, got {w.shape}")
    wb = w.data.reshape(wshape)

    def bwd(out):
        def run():
            if t.requires_grad:
                t._accumulate(out.grad * wb)
            if w.requires_grad:
                red = tuple(i for i in range(t.data.ndim) if wshape[i] == 1)
                w._accumulate((out.grad * t.data).sum(axis=red).reshape(w.shape))
        return run

    return _node(t.data * wb, (t, w), bwd, "axis_scale")


def global_pool(t: Tensor, mode: str) -> Tensor:
    """Spatial pooling of (B, H, W, C) [or (H, W, C)] down to (B, C) [or (C,)].

    Max mode routes the gradient to the first maximal position in row-major
    scan order; avg spreads it uniformly.
    """
    squeeze = t.data.ndim == 3
    data = t.data[None] if squeeze else t.data
    if data.ndim != 4:
        raise ShapeError(f"global_pool expects (B,H,W,C) or (H,W,C), got {t.shape}")
    bsz, h, w, c = data.shape
    flat = data.reshape(bsz, h * w, c)

    if mode == "avg":
        out_data = flat.mean(axis=1)

        def bwd(out):
            def run():
                g = out.grad.reshape(bsz, 1, c) / (h * w)
                g = np.broadcast_to(g, (bsz, h * w, c)).reshape(data.shape)
                t._accumulate(g[0] if squeeze else g)
            return run
    elif mode == "max":
        idx = np.argmax(flat, axis=1)
        out_data = np.take_along_axis(flat, idx[:, None, :], axis=1)[:, 0, :]

        def bwd(out):
            def run():
                g = np.zeros_like(flat)
                np.put_along_axis(g, idx[:, None, :], out.grad.reshape(bsz, 1, c), axis=1)
                g = g.reshape(data.shape)
                t._accumulate(g[0] if squeeze else g)
            return run
    else:
        raise ValueError(f"unknown pooling mode {mode!r}")

    return _node(out_data[0] if squeeze else out_data, (t,), bwd, "global_pool")


# ---------------------------------------------------------------------------
# fused loss kernels


def rows_l2_normalize(t: Tensor) -> Tensor:
    """Normalize each row of (B, D) to unit Euclidean norm."""
    if t.data.ndim != 2:
        raise ShapeError(f"rows_l2_normalize expects (B, D), got {t.shape}")
    norms = np.sqrt((t.data * t.data).sum(axis=1, keepdims=True))
    if np.any(norms == 0):
        raise ValueError("cannot normalize an all-zero row")
    unit = t.data / norms

    def bwd(out):
        def run():
            dot = (unit * out.grad).sum(axis=1, keepdims=True)
            t._accumulate((out.grad - unit * dot) / norms)
        return run

    return _node(unit, (t,), bwd, "rows_l2_normalize")


def rows_sq_distance(a: Tensor, b: Tensor) -> Tensor:
    """Row-wise squared Euclidean distance of two (B, D) tensors -> (B,)."""
    if a.shape != b.shape or a.data.ndim != 2:
        raise ShapeError(f"rows_sq_distance shapes {a.shape} vs {b.shape}")
    diff = a.data - b.data

    def bwd(out):
        def run():
            g = 2.0 * diff * out.grad[:, None]
            if a.requires_grad:
                a._accumulate(g)
            if b.requires_grad:
                b._accumulate(-g)
        return run

    return _node((diff * diff).sum(axis=1), (a, b), bwd, "rows_sq_distance")


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-probability of the true class for (B, K) logits.

    The backward pass uses the closed form softmax(logits) - onehot(label),
    divided by the batch size.
    """
    if logits.data.ndim != 2:
        raise ShapeError(f"softmax_cross_entropy expects (B, K) logits, got {logits.shape}")
    labels = np.asarray(labels)
    bsz, k = logits.shape
    if labels.shape != (bsz,):
        raise ShapeError(f"labels shape {labels.shape} vs batch {bsz}")
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"label out of range [0, {k})")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    ez = np.exp(z)
    probs = ez / ez.sum(axis=1, keepdims=True)
    lse = np.log(ez.sum(axis=1)) - z[np.arange(bsz), labels]
    loss = lse.mean()

    def bwd(out):
        def run():
            g = probs.copy()
            g[np.arange(bsz), labels] -= 1.0
            logits._accumulate(g * (out.grad / bsz))
        return run

    return _node(np.asarray(loss, dtype=logits.dtype), (logits,), bwd, "softmax_cross_entropy")


def smooth_l1(pred: Tensor, target: Tensor) -> Tensor:
    """Mean over elements of the Huber-style piecewise loss (kink at |x| = 1)."""
    if pred.shape != target.shape:
        raise ShapeError(f"smooth_l1 shapes {pred.shape} vs {target.shape}")
    x = pred.data - target.data
    ax = np.abs(x)
    per = np.where(ax < 1.0, 0.5 * x * x, ax - 0.5)
    n = x.size

    def bwd(out):
        def run():
            g = np.clip(x, -1.0, 1.0) * (out.grad / n)
            if pred.requires_grad:
                pred._accumulate(g)
            if target.requires_grad:
                target._accumulate(-g)
        return run

    return _node(np.asarray(per.mean(), dtype=pred.dtype), (pred, target), bwd, "smooth_l1")
