"""Dense tensors with reverse-mode automatic differentiation on a Wengert tape.

Design constraints, chosen for auditability over generality:
  - ops are plain functions; each records (output, inputs, backward rule) on
    the ambient tape when any input requires grad
  - broadcasting is limited to trailing-axis bias vectors; richer patterns
    are rejected so every backward rule stays a few lines
  - backward walks the tape once in reverse; gradients are bitwise
    deterministic for a fixed tape
  - f32 for training runs, f64 for finite-difference verification
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

_INV_SQRT2 = 0.7071067811865476
_INV_SQRT2PI = 0.3989422804014327


class ShapeError(ValueError):
    """Raised when operand shapes (or dtypes) do not conform to an op's rule."""


def _reject(op: str, *shapes) -> None:
    raise ShapeError(f"{op}: incompatible operand shapes {list(map(tuple, shapes))}")


class Tensor:
    """A dense value node. `grad` is populated by backward() for leaves."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = np.asarray(data, dtype=dtype)
        if self.data.dtype not in (np.float32, np.float64):
            self.data = self.data.astype(np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        """Same values, cut off from gradient flow."""
        return Tensor(self.data, requires_grad=False)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


_state = threading.local()


class Tape:
    """Execution-ordered op records; inputs always precede their consumers."""

    def __init__(self):
        self.records: list[tuple[Tensor, tuple[Tensor, ...], object]] = []

    def __enter__(self) -> "Tape":
        if getattr(_state, "tape", None) is not None:
            raise RuntimeError("a tape is already active in this thread")
        _state.tape = self
        return self

    def __exit__(self, *exc):
        _state.tape = None
        return False


def _active_tape() -> Tape | None:
    return getattr(_state, "tape", None)


def _check_dtypes(op: str, *tensors: Tensor) -> None:
    dtypes = {t.data.dtype for t in tensors}
    if len(dtypes) > 1:
        raise ShapeError(f"{op}: mixed dtypes {sorted(map(str, dtypes))}")


def _make(op: str, data: np.ndarray, inputs: tuple[Tensor, ...], backward_fn) -> Tensor:
    out = Tensor(data, requires_grad=any(t.requires_grad for t in inputs))
    tape = _active_tape()
    if tape is not None and out.requires_grad:
        tape.records.append((out, inputs, backward_fn))
    return out


def _is_trailing_bias(a: Tensor, b: Tensor) -> bool:
    return b.shape == a.shape[-1:]


def _sum_to_bias(g: np.ndarray, last: int) -> np.ndarray:
    return g.reshape(-1, last).sum(axis=0)


# ---------------------------------------------------------------------------
# elementwise / broadcast ops

def add(a: Tensor, b: Tensor) -> Tensor:
    """a + b; shapes equal, or b a trailing-axis bias vector."""
    _check_dtypes("add", a, b)
    bias = _is_trailing_bias(a, b)
    if not bias and a.shape != b.shape:
        _reject("add", a.shape, b.shape)
    last = a.shape[-1] if a.shape else 1

    def bwd(g):
        gb = _sum_to_bias(g, last) if bias else g
        return g, gb

    return _make("add", a.data + b.data, (a, b), bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_dtypes("sub", a, b)
    if a.shape != b.shape:
        _reject("sub", a.shape, b.shape)
    return _make("sub", a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product; shapes equal, or b a trailing-axis vector."""
    _check_dtypes("mul", a, b)
    bias = _is_trailing_bias(a, b)
    if not bias and a.shape != b.shape:
        _reject("mul", a.shape, b.shape)
    ad, bd = a.data, b.data
    last = a.shape[-1] if a.shape else 1

    def bwd(g):
        ga = g * bd
        gb = _sum_to_bias(g * ad, last) if bias else g * ad
        return ga, gb

    return _make("mul", ad * bd, (a, b), bwd)


def scale(a: Tensor, c: float) -> Tensor:
    c = a.data.dtype.type(c)
    return _make("scale", a.data * c, (a,), lambda g: (g * c,))


def shift(a: Tensor, c: float) -> Tensor:
    c = a.data.dtype.type(c)
    return _make("shift", a.data + c, (a,), lambda g: (g,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make("relu", a.data * mask, (a,), lambda g: (g * mask,))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _make("tanh", out, (a,), lambda g: (g * (1.0 - out * out),))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make("exp", out, (a,), lambda g: (g * out,))


def gelu(a: Tensor) -> Tensor:
    """Exact (erf-based) GELU."""
    x = a.data
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    pdf = np.exp(-0.5 * x * x) * _INV_SQRT2PI

    def bwd(g):
        return (g * (cdf + x * pdf),)

    return _make("gelu", (x * cdf).astype(x.dtype), (a,), bwd)


# ---------------------------------------------------------------------------
# contractions and structural ops

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """a @ b; a is [..., m, k], b is [k, n] or [..., k, n] with equal leading dims."""
    _check_dtypes("matmul", a, b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        _reject("matmul", a.shape, b.shape)
    if a.shape[-1] != b.shape[-2]:
        _reject("matmul", a.shape, b.shape)
    if b.data.ndim != 2 and a.shape[:-2] != b.shape[:-2]:
        _reject("matmul", a.shape, b.shape)
    ad, bd = a.data, b.data

    def bwd(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        if bd.ndim == 2:
            gb = g.reshape(-1, g.shape[-1]).T @ ad.reshape(-1, ad.shape[-1])
            gb = gb.T
        else:
            gb = np.swapaxes(ad, -1, -2) @ g
        return ga, gb

    return _make("matmul", ad @ bd, (a, b), bwd)


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x @ w.T + b with w of shape [out, in], b of shape [out]."""
    _check_dtypes("affine", x, w, b)
    if w.data.ndim != 2 or x.shape[-1] != w.shape[1] or b.shape != (w.shape[0],):
        _reject("affine", x.shape, w.shape, b.shape)
    xd, wd = x.data, w.data
    out_dim = w.shape[0]

    def bwd(g):
        g2 = g.reshape(-1, out_dim)
        x2 = xd.reshape(-1, xd.shape[-1])
        return g @ wd, g2.T @ x2, g2.sum(axis=0)

    return _make("affine", xd @ wd.T + b.data, (x, w, b), bwd)


def transpose(a: Tensor, axes: tuple[int, ...]) -> Tensor:
    inv = tuple(np.argsort(axes))
    return _make("transpose", np.transpose(a.data, axes), (a,),
                 lambda g: (np.transpose(g, inv),))


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    old = a.shape
    if int(np.prod(shape)) != a.data.size:
        _reject("reshape", a.shape, shape)
    return _make("reshape", a.data.reshape(shape), (a,),
                 lambda g: (g.reshape(old),))


def concat(tensors: list[Tensor], axis: int = -1) -> Tensor:
    _check_dtypes("concat", *tensors)
    axis = axis % tensors[0].data.ndim
    for t in tensors[1:]:
        if t.shape[:axis] + t.shape[axis + 1:] != tensors[0].shape[:axis] + tensors[0].shape[axis + 1:]:
            _reject("concat", tensors[0].shape, t.shape)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make("concat", np.concatenate([t.data for t in tensors], axis=axis),
                 tuple(tensors), bwd)


def slice_axis(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    axis = axis % a.data.ndim
    if not (0 <= start < stop <= a.shape[axis]):
        _reject("slice", a.shape, (axis, start, stop))
    idx = tuple(slice(None) if i != axis else slice(start, stop)
                for i in range(a.data.ndim))
    src_shape = a.shape

    def bwd(g):
        full = np.zeros(src_shape, dtype=g.dtype)
        full[idx] = g
        return (full,)

    return _make("slice", a.data[idx], (a,), bwd)


def tile_leading(a: Tensor, n: int) -> Tensor:
    """Repeat a along a new leading axis of extent n."""
    if n < 1:
        _reject("tile", a.shape, (n,))
    data = np.broadcast_to(a.data, (n,) + a.shape).copy()
    return _make("tile", data, (a,), lambda g: (g.sum(axis=0),))


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup: table is [vocab, d], ids an int array; output ids.shape + [d]."""
    ids = np.asarray(ids)
    if not np.issubdtype(ids.dtype, np.integer):
        raise ShapeError(f"embedding: ids must be integers, got {ids.dtype}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError(
            f"embedding: id out of range [0, {table.shape[0]}) in lookup")
    vshape = table.shape
    flat_ids = ids.ravel()

    def bwd(g):
        gt = np.zeros(vshape, dtype=g.dtype)
        np.add.at(gt, flat_ids, g.reshape(-1, vshape[1]))
        return (gt,)

    return _make("embedding", table.data[ids], (table,), bwd)


# ---------------------------------------------------------------------------
# normalizations and reductions

def softmax_last(a: Tensor) -> Tensor:
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        return ((g - (g * out).sum(axis=-1, keepdims=True)) * out,)

    return _make("softmax-last-axis", out, (a,), bwd)


def layernorm(a: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to mean 0 / variance 1 (no scale or shift)."""
    mu = a.data.mean(axis=-1, keepdims=True)
    var = a.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = (a.data - mu) * inv

    def bwd(g):
        gm = g.mean(axis=-1, keepdims=True)
        gy = (g * y).mean(axis=-1, keepdims=True)
        return (inv * (g - gm - y * gy),)

    return _make("layernorm", y.astype(a.data.dtype), (a,), bwd)


def sum_all(a: Tensor) -> Tensor:
    shp = a.shape

    def bwd(g):
        return (np.broadcast_to(g, shp).astype(g.dtype),)

    return _make("sum", np.asarray(a.data.sum(), dtype=a.data.dtype), (a,), bwd)


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size
    shp = a.shape

    def bwd(g):
        return (np.broadcast_to(g / n, shp).astype(g.dtype),)

    return _make("mean", np.asarray(a.data.mean(), dtype=a.data.dtype), (a,), bwd)


def mse(a: Tensor, b: Tensor) -> Tensor:
    """Mean squared error over all elements; scalar output."""
    _check_dtypes("mse", a, b)
    if a.shape != b.shape:
        _reject("mse", a.shape, b.shape)
    diff = a.data - b.data
    n = diff.size

    def bwd(g):
        ga = g * (2.0 / n) * diff
        return ga.astype(diff.dtype), (-ga).astype(diff.dtype)

    return _make("mse", np.asarray((diff * diff).mean(), dtype=a.data.dtype),
                 (a, b), bwd)


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Per-row softmax cross-entropy; labels indexes the last axis.

    Output shape is logits.shape[:-1]; reduce with mean_all / masking outside.
    """
    labels = np.asarray(labels)
    n_classes = logits.shape[-1]
    if labels.shape != logits.shape[:-1]:
        _reject("cross-entropy", logits.shape, labels.shape)
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ShapeError(
            f"cross-entropy: label out of range [0, {n_classes})")
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - lse
    picked = np.take_along_axis(logp, labels[..., None], axis=-1)[..., 0]
    probs = np.exp(logp)

    def bwd(g):
        grad = probs.copy()
        np.put_along_axis(
            grad, labels[..., None],
            np.take_along_axis(grad, labels[..., None], axis=-1) - 1.0, axis=-1)
        return (grad * g[..., None],)

    return _make("cross-entropy", (-picked).astype(logits.data.dtype),
                 (logits,), bwd)


# ---------------------------------------------------------------------------
# backward pass

def backward(tape: Tape, loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Gradients of a scalar loss for every requires_grad leaf on the tape.

    Leaves unreached by the loss get zero grads. Also stores each leaf's
    gradient in its .grad field. Repeated calls on one tape are independent.
    """
    if int(np.prod(loss.shape)) != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    outputs = {id(out) for out, _, _ in tape.records}

    for out, inputs, bwd in reversed(tape.records):
        g = grads.pop(id(out), None)
        if g is None:
            continue
        for t, gi in zip(inputs, bwd(g)):
            if gi is None or not t.requires_grad:
                continue
            acc = grads.get(id(t))
            grads[id(t)] = gi if acc is None else acc + gi

    result: dict[Tensor, np.ndarray] = {}
    seen: set[int] = set()
    for _, inputs, _ in tape.records:
        for t in inputs:
            if t.requires_grad and id(t) not in outputs and id(t) not in seen:
                seen.add(id(t))
                g = grads.get(id(t))
                if g is None:
                    g = np.zeros_like(t.data)
                t.grad = g
                result[t] = g
    if not tape.records and loss.requires_grad:
        loss.grad = grads[id(loss)]
        result[loss] = loss.grad
    return result


# ---------------------------------------------------------------------------
# finite-difference verification

@dataclass
class GradCheckReport:
    """Comparison of tape gradients against central differences."""

    max_rel_error: float
    worst: tuple[int, int]  # (leaf index, flat element index)
    n_elements: int
    nonfinite: list[tuple[int, int]] = field(default_factory=list)

    def ok(self, tol: float) -> bool:
        return not self.nonfinite and self.max_rel_error < tol


def check_gradients(fn, point, step: float = 1e-5) -> GradCheckReport:
    """Check d(fn)/d(point) against central differences at `point`.

    `fn` must be scalar-valued and deterministic (freeze any stochastic gates
    by fixing their counters). `point` is a Tensor or a sequence of Tensors,
    each with requires_grad set. Non-finite analytic or numeric values are
    reported in the result, never clipped.
    """
    points = [point] if isinstance(point, Tensor) else list(point)
    for p in points:
        if not p.requires_grad:
            raise ValueError("check_gradients: every point must require grad")
        p.data = np.ascontiguousarray(p.data)  # ravel below must be a view

    with Tape() as tape:
        out = fn(*points)
    if int(np.prod(out.shape)) != 1:
        raise ShapeError("check_gradients: fn must be scalar-valued")
    grads = backward(tape, out)

    max_rel = 0.0
    worst = (0, 0)
    nonfinite: list[tuple[int, int]] = []
    n_elems = 0
    if not np.isfinite(out.data).all():
        nonfinite.append((-1, -1))

    for li, p in enumerate(points):
        analytic = grads.get(p, np.zeros_like(p.data)).ravel()
        flat = p.data.ravel()
        n_elems += flat.size
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            f_plus = float(fn(*points).data)
            flat[i] = orig - step
            f_minus = float(fn(*points).data)
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * step)
            a = float(analytic[i])
            if not (np.isfinite(numeric) and np.isfinite(a)):
                nonfinite.append((li, i))
                continue
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            if rel > max_rel:
                max_rel = rel
                worst = (li, i)
    return GradCheckReport(max_rel, worst, n_elems, nonfinite)
