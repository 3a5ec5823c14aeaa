"""Tape-based reverse-mode differentiation over dense numpy arrays.

Every primitive records a node on the active tape and knows how to build its
own backward pass *out of the same primitives*, so a gradient computation is
itself differentiable. That is what makes exact second-order gradients through
unrolled optimizer steps possible (see `backward` with ``create_graph=True``
followed by a second `backward`).

Eager use (no active tape) is allowed and cheap: ops just compute values.
"""

from __future__ import annotations

import itertools
import math
from contextlib import contextmanager

import numpy as np


class AutodiffError(Exception):
    """Base class for engine errors."""


class ShapeError(AutodiffError):
    """Operands have incompatible shapes for the requested primitive."""


class NumericError(AutodiffError):
    """A primitive produced NaN/Inf. Fails fast, never propagates silently."""


class UnsupportedOpError(AutodiffError):
    """Unknown primitive, or gradient requested through a non-differentiable one."""


class ContractError(AutodiffError):
    """API precondition violated (e.g. non-scalar loss passed to backward)."""


DEFAULT_DTYPE = np.float64

_tensor_ids = itertools.count()


class Tensor:
    """Immutable dense array plus an identity used by tapes.

    `data` must never be mutated after construction; all ops allocate fresh
    outputs.
    """

    __slots__ = ("data", "tid")

    def __init__(self, data):
        self.data = data
        self.tid = next(_tensor_ids)

    @property
    def shape(self):
        return self.data.shape

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, tid={self.tid})"

    def __array__(self, *args, **kwargs):
        raise UnsupportedOpError(
            "Tensors only support registered primitives; use .data to read values"
        )


class Node:
    """One recorded primitive application."""

    __slots__ = ("op", "input_ids", "out_tid", "out_shape", "recompute", "vjp")

    def __init__(self, op, input_ids, out_tid, out_shape, recompute, vjp):
        self.op = op
        self.input_ids = input_ids
        self.out_tid = out_tid
        self.out_shape = out_shape
        self.recompute = recompute  # pure fn: list[np.ndarray] -> np.ndarray
        self.vjp = vjp  # fn(g: Tensor, need: tuple[bool]) -> tuple[Tensor | None] | None


class Tape:
    """Ordered record of primitive applications plus the differentiable leaves.

    Nodes are appended in execution order, so the list is topologically
    sorted by construction. Replaying the node list from the leaf values
    reproduces every recorded output bit-identically.
    """

    def __init__(self):
        self.nodes = []
        self.leaves = {}  # name -> Tensor
        self._node_of = {}  # out tid -> node index
        self._tensors = {}  # tid -> Tensor (for replay checks and leaf lookup)
        self._scalar_consts = {}  # (value, dtype) -> Tensor, shared scalar nodes

    def leaf(self, name, array):
        """Register a differentiable leaf holding `array`."""
        if name in self.leaves:
            raise ContractError(f"duplicate leaf name {name!r}")
        t = Tensor(np.asarray(array))
        self.leaves[name] = t
        self._tensors[t.tid] = t
        return t

    def _append(self, node, out):
        self._node_of[node.out_tid] = len(self.nodes)
        self.nodes.append(node)
        self._tensors[out.tid] = out

    def replay(self):
        """Re-execute every node from the current leaf values.

        Returns {tid: recomputed array}. Raises NumericError if any recorded
        output is not reproduced exactly (guards against hidden state in ops).
        """
        values = {t.tid: t.data for t in self.leaves.values()}
        for idx, node in enumerate(self.nodes):
            vals = [values[i] for i in node.input_ids]
            out = node.recompute(vals)
            recorded = self._tensors[node.out_tid].data
            if out.shape != recorded.shape or not np.array_equal(out, recorded):
                raise NumericError(
                    f"replay mismatch at node {idx} (op '{node.op}')"
                )
            values[node.out_tid] = out
        return values


# --- recording context ----------------------------------------------------

_ACTIVE = []  # stack of Tape | None (None pauses recording)


def _current_tape():
    return _ACTIVE[-1] if _ACTIVE else None


@contextmanager
def recording(tape):
    """Record all primitive applications in this block onto `tape`."""
    _ACTIVE.append(tape)
    try:
        yield tape
    finally:
        _ACTIVE.pop()


@contextmanager
def paused():
    """Suspend recording inside a `recording` block."""
    _ACTIVE.append(None)
    try:
        yield
    finally:
        _ACTIVE.pop()


# --- primitive machinery ----------------------------------------------------

OPS = {}  # name -> builder fn, the registered-primitive set


def _register(name, fn):
    OPS[name] = fn
    return fn


def apply_op(name, *args, **kwargs):
    """Apply a primitive by registry name (unknown names are rejected)."""
    if name not in OPS:
        raise UnsupportedOpError(f"unregistered primitive {name!r}")
    return OPS[name](*args, **kwargs)


def _apply(op, inputs, recompute, vjp):
    with np.errstate(all="ignore"):  # the finiteness check below enforces the policy
        out_data = recompute([t.data for t in inputs])
        # min/max are allocation-free and both NaN and +-Inf surface in one of them
        if out_data.size and not (
            math.isfinite(float(out_data.min())) and math.isfinite(float(out_data.max()))
        ):
            tape = _current_tape()
            where = f"node {len(tape.nodes)}" if tape is not None else "eager op"
            raise NumericError(f"non-finite output from '{op}' at {where}")
    out = Tensor(out_data)
    tape = _current_tape()
    if tape is not None:
        tape._append(
            Node(op, tuple(t.tid for t in inputs), out.tid, out_data.shape, recompute, vjp),
            out,
        )
    return out


def constant(value, like=None):
    """Wrap a raw array/scalar as a non-differentiable graph constant."""
    dtype = like.data.dtype if like is not None else DEFAULT_DTYPE
    arr = np.asarray(value, dtype=dtype)
    return _apply("const", (), lambda _vals, _a=arr: _a, None)


def zeros_like(t):
    return constant(np.zeros(t.data.shape, dtype=t.data.dtype))


def _const_like(value, t):
    dtype = t.data.dtype
    if isinstance(value, (int, float)):
        tape = _current_tape()
        if tape is not None:  # scalar constants are immutable: share one node
            key = (float(value), dtype.str)
            hit = tape._scalar_consts.get(key)
            if hit is None:
                hit = constant(np.asarray(value, dtype=dtype))
                tape._scalar_consts[key] = hit
            return hit
    return constant(np.asarray(value, dtype=dtype))


# --- reductions and shape ops ------------------------------------------------


def reduce_sum(x, axes=None, keepdims=False):
    """Sum over `axes` (all axes when None)."""
    if axes is None:
        axes = tuple(range(x.data.ndim))
    axes = tuple(int(a) for a in axes)
    shape = x.data.shape
    kept = tuple(1 if i in axes else s for i, s in enumerate(shape))

    def fwd(vals, _axes=axes, _kd=keepdims):
        return np.sum(vals[0], axis=_axes, keepdims=_kd)

    def vjp(g, need):
        if not need[0]:
            return (None,)
        gk = g if keepdims else reshape(g, kept)
        return (broadcast_to(gk, shape),)

    return _apply("sum", (x,), fwd, vjp)


_register("sum", reduce_sum)


def mean_all(x):
    n = x.data.size
    return scale(reduce_sum(x), 1.0 / n)


_register("mean", mean_all)


def reshape(x, shape):
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != x.data.size:
        raise ShapeError(f"reshape: cannot view {x.data.shape} as {shape}")
    old = x.data.shape

    def fwd(vals, _s=shape):
        return np.ascontiguousarray(vals[0]).reshape(_s)

    def vjp(g, need):
        return (reshape(g, old) if need[0] else None,)

    return _apply("reshape", (x,), fwd, vjp)


_register("reshape", reshape)


def broadcast_to(x, shape):
    shape = tuple(int(s) for s in shape)
    try:
        np.broadcast_shapes(x.data.shape, shape)
    except ValueError:
        raise ShapeError(f"broadcast_to: {x.data.shape} -> {shape}") from None
    old = x.data.shape

    def fwd(vals, _s=shape):
        return np.ascontiguousarray(np.broadcast_to(vals[0], _s))

    def vjp(g, need):
        return (_sum_to(g, old) if need[0] else None,)

    return _apply("broadcast_to", (x,), fwd, vjp)


_register("broadcast_to", broadcast_to)


def permute(x, axes):
    axes = tuple(int(a) for a in axes)
    if sorted(axes) != list(range(x.data.ndim)):
        raise ShapeError(f"permute: axes {axes} invalid for ndim {x.data.ndim}")
    inverse = tuple(int(i) for i in np.argsort(axes))

    def fwd(vals, _a=axes):
        return np.ascontiguousarray(np.transpose(vals[0], _a))

    def vjp(g, need):
        return (permute(g, inverse) if need[0] else None,)

    return _apply("permute", (x,), fwd, vjp)


_register("permute", permute)


def transpose(x):
    if x.data.ndim != 2:
        raise ShapeError(f"transpose expects 2-d, got {x.data.shape}")
    return permute(x, (1, 0))


_register("transpose", transpose)


def _sum_to(t, shape):
    """Reduce a numpy-broadcast result back down to `shape` (differentiably)."""
    if t.data.shape == tuple(shape):
        return t
    extra = t.data.ndim - len(shape)
    if extra > 0:
        t = reduce_sum(t, tuple(range(extra)), keepdims=False)
    axes = tuple(
        i for i, (have, want) in enumerate(zip(t.data.shape, shape)) if want == 1 and have != 1
    )
    if axes:
        t = reduce_sum(t, axes, keepdims=True)
    if t.data.shape != tuple(shape):
        t = reshape(t, shape)
    return t


# --- elementwise arithmetic ---------------------------------------------------


def _check_broadcast(op, a, b):
    if a.data.shape == b.data.shape:
        return
    try:
        np.broadcast_shapes(a.data.shape, b.data.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.data.shape} and {b.data.shape}") from None


def add(a, b):
    _check_broadcast("add", a, b)
    ash, bsh = a.data.shape, b.data.shape

    def vjp(g, need):
        return (
            _sum_to(g, ash) if need[0] else None,
            _sum_to(g, bsh) if need[1] else None,
        )

    return _apply("add", (a, b), lambda v: v[0] + v[1], vjp)


_register("add", add)


def sub(a, b):
    _check_broadcast("subtract", a, b)
    ash, bsh = a.data.shape, b.data.shape

    def vjp(g, need):
        return (
            _sum_to(g, ash) if need[0] else None,
            _sum_to(neg(g), bsh) if need[1] else None,
        )

    return _apply("subtract", (a, b), lambda v: v[0] - v[1], vjp)


_register("subtract", sub)


def neg(x):
    def vjp(g, need):
        return (neg(g) if need[0] else None,)

    return _apply("negate", (x,), lambda v: -v[0], vjp)


_register("negate", neg)


def mul(a, b):
    _check_broadcast("multiply", a, b)
    ash, bsh = a.data.shape, b.data.shape

    def vjp(g, need):
        return (
            _sum_to(mul(g, b), ash) if need[0] else None,
            _sum_to(mul(g, a), bsh) if need[1] else None,
        )

    return _apply("multiply", (a, b), lambda v: v[0] * v[1], vjp)


_register("multiply", mul)


def div(a, b):
    _check_broadcast("divide", a, b)
    ash, bsh = a.data.shape, b.data.shape

    def vjp(g, need):
        da = _sum_to(div(g, b), ash) if need[0] else None
        db = _sum_to(neg(div(mul(g, a), mul(b, b))), bsh) if need[1] else None
        return (da, db)

    return _apply("divide", (a, b), lambda v: v[0] / v[1], vjp)


_register("divide", div)


def scale(x, s):
    """Multiply by a python scalar (recorded as a constant)."""
    return mul(x, _const_like(s, x))


_register("scale", scale)


def square(x):
    def vjp(g, need):
        return (mul(g, scale(x, 2.0)) if need[0] else None,)

    return _apply("square", (x,), lambda v: v[0] * v[0], vjp)


_register("square", square)


def sqrt(x):
    def vjp(g, need):
        if not need[0]:
            return (None,)
        return (div(g, scale(y, 2.0)),)

    y = _apply("sqrt", (x,), lambda v: np.sqrt(v[0]), vjp)
    return y


_register("sqrt", sqrt)


def exp(x):
    def vjp(g, need):
        return (mul(g, y) if need[0] else None,)

    y = _apply("exp", (x,), lambda v: np.exp(v[0]), vjp)
    return y


_register("exp", exp)


def log(x):
    def vjp(g, need):
        return (div(g, x) if need[0] else None,)

    return _apply("log", (x,), lambda v: np.log(v[0]), vjp)


_register("log", log)


def absolute(x):
    def vjp(g, need):
        if not need[0]:
            return (None,)
        # subgradient: sign(x), constant w.r.t. further differentiation
        return (mul(g, constant(np.sign(x.data), like=x)),)

    return _apply("absolute", (x,), lambda v: np.abs(v[0]), vjp)


_register("absolute", absolute)


def relu(x):
    def vjp(g, need):
        if not need[0]:
            return (None,)
        mask = (x.data > 0).astype(x.data.dtype)
        return (mul(g, constant(mask, like=x)),)

    return _apply("relu", (x,), lambda v: np.maximum(v[0], 0), vjp)


_register("relu", relu)


def sigmoid(x):
    def fwd(vals):
        v = vals[0]
        out = np.empty_like(v)
        pos = v >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
        ev = np.exp(v[~pos])
        out[~pos] = ev / (1.0 + ev)
        return out

    def vjp(g, need):
        if not need[0]:
            return (None,)
        return (mul(g, mul(y, sub(_const_like(1.0, y), y))),)

    y = _apply("sigmoid", (x,), fwd, vjp)
    return y


_register("sigmoid", sigmoid)


def argmax_rows(x):
    """Row-wise argmax (ties -> lowest index). Not differentiable."""
    if x.data.ndim != 2:
        raise ShapeError(f"argmax_rows expects 2-d, got {x.data.shape}")

    def fwd(vals):
        return np.argmax(vals[0], axis=1).astype(vals[0].dtype)

    return _apply("argmax_rows", (x,), fwd, "nondifferentiable")


_register("argmax_rows", argmax_rows)


# --- matmul and convolution ----------------------------------------------------


def matmul(a, b):
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: {a.data.shape} @ {b.data.shape}")

    def vjp(g, need):
        da = matmul(g, transpose(b)) if need[0] else None
        db = matmul(transpose(a), g) if need[1] else None
        return (da, db)

    return _apply("matmul", (a, b), lambda v: v[0] @ v[1], vjp)


_register("matmul", matmul)


def _im2col_array(x, k):
    b, c, h, w = x.shape
    p = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    cols = np.empty((b, h, w, c, k, k), dtype=x.dtype)
    for di in range(k):
        for dj in range(k):
            cols[:, :, :, :, di, dj] = xp[:, :, di : di + h, dj : dj + w].transpose(0, 2, 3, 1)
    return cols.reshape(b * h * w, c * k * k)


def _col2im_array(cols, b, c, h, w, k):
    p = k // 2
    cols6 = cols.reshape(b, h, w, c, k, k)
    xp = np.zeros((b, c, h + 2 * p, w + 2 * p), dtype=cols.dtype)
    for di in range(k):
        for dj in range(k):
            xp[:, :, di : di + h, dj : dj + w] += cols6[:, :, :, :, di, dj].transpose(0, 3, 1, 2)
    return xp[:, :, p : p + h, p : p + w]


def im2col(x, k):
    """Extract k x k same-padded stride-1 patches: (B,C,H,W) -> (B*H*W, C*k*k)."""
    if x.data.ndim != 4:
        raise ShapeError(f"im2col expects (B,C,H,W), got {x.data.shape}")
    if k % 2 != 1:
        raise ShapeError("im2col supports odd kernel sizes only")
    b, c, h, w = x.data.shape

    def vjp(g, need):
        return (col2im(g, b, c, h, w, k) if need[0] else None,)

    return _apply("im2col", (x,), lambda v: _im2col_array(v[0], k), vjp)


_register("im2col", im2col)


def col2im(cols, b, c, h, w, k):
    """Adjoint of `im2col`: scatter-add patches back to (B,C,H,W)."""
    if cols.data.shape != (b * h * w, c * k * k):
        raise ShapeError(f"col2im: got {cols.data.shape}, want {(b * h * w, c * k * k)}")

    def vjp(g, need):
        return (im2col(g, k) if need[0] else None,)

    return _apply("col2im", (cols,), lambda v: _col2im_array(v[0], b, c, h, w, k), vjp)


_register("col2im", col2im)


def conv2d(x, w, bias=None):
    """Direct stride-1 same-padding convolution: (B,C,H,W) x (F,C,k,k) -> (B,F,H,W)."""
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeError(f"conv2d: x {x.data.shape}, w {w.data.shape}")
    b, c, h, wd = x.data.shape
    f, cw, k, k2 = w.data.shape
    if cw != c or k != k2:
        raise ShapeError(f"conv2d: channel/kernel mismatch x {x.data.shape} w {w.data.shape}")
    cols = im2col(x, k)  # (B*H*W, C*k*k)
    wmat = transpose(reshape(w, (f, c * k * k)))  # (C*k*k, F)
    out = matmul(cols, wmat)  # (B*H*W, F)
    out = permute(reshape(out, (b, h, wd, f)), (0, 3, 1, 2))
    if bias is not None:
        out = add(out, reshape(bias, (1, f, 1, 1)))
    return out


_register("conv", conv2d)


def pool_max2(x):
    """2x2 non-overlapping max pool; ties resolve to the first window element."""
    if x.data.ndim != 4 or x.data.shape[2] % 2 or x.data.shape[3] % 2:
        raise ShapeError(f"pool_max2 expects even (B,C,H,W), got {x.data.shape}")
    b, c, h, w = x.data.shape

    def windows(v):
        return v.reshape(b, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(
            b, c, h // 2, w // 2, 4
        )

    def fwd(vals):
        return windows(vals[0]).max(axis=4)

    def vjp(g, need):
        if not need[0]:
            return (None,)
        win = windows(x.data)
        arg = win.argmax(axis=4)
        mask = np.zeros((b, c, h // 2, w // 2, 4), dtype=x.data.dtype)
        np.put_along_axis(mask, arg[..., None], 1.0, axis=4)
        mask = (
            mask.reshape(b, c, h // 2, w // 2, 2, 2)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(b, c, h, w)
        )
        return (mul(repeat2(g), constant(mask, like=x)),)

    return _apply("pool_max2", (x,), fwd, vjp)


_register("pool_max2", pool_max2)


def pool_sum2(x):
    """2x2 non-overlapping sum pool."""
    if x.data.ndim != 4 or x.data.shape[2] % 2 or x.data.shape[3] % 2:
        raise ShapeError(f"pool_sum2 expects even (B,C,H,W), got {x.data.shape}")
    b, c, h, w = x.data.shape

    def fwd(vals):
        return vals[0].reshape(b, c, h // 2, 2, w // 2, 2).sum(axis=(3, 5))

    def vjp(g, need):
        return (repeat2(g) if need[0] else None,)

    return _apply("pool_sum2", (x,), fwd, vjp)


_register("pool_sum2", pool_sum2)


def repeat2(x):
    """Nearest-neighbour 2x spatial upsample (adjoint of pool_sum2)."""
    if x.data.ndim != 4:
        raise ShapeError(f"repeat2 expects 4-d, got {x.data.shape}")

    def fwd(vals):
        return np.repeat(np.repeat(vals[0], 2, axis=2), 2, axis=3)

    def vjp(g, need):
        return (pool_sum2(g) if need[0] else None,)

    return _apply("repeat2", (x,), fwd, vjp)


_register("repeat2", repeat2)


# --- losses --------------------------------------------------------------------


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy of integer labels under softmax(logits).

    The max-shift used for stability is a recorded constant; the loss value
    and all its derivatives are invariant to that shift, so first and second
    order gradients stay exact.
    """
    if logits.data.ndim != 2:
        raise ShapeError(f"softmax_cross_entropy expects (B,C) logits, got {logits.data.shape}")
    labels = np.asarray(labels)
    b, c = logits.data.shape
    if labels.shape != (b,):
        raise ShapeError(f"labels shape {labels.shape} does not match batch {b}")
    if labels.min() < 0 or labels.max() >= c:
        raise ContractError(f"labels must lie in [0, {c})")
    m = constant(logits.data.max(axis=1, keepdims=True), like=logits)
    z = sub(logits, m)
    lse = log(reduce_sum(exp(z), (1,), keepdims=True))  # (B,1)
    onehot = np.zeros((b, c), dtype=logits.data.dtype)
    onehot[np.arange(b), labels.astype(int)] = 1.0
    picked = reduce_sum(mul(z, constant(onehot, like=logits)), (1,), keepdims=True)
    return scale(reduce_sum(sub(lse, picked)), 1.0 / b)


_register("softmax-cross-entropy", softmax_cross_entropy)


def binary_cross_entropy_logits(scores, targets):
    """Mean binary cross-entropy of {0,1} targets under sigmoid(scores)."""
    targets = np.asarray(targets)
    flat = reshape(scores, (scores.data.size,))
    if targets.shape != flat.data.shape:
        raise ShapeError(f"targets shape {targets.shape} vs scores {scores.data.shape}")
    m_arr = np.maximum(flat.data, 0.0)
    m = constant(m_arr, like=flat)
    # softplus(s) = m + log(exp(-m) + exp(s - m)), exact for any constant shift m
    sp = add(m, log(add(constant(np.exp(-m_arr), like=flat), exp(sub(flat, m)))))
    per = sub(sp, mul(constant(targets, like=flat), flat))
    return scale(reduce_sum(per), 1.0 / flat.data.size)


_register("binary-cross-entropy", binary_cross_entropy_logits)


# --- parameter vectors -----------------------------------------------------------


class ParameterVector:
    """Named, ordered dense weight segments (one network's worth of arrays)."""

    def __init__(self, segments):
        self.segments = {name: np.asarray(arr) for name, arr in dict(segments).items()}

    @property
    def total_dim(self):
        return sum(a.size for a in self.segments.values())

    def copy(self):
        return ParameterVector({k: v.copy() for k, v in self.segments.items()})

    def same_layout(self, other):
        if list(self.segments) != list(other.segments):
            return False
        return all(self.segments[k].shape == other.segments[k].shape for k in self.segments)

    def flatten(self):
        return np.concatenate([a.ravel() for a in self.segments.values()])

    def unflatten(self, flat):
        """Rebuild a vector with this layout from a flat array."""
        flat = np.asarray(flat)
        if flat.size != self.total_dim:
            raise ShapeError(f"unflatten: got {flat.size} values, want {self.total_dim}")
        out, ofs = {}, 0
        for name, a in self.segments.items():
            out[name] = flat[ofs : ofs + a.size].reshape(a.shape).astype(a.dtype)
            ofs += a.size
        return ParameterVector(out)

    def __iter__(self):
        return iter(self.segments.items())

    def __repr__(self):
        return f"ParameterVector({list(self.segments)}, dim={self.total_dim})"


# --- recording and differentiation entry points -----------------------------------


def record_forward(params, computation, *inputs):
    """Run `computation(leaves, *input_tensors)` under a fresh tape.

    `params` is a ParameterVector; its segments become the tape's leaves.
    Returns (output tensor, tape).
    """
    tape = Tape()
    with recording(tape):
        leaves = {name: tape.leaf(name, arr) for name, arr in params}
        ins = [constant(np.asarray(a)) for a in inputs]
        out = computation(leaves, *ins)
    if not isinstance(out, Tensor):
        raise ContractError("computation must return a Tensor")
    return out, tape


def backward(tape, loss, wrt, create_graph=False):
    """Cotangents of scalar `loss` w.r.t. the tensors in `wrt`.

    With ``create_graph=True`` the backward pass is recorded on the same
    tape, so the returned gradients can be differentiated again.
    Tensors in `wrt` with no path to `loss` get exact-zero gradients.
    """
    if loss.data.shape != ():
        raise ContractError(f"loss must be scalar, got shape {loss.data.shape}")
    if loss.tid not in tape._node_of and loss.tid not in tape._tensors:
        raise ContractError("loss is not a tensor recorded on this tape")

    # influence flows forward from the wrt tensors, so only nodes created
    # after the earliest of them can sit on a wrt -> loss path; restricting
    # the walk to that live subgraph keeps repeated backwards on one long
    # tape (inner gradients of an unroll) linear instead of quadratic
    nodes = tape.nodes
    node_of = tape._node_of
    start = node_of.get(loss.tid, -1)
    first = None
    for t in wrt:
        idx = node_of.get(t.tid)
        if idx is None:  # leaf: anything downstream may depend on it
            first = 0
            break
        first = idx if first is None else min(first, idx)
    if first is None:
        first = 0
    influenced = {t.tid for t in wrt}
    live = []
    for i in range(first, start + 1):
        node = nodes[i]
        for tid in node.input_ids:
            if tid in influenced:
                influenced.add(node.out_tid)
                live.append(i)
                break

    ctx = recording(tape) if create_graph else paused()
    with ctx:
        cot = {loss.tid: constant(np.asarray(1.0, dtype=loss.data.dtype))}
        for i in reversed(live):
            node = nodes[i]
            g = cot.get(node.out_tid)
            if g is None:
                continue
            if node.vjp is None:
                continue  # constants have no inputs to propagate into
            need = tuple(tid in influenced for tid in node.input_ids)
            if node.vjp == "nondifferentiable":
                raise UnsupportedOpError(
                    f"gradient requested through non-differentiable op '{node.op}'"
                )
            parts = node.vjp(g, need)
            for tid, part in zip(node.input_ids, parts):
                if part is None:
                    continue
                held = cot.get(tid)
                cot[tid] = part if held is None else add(held, part)
        out = []
        for t in wrt:
            g = cot.get(t.tid)
            out.append(g if g is not None else zeros_like(t))
    return out


def grad(tape, loss):
    """dLoss/dLeaf for every leaf on the tape, as a ParameterVector."""
    names = list(tape.leaves)
    gs = backward(tape, loss, [tape.leaves[n] for n in names], create_graph=False)
    return ParameterVector({n: g.data for n, g in zip(names, gs)})


def grad_through_update(tape, loss, wrt):
    """Exact derivative of `loss` w.r.t. leaves that entered recorded update steps.

    The tape must contain the inner gradient computations as ordinary recorded
    primitives (i.e. they were built with ``backward(..., create_graph=True)``),
    so paths through those gradients are differentiated, not approximated.
    `wrt` is a ParameterVector naming the target leaves.
    """
    missing = [n for n, _ in wrt if n not in tape.leaves]
    if missing:
        raise ContractError(f"wrt names not on tape: {missing}")
    names = [n for n, _ in wrt]
    gs = backward(tape, loss, [tape.leaves[n] for n in names], create_graph=False)
    return ParameterVector({n: g.data for n, g in zip(names, gs)})
