"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

Every trainable computation in the system (pooling, gating, similarity,
loss) is expressed through the fixed op vocabulary below.  Arrays are
row-major numpy float64; an array created with a tape is a tracked leaf,
arrays produced by ops inherit the tape of their inputs.  No broadcasting
except bias-row addition, no fusion: explicitness over speed.
"""

from __future__ import annotations

import warnings

import numpy as np

EPS_GUARD = 1e-12
ZERO_NORM_TOL = 1e-8


class ShapeMismatch(ValueError):
    """Operand shapes do not conform to the op's shape rule."""


class NumericError(ValueError):
    """Numerically invalid operand (log/div guard, non-finite input)."""


class Tape:
    """Ordered record of executed ops; replayed in reverse by backward()."""

    def __init__(self):
        self.nodes = []   # (out, inputs, backward_fn)
        self.leaves = []

    def clear_grads(self):
        for leaf in self.leaves:
            leaf.grad[...] = 0.0


class DiffArray:
    """Dense float64 array, optionally participating in gradient computation.

    Constructing with a tape registers the array as a tracked leaf.
    """

    def __init__(self, values, tape: Tape | None = None):
        self.values = np.ascontiguousarray(values, dtype=np.float64)
        self.tape = tape
        self.grad = None
        if tape is not None:
            self.grad = np.zeros_like(self.values)
            tape.leaves.append(self)

    @classmethod
    def _internal(cls, values, tape):
        out = cls.__new__(cls)
        out.values = np.ascontiguousarray(values, dtype=np.float64)
        out.tape = tape
        out.grad = np.zeros_like(out.values) if tape is not None else None
        return out

    @property
    def shape(self):
        return self.values.shape

    @property
    def tracked(self):
        return self.tape is not None

    def __repr__(self):
        return f"DiffArray(shape={self.values.shape}, tracked={self.tracked})"


def _result(values, inputs, backward_fn):
    """Create the op output and record a node if any input is tracked."""
    tape = None
    for x in inputs:
        if x.tape is not None:
            tape = x.tape
            break
    out = DiffArray._internal(values, tape)
    if tape is not None:
        tape.nodes.append((out, inputs, backward_fn))
    return out


def backward(root: DiffArray):
    """Accumulate d(root)/d(leaf) into every tracked leaf's grad buffer.

    Root must be a tracked scalar (shape-product 1).  Repeated calls
    without clearing grads accumulate.  Returns a map leaf -> grad.
    """
    if not root.tracked:
        raise ValueError("backward root is not tracked")
    if root.values.size != 1:
        raise ShapeMismatch(f"backward root must be scalar, got shape {root.values.shape}")
    adjoint = {id(root): np.ones_like(root.values)}
    touched = {id(root): root}
    for out, inputs, backward_fn in reversed(root.tape.nodes):
        g = adjoint.get(id(out))
        if g is None:
            continue
        for x, gx in zip(inputs, backward_fn(g)):
            if gx is None or x.tape is None:
                continue
            if id(x) in adjoint:
                adjoint[id(x)] += gx
            else:
                adjoint[id(x)] = np.array(gx)  # own the buffer, gx may be a view
                touched[id(x)] = x
    for key, x in touched.items():
        if x.grad is not None:
            x.grad += adjoint[key]
    return {leaf: leaf.grad for leaf in root.tape.leaves}


# ---------------------------------------------------------------------------
# ops

def _check_same_shape(kind, a, b):
    if a.values.shape != b.values.shape:
        raise ShapeMismatch(f"{kind}: shapes {a.values.shape} vs {b.values.shape}")


def matmul(a: DiffArray, b: DiffArray) -> DiffArray:
    if a.values.ndim != 2 or b.values.ndim != 2 or a.values.shape[1] != b.values.shape[0]:
        raise ShapeMismatch(f"matmul: shapes {a.values.shape} vs {b.values.shape}")
    av, bv = a.values, b.values
    return _result(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))


def add(a: DiffArray, b: DiffArray) -> DiffArray:
    # only bias-row broadcasting: (n, m) + (1, m)
    if a.values.shape == b.values.shape:
        return _result(a.values + b.values, (a, b), lambda g: (g, g))
    if (a.values.ndim == 2 and b.values.ndim == 2
            and b.values.shape == (1, a.values.shape[1])):
        return _result(a.values + b.values, (a, b),
                       lambda g: (g, g.sum(axis=0, keepdims=True)))
    raise ShapeMismatch(f"add: shapes {a.values.shape} vs {b.values.shape}")


def sub(a: DiffArray, b: DiffArray) -> DiffArray:
    _check_same_shape("sub", a, b)
    return _result(a.values - b.values, (a, b), lambda g: (g, -g))


def mul(a: DiffArray, b: DiffArray) -> DiffArray:
    _check_same_shape("mul", a, b)
    av, bv = a.values, b.values
    return _result(av * bv, (a, b), lambda g: (g * bv, g * av))


def div(a: DiffArray, b: DiffArray) -> DiffArray:
    _check_same_shape("div", a, b)
    if np.any(np.abs(b.values) <= EPS_GUARD):
        raise NumericError("div: denominator within 1e-12 of zero")
    av, bv = a.values, b.values
    return _result(av / bv, (a, b), lambda g: (g / bv, -g * av / (bv * bv)))


def exp(a: DiffArray) -> DiffArray:
    out_v = np.exp(a.values)
    return _result(out_v, (a,), lambda g: (g * out_v,))


def log(a: DiffArray) -> DiffArray:
    if np.any(a.values <= EPS_GUARD):
        raise NumericError("log: operand not positive beyond 1e-12")
    av = a.values
    return _result(np.log(av), (a,), lambda g: (g / av,))


def tanh(a: DiffArray) -> DiffArray:
    out_v = np.tanh(a.values)
    return _result(out_v, (a,), lambda g: (g * (1.0 - out_v * out_v),))


def sigmoid(a: DiffArray) -> DiffArray:
    out_v = 1.0 / (1.0 + np.exp(-a.values))
    return _result(out_v, (a,), lambda g: (g * out_v * (1.0 - out_v),))


def relu_hinge(a: DiffArray) -> DiffArray:
    av = a.values
    return _result(np.maximum(av, 0.0), (a,), lambda g: (g * (av > 0.0),))


def row_softmax(a: DiffArray) -> DiffArray:
    if a.values.ndim != 2:
        raise ShapeMismatch(f"row-softmax: need 2-d input, got {a.values.shape}")
    shifted = a.values - a.values.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=1, keepdims=True)

    def bwd(g):
        return (s * (g - (g * s).sum(axis=1, keepdims=True)),)
    return _result(s, (a,), bwd)


def _check_mask(kind, a, mask):
    if a.values.ndim != 2:
        raise ShapeMismatch(f"{kind}: need 2-d input, got {a.values.shape}")
    mask = np.asarray(mask, dtype=np.float64).reshape(-1)
    if mask.shape[0] != a.values.shape[0]:
        raise ShapeMismatch(f"{kind}: mask length {mask.shape[0]} vs {a.values.shape[0]} rows")
    return mask


def masked_sum(a: DiffArray, mask) -> DiffArray:
    """Sum over rows where mask is 1; output shape (1, cols)."""
    mask = _check_mask("masked-sum", a, mask)
    col = mask[:, None]
    return _result((a.values * col).sum(axis=0, keepdims=True), (a,),
                   lambda g: (col * g,))


def masked_mean(a: DiffArray, mask) -> DiffArray:
    """Mean over rows where mask is 1, divided by the true row count."""
    mask = _check_mask("masked-mean", a, mask)
    n = mask.sum()
    if n < 1:
        raise ValueError("masked-mean: empty mask")
    col = mask[:, None]
    return _result((a.values * col).sum(axis=0, keepdims=True) / n, (a,),
                   lambda g: (col * g / n,))


def masked_max(a: DiffArray, mask) -> DiffArray:
    """Per-column max over unmasked rows; padded rows get a -inf sentinel."""
    mask = _check_mask("masked-max", a, mask)
    if mask.sum() < 1:
        raise ValueError("masked-max: empty mask")
    sent = np.where(mask[:, None] > 0, a.values, -np.inf)
    idx = sent.argmax(axis=0)
    out_v = sent[idx, np.arange(a.values.shape[1])]

    def bwd(g):
        ga = np.zeros_like(a.values)
        ga[idx, np.arange(a.values.shape[1])] = g[0]
        return (ga,)
    return _result(out_v[None, :], (a,), bwd)


def reshape(a: DiffArray, shape) -> DiffArray:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != a.values.size:
        raise ShapeMismatch(f"reshape: {a.values.shape} to {shape}")
    old = a.values.shape
    return _result(a.values.reshape(shape), (a,), lambda g: (g.reshape(old),))


def concat(arrays, axis: int = 0) -> DiffArray:
    arrays = list(arrays)
    if not arrays:
        raise ValueError("concat: no inputs")
    nd = arrays[0].values.ndim
    for x in arrays:
        if x.values.ndim != nd:
            raise ShapeMismatch("concat: rank mismatch")
    sizes = [x.values.shape[axis] for x in arrays]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=axis))
    return _result(np.concatenate([x.values for x in arrays], axis=axis), tuple(arrays), bwd)


def transpose(a: DiffArray) -> DiffArray:
    if a.values.ndim != 2:
        raise ShapeMismatch(f"transpose: need 2-d input, got {a.values.shape}")
    return _result(a.values.T, (a,), lambda g: (g.T,))


def scalar_scale(a: DiffArray, alpha: float) -> DiffArray:
    alpha = float(alpha)
    return _result(alpha * a.values, (a,), lambda g: (alpha * g,))


def l2_normalize(a: DiffArray) -> DiffArray:
    """Normalize to unit Euclidean norm; row-wise on 2-d input.

    Norm is guarded by eps=1e-12; rows with norm below 1e-8 map to zero
    (reported as a warning) and receive zero gradient.
    """
    v = a.values if a.values.ndim == 2 else a.values[None, :]
    squeeze = a.values.ndim == 1
    norms = np.sqrt((v * v).sum(axis=1, keepdims=True))
    dead = norms[:, 0] < ZERO_NORM_TOL
    if np.any(dead):
        warnings.warn("l2-normalize: zero-norm vector mapped to zero", RuntimeWarning)
    # exact norm for live rows (keeps unit norm within 1e-12); guard dead rows only
    denom = np.where(dead[:, None], EPS_GUARD + norms, norms)
    out_v = np.where(dead[:, None], 0.0, v / denom)

    def bwd(g):
        g2 = g if not squeeze else g[None, :]
        dots = (g2 * v).sum(axis=1, keepdims=True)
        gv = g2 / denom - v * dots / (denom * denom * denom)
        gv = np.where(dead[:, None], 0.0, gv)
        return (gv if not squeeze else gv[0],)
    return _result(out_v if not squeeze else out_v[0], (a,), bwd)


_DISPATCH = {
    "matmul": lambda inputs, attrs: matmul(*inputs),
    "add": lambda inputs, attrs: add(*inputs),
    "sub": lambda inputs, attrs: sub(*inputs),
    "mul": lambda inputs, attrs: mul(*inputs),
    "div": lambda inputs, attrs: div(*inputs),
    "exp": lambda inputs, attrs: exp(*inputs),
    "log": lambda inputs, attrs: log(*inputs),
    "tanh": lambda inputs, attrs: tanh(*inputs),
    "sigmoid": lambda inputs, attrs: sigmoid(*inputs),
    "relu-hinge": lambda inputs, attrs: relu_hinge(*inputs),
    "row-softmax": lambda inputs, attrs: row_softmax(*inputs),
    "masked-sum": lambda inputs, attrs: masked_sum(inputs[0], attrs["mask"]),
    "masked-mean": lambda inputs, attrs: masked_mean(inputs[0], attrs["mask"]),
    "masked-max": lambda inputs, attrs: masked_max(inputs[0], attrs["mask"]),
    "reshape": lambda inputs, attrs: reshape(inputs[0], attrs["shape"]),
    "concat": lambda inputs, attrs: concat(inputs, attrs.get("axis", 0)),
    "l2-normalize": lambda inputs, attrs: l2_normalize(*inputs),
    "transpose": lambda inputs, attrs: transpose(*inputs),
    "scalar-scale": lambda inputs, attrs: scalar_scale(inputs[0], attrs["alpha"]),
}

OP_KINDS = tuple(_DISPATCH)


def forward_op(kind: str, inputs, attrs=None) -> DiffArray:
    """Uniform entry point over the op vocabulary (used by gradcheck)."""
    if kind not in _DISPATCH:
        raise ValueError(f"unknown op kind {kind!r}")
    return _DISPATCH[kind](tuple(inputs), attrs or {})


def constant(values) -> DiffArray:
    """Untracked array usable as an op input."""
    return DiffArray(values, tape=None)


def total_sum(a: DiffArray) -> DiffArray:
    """Scalar sum of all entries, composed from the op vocabulary."""
    flat = reshape(a, (a.values.size, 1))
    return masked_sum(flat, np.ones(a.values.size))
