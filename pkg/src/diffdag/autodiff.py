"""Minimal reverse-mode autodiff over dense float64 arrays.

A :class:`Tape` records every operation applied to :class:`Tensor` objects
while it is active; ``tape.backward(loss)`` then walks the record in reverse
and accumulates ``d loss / d leaf`` into each leaf's ``.grad``. The op
vocabulary is fixed (no general broadcasting): operands are scalars (0-d),
vectors (1-d) or matrices (2-d), and every adjoint rule is registered
individually so it can be finite-difference checked on its own.

Gradients accumulate across backward calls; callers zero them explicitly
between optimizer steps via :meth:`Tensor.zero_grad`.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "DimensionError",
    "Tensor",
    "Tape",
    "forward_op",
    "straight_through",
    "OP_KINDS",
]


class DimensionError(ValueError):
    """Operands have incompatible shapes for the requested op."""


# Stack of active tapes; ops record onto the innermost one.
_TAPES: list["Tape"] = []


def _active_tape() -> "Tape | None":
    return _TAPES[-1] if _TAPES else None


class Tensor:
    """Dense float64 array plus gradient bookkeeping.

    Tensors without ``requires_grad`` are immutable constants as far as the
    engine is concerned and may be shared freely between tapes.
    """

    __slots__ = ("value", "requires_grad", "grad")

    def __init__(self, value, requires_grad: bool = False):
        self.value = np.asarray(value, dtype=np.float64)
        if self.value.ndim > 2:
            raise DimensionError(f"tensors are at most 2-d, got shape {self.value.shape}")
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad = self.grad + g

    # -- operator sugar -------------------------------------------------
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))

    def __neg__(self):
        return mul(self, Tensor(-1.0))

    @property
    def T(self):
        return transpose(self)

    def __repr__(self):
        return f"Tensor(shape={self.value.shape}, requires_grad={self.requires_grad})"


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class _Node:
    __slots__ = ("kind", "inputs", "output", "backward_fn", "saved")

    def __init__(self, kind, inputs, output, backward_fn, saved):
        self.kind = kind
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn
        self.saved = saved


class Tape:
    """Ordered record of ops; creation order is already topological."""

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _TAPES.pop()
        assert popped is self
        return False

    def backward(self, loss: Tensor) -> None:
        """Accumulate d loss / d leaf into every requires_grad tensor."""
        if loss.value.size != 1:
            raise ValueError(f"backward: loss must be scalar, got shape {loss.value.shape}")
        # Per-call gradient workspace: stale .grad from earlier steps must not
        # leak into this propagation, only into the final leaf accumulation.
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.value)}
        tensors: dict[int, Tensor] = {id(loss): loss}
        for node in reversed(self.nodes):
            g = grads.get(id(node.output))
            if g is None:
                continue
            for inp, gi in zip(node.inputs, node.backward_fn(g, node)):
                if gi is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
                    tensors[key] = inp
        for key, t in tensors.items():
            if t.requires_grad:
                t.accumulate_grad(grads[key])


# ---------------------------------------------------------------------------
# op registry
# ---------------------------------------------------------------------------


def _record(kind, inputs, value, backward_fn, saved=None) -> Tensor:
    out = Tensor(value)
    tape = _active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.nodes.append(_Node(kind, tuple(inputs), out, backward_fn, saved))
    return out


def _need_same_shape(kind, a, b):
    # Scalars may pair with anything (matrix +/-/* scalar); otherwise exact match.
    if a.value.shape != b.value.shape and a.value.size != 1 and b.value.size != 1:
        raise DimensionError(f"{kind}: shapes {a.value.shape} and {b.value.shape} differ")


def _reduce_like(g, operand_value):
    # Adjoint of the implicit scalar spread in scalar-matrix elementwise ops.
    if operand_value.size == 1:
        return np.sum(g).reshape(operand_value.shape)
    return g


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.value.shape[1] != b.value.shape[0]:
        raise DimensionError(f"matmul: shapes {a.value.shape} and {b.value.shape} incompatible")

    def bw(g, node):
        av, bv = node.saved
        return g @ bv.T, av.T @ g

    return _record("matmul", (a, b), a.value @ b.value, bw, (a.value, b.value))


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _need_same_shape("add", a, b)

    def bw(g, node):
        av, bv = node.saved
        return _reduce_like(g, av), _reduce_like(g, bv)

    return _record("add", (a, b), a.value + b.value, bw, (a.value, b.value))


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _need_same_shape("sub", a, b)

    def bw(g, node):
        av, bv = node.saved
        return _reduce_like(g, av), _reduce_like(-g, bv)

    return _record("sub", (a, b), a.value - b.value, bw, (a.value, b.value))


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _need_same_shape("elementwise-mul", a, b)

    def bw(g, node):
        av, bv = node.saved
        return _reduce_like(g * bv, av), _reduce_like(g * av, bv)

    return _record("elementwise-mul", (a, b), a.value * b.value, bw, (a.value, b.value))


def sigmoid(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    v = x.value
    # exp(-|v|) once keeps the computation overflow-free in both tails
    e = np.exp(-np.abs(v))
    s = np.where(v >= 0, 1.0, e) / (1.0 + e)

    def bw(g, node):
        sv = node.saved
        return (g * sv * (1.0 - sv),)

    return _record("sigmoid", (x,), s, bw, s)


def softmax_rows(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    if x.value.ndim != 2:
        raise DimensionError(f"softmax-rows: need a matrix, got shape {x.value.shape}")
    shifted = x.value - x.value.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=1, keepdims=True)

    def bw(g, node):
        sv = node.saved
        return (sv * (g - (g * sv).sum(axis=1, keepdims=True)),)

    return _record("softmax-rows", (x,), s, bw, s)


def log(x: Tensor) -> Tensor:
    x = _as_tensor(x)

    def bw(g, node):
        return (g / node.saved,)

    return _record("log", (x,), np.log(x.value), bw, x.value)


def exp(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    e = np.exp(x.value)

    def bw(g, node):
        return (g * node.saved,)

    return _record("exp", (x,), e, bw, e)


def leaky_relu(x: Tensor, alpha: float = 0.01) -> Tensor:
    x = _as_tensor(x)

    def bw(g, node):
        xv, a = node.saved
        return (g * np.where(xv > 0, 1.0, a),)

    return _record("leaky-relu", (x,), np.where(x.value > 0, x.value, alpha * x.value), bw, (x.value, alpha))


def absolute(x: Tensor) -> Tensor:
    x = _as_tensor(x)

    def bw(g, node):
        return (g * np.sign(node.saved),)

    return _record("abs", (x,), np.abs(x.value), bw, x.value)


def tsum(x: Tensor) -> Tensor:
    x = _as_tensor(x)

    def bw(g, node):
        return (np.full(node.saved, float(g)),)

    return _record("sum", (x,), np.sum(x.value), bw, x.value.shape)


def tmean(x: Tensor) -> Tensor:
    x = _as_tensor(x)

    def bw(g, node):
        shape, size = node.saved
        return (np.full(shape, float(g) / size),)

    return _record("mean", (x,), np.mean(x.value), bw, (x.value.shape, x.value.size))


def squared_norm(x: Tensor) -> Tensor:
    x = _as_tensor(x)

    def bw(g, node):
        return (2.0 * float(g) * node.saved,)

    return _record("squared-norm", (x,), np.sum(x.value * x.value), bw, x.value)


def transpose(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    if x.value.ndim != 2:
        raise DimensionError(f"transpose: need a matrix, got shape {x.value.shape}")

    def bw(g, node):
        return (g.T,)

    return _record("transpose", (x,), x.value.T.copy(), bw, None)


def row_normalize(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    if x.value.ndim != 2:
        raise DimensionError(f"row-normalize: need a matrix, got shape {x.value.shape}")
    r = x.value.sum(axis=1, keepdims=True)
    y = x.value / r

    def bw(g, node):
        yv, rv = node.saved
        return ((g - (g * yv).sum(axis=1, keepdims=True)) / rv,)

    return _record("row-normalize", (x,), y, bw, (y, r))


def col_normalize(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    if x.value.ndim != 2:
        raise DimensionError(f"col-normalize: need a matrix, got shape {x.value.shape}")
    c = x.value.sum(axis=0, keepdims=True)
    y = x.value / c

    def bw(g, node):
        yv, cv = node.saved
        return ((g - (g * yv).sum(axis=0, keepdims=True)) / cv,)

    return _record("col-normalize", (x,), y, bw, (y, c))


def logsumexp_rows(x: Tensor) -> Tensor:
    """Row-wise log-sum-exp, (n, m) -> (n, 1); the stable log-space reduction."""
    x = _as_tensor(x)
    if x.value.ndim != 2:
        raise DimensionError(f"logsumexp-rows: need a matrix, got shape {x.value.shape}")
    m = x.value.max(axis=1, keepdims=True)
    lse = m + np.log(np.exp(x.value - m).sum(axis=1, keepdims=True))

    def bw(g, node):
        xv, lv = node.saved
        return (g * np.exp(xv - lv),)

    return _record("logsumexp-rows", (x,), lse, bw, (x.value, lse))


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    if axis not in (0, 1):
        raise DimensionError(f"concat: axis must be 0 or 1, got {axis}")
    for t in tensors:
        if t.value.ndim != 2:
            raise DimensionError(f"concat: need matrices, got shape {t.value.shape}")
    sizes = [t.value.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bw(g, node):
        offs, ax = node.saved
        if ax == 0:
            return tuple(g[offs[i] : offs[i + 1], :] for i in range(len(offs) - 1))
        return tuple(g[:, offs[i] : offs[i + 1]] for i in range(len(offs) - 1))

    return _record("concat", tuple(tensors), np.concatenate([t.value for t in tensors], axis=axis), bw, (offsets, axis))


def slice2d(x: Tensor, r0: int, r1: int, c0: int, c1: int) -> Tensor:
    x = _as_tensor(x)
    if x.value.ndim != 2:
        raise DimensionError(f"slice: need a matrix, got shape {x.value.shape}")
    n, m = x.value.shape
    if not (0 <= r0 <= r1 <= n and 0 <= c0 <= c1 <= m):
        raise DimensionError(f"slice: window [{r0}:{r1}, {c0}:{c1}] outside shape {x.value.shape}")

    def bw(g, node):
        shape, box = node.saved
        full = np.zeros(shape)
        full[box[0] : box[1], box[2] : box[3]] = g
        return (full,)

    return _record("slice", (x,), x.value[r0:r1, c0:c1].copy(), bw, (x.value.shape, (r0, r1, c0, c1)))


def straight_through(hard, soft: Tensor) -> Tensor:
    """Forward the detached hard value, route gradients to ``soft`` unchanged."""
    hv = hard.value if isinstance(hard, Tensor) else np.asarray(hard, dtype=np.float64)
    if hv.shape != soft.value.shape:
        raise DimensionError(f"straight-through: shapes {hv.shape} and {soft.value.shape} differ")

    def bw(g, node):
        return (g,)

    return _record("straight-through", (soft,), hv, bw, None)


_DISPATCH = {
    "matmul": matmul,
    "add": add,
    "sub": sub,
    "elementwise-mul": mul,
    "sigmoid": sigmoid,
    "softmax-rows": softmax_rows,
    "log": log,
    "exp": exp,
    "leaky-relu": leaky_relu,
    "abs": absolute,
    "sum": tsum,
    "mean": tmean,
    "squared-norm": squared_norm,
    "transpose": transpose,
    "row-normalize": row_normalize,
    "col-normalize": col_normalize,
    "logsumexp-rows": logsumexp_rows,
    "concat": concat,
    "slice": slice2d,
}

OP_KINDS = tuple(_DISPATCH)


def forward_op(kind: str, *inputs, **attrs) -> Tensor:
    """Apply an op by identifier; records on the active tape."""
    try:
        fn = _DISPATCH[kind]
    except KeyError:
        raise ValueError(f"unknown op kind {kind!r}; valid kinds: {sorted(_DISPATCH)}") from None
    if kind == "concat":
        return fn(list(inputs), **attrs)
    return fn(*inputs, **attrs)
