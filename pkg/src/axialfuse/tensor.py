"""Dense tensors with tape-based reverse-mode differentiation.

Every differentiable operation is an :class:`Op` registered in :data:`OPS` by
name. A tensor produced by an op remembers the op name, its inputs and a small
context dict of saved activations. :func:`backward` walks that record in
reverse topological order and looks backward rules up in :data:`OPS` at call
time, so a rule can be swapped (for fault injection) without rebuilding
graphs.

Compute defaults to float32; float64 tensors flow through the same ops and are
what :mod:`axialfuse.gradcheck` uses.
"""
from __future__ import annotations

import contextlib
import math
from typing import Iterable, Sequence

import numpy as np
from scipy.special import erf, expit

from .errors import ContractError, DimensionError, NumericError

DEFAULT_DTYPE = np.float32

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_op", "_inputs", "_ctx", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        # arrays keep a float dtype they already have; anything else is float32
        if dtype is None and (not isinstance(data, (np.ndarray, np.generic)) or arr.dtype not in (np.float32, np.float64)):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data: np.ndarray = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._op: str | None = None
        self._inputs: tuple[Tensor, ...] = ()
        self._ctx: dict = {}

    # -- introspection -----------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        tag = f", op={self._op}" if self._op else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

    def __len__(self) -> int:
        return self.shape[0]

    # -- operator sugar ----------------------------------------------------
    def _lift(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other, dtype=self.dtype))

    def __add__(self, other):
        return add(self, self._lift(other))

    def __radd__(self, other):
        return add(self._lift(other), self)

    def __sub__(self, other):
        return sub(self, self._lift(other))

    def __rsub__(self, other):
        return sub(self._lift(other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, self._lift(other))

    def __rmul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self._lift(other), self)

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, 1.0 / other)
        raise TypeError("only division by a Python scalar is supported")

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return reduce(self, "sum", axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce(self, "mean", axis, keepdims)

    def max(self, axis=None, keepdims=False):
        return reduce(self, "max", axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def permute(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return permute(self, axes)

    def swapaxes(self, a: int, b: int):
        axes = list(range(self.ndim))
        axes[a], axes[b] = axes[b], axes[a]
        return permute(self, axes)

    def tanh(self):
        return tanh(self)

    def sigmoid(self):
        return sigmoid(self)

    def relu(self):
        return relu(self)

    def gelu(self):
        return gelu(self)


class Parameter(Tensor):
    """A named leaf tensor owned by a module. Frozen parameters take no gradient."""

    __slots__ = ("name", "frozen")

    def __init__(self, data, name: str = "", frozen: bool = False, dtype=None):
        super().__init__(data, requires_grad=not frozen, dtype=dtype)
        self.name = name
        self.frozen = frozen

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape}, frozen={self.frozen})"


# ---------------------------------------------------------------------------
# op registry
# ---------------------------------------------------------------------------


class Op:
    """A forward/backward pair.

    ``forward(ctx, *arrays, **kw)`` returns the output array and may stash
    anything backward needs in ``ctx``. ``backward(ctx, grad)`` returns one
    gradient array (or None) per input, already reduced to the input's shape.
    """

    name = ""

    def forward(self, ctx: dict, *xs: np.ndarray, **kw) -> np.ndarray:
        raise NotImplementedError

    def backward(self, ctx: dict, g: np.ndarray) -> tuple:
        raise NotImplementedError


OPS: dict[str, Op] = {}


def register(cls):
    OPS[cls.name] = cls()
    return cls


def _apply(name: str, *inputs: Tensor, **kw) -> Tensor:
    op = OPS[name]
    ctx: dict = {}
    # overflow is reported as NumericError below, not as a numpy warning
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        out = op.forward(ctx, *(t.data for t in inputs), **kw)
    if not np.all(np.isfinite(out)):
        raise NumericError(name)
    t = Tensor(out)
    if _GRAD_ENABLED and any(i.requires_grad for i in inputs):
        t.requires_grad = True
        t._op = name
        t._inputs = inputs
        t._ctx = ctx
    return t


def unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcast_shape(a: np.ndarray, b: np.ndarray, name: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{name}: shapes {a.shape} and {b.shape} are not broadcast-compatible") from None


# -- elementwise binary -------------------------------------------------------


@register
class Add(Op):
    name = "add"

    def forward(self, ctx, a, b):
        _broadcast_shape(a, b, self.name)
        ctx["shapes"] = (a.shape, b.shape)
        return a + b

    def backward(self, ctx, g):
        sa, sb = ctx["shapes"]
        return unbroadcast(g, sa), unbroadcast(g, sb)


@register
class Sub(Op):
    name = "sub"

    def forward(self, ctx, a, b):
        _broadcast_shape(a, b, self.name)
        ctx["shapes"] = (a.shape, b.shape)
        return a - b

    def backward(self, ctx, g):
        sa, sb = ctx["shapes"]
        return unbroadcast(g, sa), unbroadcast(-g, sb)


@register
class Mul(Op):
    name = "mul"

    def forward(self, ctx, a, b):
        _broadcast_shape(a, b, self.name)
        ctx["a"], ctx["b"] = a, b
        return a * b

    def backward(self, ctx, g):
        a, b = ctx["a"], ctx["b"]
        return unbroadcast(g * b, a.shape), unbroadcast(g * a, b.shape)


@register
class Scale(Op):
    name = "scale"

    def forward(self, ctx, x, factor=1.0):
        ctx["factor"] = factor
        return x * factor

    def backward(self, ctx, g):
        return (g * ctx["factor"],)


# -- elementwise unary --------------------------------------------------------


@register
class Tanh(Op):
    name = "tanh"

    def forward(self, ctx, x):
        y = np.tanh(x)
        ctx["y"] = y
        return y

    def backward(self, ctx, g):
        y = ctx["y"]
        return (g * (1 - y * y),)


@register
class Sigmoid(Op):
    name = "sigmoid"

    def forward(self, ctx, x):
        y = expit(x)
        ctx["y"] = y
        return y

    def backward(self, ctx, g):
        y = ctx["y"]
        return (g * y * (1 - y),)


@register
class Relu(Op):
    name = "relu"

    def forward(self, ctx, x):
        ctx["mask"] = x > 0
        return np.where(ctx["mask"], x, 0).astype(x.dtype)

    def backward(self, ctx, g):
        return (np.where(ctx["mask"], g, 0).astype(g.dtype),)


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


@register
class Gelu(Op):
    """Exact GELU, x * Phi(x), with Phi the standard normal CDF."""

    name = "gelu"

    def forward(self, ctx, x):
        cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
        ctx["x"], ctx["cdf"] = x, cdf
        return (x * cdf).astype(x.dtype)

    def backward(self, ctx, g):
        x, cdf = ctx["x"], ctx["cdf"]
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
        return ((g * (cdf + x * pdf)).astype(g.dtype),)


# -- linear algebra -----------------------------------------------------------


@register
class MatMul(Op):
    name = "matmul"

    def forward(self, ctx, a, b):
        if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
            raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
        try:
            np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
        except ValueError:
            raise DimensionError(f"matmul: batch extents of {a.shape} and {b.shape} do not broadcast") from None
        ctx["a"], ctx["b"] = a, b
        return np.matmul(a, b)

    def backward(self, ctx, g):
        a, b = ctx["a"], ctx["b"]
        ga = np.matmul(g, np.swapaxes(b, -1, -2))
        gb = np.matmul(np.swapaxes(a, -1, -2), g)
        return unbroadcast(ga, a.shape), unbroadcast(gb, b.shape)


@register
class Softmax(Op):
    name = "softmax"

    def forward(self, ctx, x, axis=-1):
        z = x - x.max(axis=axis, keepdims=True)
        e = np.exp(z)
        y = e / e.sum(axis=axis, keepdims=True)
        ctx["y"], ctx["axis"] = y, axis
        return y

    def backward(self, ctx, g):
        y, axis = ctx["y"], ctx["axis"]
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)


@register
class LayerNormOp(Op):
    """Normalise over the last axis, then apply a per-feature affine map."""

    name = "layernorm"

    def forward(self, ctx, x, gamma, beta, eps=1e-5):
        n = x.shape[-1]
        if gamma.shape != (n,) or beta.shape != (n,):
            raise DimensionError(
                f"layernorm: gamma {gamma.shape} / beta {beta.shape} must match last extent {n}"
            )
        mu = x.mean(axis=-1, keepdims=True)
        xc = x - mu
        var = (xc * xc).mean(axis=-1, keepdims=True)
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / np.sqrt(var + eps)
            xhat = xc * inv
        ctx["xhat"], ctx["inv"], ctx["gamma"] = xhat, inv, gamma
        return xhat * gamma + beta

    def backward(self, ctx, g):
        xhat, inv, gamma = ctx["xhat"], ctx["inv"], ctx["gamma"]
        lead = tuple(range(g.ndim - 1))
        dgamma = (g * xhat).sum(axis=lead)
        dbeta = g.sum(axis=lead)
        dxhat = g * gamma
        dx = inv * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        return dx, dgamma, dbeta


# -- reductions ----------------------------------------------------------------


def _norm_axis(axis, ndim: int):
    if axis is None:
        return tuple(range(ndim))
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    out = []
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise DimensionError(f"axis {ax} out of range for {ndim}-d tensor")
        out.append(ax % ndim)
    return tuple(sorted(out))


@register
class Reduce(Op):
    """sum / mean / max over one or more axes.

    max routes the whole gradient to the first maximal element along the axis.
    """

    name = "reduce"

    def forward(self, ctx, x, kind="sum", axis=None, keepdims=False):
        axes = _norm_axis(axis, x.ndim)
        ctx.update(kind=kind, axes=axes, shape=x.shape, keepdims=keepdims)
        if kind == "sum":
            return x.sum(axis=axes, keepdims=keepdims)
        if kind == "mean":
            return x.mean(axis=axes, keepdims=keepdims)
        if kind == "max":
            # Collapse the reduced axes to one trailing axis so argmax
            # applies a single first-index tie-break.
            keep = [i for i in range(x.ndim) if i not in axes]
            moved = np.transpose(x, keep + list(axes))
            flat = moved.reshape(moved.shape[: len(keep)] + (-1,))
            idx = flat.argmax(axis=-1)
            ctx["idx"], ctx["keep"], ctx["moved_shape"] = idx, keep, moved.shape
            out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
            if keepdims:
                out = out.reshape([1 if i in axes else n for i, n in enumerate(x.shape)])
            return out
        raise ContractError(f"unknown reduction {kind!r}")

    def backward(self, ctx, g):
        kind, axes, shape = ctx["kind"], ctx["axes"], ctx["shape"]
        kept_shape = [1 if i in axes else n for i, n in enumerate(shape)]
        if kind in ("sum", "mean"):
            gx = np.broadcast_to(g.reshape(kept_shape), shape).copy()
            if kind == "mean":
                count = 1
                for ax in axes:
                    count *= shape[ax]
                gx = gx * (1.0 / count)
            return (gx.astype(g.dtype),)
        idx, keep, moved_shape = ctx["idx"], ctx["keep"], ctx["moved_shape"]
        lead = moved_shape[: len(keep)]
        flat = np.zeros(lead + (int(np.prod(moved_shape[len(keep):])),), dtype=g.dtype)
        np.put_along_axis(flat, idx[..., None], g.reshape(lead)[..., None], axis=-1)
        moved = flat.reshape(moved_shape)
        inv = np.argsort(keep + list(axes))
        return (np.transpose(moved, inv),)


# -- reindexing ----------------------------------------------------------------


@register
class Reshape(Op):
    name = "reshape"

    def forward(self, ctx, x, shape=()):
        shape = tuple(int(s) for s in shape)
        known = [s for s in shape if s != -1]
        if shape.count(-1) > 1 or any(s < -1 for s in shape):
            raise DimensionError(f"reshape: invalid target shape {shape}")
        if -1 not in shape and int(np.prod(shape)) != x.size:
            raise DimensionError(f"reshape: cannot reshape {x.shape} ({x.size} elements) to {shape}")
        if -1 in shape and (int(np.prod(known)) == 0 or x.size % int(np.prod(known))):
            raise DimensionError(f"reshape: cannot reshape {x.shape} to {shape}")
        ctx["shape"] = x.shape
        return x.reshape(shape)

    def backward(self, ctx, g):
        return (g.reshape(ctx["shape"]),)


@register
class Permute(Op):
    name = "permute"

    def forward(self, ctx, x, axes=()):
        axes = tuple(int(a) for a in axes)
        if sorted(axes) != list(range(x.ndim)):
            raise DimensionError(f"permute: {axes} is not a permutation of {x.ndim} axes")
        ctx["axes"] = axes
        return np.transpose(x, axes)

    def backward(self, ctx, g):
        return (np.transpose(g, np.argsort(ctx["axes"])),)


@register
class Concat(Op):
    name = "concat"

    def forward(self, ctx, *xs, axis=0):
        ref = xs[0]
        ax = axis % ref.ndim
        for x in xs[1:]:
            if x.ndim != ref.ndim or any(
                x.shape[i] != ref.shape[i] for i in range(ref.ndim) if i != ax
            ):
                raise DimensionError(
                    f"concat: shapes {[t.shape for t in xs]} disagree off axis {axis}"
                )
        ctx["axis"] = ax
        ctx["bounds"] = np.cumsum([x.shape[ax] for x in xs])[:-1]
        return np.concatenate(xs, axis=ax)

    def backward(self, ctx, g):
        return tuple(np.split(g, ctx["bounds"], axis=ctx["axis"]))


@register
class GetItem(Op):
    """Basic indexing only (ints and slices)."""

    name = "getitem"

    def forward(self, ctx, x, index=()):
        ctx["index"], ctx["shape"] = index, x.shape
        return np.array(x[index])

    def backward(self, ctx, g):
        gx = np.zeros(ctx["shape"], dtype=g.dtype)
        gx[ctx["index"]] = g
        return (gx,)


# -- fused losses ----------------------------------------------------------------


@register
class CrossEntropy(Op):
    """Mean softmax cross-entropy over rows of ``logits`` (B, C)."""

    name = "cross_entropy"

    def forward(self, ctx, logits, labels=None):
        labels = np.asarray(labels)
        m = logits.max(axis=-1, keepdims=True)
        z = logits - m
        lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
        logp = z - lse
        rows = np.arange(logits.shape[0])
        ctx["p"], ctx["labels"] = np.exp(logp), labels
        return np.asarray(-logp[rows, labels].mean(), dtype=logits.dtype)

    def backward(self, ctx, g):
        p, labels = ctx["p"], ctx["labels"]
        d = p.copy()
        d[np.arange(p.shape[0]), labels] -= 1
        return ((d * (g / p.shape[0])).astype(p.dtype),)


@register
class BCEWithLogits(Op):
    """Mean binary cross-entropy on raw logits ``z`` (B,) with targets in {0,1}."""

    name = "bce_with_logits"

    def forward(self, ctx, z, targets=None):
        y = np.asarray(targets, dtype=z.dtype)
        ctx["z"], ctx["y"] = z, y
        loss = np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))
        return np.asarray(loss.mean(), dtype=z.dtype)

    def backward(self, ctx, g):
        z, y = ctx["z"], ctx["y"]
        return (((expit(z) - y) * (g / z.size)).astype(z.dtype),)


# ---------------------------------------------------------------------------
# functional surface
# ---------------------------------------------------------------------------


def as_tensor(x, dtype=None) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x, dtype=dtype)


def add(a: Tensor, b: Tensor) -> Tensor:
    return _apply("add", a, b)


def sub(a: Tensor, b: Tensor) -> Tensor:
    return _apply("sub", a, b)


def mul(a: Tensor, b: Tensor) -> Tensor:
    return _apply("mul", a, b)


def scale(x: Tensor, factor: float) -> Tensor:
    return _apply("scale", x, factor=float(factor))


def tanh(x: Tensor) -> Tensor:
    return _apply("tanh", x)


def sigmoid(x: Tensor) -> Tensor:
    return _apply("sigmoid", x)


def relu(x: Tensor) -> Tensor:
    return _apply("relu", x)


def gelu(x: Tensor) -> Tensor:
    return _apply("gelu", x)


def elementwise(kind: str, x: Tensor, other=None) -> Tensor:
    """Dispatch by name: add, sub, mul, tanh, sigmoid, gelu, relu, scale."""
    if kind in ("add", "sub", "mul"):
        return _apply(kind, x, as_tensor(other, dtype=x.dtype))
    if kind == "scale":
        return scale(x, other)
    if kind in ("tanh", "sigmoid", "gelu", "relu"):
        return _apply(kind, x)
    raise ContractError(f"unknown elementwise kind {kind!r}")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    return _apply("matmul", a, b)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    _norm_axis(axis, x.ndim)
    return _apply("softmax", x, axis=axis)


def layernorm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    return _apply("layernorm", x, gamma, beta, eps=eps)


def reduce(x: Tensor, kind: str, axis=None, keepdims: bool = False) -> Tensor:
    return _apply("reduce", x, kind=kind, axis=axis, keepdims=keepdims)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    return _apply("reshape", x, shape=tuple(shape))


def permute(x: Tensor, axes: Sequence[int]) -> Tensor:
    return _apply("permute", x, axes=tuple(axes))


def concat(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not xs:
        raise DimensionError("concat: no inputs")
    return _apply("concat", *xs, axis=axis)


def getitem(x: Tensor, index) -> Tensor:
    if not isinstance(index, tuple):
        index = (index,)
    for i in index:
        if not isinstance(i, (int, slice, type(Ellipsis))) or isinstance(i, bool):
            raise ContractError("only int / slice / Ellipsis indexing is differentiable")
    return _apply("getitem", x, index=index)


def cross_entropy(logits: Tensor, labels) -> Tensor:
    return _apply("cross_entropy", logits, labels=np.asarray(labels, dtype=np.int64))


def bce_with_logits(z: Tensor, targets) -> Tensor:
    return _apply("bce_with_logits", z, targets=np.asarray(targets))


# ---------------------------------------------------------------------------
# tape + backward
# ---------------------------------------------------------------------------


class Tape:
    """Topologically ordered op records reachable from one output.

    ``nodes`` lists op outputs with producers before consumers; backward
    visits them in exactly the reverse order.
    """

    def __init__(self, nodes: list[Tensor], leaves: list[Tensor]):
        self.nodes = nodes
        self.leaves = leaves

    @classmethod
    def record(cls, root: Tensor) -> "Tape":
        order: list[Tensor] = []
        leaves: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            t, expanded = stack.pop()
            if expanded:
                (order if t._op is not None else leaves).append(t)
                continue
            if id(t) in seen or not t.requires_grad:
                continue
            seen.add(id(t))
            stack.append((t, True))
            for i in reversed(t._inputs):
                if id(i) not in seen and i.requires_grad:
                    stack.append((i, False))
        return cls(order, leaves)


def backward(loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Accumulate d(loss)/d(leaf) into every reachable leaf's ``.grad``.

    Returns a map from each leaf that requires grad to the gradient computed
    in this call. Frozen parameters never require grad, so they are never
    reached.
    """
    if loss.size != 1 or loss.ndim > 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return {}
    tape = Tape.record(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        in_grads = OPS[node._op].backward(node._ctx, g)
        for inp, gi in zip(node._inputs, in_grads):
            if gi is None or not inp.requires_grad:
                continue
            if not np.all(np.isfinite(gi)):
                raise NumericError(node._op, f"non-finite gradient in backward of op '{node._op}'")
            prev = grads.get(id(inp))
            grads[id(inp)] = gi if prev is None else prev + gi
    out: dict[Tensor, np.ndarray] = {}
    for leaf in tape.leaves:
        g = grads.get(id(leaf))
        if g is None:
            g = np.zeros_like(leaf.data)
        g = g.astype(leaf.dtype, copy=False)
        leaf.grad = g if leaf.grad is None else leaf.grad + g
        out[leaf] = g
    return out


def zeros(shape, dtype=DEFAULT_DTYPE) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype))


def stack_const(arrays: Iterable[np.ndarray], dtype=DEFAULT_DTYPE) -> Tensor:
    return Tensor(np.stack(list(arrays)).astype(dtype, copy=False))
