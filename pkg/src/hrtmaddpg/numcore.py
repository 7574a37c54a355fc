"""Dense float64 tensors with a reverse-mode differentiation tape and Adam.

A ``Tensor`` wraps a numpy array. Tensors created by ``tensor_new`` are
untracked; ``Tape.watch`` returns a tracked leaf that shares the same data.
Every primitive below records itself on the tape of its tracked inputs, and
``backward`` walks the tape once in reverse.

There is no implicit broadcasting. The only shape-mixing rules are ``scale``
(tensor times python scalar), ``add_bias`` (explicit row-vector bias over the
last axis) and ``matmul`` of a stacked left operand against a single matrix.
"""
from __future__ import annotations

import dataclasses
import math
from typing import Callable, Iterable, Sequence

import numpy as np

DTYPE = np.float64


class ShapeError(ValueError):
    pass


class TapeError(RuntimeError):
    pass


class Tensor:
    __slots__ = ("data", "tape", "node")

    def __init__(self, data, tape: "Tape | None" = None, node: int | None = None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.tape = tape
        self.node = node

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def values(self) -> list[float]:
        return self.data.ravel().tolist()

    @property
    def tracked(self) -> bool:
        return self.tape is not None

    @property
    def tape_id(self) -> int | None:
        return self.node

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        flag = f", node={self.node}" if self.tracked else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def tensor_new(shape: Sequence[int], values: Iterable[float]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if any(s <= 0 for s in shape):
        raise ShapeError(f"extents must be positive, got {shape}")
    vals = np.asarray(list(values), dtype=DTYPE)
    if vals.size != math.prod(shape):
        raise ShapeError(f"shape {shape} needs {math.prod(shape)} values, got {vals.size}")
    return Tensor(vals.reshape(shape))


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Tape:
    """Ordered record of primitive operations for one backward pass."""

    def __init__(self):
        self._ops: list[tuple[int, tuple, Callable]] = []
        self._leaves: dict[int, Tensor] = {}
        self._next = 0
        self.consumed = False

    def __len__(self):
        return len(self._ops)

    def _new_node(self) -> int:
        if self.consumed:
            raise TapeError("tape already consumed by backward()")
        n = self._next
        self._next += 1
        return n

    def watch(self, t: Tensor) -> Tensor:
        leaf = Tensor(t.data, self, self._new_node())
        self._leaves[leaf.node] = leaf
        return leaf

    def record(self, out: np.ndarray, inputs: tuple, vjp: Callable) -> Tensor:
        node = self._new_node()
        self._ops.append((node, tuple(x.node if x is not None and x.tape is self else None for x in inputs), vjp))
        return Tensor(out, self, node)


def _tape_of(*xs) -> Tape | None:
    tape = None
    for x in xs:
        if x.tape is not None:
            if tape is not None and x.tape is not tape:
                raise TapeError("inputs recorded on different tapes")
            tape = x.tape
    return tape


def _emit(out: np.ndarray, inputs: tuple, vjp: Callable) -> Tensor:
    tape = _tape_of(*inputs)
    if tape is None:
        return Tensor(out)
    return tape.record(out, inputs, vjp)


def _same_shape(a: Tensor, b: Tensor, op: str):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


def _swap(x: np.ndarray) -> np.ndarray:
    return np.swapaxes(x, -1, -2)


# ---------------------------------------------------------------- primitives

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes.

    ``a`` may be a vector or carry leading batch axes. ``b`` is either a
    single matrix, in which case it multiplies every stacked matrix of ``a``,
    or has exactly the same leading axes as ``a``.
    """
    if b.data.ndim < 2 or a.data.ndim < 1:
        raise ShapeError("matmul needs a matrix right operand")
    if a.data.ndim == 1:
        return _vecmat(a, b)
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner extents {a.shape} x {b.shape}")
    shared = b.data.ndim == 2
    if not shared and a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul: batch extents {a.shape[:-2]} vs {b.shape[:-2]}")
    A, B = a.data, b.data
    need_a, need_b = a.tape is not None, b.tape is not None
    if shared:
        # one large product instead of a stack of small ones
        k, n = B.shape
        A2 = A.reshape(-1, k)
        out = (A2 @ B).reshape(A.shape[:-1] + (n,))

        def vjp(g):
            g2 = g.reshape(-1, n)
            ga = (g2 @ B.T).reshape(A.shape) if need_a else None
            gb = A2.T @ g2 if need_b else None
            return ga, gb
    else:
        out = A @ B

        def vjp(g):
            ga = g @ _swap(B) if need_a else None
            gb = _swap(A) @ g if need_b else None
            return ga, gb

    return _emit(out, (a, b), vjp)


def _vecmat(a: Tensor, b: Tensor) -> Tensor:
    if b.data.ndim != 2 or a.shape[0] != b.shape[0]:
        raise ShapeError(f"matmul: vector {a.shape} x {b.shape}")
    A, B = a.data, b.data
    return _emit(A @ B, (a, b), lambda g: (B @ g, np.outer(A, g)))


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    return _emit(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    return _emit(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    A, B = a.data, b.data
    return _emit(A * B, (a, b), lambda g: (g * B, g * A))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _emit(a.data * c, (a,), lambda g: (g * c,))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _emit(y, (a,), lambda g: (g * (1.0 - y * y),))


def relu(a: Tensor) -> Tensor:
    y = np.maximum(a.data, 0.0)
    return _emit(y, (a,), lambda g: (g * (y > 0),))


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    return _emit(y, (a,), lambda g: (g * y,))


_EWISE = {
    "add": add, "sub": sub, "mul": mul, "tanh": tanh, "relu": relu, "exp": exp, "scale": scale,
}


def ewise(op: str, *args) -> Tensor:
    try:
        fn = _EWISE[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}") from None
    return fn(*args)


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    if b.data.ndim != 1 or b.shape[0] != x.shape[-1]:
        raise ShapeError(f"bias {b.shape} does not match last extent of {x.shape}")
    n = b.shape[0]
    return _emit(x.data + b.data, (x, b), lambda g: (g, g.reshape(-1, n).sum(axis=0)))


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    nd = x.data.ndim
    if not -nd <= axis < nd:
        raise ShapeError(f"softmax axis {axis} out of range for {x.shape}")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _emit(y, (x,), vjp)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    n = x.shape[-1]
    if gain.shape != (n,) or bias.shape != (n,):
        raise ShapeError(f"layer_norm params {gain.shape}/{bias.shape} for width {n}")
    X = x.data
    xc = X - X.mean(axis=-1, keepdims=True)
    var = np.einsum("...i,...i->...", xc, xc)[..., None] / n
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    G = gain.data
    out = xhat * G
    out += bias.data

    def vjp(g):
        gx_hat = g * G
        proj = np.einsum("...i,...i->...", gx_hat, xhat)[..., None] / n
        gx = gx_hat - gx_hat.mean(axis=-1, keepdims=True)
        gx -= xhat * proj
        gx *= inv
        flat = g.reshape(-1, n)
        return gx, np.einsum("ri,ri->i", flat, xhat.reshape(-1, n)), flat.sum(axis=0)

    return _emit(out, (x, gain, bias), vjp)


def reduce_sum(x: Tensor) -> Tensor:
    shape = x.shape
    return _emit(np.asarray(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, shape).copy(),))


def mean(x: Tensor) -> Tensor:
    shape, n = x.shape, x.data.size
    return _emit(np.asarray(x.data.mean()), (x,), lambda g: (np.full(shape, float(g) / n),))


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    old = x.shape
    return _emit(x.data.reshape(tuple(shape)), (x,), lambda g: (g.reshape(old),))


def transpose(x: Tensor) -> Tensor:
    """Swap the last two axes."""
    return _emit(_swap(x.data), (x,), lambda g: (_swap(g),))


def permute(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _emit(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),))


def concat(xs: Sequence[Tensor], axis: int = -1) -> Tensor:
    xs = list(xs)
    nd = xs[0].data.ndim
    ax = axis % nd
    for x in xs[1:]:
        if x.data.ndim != nd or x.shape[:ax] != xs[0].shape[:ax] or x.shape[ax + 1:] != xs[0].shape[ax + 1:]:
            raise ShapeError(f"concat: incompatible shapes {[t.shape for t in xs]}")
    sizes = [x.shape[ax] for x in xs]
    cuts = np.cumsum(sizes)[:-1]
    out = np.concatenate([x.data for x in xs], axis=ax)
    return _emit(out, tuple(xs), lambda g: tuple(np.split(g, cuts, axis=ax)))


def take(x: Tensor, index: int, axis: int) -> Tensor:
    """Select one position along ``axis`` (the axis is dropped)."""
    shape = x.shape
    ax = axis % len(shape)
    if not -shape[ax] <= index < shape[ax]:
        raise ShapeError(f"index {index} out of range for axis {axis} of {shape}")

    def vjp(g):
        full = np.zeros(shape)
        sl = [slice(None)] * len(shape)
        sl[ax] = index
        full[tuple(sl)] = g
        return (full,)

    return _emit(np.take(x.data, index, axis=ax), (x,), vjp)


def slice_last(x: Tensor, start: int, stop: int) -> Tensor:
    """Columns ``start:stop`` of the last axis."""
    shape = x.shape

    def vjp(g):
        full = np.zeros(shape)
        full[..., start:stop] = g
        return (full,)

    return _emit(x.data[..., start:stop], (x,), vjp)


# ------------------------------------------------------------------ backward

def backward(loss: Tensor) -> dict[Tensor, Tensor]:
    """Gradients of a scalar loss for every leaf reachable from it.

    The returned map is keyed by the tracked leaf tensors handed out by
    ``Tape.watch``. The tape is consumed.
    """
    if loss.tape is None:
        raise TapeError("backward() on an untracked tensor")
    if loss.data.size != 1:
        raise ShapeError(f"backward() needs a scalar loss, got shape {loss.shape}")
    tape = loss.tape
    if tape.consumed:
        raise TapeError("tape already consumed by backward()")
    grads: dict[int, np.ndarray] = {loss.node: np.ones_like(loss.data)}
    for node, inputs, vjp in reversed(tape._ops):
        g = grads.pop(node, None)
        if g is None:
            continue
        for src, gi in zip(inputs, vjp(g)):
            if src is None:
                continue
            if src in grads:
                grads[src] = grads[src] + gi
            else:
                grads[src] = gi
    out = {}
    for node, leaf in tape._leaves.items():
        if node in grads:
            out[leaf] = Tensor(np.array(grads[node], dtype=DTYPE).reshape(leaf.shape))
    tape._ops.clear()
    tape.consumed = True
    return out


# ------------------------------------------------------------ param trees

def tree_leaves(tree) -> list[Tensor]:
    """Tensors of a nested dataclass/list/tuple/dict structure, in order."""
    if isinstance(tree, Tensor):
        return [tree]
    if dataclasses.is_dataclass(tree) and not isinstance(tree, type):
        out = []
        for f in dataclasses.fields(tree):
            out.extend(tree_leaves(getattr(tree, f.name)))
        return out
    if isinstance(tree, (list, tuple)):
        return [t for x in tree for t in tree_leaves(x)]
    if isinstance(tree, dict):
        return [t for k in sorted(tree) for t in tree_leaves(tree[k])]
    return []


def tree_named(tree, prefix: str = "") -> list[tuple[str, Tensor]]:
    if isinstance(tree, Tensor):
        return [(prefix, tree)]
    if dataclasses.is_dataclass(tree) and not isinstance(tree, type):
        out = []
        for f in dataclasses.fields(tree):
            out.extend(tree_named(getattr(tree, f.name), f"{prefix}.{f.name}" if prefix else f.name))
        return out
    if isinstance(tree, (list, tuple)):
        return [p for i, x in enumerate(tree) for p in tree_named(x, f"{prefix}.{i}" if prefix else str(i))]
    if isinstance(tree, dict):
        return [p for k in sorted(tree) for p in tree_named(tree[k], f"{prefix}.{k}" if prefix else str(k))]
    return []


def tree_map(fn: Callable[[Tensor], Tensor], tree):
    if isinstance(tree, Tensor):
        return fn(tree)
    if dataclasses.is_dataclass(tree) and not isinstance(tree, type):
        return dataclasses.replace(tree, **{f.name: tree_map(fn, getattr(tree, f.name))
                                            for f in dataclasses.fields(tree) if f.init})
    if isinstance(tree, list):
        return [tree_map(fn, x) for x in tree]
    if isinstance(tree, tuple):
        return tuple(tree_map(fn, x) for x in tree)
    if isinstance(tree, dict):
        return {k: tree_map(fn, v) for k, v in tree.items()}
    return tree


def tree_unflatten(tree, leaves: Sequence[Tensor]):
    it = iter(leaves)
    out = tree_map(lambda _: next(it), tree)
    if next(it, None) is not None:
        raise ShapeError("too many leaves for tree")
    return out


def watch_tree(tape: Tape, tree):
    return tree_map(tape.watch, tree)


def detach_tree(tree):
    return tree_map(lambda t: Tensor(t.data), tree)


# ----------------------------------------------------------------- optimizer

@dataclasses.dataclass(frozen=True)
class OptimizerState:
    m: tuple
    v: tuple
    step: int = 0
    lr: float | tuple = 1e-2            # one rate for all, or one per parameter
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_init(params: Sequence[Tensor], lr: float | Sequence[float] = 1e-2, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> OptimizerState:
    if not isinstance(lr, (int, float)):
        lr = tuple(float(r) for r in lr)
        if len(lr) != len(params):
            raise ShapeError(f"adam_init: {len(lr)} learning rates for {len(params)} parameters")
    zeros = tuple(np.zeros(p.shape) for p in params)
    return OptimizerState(m=zeros, v=tuple(np.zeros(p.shape) for p in params),
                          lr=lr, beta1=beta1, beta2=beta2, eps=eps)


def adam_step(params: Sequence[Tensor], grads: Sequence[Tensor | None],
              state: OptimizerState) -> tuple[list[Tensor], OptimizerState]:
    """One bias-corrected Adam update. Pure: inputs are left untouched.

    A ``None`` gradient is treated as zero.
    """
    if not (len(params) == len(grads) == len(state.m)):
        raise ShapeError("adam_step: params, grads and state differ in length")
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    new_p, new_m, new_v = [], [], []
    lrs = state.lr if isinstance(state.lr, tuple) else (state.lr,) * len(params)
    for p, g, m, v, lr in zip(params, grads, state.m, state.v, lrs):
        gd = np.zeros(p.shape) if g is None else np.asarray(g.data if isinstance(g, Tensor) else g)
        if gd.shape != p.shape or m.shape != p.shape:
            raise ShapeError(f"adam_step: parameter {p.shape}, gradient {gd.shape}, moment {m.shape}")
        m2 = b1 * m + (1.0 - b1) * gd
        v2 = b2 * v + (1.0 - b2) * gd * gd
        step = lr * (m2 / c1) / (np.sqrt(v2 / c2) + state.eps)
        new_p.append(Tensor(p.data - step))
        new_m.append(m2)
        new_v.append(v2)
    return new_p, dataclasses.replace(state, m=tuple(new_m), v=tuple(new_v), step=t)


def clip_grad_norm(grads: Sequence[Tensor | None], max_norm: float) -> list[Tensor | None]:
    total = math.sqrt(sum(float((g.data * g.data).sum()) for g in grads if g is not None))
    if total <= max_norm or total == 0.0:
        return list(grads)
    f = max_norm / total
    return [None if g is None else Tensor(g.data * f) for g in grads]
