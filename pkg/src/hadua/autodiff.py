"""Minimal dense reverse-mode automatic differentiation on float64 numpy arrays.

Operations are recorded eagerly (define-by-run). Every result is a new,
read-only :class:`Tensor`; gradients are obtained with :func:`grad`, which
walks the recorded graph once in reverse topological order.

The op set is deliberately closed: matmul, add/sub/mul (same shape or
scalar), scalar arithmetic, exp, log, relu, softmax and logsumexp over the
last axis, transpose of the last two axes, concat on the last axis,
reshape, sum/mean and basic slicing. Broadcasting beyond scalar-tensor is
rejected; expand explicitly (e.g. ``ones @ row``).
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, NumericError, ShapeError

_EMPTY: tuple = ()


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


class Tensor:
    __slots__ = ("data", "requires_grad", "op", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64, copy=True)
        if not np.all(np.isfinite(arr)):
            raise NumericError(f"non-finite value in leaf tensor {name or ''}".strip())
        self.data = _freeze(arr)
        self.requires_grad = bool(requires_grad)
        self.op = "leaf"
        self.name = name
        self._parents = _EMPTY
        self._backward = None

    @classmethod
    def _result(cls, data: np.ndarray, op: str, parents: tuple, backward) -> "Tensor":
        if type(data) is not np.ndarray:
            data = np.array(data, dtype=np.float64)
        if not np.isfinite(data).all():
            raise NumericError(f"numeric overflow: non-finite output in op '{op}'")
        out = cls.__new__(cls)
        out.data = _freeze(data)
        out.op = op
        out.name = None
        out.requires_grad = any(p.requires_grad for p in parents)
        if out.requires_grad:
            out._parents = parents
            out._backward = backward
        else:
            out._parents = _EMPTY
            out._backward = None
        return out

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _not_scalar(self)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        label = self.name or self.op
        return f"Tensor({label}, shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise ContractError("division is only defined by a python scalar")
        return mul(self, 1.0 / float(other))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return slice_(self, index)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def relu(self):
        return relu(self)

    @property
    def T(self):
        return transpose(self)


def _not_scalar(t: Tensor):
    raise ContractError(f"tensor of shape {t.shape} is not a scalar")


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _is_scalar_operand(x) -> bool:
    if isinstance(x, Tensor):
        return x.ndim == 0
    return np.ndim(x) == 0


def _binary_shapes(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape and a.ndim != 0 and b.ndim != 0:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape} (no broadcasting)")


# ---------------------------------------------------------------------------
# elementwise binary ops


def add(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        a, b = b, a
    if not isinstance(b, Tensor):
        if not _is_scalar_operand(b):
            raise ShapeError("add: array operands must be wrapped as Tensors")
        c = float(b)
        return Tensor._result(a.data + c, "add_scalar", (a,), lambda g: (g,))
    _binary_shapes("add", a, b)
    out_shape = np.broadcast_shapes(a.shape, b.shape)

    def backward(g):
        ga = g if a.shape == out_shape else np.sum(g)
        gb = g if b.shape == out_shape else np.sum(g)
        return ga, gb

    return Tensor._result(a.data + b.data, "add", (a, b), backward)


def neg(a: Tensor) -> Tensor:
    return Tensor._result(-a.data, "neg", (a,), lambda g: (-g,))


def sub(a, b) -> Tensor:
    if isinstance(b, Tensor):
        return add(a, neg(b))
    return add(a, -float(b))


def mul(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        a, b = b, a
    if not isinstance(b, Tensor):
        if not _is_scalar_operand(b):
            raise ShapeError("mul: array operands must be wrapped as Tensors")
        c = float(b)
        return Tensor._result(a.data * c, "mul_scalar", (a,), lambda g: (g * c,))
    _binary_shapes("mul", a, b)
    out_shape = np.broadcast_shapes(a.shape, b.shape)
    ad, bd = a.data, b.data

    def backward(g):
        ga = g * bd
        gb = g * ad
        if a.shape != out_shape:
            ga = np.sum(ga)
        if b.shape != out_shape:
            gb = np.sum(gb)
        return ga, gb

    return Tensor._result(ad * bd, "mul", (a, b), backward)


# ---------------------------------------------------------------------------
# linear algebra and shape ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim not in (2, 3) or a.ndim != b.ndim:
        raise ShapeError(f"matmul: expects two 2-D or two 3-D tensors, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2] or a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul: inner/batch dimension mismatch {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def backward(g):
        return g @ np.swapaxes(bd, -1, -2), np.swapaxes(ad, -1, -2) @ g

    return Tensor._result(ad @ bd, "matmul", (a, b), backward)


def transpose(a: Tensor) -> Tensor:
    if a.ndim < 2:
        raise ShapeError(f"transpose: needs at least 2 dims, got {a.shape}")
    return Tensor._result(
        np.swapaxes(a.data, -1, -2).copy(), "transpose", (a,), lambda g: (np.swapaxes(g, -1, -2),)
    )


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    try:
        out = a.data.reshape(shape).copy()
    except ValueError as exc:
        raise ShapeError(f"reshape: cannot reshape {a.shape} into {shape}") from exc
    src = a.shape
    return Tensor._result(out, "reshape", (a,), lambda g: (g.reshape(src),))


def concat(tensors: Sequence[Tensor]) -> Tensor:
    """Concatenate along the last axis."""
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ContractError("concat: empty input")
    lead = tensors[0].shape[:-1]
    for t in tensors[1:]:
        if t.shape[:-1] != lead:
            raise ShapeError(f"concat: leading shapes differ {tensors[0].shape} vs {t.shape}")
    widths = [t.shape[-1] for t in tensors]
    splits = np.cumsum(widths)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=-1))

    out = np.concatenate([t.data for t in tensors], axis=-1)
    return Tensor._result(out, "concat", tuple(tensors), backward)


def slice_(a: Tensor, index) -> Tensor:
    if not isinstance(index, tuple):
        index = (index,)
    for ix in index:
        if not isinstance(ix, (slice, int, np.integer)) and ix is not Ellipsis:
            raise ContractError("slice: only basic indexing (ints, slices, ...) is supported")
    src = a.shape

    def backward(g):
        full = np.zeros(src)
        full[index] = g
        return (full,)

    return Tensor._result(a.data[index].copy(), "slice", (a,), backward)


def sum_(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    src = a.shape
    out = np.sum(a.data, axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, src).copy(),)

    return Tensor._result(np.asarray(out, dtype=np.float64), "sum", (a,), backward)


def mean(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    n = a.size if axis is None else a.shape[axis]
    return mul(sum_(a, axis, keepdims), 1.0 / n)


# ---------------------------------------------------------------------------
# elementwise nonlinearities


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return Tensor._result(out, "exp", (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    ad = a.data
    if np.any(ad <= 0):
        raise NumericError("numeric overflow: log of non-positive value in op 'log'")
    return Tensor._result(np.log(ad), "log", (a,), lambda g: (g / ad,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return Tensor._result(a.data * mask, "relu", (a,), lambda g: (g * mask,))


def softmax(a: Tensor) -> Tensor:
    """Row-max-stabilized softmax over the last axis."""
    z = a.data - np.max(a.data, axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / np.sum(e, axis=-1, keepdims=True)

    def backward(g):
        return (s * (g - np.sum(g * s, axis=-1, keepdims=True)),)

    return Tensor._result(s, "softmax", (a,), backward)


def logsumexp(a: Tensor) -> Tensor:
    """Stabilized log-sum-exp over the last axis (the axis is dropped)."""
    m = np.max(a.data, axis=-1, keepdims=True)
    e = np.exp(a.data - m)
    tot = np.sum(e, axis=-1, keepdims=True)
    out = (np.log(tot) + m)[..., 0]
    s = e / tot

    def backward(g):
        return (g[..., None] * s,)

    return Tensor._result(out, "logsumexp", (a,), backward)


# ---------------------------------------------------------------------------
# reverse pass


def _topo_order(root: Tensor) -> list[Tensor]:
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
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def grad(output: Tensor, wrt: Iterable[Tensor]) -> list[np.ndarray]:
    """Gradients of a scalar ``output`` with respect to each tensor in ``wrt``.

    Contributions along different paths are summed. Tensors that do not
    influence ``output`` get a zero gradient.
    """
    wrt = list(wrt)
    if output.size != 1:
        raise ContractError(f"backward: output must be scalar, got shape {output.shape}")
    grads: dict[int, np.ndarray] = {}
    if output.requires_grad:
        grads[id(output)] = np.ones(output.shape)
        for node in reversed(_topo_order(output)):
            g = grads.get(id(node))
            if g is None or node._backward is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if type(pg) is not np.ndarray or pg.shape != parent.shape:
                    pg = np.asarray(pg, dtype=np.float64).reshape(parent.shape)
                prev = grads.get(id(parent))
                grads[id(parent)] = pg if prev is None else prev + pg
    return [grads.get(id(t), np.zeros(t.shape)) for t in wrt]


class Graph:
    """A traced computation with named inputs and outputs.

    ``fn`` receives keyword Tensors and returns either a Tensor or a dict of
    Tensors. :meth:`forward` runs it and caches every intermediate node in
    topological order; :meth:`backward` differentiates one scalar output.
    """

    def __init__(self, fn: Callable[..., Tensor | dict], requires_grad: Iterable[str] = ()):
        self.fn = fn
        self.requires_grad = set(requires_grad)
        self.inputs: dict[str, Tensor] = {}
        self.outputs: dict[str, Tensor] = {}
        self.nodes: list[Tensor] = []

    def forward(self, **inputs) -> dict[str, np.ndarray]:
        self.inputs = {
            k: Tensor(v.data if isinstance(v, Tensor) else v, requires_grad=k in self.requires_grad, name=k)
            for k, v in inputs.items()
        }
        try:
            result = self.fn(**self.inputs)
        except ShapeError as exc:
            raise ShapeError(f"graph node failed: {exc}") from exc
        self.outputs = result if isinstance(result, dict) else {"out": result}
        self.nodes = []
        seen: set[int] = set()
        for out in self.outputs.values():
            for node in _all_nodes(out):
                if id(node) not in seen:
                    seen.add(id(node))
                    self.nodes.append(node)
        return {k: v.data for k, v in self.outputs.items()}

    def backward(self, output: str = "out") -> dict[str, np.ndarray]:
        if not self.outputs:
            raise ContractError("backward called before forward")
        target = self.outputs[output]
        names = sorted(self.requires_grad & set(self.inputs))
        grads = grad(target, [self.inputs[n] for n in names])
        return dict(zip(names, grads))


def _all_nodes(root: Tensor) -> list[Tensor]:
    # Unlike _topo_order this also reaches constant subgraphs; used only for inspection.
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
            stack.append((p, False))
    return order


def grad_check(scalar_fn: Callable[[Tensor], Tensor], point, eps: float = 1e-6) -> float:
    """Max relative error between reverse-mode and central-difference gradients.

    The error per coordinate is ``|analytic - numeric| / max(1, |analytic|)``.
    """
    if not (0.0 < eps <= 1e-2):
        raise ContractError(f"grad_check: eps must lie in (0, 1e-2], got {eps}")
    base = np.array(point.data if isinstance(point, Tensor) else point, dtype=np.float64)
    x = Tensor(base, requires_grad=True)
    (analytic,) = grad(scalar_fn(x), [x])
    flat = base.reshape(-1)
    numeric = np.empty_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        f_plus = scalar_fn(Tensor(base)).item()
        flat[i] = orig - eps
        f_minus = scalar_fn(Tensor(base)).item()
        flat[i] = orig
        numeric[i] = (f_plus - f_minus) / (2.0 * eps)
    numeric = numeric.reshape(base.shape)
    if not np.all(np.isfinite(numeric)):
        raise NumericError("grad_check: non-finite finite-difference estimate")
    return float(np.max(np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))))


def ones(shape) -> Tensor:
    return Tensor(np.ones(shape))


def zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape))
