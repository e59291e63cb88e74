"""Dense tensors with tape-based reverse-mode automatic differentiation.

Every differentiable op is a pair of numpy functions registered in ``OPS``:
a forward rule mapping input arrays to an output array, and a backward rule
mapping the output cotangent to one cotangent per input.  While a :class:`Tape`
is active each op appends a :class:`TapeNode`; :func:`backward` walks the tape
in reverse.  Elementwise binary ops follow numpy broadcasting and reduce the
cotangent back to each operand's shape.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

__all__ = [
    "Tensor",
    "TapeNode",
    "Tape",
    "OPS",
    "tensor",
    "constant",
    "parameter",
    "backward",
    "grad_check",
    "grad_check_errors",
    "GradCheckFailure",
    "apply_op",
]

GELU_C = math.sqrt(2.0 / math.pi)
GELU_K = 0.044715

_state = threading.local()


class GradCheckFailure(ArithmeticError):
    """Raised when a perturbed function evaluation is not finite."""

    def __init__(self, name: str, index: Tuple[int, ...], value: float):
        self.name = name
        self.index = index
        self.value = value
        super().__init__(f"non-finite value {value!r} while perturbing {name}{list(index)}")


@dataclass(eq=False)
class TapeNode:
    op: str
    inputs: Tuple["Tensor", ...]
    attrs: Dict[str, Any]
    output: "Tensor"


@dataclass(eq=False)
class Tape:
    """Records ops in execution order; that order is a topological order."""

    nodes: List[TapeNode] = field(default_factory=list)

    def __enter__(self) -> "Tape":
        stack = _tape_stack()
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _tape_stack()
        assert stack and stack[-1] is self
        stack.pop()

    def replay(self, leaves: Optional[Mapping[int, np.ndarray]] = None) -> Dict[int, np.ndarray]:
        """Recompute every recorded output from the leaves.

        ``leaves`` optionally overrides leaf values by ``id(tensor)``.  Returns
        ``id(output) -> array`` for every node.
        """
        values: Dict[int, np.ndarray] = dict(leaves or {})
        for node in self.nodes:
            arrs = [values.get(id(t), t.data) for t in node.inputs]
            values[id(node.output)] = OPS[node.op].forward(arrs, **node.attrs)
        return values


def _tape_stack() -> List[Tape]:
    stack = getattr(_state, "stack", None)
    if stack is None:
        stack = _state.stack = []
    return stack


def active_tape() -> Optional[Tape]:
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """Immutable n-d array that remembers how it was produced."""

    __slots__ = ("data", "name", "node", "requires_grad", "__weakref__")
    __array_priority__ = 1000

    def __init__(self, data, name: Optional[str] = None, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype if dtype is not None else None)
        if arr.dtype.kind not in "fc":
            arr = arr.astype(np.float64)
        arr.flags.writeable = False
        self.data = arr
        self.name = name
        self.node: Optional[TapeNode] = None
        self.requires_grad = requires_grad

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, dtype={self.dtype})"

    def __len__(self) -> int:
        return self.shape[0]

    # -- operators -----------------------------------------------------
    def __add__(self, other):
        return apply_op("add", self, _wrap(other, self))

    def __radd__(self, other):
        return apply_op("add", _wrap(other, self), self)

    def __sub__(self, other):
        return apply_op("subtract", self, _wrap(other, self))

    def __rsub__(self, other):
        return apply_op("subtract", _wrap(other, self), self)

    def __mul__(self, other):
        if np.isscalar(other):
            return apply_op("scale", self, factor=float(other))
        return apply_op("multiply", self, _wrap(other, self))

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        if np.isscalar(other):
            return apply_op("scale", self, factor=1.0 / float(other))
        return apply_op("divide", self, _wrap(other, self))

    def __rtruediv__(self, other):
        return apply_op("divide", _wrap(other, self), self)

    def __neg__(self):
        return apply_op("scale", self, factor=-1.0)

    def __matmul__(self, other):
        return apply_op("matmul", self, _wrap(other, self))

    def __getitem__(self, index):
        return apply_op("slice", self, index=_freeze_index(index))

    # -- method sugar --------------------------------------------------
    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return apply_op("reshape", self, shape=tuple(int(s) for s in shape))

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        return apply_op("transpose", self, axes=tuple(int(a) for a in axes))

    def mean(self, axis=None, keepdims=False):
        return apply_op("mean", self, axis=_norm_axis(axis), keepdims=keepdims)

    def sum(self, axis=None, keepdims=False):
        return apply_op("sum", self, axis=_norm_axis(axis), keepdims=keepdims)

    def var(self, axis=None, keepdims=False):
        return apply_op("var", self, axis=_norm_axis(axis), keepdims=keepdims)

    def abs(self):
        return apply_op("abs", self)

    def sqrt(self):
        return apply_op("sqrt", self)

    def exp(self):
        return apply_op("exp", self)

    def log1p(self):
        return apply_op("log1p", self)

    def tanh(self):
        return apply_op("tanh", self)

    def sigmoid(self):
        return apply_op("sigmoid", self)

    def gelu(self):
        return apply_op("gelu", self)

    def softmax(self):
        return apply_op("softmax", self)

    def square(self):
        return apply_op("multiply", self, self)


def _wrap(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=like.dtype))


def _norm_axis(axis):
    if axis is None:
        return None
    if isinstance(axis, (list, tuple)):
        return tuple(int(a) for a in axis)
    return int(axis)


def _freeze_index(index):
    if not isinstance(index, tuple):
        index = (index,)
    out = []
    for item in index:
        if isinstance(item, np.ndarray):
            out.append(("array", tuple(item.tolist())))
        elif isinstance(item, list):
            out.append(("array", tuple(item)))
        else:
            out.append(item)
    return tuple(out)


def _thaw_index(index):
    return tuple(np.asarray(i[1]) if isinstance(i, tuple) and len(i) == 2 and i[0] == "array" else i for i in index)


def tensor(data, dtype=np.float64) -> Tensor:
    return Tensor(np.array(data, dtype=dtype))


def constant(data, dtype=np.float64) -> Tensor:
    return Tensor(np.asarray(data, dtype=dtype))


def parameter(data, name: str, dtype=np.float64) -> Tensor:
    """Named leaf that gradients are reported for."""
    return Tensor(np.array(data, dtype=dtype), name=name, requires_grad=True)


# ---------------------------------------------------------------------------
# op registry
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OpRule:
    forward: Callable[..., np.ndarray]
    backward: Callable[..., Sequence[Optional[np.ndarray]]]


OPS: Dict[str, OpRule] = {}


def _register(name):
    def deco(cls):
        OPS[name] = OpRule(cls.forward, cls.backward)
        return cls

    return deco


def _broadcast_shape(a, b, op):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


@_register("add")
class _Add:
    @staticmethod
    def forward(arrs):
        a, b = arrs
        _broadcast_shape(a, b, "add")
        return a + b

    @staticmethod
    def backward(g, arrs, out):
        return _unbroadcast(g, arrs[0].shape), _unbroadcast(g, arrs[1].shape)


@_register("subtract")
class _Sub:
    @staticmethod
    def forward(arrs):
        a, b = arrs
        _broadcast_shape(a, b, "subtract")
        return a - b

    @staticmethod
    def backward(g, arrs, out):
        return _unbroadcast(g, arrs[0].shape), _unbroadcast(-g, arrs[1].shape)


@_register("multiply")
class _Mul:
    @staticmethod
    def forward(arrs):
        a, b = arrs
        _broadcast_shape(a, b, "multiply")
        return a * b

    @staticmethod
    def backward(g, arrs, out):
        a, b = arrs
        return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)


@_register("divide")
class _Div:
    @staticmethod
    def forward(arrs):
        a, b = arrs
        _broadcast_shape(a, b, "divide")
        return a / b

    @staticmethod
    def backward(g, arrs, out):
        a, b = arrs
        return _unbroadcast(g / b, a.shape), _unbroadcast(-g * out / b, b.shape)


@_register("scale")
class _Scale:
    @staticmethod
    def forward(arrs, factor):
        return arrs[0] * np.asarray(factor, dtype=arrs[0].dtype)

    @staticmethod
    def backward(g, arrs, out, factor):
        return (g * np.asarray(factor, dtype=g.dtype),)


@_register("matmul")
class _Matmul:
    @staticmethod
    def forward(arrs):
        a, b = arrs
        if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
            raise ValueError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
        try:
            np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
        except ValueError:
            raise ValueError(f"matmul: incompatible batch shapes {a.shape} and {b.shape}") from None
        if b.ndim == 2 and a.ndim > 2:
            return (a.reshape(-1, a.shape[-1]) @ b).reshape(a.shape[:-1] + (b.shape[-1],))
        return a @ b

    @staticmethod
    def backward(g, arrs, out):
        a, b = arrs
        if b.ndim == 2 and a.ndim > 2:
            # shared weight: fold batch dims into rows, one GEMM each
            g2 = g.reshape(-1, g.shape[-1])
            ga = (g2 @ b.T).reshape(a.shape)
            gb = a.reshape(-1, a.shape[-1]).T @ g2
        else:
            ga = g @ np.swapaxes(b, -1, -2)
            gb = np.swapaxes(a, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)


@_register("reshape")
class _Reshape:
    @staticmethod
    def forward(arrs, shape):
        a = arrs[0]
        if int(np.prod(shape)) != a.size:
            raise ValueError(f"reshape: cannot reshape {a.shape} into {shape}")
        return a.reshape(shape)

    @staticmethod
    def backward(g, arrs, out, shape):
        return (g.reshape(arrs[0].shape),)


@_register("transpose")
class _Transpose:
    @staticmethod
    def forward(arrs, axes):
        a = arrs[0]
        if sorted(axes) != list(range(a.ndim)):
            raise ValueError(f"transpose: axes {axes} invalid for shape {a.shape}")
        return np.transpose(a, axes)

    @staticmethod
    def backward(g, arrs, out, axes):
        return (np.transpose(g, np.argsort(axes)),)


@_register("concatenate")
class _Concat:
    @staticmethod
    def forward(arrs, axis):
        shapes = [a.shape for a in arrs]
        ref = list(shapes[0])
        for s in shapes[1:]:
            if len(s) != len(ref) or any(x != y for i, (x, y) in enumerate(zip(s, ref)) if i != axis % len(ref)):
                raise ValueError(f"concatenate: incompatible shapes {shapes[0]} and {s} on axis {axis}")
        return np.concatenate(arrs, axis=axis)

    @staticmethod
    def backward(g, arrs, out, axis):
        sizes = np.cumsum([a.shape[axis] for a in arrs])[:-1]
        return tuple(np.split(g, sizes, axis=axis))


@_register("slice")
class _Slice:
    @staticmethod
    def forward(arrs, index):
        return arrs[0][_thaw_index(index)]

    @staticmethod
    def backward(g, arrs, out, index):
        full = np.zeros_like(arrs[0])
        idx = _thaw_index(index)
        if all(i is None or i is Ellipsis or isinstance(i, (int, slice)) for i in idx):
            full[idx] = g
        else:
            np.add.at(full, idx, g)
        return (full,)


@_register("take_rows")
class _TakeRows:
    """Row gather ``table[indices]`` (embedding lookup)."""

    @staticmethod
    def forward(arrs, indices):
        table = arrs[0]
        idx = np.asarray(indices)
        if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
            raise ValueError(f"take_rows: index out of range for table of shape {table.shape}")
        return table[idx]

    @staticmethod
    def backward(g, arrs, out, indices):
        full = np.zeros_like(arrs[0])
        np.add.at(full, np.asarray(indices), g)
        return (full,)


def _expand_reduced(g, shape, axis, keepdims):
    if axis is None:
        return np.broadcast_to(g.reshape((1,) * len(shape)), shape)
    if not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def _reduced_count(shape, axis):
    if axis is None:
        return int(np.prod(shape))
    axes = axis if isinstance(axis, tuple) else (axis,)
    return int(np.prod([shape[a] for a in axes]))


@_register("sum")
class _Sum:
    @staticmethod
    def forward(arrs, axis, keepdims):
        return np.asarray(arrs[0].sum(axis=axis, keepdims=keepdims))

    @staticmethod
    def backward(g, arrs, out, axis, keepdims):
        return (np.array(_expand_reduced(g, arrs[0].shape, axis, keepdims)),)


@_register("mean")
class _Mean:
    @staticmethod
    def forward(arrs, axis, keepdims):
        a = arrs[0]
        if _reduced_count(a.shape, axis) < 1:
            raise ValueError(f"mean: empty reduction over axis {axis} of shape {a.shape}")
        return np.asarray(a.mean(axis=axis, keepdims=keepdims))

    @staticmethod
    def backward(g, arrs, out, axis, keepdims):
        n = _reduced_count(arrs[0].shape, axis)
        return (np.array(_expand_reduced(g, arrs[0].shape, axis, keepdims)) / n,)


@_register("var")
class _Var:
    """Population variance (divides by the axis extent)."""

    @staticmethod
    def forward(arrs, axis, keepdims):
        a = arrs[0]
        if _reduced_count(a.shape, axis) < 1:
            raise ValueError(f"var: axis {axis} of shape {a.shape} has extent < 1")
        return np.asarray(a.var(axis=axis, keepdims=keepdims))

    @staticmethod
    def backward(g, arrs, out, axis, keepdims):
        a = arrs[0]
        n = _reduced_count(a.shape, axis)
        centered = a - a.mean(axis=axis, keepdims=True)
        return (_expand_reduced(g, a.shape, axis, keepdims) * centered * (2.0 / n),)


@_register("abs")
class _Abs:
    @staticmethod
    def forward(arrs):
        return np.abs(arrs[0])

    @staticmethod
    def backward(g, arrs, out):
        # sign(0) == 0: subgradient choice at the kink
        return (g * np.sign(arrs[0]),)


@_register("sqrt")
class _Sqrt:
    @staticmethod
    def forward(arrs):
        return np.sqrt(arrs[0])

    @staticmethod
    def backward(g, arrs, out):
        return (g * 0.5 / out,)


@_register("exp")
class _Exp:
    @staticmethod
    def forward(arrs):
        return np.exp(arrs[0])

    @staticmethod
    def backward(g, arrs, out):
        return (g * out,)


@_register("log1p")
class _Log1p:
    @staticmethod
    def forward(arrs):
        return np.log1p(arrs[0])

    @staticmethod
    def backward(g, arrs, out):
        return (g / (1.0 + arrs[0]),)


@_register("softmax")
class _Softmax:
    @staticmethod
    def forward(arrs):
        a = arrs[0]
        e = np.exp(a - a.max(axis=-1, keepdims=True))
        return e / e.sum(axis=-1, keepdims=True)

    @staticmethod
    def backward(g, arrs, out):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)


@_register("gelu")
class _Gelu:
    """Tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))."""

    @staticmethod
    def forward(arrs):
        x = arrs[0]
        x2 = x * x
        return 0.5 * x * (1.0 + np.tanh(x * (GELU_C + GELU_C * GELU_K * x2)))

    @staticmethod
    def backward(g, arrs, out):
        x = arrs[0]
        x2 = x * x
        th = np.tanh(x * (GELU_C + GELU_C * GELU_K * x2))
        d = 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * (GELU_C + 3.0 * GELU_C * GELU_K * x2)
        return (g * d,)


@_register("tanh")
class _Tanh:
    @staticmethod
    def forward(arrs):
        return np.tanh(arrs[0])

    @staticmethod
    def backward(g, arrs, out):
        return (g * (1.0 - out**2),)


@_register("sigmoid")
class _Sigmoid:
    @staticmethod
    def forward(arrs):
        x = arrs[0]
        return np.exp(-np.logaddexp(0.0, -x)).astype(x.dtype, copy=False)

    @staticmethod
    def backward(g, arrs, out):
        return (g * out * (1.0 - out),)


def apply_op(op: str, *inputs: Tensor, **attrs) -> Tensor:
    rule = OPS[op]
    out = Tensor(rule.forward([t.data for t in inputs], **attrs))
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.node = TapeNode(op, tuple(inputs), attrs, out)
        tape.nodes.append(out.node)
    return out


# functional aliases used by model code
def concatenate(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    return apply_op("concatenate", *tensors, axis=axis)


def take_rows(table: Tensor, indices) -> Tensor:
    return apply_op("take_rows", table, indices=tuple(int(i) for i in np.asarray(indices).reshape(-1)))


# ---------------------------------------------------------------------------
# reverse pass
# ---------------------------------------------------------------------------


def backward(
    loss: Tensor,
    params: Optional[Mapping[str, Tensor]] = None,
    tape: Optional[Tape] = None,
) -> Dict[str, np.ndarray]:
    """Gradients of a scalar ``loss`` with respect to named leaves.

    With ``params`` the result has exactly those keys (zeros for leaves the
    loss does not depend on); otherwise every named leaf reached is reported.
    """
    if loss.size != 1:
        raise ValueError(f"backward: loss must be scalar, got shape {loss.shape}")
    tape = tape if tape is not None else active_tape()
    if tape is None or loss.node is None or (tape.nodes and not _on_tape(loss, tape)):
        raise ValueError("backward: loss was not recorded on the active tape")

    grads: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: Dict[int, Tensor] = {}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        in_grads = OPS[node.op].backward(g, [t.data for t in node.inputs], node.output.data, **node.attrs)
        for t, gi in zip(node.inputs, in_grads):
            if not t.requires_grad or gi is None:
                continue
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = np.asarray(gi)
            if t.node is None:
                leaves[key] = t

    if params is not None:
        out = {}
        for name, p in params.items():
            g = grads.get(id(p))
            out[name] = np.zeros_like(p.data) if g is None else np.asarray(g, dtype=p.dtype).reshape(p.shape)
        return out
    return {t.name: np.asarray(grads[k]).reshape(t.shape) for k, t in leaves.items() if t.name is not None}


def _on_tape(t: Tensor, tape: Tape) -> bool:
    # the loss is normally the last node; fall back to a scan
    if tape.nodes[-1] is t.node:
        return True
    return any(n is t.node for n in tape.nodes)


# ---------------------------------------------------------------------------
# finite-difference checking
# ---------------------------------------------------------------------------


def grad_check_errors(
    fn: Callable[[Dict[str, Tensor]], Tensor],
    params: Mapping[str, np.ndarray],
    step: float = 1e-5,
    coords: Optional[Mapping[str, np.ndarray]] = None,
) -> Dict[str, np.ndarray]:
    """Per-coordinate relative error between tape gradients and central differences.

    ``coords`` optionally restricts each parameter to a subset of flat indices;
    unchecked coordinates report 0.
    """
    if step <= 0:
        raise ValueError("grad_check: step must be positive")
    base = {k: np.array(v, dtype=np.float64) for k, v in params.items()}

    with Tape() as tape:
        leaves = {k: parameter(v, k) for k, v in base.items()}
        loss = fn(leaves)
        analytic = backward(loss, leaves, tape)

    def evaluate(name, flat_idx, delta):
        arr = base[name].copy()
        arr.reshape(-1)[flat_idx] += delta
        trial = {k: Tensor(arr if k == name else v, name=k) for k, v in base.items()}
        with np.errstate(all="ignore"):  # non-finite values are reported below
            val = float(fn(trial).data.reshape(-1)[0])
        if not math.isfinite(val):
            raise GradCheckFailure(name, np.unravel_index(flat_idx, arr.shape), val)
        return val

    errors = {}
    for name, arr in base.items():
        err = np.zeros(arr.size)
        idx = range(arr.size) if coords is None else np.asarray(coords[name]).reshape(-1)
        ga = analytic[name].reshape(-1)
        for i in idx:
            numeric = (evaluate(name, i, step) - evaluate(name, i, -step)) / (2.0 * step)
            err[i] = abs(ga[i] - numeric) / (abs(ga[i]) + abs(numeric) + 1e-12)
        errors[name] = err.reshape(arr.shape)
    return errors


def grad_check(
    fn: Callable[[Dict[str, Tensor]], Tensor],
    params: Mapping[str, np.ndarray],
    step: float = 1e-5,
) -> float:
    """Max relative error over all leaf coordinates (64-bit)."""
    errors = grad_check_errors(fn, params, step)
    return max((float(e.max()) if e.size else 0.0) for e in errors.values())
