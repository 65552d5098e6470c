"""Dense tensors with tape-based reverse-mode differentiation.

Every op records itself on the tape that is active in the current thread
(``with Tape() as tape:``). Outside a tape, ops just compute values, which is
what inference uses. Tensors are numpy arrays of any rank; the model code
works in column layout, ``[batch, rows, cols]``, with 2-D weights broadcast
across the leading batch axis by ``matmul``.
"""

from __future__ import annotations

import enum
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, Mapping, Sequence

import numpy as np

MASK_FILL = -1e9


class DimensionError(ValueError):
    pass


class ContractError(RuntimeError):
    pass


class DegenerateMaskError(ValueError):
    pass


class Precision(enum.Enum):
    TRAINING = "train"
    CHECKING = "check"

    @property
    def dtype(self) -> np.dtype:
        return np.dtype(np.float32 if self is Precision.TRAINING else np.float64)


class Tensor:
    """A numpy array plus the bookkeeping needed to differentiate through it."""

    __slots__ = ("data", "requires_grad", "node_id", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if dtype is None and not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.node_id: int | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _not_scalar(self.shape)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


def _not_scalar(shape):
    raise ContractError(f"item() needs a single-element tensor, got shape {shape}")


@dataclass
class Record:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]
    note: str = ""


_active = threading.local()


def _current_tape() -> "Tape | None":
    stack = getattr(_active, "stack", None)
    return stack[-1] if stack else None


class GradientMap(Mapping):
    """Gradients from one backward sweep, keyed by node id or by tensor."""

    def __init__(self, tape: "Tape", grads: dict[int, np.ndarray]):
        self._tape = tape
        self._grads = grads

    def _key(self, key) -> int:
        if isinstance(key, Tensor):
            node = self._tape.node_of(key)
            if node is None:
                raise KeyError(key)
            return node
        return key

    def __getitem__(self, key) -> np.ndarray:
        return self._grads[self._key(key)]

    def get(self, key, default=None):
        try:
            return self[key]
        except KeyError:
            return default

    def __contains__(self, key) -> bool:
        try:
            self._key(key)
        except KeyError:
            return False
        return self._key(key) in self._grads

    def __iter__(self) -> Iterator[int]:
        return iter(self._grads)

    def __len__(self) -> int:
        return len(self._grads)


@dataclass
class Tape:
    """Ordered list of op records for one forward pass.

    Records are appended in execution order, so inputs always precede the ops
    that consume them and a reversed sweep is a valid reverse topological order.
    """

    records: list[Record] = field(default_factory=list)
    _ids: dict[int, int] = field(default_factory=dict, repr=False)
    _keep: list[Tensor] = field(default_factory=list, repr=False)

    def __enter__(self) -> "Tape":
        stack = getattr(_active, "stack", None)
        if stack is None:
            stack = _active.stack = []
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _active.stack.pop()

    def _register(self, t: Tensor) -> int:
        key = id(t)
        node = self._ids.get(key)
        if node is None:
            node = len(self._ids)
            self._ids[key] = node
            self._keep.append(t)
        return node

    def node_of(self, t: Tensor) -> int | None:
        return self._ids.get(id(t))

    def record(self, op, inputs, output, backward, note="") -> None:
        for t in inputs:
            self._register(t)
        output.node_id = self._register(output)
        self.records.append(Record(op, tuple(inputs), output, backward, note))

    def backward(self, loss: Tensor) -> GradientMap:
        if loss.data.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        root = self.node_of(loss)
        if root is None:
            raise ContractError("loss was not produced on this tape")
        grads: dict[int, np.ndarray] = {root: np.ones_like(loss.data)}
        ids = self._ids
        for rec in reversed(self.records):
            g = grads.get(ids[id(rec.output)])
            if g is None:
                continue
            for inp, gi in zip(rec.inputs, rec.backward(g)):
                if gi is None or not inp.requires_grad:
                    continue
                node = ids[id(inp)]
                prev = grads.get(node)
                grads[node] = gi if prev is None else prev + gi
        return GradientMap(self, grads)


def no_tape() -> bool:
    return _current_tape() is None


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _make(op: str, out: np.ndarray, inputs: Sequence[Tensor], backward, note: str = "") -> Tensor:
    tape = _current_tape()
    needs = tape is not None and any(t.requires_grad for t in inputs)
    result = Tensor.__new__(Tensor)
    result.data = out if isinstance(out, np.ndarray) else np.asarray(out)
    result.requires_grad = needs
    result.node_id = None
    result.name = None
    if needs:
        tape.record(op, inputs, result, backward, note)
    return result


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcast_note(a: tuple[int, ...], b: tuple[int, ...]) -> str:
    if a == b:
        return "none"
    if len(a) >= 2 and len(b) >= 2 and b[-1] == 1 and a[-1] != 1 and b[-2] == a[-2]:
        return "column-bias"
    return f"numpy{a}x{b}"


# ---------------------------------------------------------------- primitives


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b, a)
    if a.data.ndim < 2 or b.data.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    A, B = a.data, b.data
    out = A @ B

    def back(g):
        ga = gb = None
        if a.requires_grad:
            if A.ndim == 2 and B.ndim == 3:
                # shared weight: contract batch and column axes in one BLAS call
                ga = np.tensordot(g, B, axes=([0, 2], [0, 2]))
            else:
                ga = _unbroadcast(g @ np.swapaxes(B, -1, -2), A.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.swapaxes(A, -1, -2) @ g, B.shape)
        return ga, gb

    return _make("matmul", out, (a, b), back)


def _binary(op: str, fn, a: Tensor, b: Tensor) -> np.ndarray:
    try:
        return fn(a.data, b.data)
    except ValueError:
        raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


def add(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    out = _binary("add", np.add, a, b)
    sa, sb = a.shape, b.shape

    def back(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return _make("add", out, (a, b), back, _broadcast_note(sa, sb))


def sub(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    out = _binary("sub", np.subtract, a, b)
    sa, sb = a.shape, b.shape

    def back(g):
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)

    return _make("sub", out, (a, b), back, _broadcast_note(sa, sb))


def mul(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    out = _binary("mul", np.multiply, a, b)
    A, B = a.data, b.data

    def back(g):
        ga = _unbroadcast(g * B, A.shape) if a.requires_grad else None
        gb = _unbroadcast(g * A, B.shape) if b.requires_grad else None
        return ga, gb

    return _make("mul", out, (a, b), back, _broadcast_note(A.shape, B.shape))


def ewise(op: str, x: Tensor, y: Tensor) -> Tensor:
    if op == "add":
        return add(x, y)
    if op == "mul":
        return mul(x, y)
    raise ValueError(f"unknown element-wise op {op!r}")


def scale(x: Tensor, c: float) -> Tensor:
    return _make("scale", x.data * c, (x,), lambda g: (g * c,))


def _check_finite(name: str, x: np.ndarray) -> None:
    if not np.all(np.isfinite(x)):
        raise FloatingPointError(f"{name}: non-finite input")


def tanh(x: Tensor) -> Tensor:
    _check_finite("tanh", x.data)
    t = np.tanh(x.data)
    return _make("tanh", t, (x,), lambda g: (g * (1.0 - t * t),))


def sigmoid(x: Tensor) -> Tensor:
    _check_finite("sigmoid", x.data)
    # exp of -|x| only, so large inputs of either sign stay finite
    z = np.exp(-np.abs(x.data))
    s = np.where(x.data >= 0, 1.0 / (1.0 + z), z / (1.0 + z)).astype(x.dtype, copy=False)
    return _make("sigmoid", s, (x,), lambda g: (g * s * (1.0 - s),))


_UNARY = {"tanh": tanh, "sigmoid": sigmoid}


def map_unary(f: str, x: Tensor) -> Tensor:
    try:
        return _UNARY[f](x)
    except KeyError:
        raise ValueError(f"unknown unary function {f!r}") from None


def broadcast_cols(v: Tensor, n: int) -> Tensor:
    """Repeat a column ``[..., k, 1]`` into ``[..., k, n]`` (the ``⊗ e_L`` product)."""
    if n < 1:
        raise DimensionError("broadcast_cols: empty sequence (L = 0)")
    if v.data.ndim < 2 or v.shape[-1] != 1:
        raise DimensionError(f"broadcast_cols expects a column [..., k, 1], got {v.shape}")
    out = np.repeat(v.data, n, axis=-1)
    return _make("broadcast_cols", out, (v,), lambda g: (g.sum(axis=-1, keepdims=True),))


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    arrays = [t.data for t in tensors]
    try:
        out = np.concatenate(arrays, axis=axis)
    except ValueError:
        raise DimensionError(
            f"concat along axis {axis}: incompatible shapes {[a.shape for a in arrays]}"
        ) from None
    bounds = np.cumsum([a.shape[axis] for a in arrays])[:-1]

    def back(g):
        return np.split(g, bounds, axis=axis)

    return _make("concat", out, tuple(tensors), back)


def concat_rows(x: Tensor, y: Tensor) -> Tensor:
    if x.shape[-1] != y.shape[-1]:
        raise DimensionError(f"concat_rows: column mismatch {x.shape} vs {y.shape}")
    return concat([x, y], axis=-2)


def concat_cols(tensors: Sequence[Tensor]) -> Tensor:
    return concat(tensors, axis=-1)


def column(x: Tensor, j: int) -> Tensor:
    """Column ``j`` of ``[..., r, c]`` as ``[..., r, 1]``."""
    shape = x.shape

    def back(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[..., j : j + 1] = g
        return (full,)

    return _make("column", x.data[..., j : j + 1], (x,), back)


def columns(x: Tensor, start: int, stop: int) -> Tensor:
    shape = x.shape

    def back(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[..., start:stop] = g
        return (full,)

    return _make("columns", x.data[..., start:stop], (x,), back)


def rows(x: Tensor, start: int, stop: int) -> Tensor:
    shape = x.shape

    def back(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[..., start:stop, :] = g
        return (full,)

    return _make("rows", x.data[..., start:stop, :], (x,), back)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    old = x.shape
    return _make("reshape", x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def total(x: Tensor) -> Tensor:
    shape = x.shape
    return _make("sum", np.sum(x.data), (x,), lambda g: (np.broadcast_to(g, shape).copy(),))


def gather_columns(table: Tensor, ids: np.ndarray) -> Tensor:
    """Rows of ``table [V, d]`` picked by ``ids [B, L]``, laid out as ``[B, d, L]``.

    Negative ids yield zero columns and receive no gradient.
    """
    ids = np.asarray(ids, dtype=np.int64)
    valid = ids >= 0
    safe = np.where(valid, ids, 0)
    picked = table.data[safe] * valid[..., None]
    out = np.swapaxes(picked, -1, -2)
    V = table.shape[0]

    def back(g):
        rows_g = np.swapaxes(g, -1, -2)[valid]
        full = np.zeros((V, table.shape[1]), dtype=g.dtype)
        np.add.at(full, safe[valid], rows_g)
        return (full,)

    return _make("gather_columns", np.ascontiguousarray(out), (table,), back)


def softmax_masked(scores: Tensor, mask=None) -> Tensor:
    """Softmax over the last axis; positions with ``mask == 0`` get exactly 0."""
    s = scores.data
    if mask is None:
        m = np.ones(s.shape, dtype=bool)
    else:
        m = np.broadcast_to(np.asarray(mask).astype(bool), s.shape)
    if not np.all(m.any(axis=-1)):
        raise DegenerateMaskError("softmax_masked: a row has every position masked")
    z = np.where(m, s, MASK_FILL)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z) * m
    a = (e / e.sum(axis=-1, keepdims=True)).astype(s.dtype, copy=False)

    def back(g):
        return (a * (g - np.sum(g * a, axis=-1, keepdims=True)),)

    return _make("softmax_masked", a, (scores,), back)


def log_softmax_np(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean of ``logsumexp(row) - row[label]`` over the rows of ``logits [B, C]``."""
    x = logits.data
    if x.ndim == 1:
        x = x[None, :]
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    n, c = x.shape
    if labels.shape != (n,):
        raise DimensionError(f"cross_entropy: {n} rows but {labels.shape[0]} labels")
    if np.any(labels < 0) or np.any(labels >= c):
        raise ValueError(f"cross_entropy: label out of range [0, {c}): {labels.tolist()}")
    logp = log_softmax_np(x)
    loss = -logp[np.arange(n), labels].mean()
    shape = logits.shape

    def back(g):
        p = np.exp(logp)
        p[np.arange(n), labels] -= 1.0
        return ((g * p / n).reshape(shape),)

    return _make("cross_entropy", np.asarray(loss, dtype=x.dtype), (logits,), back)


def backward(loss: Tensor, tape: Tape | None = None) -> GradientMap:
    tape = tape or _current_tape()
    if tape is None:
        raise ContractError("backward called with no active tape")
    return tape.backward(loss)


# ---------------------------------------------------------------- gradient checking


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def numeric_gradient(f: Callable[[], float], x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of ``f`` with respect to ``x``, perturbed in place."""
    g = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        g.reshape(-1)[i] = (fp - fm) / (2 * h)
    return g


def grad_check(
    f: Callable[[], Tensor],
    params: Iterable[Tensor],
    h: float = 1e-5,
) -> float:
    """Max relative error between tape gradients and central differences.

    ``f`` rebuilds the loss from the current values of ``params``; every
    parameter must hold float64 data. ``f`` must be deterministic, which is
    checked by calling it twice.
    """
    params = list(params)
    for p in params:
        if p.dtype != np.float64:
            raise ContractError(f"grad_check runs in checking precision; {p.name or p} is {p.dtype}")
    with Tape() as tape:
        loss = f()
    grads = tape.backward(loss)
    if f().item() != loss.item():
        raise ContractError("grad_check: function is not deterministic (disable dropout)")

    def value() -> float:
        return f().item()

    worst = 0.0
    for p in params:
        analytic = grads.get(p)
        if analytic is None:
            analytic = np.zeros_like(p.data)
        numeric = numeric_gradient(value, p.data, h)
        worst = max(worst, relative_error(analytic, numeric))
    return worst
