# app/align/numeric.py
"""
Dense float64 matrices with a reverse-mode gradient tape.

Every primitive computes its value eagerly with numpy. When a GradTape is
active and at least one operand is tracked on it, the primitive appends a
record (operation name, operand slots, output slot, backward rule) to the
tape. `GradTape.gradient` replays the records in exact reverse order.
"""
from __future__ import annotations

import logging
import math
from contextvars import ContextVar
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from app.align.errors import DimensionError, NonFiniteError

logger = logging.getLogger(__name__)

Backward = Callable[[np.ndarray], Sequence[np.ndarray | None]]

_ACTIVE_TAPE: ContextVar["GradTape | None"] = ContextVar("active_grad_tape", default=None)


class Matrix:
    """Immutable row-major 2-D array of 64-bit reals."""

    __slots__ = ("data", "slot", "tape")

    def __init__(self, data, *, slot: int | None = None, tape: "GradTape | None" = None) -> None:
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise DimensionError(f"Matrix needs at most 2 dimensions, got shape {arr.shape}")
        arr.setflags(write=False)
        self.data = arr
        self.slot = slot
        self.tape = tape

    @classmethod
    def _wrap(cls, arr: np.ndarray, *, slot: int | None = None, tape: "GradTape | None" = None) -> "Matrix":
        m = cls.__new__(cls)
        arr = np.asarray(arr, dtype=np.float64).view()
        if arr.ndim != 2:
            raise DimensionError(f"Matrix needs 2 dimensions, got shape {arr.shape}")
        arr.setflags(write=False)
        m.data = arr
        m.slot = slot
        m.tape = tape
        return m

    @classmethod
    def zeros(cls, rows: int, cols: int) -> "Matrix":
        return cls._wrap(np.zeros((rows, cols)))

    @classmethod
    def identity(cls, n: int) -> "Matrix":
        return cls._wrap(np.eye(n))

    @property
    def rows(self) -> int:
        return int(self.data.shape[0])

    @property
    def cols(self) -> int:
        return int(self.data.shape[1])

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    @property
    def tracked(self) -> bool:
        return self.slot is not None and self.tape is not None

    def item(self) -> float:
        if self.shape != (1, 1):
            raise DimensionError(f"item() needs a 1x1 matrix, got {self.shape}")
        return float(self.data[0, 0])

    def numpy(self) -> np.ndarray:
        return self.data

    def tolist(self) -> list[list[float]]:
        return self.data.tolist()

    def detach(self) -> "Matrix":
        return Matrix._wrap(self.data)

    def __repr__(self) -> str:
        flag = f", slot={self.slot}" if self.slot is not None else ""
        return f"Matrix({self.rows}x{self.cols}{flag})"


def as_matrix(value) -> Matrix:
    if isinstance(value, Matrix):
        return value
    return Matrix(value)


# ----------------------------
# Tape
# ----------------------------

@dataclass(frozen=True)
class TapeRecord:
    op: str
    inputs: tuple[int | None, ...]
    output: int
    backward: Backward


@dataclass
class GradTape:
    records: list[TapeRecord] = field(default_factory=list)
    params: dict[str, int] = field(default_factory=dict)
    shapes: dict[int, tuple[int, int]] = field(default_factory=dict)
    last_visit: list[int] = field(default_factory=list)

    def __post_init__(self) -> None:
        self._next_slot = 0
        self._tokens: list = []

    def __enter__(self) -> "GradTape":
        self._tokens.append(_ACTIVE_TAPE.set(self))
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE_TAPE.reset(self._tokens.pop())

    def _new_slot(self, shape: tuple[int, int]) -> int:
        slot = self._next_slot
        self._next_slot += 1
        self.shapes[slot] = shape
        return slot

    def watch(self, name: str, value) -> Matrix:
        """Register a parameter and return its tracked matrix."""
        if name in self.params:
            raise ValueError(f"parameter {name!r} already registered on this tape")
        base = as_matrix(value)
        slot = self._new_slot(base.shape)
        self.params[name] = slot
        return Matrix._wrap(base.data, slot=slot, tape=self)

    def record(self, op: str, operands: Sequence[Matrix], value: np.ndarray, backward: Backward) -> Matrix:
        inputs = tuple(o.slot if o.tape is self else None for o in operands)
        slot = self._new_slot(tuple(value.shape))
        self.records.append(TapeRecord(op=op, inputs=inputs, output=slot, backward=backward))
        return Matrix._wrap(value, slot=slot, tape=self)

    def gradient(self, target: Matrix) -> dict[str, np.ndarray]:
        """Gradients of a 1x1 target w.r.t. every registered parameter."""
        if target.shape != (1, 1):
            raise DimensionError(f"gradient target must be 1x1, got {target.shape}")
        grads: dict[int, np.ndarray] = {}
        if target.tape is self and target.slot is not None:
            grads[target.slot] = np.ones((1, 1))

        self.last_visit = []
        for index in range(len(self.records) - 1, -1, -1):
            rec = self.records[index]
            upstream = grads.get(rec.output)
            if upstream is None:
                continue
            self.last_visit.append(index)
            parts = rec.backward(upstream)
            for slot, part in zip(rec.inputs, parts):
                if slot is None or part is None:
                    continue
                prev = grads.get(slot)
                grads[slot] = part if prev is None else prev + part

        out: dict[str, np.ndarray] = {}
        for name, slot in self.params.items():
            g = grads.get(slot)
            out[name] = np.zeros(self.shapes[slot]) if g is None else np.array(g, dtype=np.float64)
        return out


def active_tape() -> GradTape | None:
    return _ACTIVE_TAPE.get()


def _emit(op: str, value: np.ndarray, operands: Sequence[Matrix], backward: Backward) -> Matrix:
    if not np.isfinite(value).all():
        raise NonFiniteError(f"{op}: produced non-finite values")
    tape = _ACTIVE_TAPE.get()
    if tape is None or not any(o.tape is tape and o.slot is not None for o in operands):
        return Matrix._wrap(value)
    return tape.record(op, operands, value, backward)


# ----------------------------
# Shape helpers
# ----------------------------

def _broadcast_shape(op: str, a: Matrix, b: Matrix) -> tuple[int, int]:
    (ar, ac), (br, bc) = a.shape, b.shape
    rows = ar if ar == br or br == 1 else (br if ar == 1 else -1)
    cols = ac if ac == bc or bc == 1 else (bc if ac == 1 else -1)
    if rows < 0 or cols < 0:
        raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}")
    return rows, cols


def _unbroadcast(grad: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    if shape[0] == 1 and grad.shape[0] != 1:
        grad = grad.sum(axis=0, keepdims=True)
    if shape[1] == 1 and grad.shape[1] != 1:
        grad = grad.sum(axis=1, keepdims=True)
    return grad


def _same_shape(op: str, a: Matrix, b: Matrix) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# ----------------------------
# Primitives
# ----------------------------

def matmul(a, b) -> Matrix:
    a, b = as_matrix(a), as_matrix(b)
    if a.cols != b.rows:
        raise DimensionError(f"matmul: {a.shape} x {b.shape}")
    A, B = a.data, b.data

    def backward(g: np.ndarray):
        return g @ B.T, A.T @ g

    return _emit("matmul", A @ B, (a, b), backward)


def add(a, b) -> Matrix:
    a, b = as_matrix(a), as_matrix(b)
    _broadcast_shape("add", a, b)
    sa, sb = a.shape, b.shape

    def backward(g: np.ndarray):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return _emit("add", a.data + b.data, (a, b), backward)


def sub(a, b) -> Matrix:
    a, b = as_matrix(a), as_matrix(b)
    _broadcast_shape("sub", a, b)
    sa, sb = a.shape, b.shape

    def backward(g: np.ndarray):
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)

    return _emit("sub", a.data - b.data, (a, b), backward)


def mul(a, b) -> Matrix:
    a, b = as_matrix(a), as_matrix(b)
    _broadcast_shape("mul", a, b)
    A, B = a.data, b.data

    def backward(g: np.ndarray):
        return _unbroadcast(g * B, A.shape), _unbroadcast(g * A, B.shape)

    return _emit("mul", A * B, (a, b), backward)


def scale(a, factor: float) -> Matrix:
    a = as_matrix(a)
    factor = float(factor)

    def backward(g: np.ndarray):
        return (g * factor,)

    return _emit("scale", a.data * factor, (a,), backward)


def relu(a) -> Matrix:
    a = as_matrix(a)
    A = a.data

    def backward(g: np.ndarray):
        return (g * (A > 0.0),)

    return _emit("relu", np.maximum(A, 0.0), (a,), backward)


def leaky_relu(a, slope: float) -> Matrix:
    a = as_matrix(a)
    A = a.data
    slope = float(slope)

    def backward(g: np.ndarray):
        return (g * np.where(A > 0.0, 1.0, slope),)

    return _emit("leaky_relu", np.where(A > 0.0, A, slope * A), (a,), backward)


def sigmoid(a) -> Matrix:
    a = as_matrix(a)
    # split by sign so exp never overflows
    A = a.data
    pos = A >= 0.0
    z = np.exp(-np.abs(A))
    out = np.where(pos, 1.0 / (1.0 + z), z / (1.0 + z))

    def backward(g: np.ndarray):
        return (g * out * (1.0 - out),)

    return _emit("sigmoid", out, (a,), backward)


def concat_cols(a, b) -> Matrix:
    a, b = as_matrix(a), as_matrix(b)
    if a.rows != b.rows:
        raise DimensionError(f"concat_cols: row mismatch {a.shape} vs {b.shape}")
    split = a.cols

    def backward(g: np.ndarray):
        return g[:, :split], g[:, split:]

    return _emit("concat_cols", np.concatenate([a.data, b.data], axis=1), (a, b), backward)


def l1_distance(a, b) -> Matrix:
    """Row-wise L1 distance, one column."""
    a, b = as_matrix(a), as_matrix(b)
    _same_shape("l1_distance", a, b)
    diff = a.data - b.data
    sign = np.sign(diff)

    def backward(g: np.ndarray):
        return g * sign, -g * sign

    return _emit("l1_distance", np.abs(diff).sum(axis=1, keepdims=True), (a, b), backward)


def cosine(a, b) -> Matrix:
    """Row-wise cosine similarity, one column; rows with a zero vector score 0."""
    a, b = as_matrix(a), as_matrix(b)
    _same_shape("cosine", a, b)
    A, B = a.data, b.data
    na = np.linalg.norm(A, axis=1, keepdims=True)
    nb = np.linalg.norm(B, axis=1, keepdims=True)
    valid = (na > 0.0) & (nb > 0.0)
    safe_a = np.where(valid, na, 1.0)
    safe_b = np.where(valid, nb, 1.0)
    dot = (A * B).sum(axis=1, keepdims=True)
    cos = np.where(valid, dot / (safe_a * safe_b), 0.0)

    def backward(g: np.ndarray):
        ga = B / (safe_a * safe_b) - cos * A / (safe_a * safe_a)
        gb = A / (safe_a * safe_b) - cos * B / (safe_b * safe_b)
        return np.where(valid, g * ga, 0.0), np.where(valid, g * gb, 0.0)

    return _emit("cosine", np.clip(cos, -1.0, 1.0), (a, b), backward)


def rowwise_softmax_scaled(
    scores,
    epsilon: float,
    mask: np.ndarray,
    mass: np.ndarray | None = None,
) -> tuple[Matrix, np.ndarray]:
    """
    a_ij = m_ij exp(eps S_ij) / sum_k m_ik exp(eps S_ik) over unmasked entries.

    `mass` (optional, same shape, >= 0) weights each entry's probability mass;
    entries with zero mass leave the support. Rows with an empty support come
    back as all-zero rows; their indices are returned as the second value.
    """
    scores = as_matrix(scores)
    if epsilon <= 0:
        raise ValueError(f"epsilon must be > 0, got {epsilon}")
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != scores.shape:
        raise DimensionError(f"rowwise_softmax_scaled: mask {mask.shape} vs scores {scores.shape}")
    support = mask
    if mass is not None:
        mass = np.asarray(mass, dtype=np.float64)
        if mass.shape != scores.shape:
            raise DimensionError(f"rowwise_softmax_scaled: mass {mass.shape} vs scores {scores.shape}")
        support = mask & (mass > 0.0)

    z = epsilon * scores.data
    row_max = np.where(support, z, -np.inf).max(axis=1, keepdims=True)
    isolated_rows = ~np.isfinite(row_max[:, 0])
    row_max = np.where(np.isfinite(row_max), row_max, 0.0)
    e = np.where(support, np.exp(np.where(support, z - row_max, 0.0)), 0.0)
    if mass is not None:
        e = e * mass
    denom = e.sum(axis=1, keepdims=True)
    out = np.where(denom > 0.0, e / np.where(denom > 0.0, denom, 1.0), 0.0)
    isolated = np.flatnonzero(isolated_rows | (denom[:, 0] <= 0.0))
    if isolated.size:
        logger.debug("softmax isolated_rows=%d", isolated.size)

    def backward(g: np.ndarray):
        inner = (out * g).sum(axis=1, keepdims=True)
        return (epsilon * out * (g - inner),)

    return _emit("rowwise_softmax_scaled", out, (scores,), backward), isolated


def gather_rows(a, index: np.ndarray) -> Matrix:
    a = as_matrix(a)
    index = np.asarray(index, dtype=np.int64)
    n_rows, n_cols = a.shape

    def backward(g: np.ndarray):
        out = np.zeros((n_rows, n_cols))
        np.add.at(out, index, g)
        return (out,)

    return _emit("gather_rows", a.data[index], (a,), backward)


def scatter_add(values, rows: np.ndarray, cols: np.ndarray, shape: tuple[int, int]) -> Matrix:
    """Dense matrix with out[rows[k], cols[k]] += values[k, 0]."""
    values = as_matrix(values)
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    if values.shape != (rows.size, 1) or cols.size != rows.size:
        raise DimensionError(f"scatter_add: values {values.shape} for {rows.size} positions")
    out = np.zeros(shape)
    np.add.at(out, (rows, cols), values.data[:, 0])

    def backward(g: np.ndarray):
        return (g[rows, cols][:, None],)

    return _emit("scatter_add", out, (values,), backward)


def sum_all(a) -> Matrix:
    a = as_matrix(a)
    shape = a.shape

    def backward(g: np.ndarray):
        return (np.full(shape, g[0, 0]),)

    return _emit("sum_all", np.array([[a.data.sum()]]), (a,), backward)


ELEMENTWISE_OPS = ("add", "mul", "leaky_relu", "relu", "sigmoid", "concat_cols", "l1_distance", "cosine")


def elementwise(op: str, *operands, slope: float = 0.01) -> Matrix:
    if op == "add":
        return add(*operands)
    if op == "mul":
        return mul(*operands)
    if op == "leaky_relu":
        return leaky_relu(operands[0], slope)
    if op == "relu":
        return relu(operands[0])
    if op == "sigmoid":
        return sigmoid(operands[0])
    if op == "concat_cols":
        return concat_cols(*operands)
    if op == "l1_distance":
        return l1_distance(*operands)
    if op == "cosine":
        return cosine(*operands)
    raise ValueError(f"unknown elementwise op {op!r}; expected one of {ELEMENTWISE_OPS}")


# ----------------------------
# Gradient checking
# ----------------------------

@dataclass
class GradCheckReport:
    tolerance: float
    max_rel_error: dict[str, float] = field(default_factory=dict)
    excluded_at_kink: list[tuple[str, tuple[int, int]]] = field(default_factory=list)
    failures: list[str] = field(default_factory=list)

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)

    @property
    def ok(self) -> bool:
        return not self.failures and self.worst <= self.tolerance


def check_gradients(
    f: Callable[[Mapping[str, Matrix]], Matrix],
    params: Mapping[str, np.ndarray],
    step: float = 1e-5,
    tol: float = 1e-4,
    *,
    kink_tol: float = 1e-3,
    floor: float = 1.0,
    names: Iterable[str] | None = None,
) -> GradCheckReport:
    """
    Compare tape gradients of scalar `f` with central finite differences.

    The error is |analytic - numeric| / max(|analytic|, |numeric|, floor): a mixed
    tolerance, relative for gradients larger than `floor` and absolute (scaled by
    `floor`) below it. Pass a small floor such as 1e-8 for a purely relative check.
    Entries where the forward and backward one-sided slopes disagree by more
    than `kink_tol` sit on a kink and are excluded.
    """
    if floor <= 0:
        raise ValueError(f"floor must be positive, got {floor}")
    if not 1e-7 <= step <= 1e-3:
        raise ValueError(f"step must lie in [1e-7, 1e-3], got {step}")
    base = {k: np.array(v, dtype=np.float64, copy=True).reshape(as_matrix(v).shape) for k, v in params.items()}

    with GradTape() as tape:
        tracked = {k: tape.watch(k, v) for k, v in base.items()}
        value = f(tracked)
        analytic = tape.gradient(value)
    f0 = value.item()

    def evaluate(name: str, index: tuple[int, int], delta: float) -> float:
        trial = dict(base)
        arr = base[name].copy()
        arr[index] += delta
        trial[name] = arr
        return f({k: Matrix._wrap(v) for k, v in trial.items()}).item()

    report = GradCheckReport(tolerance=tol)
    for name in (list(names) if names is not None else sorted(base)):
        worst = 0.0
        for index in np.ndindex(*base[name].shape):
            try:
                f_plus = evaluate(name, index, step)
                f_minus = evaluate(name, index, -step)
            except (NonFiniteError, FloatingPointError) as exc:
                report.failures.append(f"{name}{index}: non-finite at perturbed point ({exc})")
                continue
            if not (math.isfinite(f_plus) and math.isfinite(f_minus)):
                direction = "+" if not math.isfinite(f_plus) else "-"
                report.failures.append(f"{name}{index}: non-finite f at {direction}step")
                continue
            forward = (f_plus - f0) / step
            backward_slope = (f0 - f_minus) / step
            numeric = (f_plus - f_minus) / (2.0 * step)
            if abs(forward - backward_slope) > kink_tol * max(1.0, abs(numeric)):
                report.excluded_at_kink.append((name, tuple(int(i) for i in index)))
                continue
            a = float(analytic[name][index])
            err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
            worst = max(worst, err)
        report.max_rel_error[name] = worst
    return report
