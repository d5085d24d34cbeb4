"""
Minimal dense-tensor kernel with reverse-mode differentiation.

Values are float64 numpy arrays wrapped in `Var`. Every primitive appends one
record (output, inputs, grad_fn) to its Tape; `backward` replays the tape in
exact reverse order. No implicit broadcasting except a bias row added to
every row of a matrix.
"""
import logging
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from services.errors import ShapeMismatch, Unreachable

logger = logging.getLogger(__name__)

BCE_CLAMP = 1e-7


class Var:
    __slots__ = ("value", "name", "tape")

    def __init__(self, value: np.ndarray, tape: "Tape", name: Optional[str] = None):
        self.value = value
        self.tape = tape
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def item(self) -> float:
        return float(self.value.reshape(-1)[0])

    def __repr__(self) -> str:
        return f"Var(shape={self.shape}, name={self.name!r})"


@dataclass
class _Record:
    out: Var
    inputs: tuple[Var, ...]
    grad_fn: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


def _as_array(x) -> np.ndarray:
    return np.array(x, dtype=np.float64, copy=True)


class Tape:
    def __init__(self):
        self.records: list[_Record] = []
        self.params: dict[str, Var] = {}

    # -- leaves --
    def param(self, name: str, value) -> Var:
        if name in self.params:
            raise ValueError(f"parameter {name!r} registered twice on one tape")
        var = Var(_as_array(value), self, name)
        self.params[name] = var
        return var

    def constant(self, value) -> Var:
        return Var(_as_array(value), self)

    def _record(self, value: np.ndarray, inputs: tuple[Var, ...], grad_fn) -> Var:
        out = Var(value, self)
        self.records.append(_Record(out, inputs, grad_fn))
        return out

    # -- primitives --
    def matmul(self, a: Var, b: Var) -> Var:
        if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
            raise ShapeMismatch(f"matmul: {a.shape} @ {b.shape}")
        av, bv = a.value, b.value
        return self._record(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))

    def _elementwise_pair(self, op: str, a: Var, b: Var):
        if a.shape == b.shape:
            return False
        if a.value.ndim == 2 and b.value.ndim in (1, 2) and b.value.size == a.shape[1] and (
                b.value.ndim == 1 or b.shape[0] == 1):
            return True
        raise ShapeMismatch(f"{op}: {a.shape} vs {b.shape}")

    def add(self, a: Var, b: Var) -> Var:
        bias = self._elementwise_pair("add", a, b)
        if bias:
            shape = b.shape
            return self._record(a.value + b.value.reshape(1, -1), (a, b),
                                lambda g: (g, g.sum(axis=0).reshape(shape)))
        return self._record(a.value + b.value, (a, b), lambda g: (g, g))

    def sub(self, a: Var, b: Var) -> Var:
        bias = self._elementwise_pair("sub", a, b)
        if bias:
            shape = b.shape
            return self._record(a.value - b.value.reshape(1, -1), (a, b),
                                lambda g: (g, -g.sum(axis=0).reshape(shape)))
        return self._record(a.value - b.value, (a, b), lambda g: (g, -g))

    def scale(self, a: Var, c: float) -> Var:
        return self._record(a.value * c, (a,), lambda g: (g * c,))

    def hadamard(self, a: Var, b: Var) -> Var:
        if a.shape != b.shape:
            raise ShapeMismatch(f"hadamard: {a.shape} vs {b.shape}")
        av, bv = a.value, b.value
        return self._record(av * bv, (a, b), lambda g: (g * bv, g * av))

    def one_minus(self, a: Var) -> Var:
        return self._record(1.0 - a.value, (a,), lambda g: (-g,))

    def concat(self, parts: Sequence[Var]) -> Var:
        """Column-wise concatenation of matrices with equal row counts."""
        rows = {p.shape[0] for p in parts}
        if len(rows) != 1 or any(p.value.ndim != 2 for p in parts):
            raise ShapeMismatch(f"concat: {[p.shape for p in parts]}")
        widths = [p.shape[1] for p in parts]
        bounds = np.cumsum([0] + widths)

        def grad_fn(g):
            return tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(parts)))

        return self._record(np.concatenate([p.value for p in parts], axis=1), tuple(parts), grad_fn)

    def relu(self, a: Var) -> Var:
        mask = a.value > 0
        return self._record(np.where(mask, a.value, 0.0), (a,), lambda g: (g * mask,))

    def sigmoid(self, a: Var) -> Var:
        s = 1.0 / (1.0 + np.exp(-a.value))
        return self._record(s, (a,), lambda g: (g * s * (1.0 - s),))

    def tanh(self, a: Var) -> Var:
        t = np.tanh(a.value)
        return self._record(t, (a,), lambda g: (g * (1.0 - t * t),))

    def sum(self, a: Var) -> Var:
        """Sum of all entries as a 1x1 tensor."""
        shape = a.shape
        return self._record(np.array([[a.value.sum()]]), (a,), lambda g: (np.full(shape, g.item()),))

    def row_sum(self, a: Var, segments: Optional[np.ndarray] = None, num_segments: Optional[int] = None) -> Var:
        """Sum over rows; with segment ids, one output row per segment."""
        if a.value.ndim != 2:
            raise ShapeMismatch(f"row_sum: expected a matrix, got {a.shape}")
        if segments is None:
            return self._record(a.value.sum(axis=0, keepdims=True), (a,),
                                lambda g: (np.repeat(g, a.shape[0], axis=0),))
        seg = np.asarray(segments, dtype=np.int64)
        if seg.shape != (a.shape[0],):
            raise ShapeMismatch(f"row_sum: segments {seg.shape} vs rows {a.shape}")
        n = int(num_segments if num_segments is not None else (seg.max() + 1 if seg.size else 0))
        out = np.zeros((n, a.shape[1]))
        np.add.at(out, seg, a.value)
        return self._record(out, (a,), lambda g: (g[seg],))

    def row_max(self, a: Var, segments: Optional[np.ndarray] = None, num_segments: Optional[int] = None) -> Var:
        """Column-wise max over rows (per segment); ties go to the lowest row."""
        if a.value.ndim != 2:
            raise ShapeMismatch(f"row_max: expected a matrix, got {a.shape}")
        m, d = a.shape
        seg = np.zeros(m, dtype=np.int64) if segments is None else np.asarray(segments, dtype=np.int64)
        if seg.shape != (m,):
            raise ShapeMismatch(f"row_max: segments {seg.shape} vs rows {a.shape}")
        n = 1 if segments is None else int(num_segments if num_segments is not None
                                           else (seg.max() + 1 if seg.size else 0))
        out = np.zeros((n, d))
        argmax = np.full((n, d), -1, dtype=np.int64)
        cols = np.arange(d)
        for s in range(n):
            rows = np.flatnonzero(seg == s)
            if rows.size == 0:
                continue
            block = a.value[rows]
            local = np.argmax(block, axis=0)
            out[s] = block[local, cols]
            argmax[s] = rows[local]

        def grad_fn(g):
            ga = np.zeros((m, d))
            for s in range(n):
                hit = argmax[s] >= 0
                np.add.at(ga, (argmax[s][hit], cols[hit]), g[s][hit])
            return (ga,)

        return self._record(out, (a,), grad_fn)

    def embedding(self, table: Var, indices) -> Var:
        """Row gather; also used to pick node states by edge endpoint."""
        idx = np.asarray(indices, dtype=np.int64).reshape(-1)
        if table.value.ndim != 2:
            raise ShapeMismatch(f"embedding: table must be a matrix, got {table.shape}")
        if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
            raise ShapeMismatch(f"embedding: index out of range for table {table.shape}")
        shape = table.shape

        def grad_fn(g):
            gt = np.zeros(shape)
            np.add.at(gt, idx, g)
            return (gt,)

        return self._record(table.value[idx], (table,), grad_fn)

    gather = embedding

    def dropout(self, a: Var, p: float, train: bool, rng: Optional[np.random.Generator]) -> Var:
        if not train or p <= 0.0:
            return a
        if rng is None:
            raise ValueError("dropout in train mode needs a generator")
        mask = (rng.random(a.shape) >= p) / (1.0 - p)
        return self._record(a.value * mask, (a,), lambda g: (g * mask,))

    def bce(self, pred: Var, target) -> Var:
        """Mean binary cross entropy; predictions clamped to [1e-7, 1 - 1e-7]."""
        y = np.asarray(target, dtype=np.float64).reshape(pred.shape)
        p = np.clip(pred.value, BCE_CLAMP, 1.0 - BCE_CLAMP)
        inside = (pred.value > BCE_CLAMP) & (pred.value < 1.0 - BCE_CLAMP)
        n = pred.value.size
        loss = -(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)).sum() / n

        def grad_fn(g):
            d = (p - y) / (p * (1.0 - p)) / n
            return (g.item() * d * inside,)

        return self._record(np.array([[loss]]), (pred,), grad_fn)


def backward(tape: Tape, loss: Var) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss for every named parameter on the tape."""
    if loss.value.size != 1:
        raise ShapeMismatch(f"backward: loss must be scalar, got {loss.shape}")
    if loss.tape is not tape:
        raise Unreachable("loss was not recorded on this tape")
    if not tape.records or tape.records[-1].out is not loss:
        if not any(r.out is loss for r in tape.records) and loss not in tape.params.values():
            raise Unreachable("loss is not an output of any recorded primitive")

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.value)}
    for rec in reversed(tape.records):
        g = grads.get(id(rec.out))
        if g is None:
            continue
        for inp, gi in zip(rec.inputs, rec.grad_fn(g)):
            if gi is None:
                continue
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = np.array(gi, dtype=np.float64)
    return {name: grads.get(id(var), np.zeros_like(var.value)) for name, var in tape.params.items()}


LossFn = Callable[[dict[str, np.ndarray]], tuple[Tape, Var]]


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(1e-8, abs(analytic) + abs(numeric))


def grad_check(f: LossFn, params: dict[str, np.ndarray], samples: int = 100, seed: int = 0,
               eps: float = 1e-5) -> float:
    """Max relative error of analytic vs central-difference gradients.

    `f` builds a fresh tape from the parameter arrays and returns (tape, loss);
    any randomness inside it must be re-seeded per call so masks stay fixed.
    """
    params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    tape, loss = f(params)
    analytic = backward(tape, loss)

    coords = [(name, i) for name in sorted(params) for i in range(params[name].size)]
    rng = np.random.default_rng(seed)
    if len(coords) > samples:
        picked = sorted(rng.choice(len(coords), size=samples, replace=False))
        coords = [coords[i] for i in picked]

    worst = 0.0
    for name, i in coords:
        base = params[name]
        flat = base.reshape(-1)
        original = flat[i]
        flat[i] = original + eps
        plus = f(params)[1].item()
        flat[i] = original - eps
        minus = f(params)[1].item()
        flat[i] = original
        numeric = (plus - minus) / (2 * eps)
        worst = max(worst, relative_error(float(analytic[name].reshape(-1)[i]), numeric))
    logger.debug(f"grad_check: {len(coords)} coordinates, max relative error {worst:.3e}")
    return worst
