"""Dense float64 tensors with taped reverse-mode differentiation.

Desk-scale substrate: ranks 0..2, plain numpy kernels, gradients recorded
on an explicit :class:`Tape`. Tensors are immutable after construction
except for their ``grad`` buffers. A tape and the tensors built under it
belong to one thread of execution; distinct tapes may run on distinct
threads (the active tape is thread-local).
"""

from __future__ import annotations

import threading
from typing import Callable, Optional, Sequence

import numpy as np


class ShapeError(ValueError):
    """Operand shapes violate an operation's contract."""


class DomainError(ValueError):
    """Operand values are outside an operation's mathematical domain."""


_TLS = threading.local()


def _active_tape() -> Optional["Tape"]:
    return getattr(_TLS, "tape", None)


class Tensor:
    """A constant-or-trainable array node.

    ``data`` is a C-contiguous float64 array (row-major scalars, as many
    as the shape's extents multiply out to). ``grad`` is lazily allocated
    by :func:`backward` and only ever carries the same shape as ``data``.
    """

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim > 2:
            raise ShapeError(f"rank {arr.ndim} tensors are not supported")
        if arr.ndim and not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        """Same values, cut off from any tape."""
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={tuple(self.shape)}{flag})"


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


class Tape:
    """Execution-ordered record of differentiable operations.

    Operations executed while the tape is active append themselves, so the
    record is topologically ordered by construction (inputs always precede
    the operations that consume them) and one backward traversal visits
    each record exactly once.

    Usage::

        with Tape() as tape:
            loss = some_graph(...)
        backward(loss, tape)
    """

    __slots__ = ("_records", "_prev")

    def __init__(self):
        self._records: list[tuple[Tensor, Callable[[np.ndarray], None]]] = []
        self._prev: Optional[Tape] = None

    def __enter__(self) -> "Tape":
        self._prev = _active_tape()
        _TLS.tape = self
        return self

    def __exit__(self, exc_type, exc, tb):
        _TLS.tape = self._prev
        self._prev = None
        return False

    def __len__(self) -> int:
        return len(self._records)

    def record(self, out: Tensor, backward_fn: Callable[[np.ndarray], None]):
        """Register a custom differentiable op; ``backward_fn`` receives the
        output gradient and must accumulate into the op's input tensors."""
        self._records.append((out, backward_fn))


class _suspend_tape:
    """Context that hides the active tape (pure forward evaluation)."""

    def __enter__(self):
        self._prev = _active_tape()
        _TLS.tape = None

    def __exit__(self, exc_type, exc, tb):
        _TLS.tape = self._prev
        return False


def _accumulate(t: Tensor, g: np.ndarray):
    if t.grad is None:
        # copy: g may alias an upstream grad buffer or a broadcast view
        t.grad = np.array(g, dtype=np.float64)
        if t.grad.shape != t.data.shape:
            t.grad = np.broadcast_to(t.grad, t.data.shape).copy()
    else:
        t.grad += g


def _emit(inputs: Sequence[Tensor], data: np.ndarray,
          backward_fn: Callable[[np.ndarray], None]) -> Tensor:
    """Build the output tensor and register the backward rule if needed."""
    out = Tensor(data, requires_grad=any(t.requires_grad for t in inputs))
    tape = _active_tape()
    if tape is not None and out.requires_grad:
        tape._records.append((out, backward_fn))
    return out


# ---------------------------------------------------------------------------
# elementwise ops


def _binary_shapes(a: Tensor, b: Tensor):
    """Exact-match or scalar broadcast only."""
    if a.shape == b.shape or a.data.size == 1 or b.data.size == 1:
        return
    raise ShapeError(f"shapes {a.shape} and {b.shape} neither match nor scalar-broadcast")


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    # only scalar broadcast is possible here
    if g.shape == tuple(shape):
        return g
    return np.sum(g).reshape(shape)


def add(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes(a, b)

    def bw(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g, b.shape))

    return _emit((a, b), a.data + b.data, bw)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes(a, b)

    def bw(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(-g, b.shape))

    return _emit((a, b), a.data - b.data, bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes(a, b)
    ad, bd = a.data, b.data

    def bw(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g * bd, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g * ad, b.shape))

    return _emit((a, b), ad * bd, bw)


def div(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes(a, b)
    ad, bd = a.data, b.data
    if np.any(bd == 0.0):
        raise DomainError("division by zero")

    def bw(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g / bd, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(-g * ad / (bd * bd), b.shape))

    return _emit((a, b), ad / bd, bw)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0.0

    def bw(g):
        if a.requires_grad:
            _accumulate(a, g * mask)

    return _emit((a,), np.where(mask, a.data, 0.0), bw)


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    if not np.all(np.isfinite(out)):
        raise DomainError("exp overflow")

    def bw(g):
        if a.requires_grad:
            _accumulate(a, g * out)

    return _emit((a,), out, bw)


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0.0):
        raise DomainError("log of a non-positive value")
    ad = a.data

    def bw(g):
        if a.requires_grad:
            _accumulate(a, g / ad)

    return _emit((a,), np.log(ad), bw)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)

    def bw(g):
        if a.requires_grad:
            _accumulate(a, g * c)

    return _emit((a,), a.data * c, bw)


def neg(a: Tensor) -> Tensor:
    return scale(a, -1.0)


_ELEMENTWISE = {
    "add": add, "sub": sub, "mul": mul, "div": div,
    "relu": relu, "exp": exp, "log": log, "scale-by-constant": scale,
}


def elementwise(kind: str, a: Tensor, b=None) -> Tensor:
    """Dispatch on op kind. Binary kinds require ``b`` (a Tensor, or the
    constant for ``scale-by-constant``); unary kinds forbid it."""
    if kind not in _ELEMENTWISE:
        raise ValueError(f"unknown elementwise kind {kind!r}")
    fn = _ELEMENTWISE[kind]
    if kind in ("add", "sub", "mul", "div", "scale-by-constant"):
        if b is None:
            raise ValueError(f"{kind} needs a second operand")
        return fn(a, b)
    if b is not None:
        raise ValueError(f"{kind} is unary")
    return fn(a)


# ---------------------------------------------------------------------------
# matrix / structural ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError("matmul expects rank-2 operands")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner extents disagree: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def bw(g):
        if a.requires_grad:
            _accumulate(a, g @ bd.T)
        if b.requires_grad:
            _accumulate(b, ad.T @ g)

    return _emit((a, b), ad @ bd, bw)


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError("transpose expects a rank-2 operand")

    def bw(g):
        if a.requires_grad:
            _accumulate(a, g.T)

    return _emit((a,), np.ascontiguousarray(a.data.T), bw)


def broadcast_rows(a: Tensor, rows: int) -> Tensor:
    """Tile a (1, D) tensor to (rows, D); backward sums over rows."""
    if a.data.ndim != 2 or a.shape[0] != 1:
        raise ShapeError(f"broadcast_rows expects shape (1, D), got {a.shape}")

    def bw(g):
        if a.requires_grad:
            _accumulate(a, g.sum(axis=0, keepdims=True))

    return _emit((a,), np.repeat(a.data, rows, axis=0), bw)


def broadcast_cols(a: Tensor, cols: int) -> Tensor:
    """Tile a (K, 1) tensor to (K, cols); backward sums over columns."""
    if a.data.ndim != 2 or a.shape[1] != 1:
        raise ShapeError(f"broadcast_cols expects shape (K, 1), got {a.shape}")

    def bw(g):
        if a.requires_grad:
            _accumulate(a, g.sum(axis=1, keepdims=True))

    return _emit((a,), np.repeat(a.data, cols, axis=1), bw)


def slice_cols(a: Tensor, start: int, width: int) -> Tensor:
    """Contiguous column slice of a rank-2 tensor."""
    if a.data.ndim != 2:
        raise ShapeError("slice_cols expects a rank-2 operand")
    if start < 0 or width < 1 or start + width > a.shape[1]:
        raise ShapeError(f"slice [{start}:{start + width}] outside {a.shape}")

    def bw(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[:, start:start + width] = g
            _accumulate(a, full)

    return _emit((a,), np.ascontiguousarray(a.data[:, start:start + width]), bw)


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate rank-2 tensors along columns."""
    if not parts:
        raise ShapeError("concat_cols needs at least one part")
    rows = parts[0].shape[0]
    for p in parts:
        if p.data.ndim != 2 or p.shape[0] != rows:
            raise ShapeError("concat_cols parts must share the row count")
    widths = [p.shape[1] for p in parts]
    offsets = np.cumsum([0] + widths)

    def bw(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                _accumulate(p, g[:, lo:hi])

    return _emit(tuple(parts), np.concatenate([p.data for p in parts], axis=1), bw)


def softmax_rows(a: Tensor) -> Tensor:
    """Row-wise softmax with per-row max subtraction for stability."""
    if a.data.ndim != 2:
        raise ShapeError("softmax_rows expects a rank-2 operand")
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=1, keepdims=True)

    def bw(g):
        if a.requires_grad:
            inner = (g * out).sum(axis=1, keepdims=True)
            _accumulate(a, out * (g - inner))

    return _emit((a,), out, bw)


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor, epsilon: float = 1e-5) -> Tensor:
    """Per-row zero-mean unit-variance over the last axis, then affine."""
    if a.data.ndim != 2:
        raise ShapeError("layer_norm expects a rank-2 operand")
    d = a.shape[1]
    if gain.shape != (1, d) or bias.shape != (1, d):
        raise ShapeError("gain/bias must have shape (1, D) matching the last extent")
    mu = a.data.mean(axis=1, keepdims=True)
    xc = a.data - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + epsilon)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def bw(g):
        if gain.requires_grad:
            _accumulate(gain, (g * xhat).sum(axis=0, keepdims=True))
        if bias.requires_grad:
            _accumulate(bias, g.sum(axis=0, keepdims=True))
        if a.requires_grad:
            dxhat = g * gain.data
            term = dxhat - dxhat.mean(axis=1, keepdims=True) \
                - xhat * (dxhat * xhat).mean(axis=1, keepdims=True)
            _accumulate(a, inv * term)

    return _emit((a, gain, bias), out, bw)


def _axis_keepdims(data: np.ndarray, axis):
    if axis is None:
        return ()
    return (1, data.shape[1]) if axis == 0 else (data.shape[0], 1)


def reduce(kind: str, a: Tensor, axis: Optional[int] = None):
    """Reduce over all elements (axis=None) or one axis of a rank-2 tensor.

    sum/mean/max return tensors (axis reductions keep the reduced axis with
    extent 1). argmax returns a plain integer ndarray: it is not
    differentiable and breaks the tape. Ties resolve to the lowest index.
    """
    if kind not in ("sum", "mean", "max", "argmax"):
        raise ValueError(f"unknown reduce kind {kind!r}")
    if axis is not None and (a.data.ndim != 2 or axis not in (0, 1)):
        raise ShapeError(f"axis {axis} invalid for shape {a.shape}")
    if a.data.size == 0 or (axis is not None and a.data.shape[axis] == 0):
        raise ShapeError("reduction over an empty axis")

    if kind == "argmax":
        return np.argmax(a.data, axis=axis)

    n = a.data.size if axis is None else a.data.shape[axis]
    shape = a.shape

    if kind in ("sum", "mean"):
        data = a.data.sum(axis=axis, keepdims=axis is not None)
        factor = 1.0 / n if kind == "mean" else 1.0
        if kind == "mean":
            data = data * factor

        def bw(g):
            if a.requires_grad:
                _accumulate(a, np.broadcast_to(g * factor, shape))

        return _emit((a,), data, bw)

    # max: subgradient routed to the first (lowest-index) maximum per group
    data = a.data.max(axis=axis, keepdims=axis is not None)
    if axis is None:
        flat_idx = int(np.argmax(a.data))

        def bw(g):
            if a.requires_grad:
                full = np.zeros_like(a.data)
                full.reshape(-1)[flat_idx] = float(np.asarray(g).reshape(()))
                _accumulate(a, full)
    else:
        idx = np.argmax(a.data, axis=axis)

        def bw(g):
            if a.requires_grad:
                full = np.zeros_like(a.data)
                if axis == 0:
                    full[idx, np.arange(shape[1])] = g.reshape(-1)
                else:
                    full[np.arange(shape[0]), idx] = g.reshape(-1)
                _accumulate(a, full)

    return _emit((a,), data, bw)


def assemble(cells) -> Tensor:
    """Stack a 2-D nested sequence of single-element tensors into a matrix.

    Backward routes each output cell's gradient to its source scalar.
    """
    rows = len(cells)
    if rows == 0 or len(cells[0]) == 0:
        raise ShapeError("assemble needs a non-empty cell grid")
    cols = len(cells[0])
    flat: list[Tensor] = []
    data = np.empty((rows, cols), dtype=np.float64)
    for i, row in enumerate(cells):
        if len(row) != cols:
            raise ShapeError("assemble needs a rectangular cell grid")
        for j, cell in enumerate(row):
            if cell.data.size != 1:
                raise ShapeError("assemble cells must be single-element tensors")
            data[i, j] = cell.data.reshape(())
            flat.append(cell)

    def bw(g):
        k = 0
        for i in range(rows):
            for j in range(cols):
                cell = flat[k]
                if cell.requires_grad:
                    _accumulate(cell, np.full(cell.shape, g[i, j]))
                k += 1

    return _emit(flat, data, bw)


# ---------------------------------------------------------------------------
# backward pass and the finite-difference oracle


def backward(root: Tensor, tape: Tape):
    """Populate grad buffers for everything reachable from ``root``.

    The root must be scalar-shaped. Leaf gradients accumulate across
    repeated calls; callers that want fresh leaf gradients must zero them
    first (:func:`zero_grads`). Intermediate (tape-output) gradients are
    reset internally on every call.
    """
    if root.data.size != 1:
        raise ShapeError(f"backward root must be scalar-shaped, got {root.shape}")
    for out, _ in tape._records:
        out.grad = None
    root.grad = np.ones_like(root.data)
    for out, backward_fn in reversed(tape._records):
        g = out.grad
        if g is None:
            continue
        backward_fn(g)


def zero_grads(tensors):
    for t in tensors:
        t.grad = None


def finite_diff_check(f, x: Tensor, step: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` must be a deterministic scalar-valued function of one tensor.
    Returns max over coordinates of
    ``|analytic - central| / max(1e-8, |central|)``.
    """
    if step <= 0.0:
        raise DomainError("step must be positive")
    base = np.array(x.data, dtype=np.float64, copy=True)

    probe = Tensor(base, requires_grad=True)
    with Tape() as tape:
        out = f(probe)
    if out.data.size != 1:
        raise ShapeError("finite_diff_check needs a scalar-valued function")
    backward(out, tape)
    analytic = probe.grad if probe.grad is not None else np.zeros_like(base)
    analytic = analytic.ravel()

    worst = 0.0
    flat = base.ravel()
    with _suspend_tape():
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + step
            f_plus = f(Tensor(base)).item()
            flat[i] = saved - step
            f_minus = f(Tensor(base)).item()
            flat[i] = saved
            central = (f_plus - f_minus) / (2.0 * step)
            err = abs(analytic[i] - central) / max(1e-8, abs(central))
            if err > worst:
                worst = err
    return worst
