"""Reverse-mode automatic differentiation over dense float64 matrices.

A :class:`Tape` records every operation in execution order; calling
:func:`backward` on a scalar output walks the records in exact reverse
order, accumulating adjoints into ``Tensor.grad``.  All values are 2-D
float64 arrays (a scalar is shape (1, 1)); there is no broadcasting
beyond the dedicated row-bias op.

Tensors created without a tape act as constants: they may feed taped
ops, receive no gradient, and can be reused across tapes.  Tensors that
require gradients must be created through :meth:`Tape.variable`.

The op set covers exactly what the model needs: matrix product (plus a
variant whose left factor is a fixed, possibly sparse matrix), addition,
subtraction, row bias, scalar scaling, elementwise square, ReLU
(subgradient 0 at 0), row-wise softmax, column/row concatenation,
transpose, row gathering, inverted dropout, full summation, the
Fermi-Dirac probability map, and its numerically stable binary
cross-entropy companion.
"""

from __future__ import annotations

import weakref

import numpy as np

__all__ = [
    "AutodiffError",
    "Tensor",
    "Tape",
    "backward",
    "matmul",
    "left_const_matmul",
    "add",
    "sub",
    "add_row_bias",
    "scale",
    "elementwise_square",
    "relu",
    "row_softmax",
    "concat_cols",
    "concat_rows",
    "transpose",
    "gather_rows",
    "dropout",
    "total_sum",
    "fermi_dirac",
    "bce_with_logistic",
]


class AutodiffError(ValueError):
    """Raised for shape mismatches, tape mix-ups, or invalid op arguments."""


def _as_matrix(values) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise AutodiffError(f"tensors are 2-D, got array of shape {arr.shape}")
    return np.ascontiguousarray(arr)


class Tensor:
    """Dense float64 matrix with an optional gradient slot.

    The tape link is a weak reference: records (and their closures) are
    owned by the tape alone, so dropping the tape frees the whole graph
    by reference counting, with no cycles left for the garbage collector.
    """

    __slots__ = ("values", "grad", "requires_grad", "_tape", "name")

    def __init__(self, values, requires_grad=False, tape=None, name=""):
        self.values = _as_matrix(values)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._tape = None if tape is None else weakref.ref(tape)
        self.name = name
        if self.requires_grad and tape is None:
            raise AutodiffError(
                f"tensor {name!r} requires grad but is not attached to a tape"
            )

    @property
    def tape(self):
        return None if self._tape is None else self._tape()

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"


def constant(values, name="") -> Tensor:
    """Tape-free constant tensor, reusable across tapes."""
    return Tensor(values, requires_grad=False, tape=None, name=name)


class Tape:
    """Operation recorder.  Records run forward in execution order."""

    def __init__(self):
        self._records: list[tuple[Tensor, callable]] = []
        self._tracked: list[Tensor] = []

    def variable(self, values, name="") -> Tensor:
        """Leaf tensor that accumulates gradient on backward."""
        t = Tensor(values, requires_grad=True, tape=self, name=name)
        self._tracked.append(t)
        return t

    def _record(self, out: Tensor, backward_fn) -> None:
        self._records.append((out, backward_fn))
        self._tracked.append(out)

    def __len__(self):
        return len(self._records)

    def backward(self, loss: Tensor) -> None:
        """Reverse pass from a (1, 1) loss recorded on this tape.

        All gradients on the tape are zeroed first, so repeated calls
        give identical results.
        """
        if loss.tape is not self:
            raise AutodiffError("loss tensor was not recorded on this tape")
        if loss.shape != (1, 1):
            raise AutodiffError(
                f"backward needs a scalar loss of shape (1, 1), got {loss.shape}"
            )
        for t in self._tracked:
            if t.requires_grad:
                t.grad = np.zeros_like(t.values)
        loss.grad = np.ones((1, 1))
        for out, backward_fn in reversed(self._records):
            if out.grad is not None:
                backward_fn(out.grad)


def backward(loss: Tensor) -> None:
    """Convenience wrapper: run the reverse pass on the loss's own tape."""
    if loss.tape is None:
        raise AutodiffError("loss tensor carries no tape")
    loss.tape.backward(loss)


def _join_tape(*tensors: Tensor):
    tape = None
    for t in tensors:
        if t.tape is None:
            continue
        if tape is None:
            tape = t.tape
        elif tape is not t.tape:
            raise AutodiffError("operands come from different tapes")
    return tape


def _make_out(tape, values, inputs) -> Tensor:
    needs = tape is not None and any(t.requires_grad for t in inputs)
    return Tensor(values, requires_grad=needs, tape=tape if needs else None)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[0]:
        raise AutodiffError(f"matmul shapes {a.shape} x {b.shape} do not chain")
    tape = _join_tape(a, b)
    out = _make_out(tape, a.values @ b.values, (a, b))
    if out.requires_grad:
        def _bw(g):
            if a.requires_grad:
                a.grad += g @ b.values.T
            if b.requires_grad:
                b.grad += a.values.T @ g
        tape._record(out, _bw)
    return out


def left_const_matmul(matrix, x: Tensor) -> Tensor:
    """``matrix @ x`` where ``matrix`` is a fixed ndarray or scipy sparse.

    The left factor gets no gradient; useful for propagation operators
    and constant feature matrices on the hot path.
    """
    if matrix.shape[1] != x.shape[0]:
        raise AutodiffError(
            f"left_const_matmul shapes {matrix.shape} x {x.shape} do not chain"
        )
    vals = matrix @ x.values
    if hasattr(vals, "todense"):
        vals = np.asarray(vals.todense())
    out = _make_out(x.tape, vals, (x,))
    if out.requires_grad:
        mt = matrix.T
        def _bw(g):
            back = mt @ g
            if hasattr(back, "todense"):
                back = np.asarray(back.todense())
            x.grad += back
        x.tape._record(out, _bw)
    return out


def _same_shape(a: Tensor, b: Tensor, opname: str):
    if a.shape != b.shape:
        raise AutodiffError(f"{opname} needs equal shapes, got {a.shape} and {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    tape = _join_tape(a, b)
    out = _make_out(tape, a.values + b.values, (a, b))
    if out.requires_grad:
        def _bw(g):
            if a.requires_grad:
                a.grad += g
            if b.requires_grad:
                b.grad += g
        tape._record(out, _bw)
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    tape = _join_tape(a, b)
    out = _make_out(tape, a.values - b.values, (a, b))
    if out.requires_grad:
        def _bw(g):
            if a.requires_grad:
                a.grad += g
            if b.requires_grad:
                b.grad -= g
        tape._record(out, _bw)
    return out


def add_row_bias(x: Tensor, bias: Tensor) -> Tensor:
    """x + bias with bias of shape (1, cols), broadcast down the rows."""
    if bias.shape != (1, x.shape[1]):
        raise AutodiffError(
            f"bias shape {bias.shape} must be (1, {x.shape[1]}) for x {x.shape}"
        )
    tape = _join_tape(x, bias)
    out = _make_out(tape, x.values + bias.values, (x, bias))
    if out.requires_grad:
        def _bw(g):
            if x.requires_grad:
                x.grad += g
            if bias.requires_grad:
                bias.grad += g.sum(axis=0, keepdims=True)
        tape._record(out, _bw)
    return out


def scale(x: Tensor, factor: float) -> Tensor:
    factor = float(factor)
    out = _make_out(x.tape, factor * x.values, (x,))
    if out.requires_grad:
        def _bw(g):
            x.grad += factor * g
        x.tape._record(out, _bw)
    return out


def elementwise_square(x: Tensor) -> Tensor:
    out = _make_out(x.tape, x.values * x.values, (x,))
    if out.requires_grad:
        def _bw(g):
            x.grad += 2.0 * x.values * g
        x.tape._record(out, _bw)
    return out


def relu(x: Tensor) -> Tensor:
    """max(x, 0); the subgradient at 0 is taken as 0."""
    out = _make_out(x.tape, np.maximum(x.values, 0.0), (x,))
    if out.requires_grad:
        mask = x.values > 0.0
        def _bw(g):
            x.grad += g * mask
        x.tape._record(out, _bw)
    return out


def row_softmax(x: Tensor) -> Tensor:
    """Softmax along each row; rows of the output sum to 1."""
    shifted = x.values - x.values.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=1, keepdims=True)
    out = _make_out(x.tape, s, (x,))
    if out.requires_grad:
        def _bw(g):
            inner = (g * s).sum(axis=1, keepdims=True)
            x.grad += s * (g - inner)
        x.tape._record(out, _bw)
    return out


def concat_cols(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[0] != b.shape[0]:
        raise AutodiffError(
            f"concat_cols needs equal row counts, got {a.shape} and {b.shape}"
        )
    tape = _join_tape(a, b)
    out = _make_out(tape, np.hstack([a.values, b.values]), (a, b))
    if out.requires_grad:
        split = a.shape[1]
        def _bw(g):
            if a.requires_grad:
                a.grad += g[:, :split]
            if b.requires_grad:
                b.grad += g[:, split:]
        tape._record(out, _bw)
    return out


def concat_rows(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[1]:
        raise AutodiffError(
            f"concat_rows needs equal column counts, got {a.shape} and {b.shape}"
        )
    tape = _join_tape(a, b)
    out = _make_out(tape, np.vstack([a.values, b.values]), (a, b))
    if out.requires_grad:
        split = a.shape[0]
        def _bw(g):
            if a.requires_grad:
                a.grad += g[:split, :]
            if b.requires_grad:
                b.grad += g[split:, :]
        tape._record(out, _bw)
    return out


def transpose(x: Tensor) -> Tensor:
    out = _make_out(x.tape, x.values.T.copy(), (x,))
    if out.requires_grad:
        def _bw(g):
            x.grad += g.T
        x.tape._record(out, _bw)
    return out


def gather_rows(x: Tensor, indices) -> Tensor:
    """Select rows x[indices]; duplicate indices accumulate on backward."""
    idx = np.asarray(indices, dtype=np.int64).ravel()
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[0]):
        raise AutodiffError(
            f"gather index out of range for {x.shape[0]} rows: "
            f"[{idx.min()}, {idx.max()}]"
        )
    out = _make_out(x.tape, x.values[idx, :], (x,))
    if out.requires_grad:
        def _bw(g):
            np.add.at(x.grad, idx, g)
        x.tape._record(out, _bw)
    return out


def dropout(x: Tensor, p: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout: zero entries with probability p, scale by 1/(1-p).

    p = 0 is the identity; the mask comes from ``rng`` so the caller
    controls determinism.
    """
    if not 0.0 <= p < 1.0:
        raise AutodiffError(f"dropout probability must be in [0, 1), got {p}")
    if p == 0.0:
        return x
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    out = _make_out(x.tape, x.values * mask, (x,))
    if out.requires_grad:
        def _bw(g):
            x.grad += g * mask
        x.tape._record(out, _bw)
    return out


def total_sum(x: Tensor) -> Tensor:
    out = _make_out(x.tape, np.array([[x.values.sum()]]), (x,))
    if out.requires_grad:
        def _bw(g):
            x.grad += g[0, 0]
        x.tape._record(out, _bw)
    return out


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def fermi_dirac(dist: Tensor, delta: float, eta: float) -> Tensor:
    """Edge probability 1 / (exp((dist - delta) / eta) + 1), elementwise.

    Decreasing in dist; equals 1/2 exactly at dist = delta.
    """
    if eta <= 0:
        raise AutodiffError(f"temperature eta must be positive, got {eta}")
    z = (dist.values - delta) / eta
    p = _sigmoid(-z)
    out = _make_out(dist.tape, p, (dist,))
    if out.requires_grad:
        def _bw(g):
            dist.grad += g * (-p * (1.0 - p) / eta)
        dist.tape._record(out, _bw)
    return out


def bce_with_logistic(dist: Tensor, labels, delta: float, eta: float) -> Tensor:
    """Mean binary cross-entropy of the Fermi-Dirac probabilities.

    Computed through softplus of z = (dist - delta) / eta rather than
    through the probabilities, so large distances cannot overflow:

        loss_i = y_i * softplus(z_i) + (1 - y_i) * softplus(-z_i)

    ``labels`` is a constant 0/1 array shaped like ``dist``.
    """
    if eta <= 0:
        raise AutodiffError(f"temperature eta must be positive, got {eta}")
    y = _as_matrix(labels)
    if y.shape != dist.shape:
        raise AutodiffError(
            f"labels shape {y.shape} must match distances {dist.shape}"
        )
    z = (dist.values - delta) / eta
    losses = y * np.logaddexp(0.0, z) + (1.0 - y) * np.logaddexp(0.0, -z)
    count = float(z.size)
    out = _make_out(dist.tape, np.array([[losses.sum() / count]]), (dist,))
    if out.requires_grad:
        def _bw(g):
            local = y * _sigmoid(z) - (1.0 - y) * _sigmoid(-z)
            dist.grad += g[0, 0] * local / (count * eta)
        dist.tape._record(out, _bw)
    return out
