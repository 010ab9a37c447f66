"""Dense float64 tensors with tape-based reverse-mode automatic differentiation.

Every numeric operation the model needs lives here: matrix product, dilated
1-d convolution, activations, reductions, row gather, and binary
cross-entropy.  Operations executed while a :class:`GradTape` is active are
recorded in insertion order; ``backward`` replays the tape in reverse and
accumulates gradients into every tensor that requires them.  A tensor that
feeds several consumers receives the sum of all incoming contributions.

``grad_check`` compares analytic gradients against central finite
differences and is the verification tool behind the gradient test suite.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .errors import ConfigError, GradTapeError, ShapeError

__all__ = [
    "Tensor",
    "GradTape",
    "backward",
    "grad_check",
    "GradCheckReport",
    "matmul",
    "transpose",
    "reshape",
    "conv1d_dilated",
    "same_padding",
    "add",
    "mul",
    "softmax",
    "sigmoid",
    "relu",
    "tanh",
    "mean",
    "tensor_sum",
    "concat",
    "gather_rows",
    "bce_loss",
]

_TAPE_STACK: list["GradTape"] = []

_SIGMOID_EPS = 1e-12


def _active_tape():
    return _TAPE_STACK[-1] if _TAPE_STACK else None


class Tensor:
    """A dense float64 array plus an optional gradient buffer.

    Tensors are value-like: treat ``data`` as immutable once the tensor has
    entered a computation; only the owning tape's backward pass writes to
    ``grad``.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "tape_id")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self.tape_id: int | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    # Operator sugar; the module-level functions are the primary API.
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None):
        return tensor_sum(self, axis=axis)

    def mean(self, axis=None):
        return mean(self, axis=axis)

    @property
    def T(self):
        return transpose(self)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class GradTape:
    """Ordered record of operations for one reverse pass.

    Nodes are appended as operations execute, so insertion order is a valid
    topological order of the computation DAG.  ``backward`` walks the nodes
    in reverse; calling it a second time without ``reset`` raises.
    """

    def __init__(self):
        self.nodes: list[tuple[Tensor, object]] = []
        self._consumed = False

    def __enter__(self) -> "GradTape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        popped = _TAPE_STACK.pop()
        assert popped is self

    def _record(self, out: Tensor, backward_fn) -> None:
        out.tape_id = len(self.nodes)
        self.nodes.append((out, backward_fn))

    def backward(self, loss: Tensor) -> None:
        """Populate ``grad`` on every recorded tensor reachable from ``loss``."""
        if self._consumed:
            raise GradTapeError("backward already ran on this tape; call reset() first")
        if loss.data.ndim != 0:
            raise ValueError(f"backward requires a scalar loss, got shape {loss.shape}")
        self._consumed = True
        loss.grad = np.ones((), dtype=np.float64)
        for out, backward_fn in reversed(self.nodes):
            if out.grad is None:
                continue  # not on a path to the loss
            backward_fn(out.grad)

    def reset(self) -> None:
        self.nodes.clear()
        self._consumed = False


def backward(loss: Tensor) -> None:
    """Run the active tape's reverse pass from ``loss``."""
    tape = _active_tape()
    if tape is None:
        raise GradTapeError("no active GradTape")
    tape.backward(loss)


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    out = Tensor(data, requires_grad=any(p.requires_grad for p in parents))
    tape = _active_tape()
    if tape is not None and out.requires_grad:
        tape._record(out, backward_fn)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape``, inverting numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of two 2-d tensors; gradients for both operands."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul expects 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} x {b.shape}")
    ad, bd = a.data, b.data

    def bwd(g):
        if a.requires_grad:
            _accumulate(a, g @ bd.T)
        if b.requires_grad:
            _accumulate(b, ad.T @ g)

    return _make(ad @ bd, (a, b), bwd)


def transpose(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    if x.data.ndim != 2:
        raise ShapeError(f"transpose expects a 2-d tensor, got {x.shape}")

    def bwd(g):
        _accumulate(x, g.T)

    return _make(x.data.T.copy(), (x,), bwd)


def reshape(x: Tensor, shape) -> Tensor:
    x = _as_tensor(x)
    old = x.shape

    def bwd(g):
        _accumulate(x, g.reshape(old))

    return _make(x.data.reshape(shape).copy(), (x,), bwd)


# ---------------------------------------------------------------------------
# convolution


def same_padding(kernel_size: int, dilation: int) -> int:
    """Padding that preserves sequence length: r*(K-1)/2, K odd."""
    if kernel_size % 2 == 0:
        raise ConfigError(
            f"length-preserving padding requires an odd kernel size, got {kernel_size}"
        )
    return dilation * (kernel_size - 1) // 2


def conv1d_dilated(
    x: Tensor,
    filters: Tensor,
    dilation: int,
    padding: int,
    causal: bool = False,
) -> Tensor:
    """Stride-1 dilated 1-d convolution over a [n, d_in] sequence.

    ``filters`` has shape [K, d_in, d_out].  Kernel taps are spaced
    ``dilation`` positions apart.  By default ``padding`` zeros are added on
    both ends (centered/same convolution); with ``causal=True`` all padding
    goes on the left, so output position s never sees inputs right of s.
    """
    x, filters = _as_tensor(x), _as_tensor(filters)
    if not isinstance(dilation, (int, np.integer)) or dilation < 1:
        raise ValueError(f"dilation must be a positive integer, got {dilation!r}")
    if padding < 0:
        raise ValueError(f"padding must be nonnegative, got {padding}")
    if x.data.ndim != 2 or filters.data.ndim != 3:
        raise ShapeError(
            f"conv1d_dilated expects x [n, d_in] and filters [K, d_in, d_out], "
            f"got {x.shape} and {filters.shape}"
        )
    n, d_in = x.shape
    k, f_in, d_out = filters.shape
    if f_in != d_in:
        raise ShapeError(f"filter input channels {f_in} != sequence channels {d_in}")

    pad = (padding, 0) if causal else (padding, padding)
    xp = np.pad(x.data, (pad, (0, 0)))
    span = dilation * (k - 1)
    n_out = xp.shape[0] - span
    if n_out < 1:
        raise ShapeError(
            f"sequence of length {n} with padding {padding} is shorter than the "
            f"kernel span {span + 1} (K={k}, dilation={dilation})"
        )

    idx = np.arange(n_out)[:, None] + dilation * np.arange(k)[None, :]
    windows = xp[idx]  # [n_out, K, d_in]
    w2d = filters.data.reshape(k * d_in, d_out)
    out = windows.reshape(n_out, k * d_in) @ w2d

    def bwd(g):
        if filters.requires_grad:
            gw = windows.reshape(n_out, k * d_in).T @ g
            _accumulate(filters, gw.reshape(k, d_in, d_out))
        if x.requires_grad:
            gwin = (g @ w2d.T).reshape(n_out, k, d_in)
            gxp = np.zeros_like(xp)
            for j in range(k):
                gxp[j * dilation : j * dilation + n_out] += gwin[:, j, :]
            _accumulate(x, gxp[pad[0] : pad[0] + n, :])

    return _make(out, (x, filters), bwd)


# ---------------------------------------------------------------------------
# elementwise and reductions


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)

    def bwd(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), bwd)


def mul(a, b) -> Tensor:
    """Elementwise product with numpy broadcasting (covers broadcast_mul)."""
    a, b = _as_tensor(a), _as_tensor(b)
    ad, bd = a.data, b.data

    def bwd(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g * bd, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g * ad, b.shape))

    return _make(ad * bd, (a, b), bwd)


def relu(x) -> Tensor:
    x = _as_tensor(x)
    out = np.maximum(x.data, 0.0)

    def bwd(g):
        _accumulate(x, g * (x.data > 0.0))

    return _make(out, (x,), bwd)


def tanh(x) -> Tensor:
    x = _as_tensor(x)
    out = np.tanh(x.data)

    def bwd(g):
        _accumulate(x, g * (1.0 - out * out))

    return _make(out, (x,), bwd)


def sigmoid(x) -> Tensor:
    """Logistic function, clamped to the open interval (0, 1).

    The clamp keeps saturated outputs off the exact 0/1 endpoints so
    downstream logs stay finite; the saturated gradient is ~0 either way.
    """
    x = _as_tensor(x)
    out = np.clip(expit(x.data), _SIGMOID_EPS, 1.0 - _SIGMOID_EPS)

    def bwd(g):
        _accumulate(x, g * out * (1.0 - out))

    return _make(out, (x,), bwd)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Max-subtracted softmax along ``axis``; rows sum to 1."""
    x = _as_tensor(x)
    if x.data.ndim == 0:
        raise ValueError("softmax needs at least one axis")
    try:
        axis = int(axis)
        np.moveaxis(x.data, axis, -1)
    except Exception as exc:
        raise ValueError(f"invalid softmax axis {axis} for shape {x.shape}") from exc
    if x.data.shape[axis] == 0:
        raise ValueError(f"softmax over empty axis {axis} of shape {x.shape}")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    ez = np.exp(z)
    out = ez / ez.sum(axis=axis, keepdims=True)

    def bwd(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        _accumulate(x, out * (g - inner))

    return _make(out, (x,), bwd)


def mean(x: Tensor, axis=None) -> Tensor:
    x = _as_tensor(x)
    if axis is not None:
        axis = int(axis)
    denom = x.data.size if axis is None else x.data.shape[axis]
    if denom == 0:
        raise ValueError("mean over an empty axis")

    def bwd(g):
        if axis is None:
            _accumulate(x, np.full_like(x.data, 1.0 / denom) * g)
        else:
            _accumulate(x, np.expand_dims(g, axis) / denom * np.ones_like(x.data))

    return _make(x.data.mean(axis=axis), (x,), bwd)


def tensor_sum(x: Tensor, axis=None) -> Tensor:
    x = _as_tensor(x)
    if axis is not None:
        axis = int(axis)

    def bwd(g):
        if axis is None:
            _accumulate(x, np.full_like(x.data, 1.0) * g)
        else:
            _accumulate(x, np.expand_dims(g, axis) * np.ones_like(x.data))

    return _make(x.data.sum(axis=axis), (x,), bwd)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise ValueError("concat of an empty sequence")
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            _accumulate(t, piece)

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), bwd)


def gather_rows(table: Tensor, ids) -> Tensor:
    """Select rows of a [V, d] table; gradients scatter-add back into it.

    Duplicate ids accumulate their gradient contributions additively.
    """
    table = _as_tensor(table)
    if table.data.ndim != 2:
        raise ShapeError(f"gather_rows expects a 2-d table, got {table.shape}")
    ids = np.asarray(ids, dtype=np.int64).reshape(-1)
    v = table.shape[0]
    if ids.size:
        bad = ids[(ids < 0) | (ids >= v)]
        if bad.size:
            raise IndexError(f"row id {int(bad[0])} out of range for table with {v} rows")
    out = table.data[ids] if ids.size else np.zeros((0, table.shape[1]))

    def bwd(g):
        if table.requires_grad and ids.size:
            gt = np.zeros_like(table.data)
            np.add.at(gt, ids, g)
            _accumulate(table, gt)

    return _make(out, (table,), bwd)


_BCE_EPS = 1e-12


def bce_loss(pred: Tensor, gold) -> Tensor:
    """Multi-label binary cross-entropy, summed over labels.

    ``pred`` holds probabilities; they are clamped to [eps, 1-eps] before the
    logs so confident predictions stay finite.  ``gold`` must be 0/1.
    """
    pred = _as_tensor(pred)
    gold_arr = gold.data if isinstance(gold, Tensor) else np.asarray(gold, dtype=np.float64)
    if gold_arr.shape != pred.shape:
        raise ShapeError(f"pred shape {pred.shape} != gold shape {gold_arr.shape}")
    if not np.isin(gold_arr, (0.0, 1.0)).all():
        raise ValueError("gold labels must be 0 or 1")
    p = np.clip(pred.data, _BCE_EPS, 1.0 - _BCE_EPS)
    loss = float(-(gold_arr * np.log(p) + (1.0 - gold_arr) * np.log1p(-p)).sum())

    def bwd(g):
        _accumulate(pred, g * (p - gold_arr) / (p * (1.0 - p)))

    return _make(np.asarray(loss), (pred,), bwd)


# ---------------------------------------------------------------------------
# finite-difference verification


@dataclass
class GradCheckReport:
    """Outcome of one analytic-vs-numeric gradient comparison."""

    max_rel_err: float
    tol: float
    per_input: list[float] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tol


def grad_check(op, inputs, tol: float = 1e-4, step: float = 1e-5, seed: int = 0) -> GradCheckReport:
    """Compare analytic gradients of ``op(*inputs)`` against central differences.

    The output is contracted to a scalar through a fixed random projection so
    structurally degenerate reductions (e.g. summing a softmax) cannot hide a
    wrong gradient.  Errors are measured relative to the gradient's own
    magnitude; the report passes when the worst error is below ``tol``.
    """
    rng = np.random.default_rng(seed)
    checked = [t for t in inputs if isinstance(t, Tensor) and t.requires_grad]
    if not checked:
        raise ValueError("grad_check needs at least one input with requires_grad")

    probe = None

    def scalar_loss():
        nonlocal probe
        out = op(*inputs)
        if probe is None:
            probe = rng.standard_normal(out.shape)
        return tensor_sum(mul(out, Tensor(probe)))

    for t in checked:
        t.zero_grad()
    with GradTape() as tape:
        loss = scalar_loss()
        tape.backward(loss)
    analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in checked]

    errs = []
    for t, a in zip(checked, analytic):
        num = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        nflat = num.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = float(scalar_loss().data)
            flat[i] = orig - step
            lo = float(scalar_loss().data)
            flat[i] = orig
            nflat[i] = (hi - lo) / (2.0 * step)
        scale = max(np.abs(a).max(initial=0.0), np.abs(num).max(initial=0.0), 1e-8)
        errs.append(float(np.abs(a - num).max(initial=0.0) / scale))
    return GradCheckReport(max_rel_err=max(errs), tol=tol, per_input=errs)
