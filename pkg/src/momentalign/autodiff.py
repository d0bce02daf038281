"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every primitive records one node on the active :class:`Tape` when at least one
of its inputs requires a gradient.  :func:`backward` sweeps the tape once, in
reverse record order, and returns the gradients of all leaf tensors.

Usage::

    with Tape():
        loss = ad.sum(ad.mul(x, x))
    grads = ad.backward(loss)
"""

from __future__ import annotations

import contextvars
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .exceptions import ContractError, DimensionError

SIGNED_SQRT_FLOOR = 2.5e-13
NORM_EPS = 1e-12

_active_tape: contextvars.ContextVar[Optional["Tape"]] = contextvars.ContextVar(
    "momentalign_active_tape", default=None
)

ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence]


class Tensor:
    """A float64 array that may take part in a recorded computation."""

    __slots__ = ("data", "requires_grad", "grad", "node", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.node: Optional[Node] = None
        self.name = name

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    @property
    def T(self) -> "Tensor":
        return transpose(self)


class Node:
    """One recorded primitive application."""

    __slots__ = ("op", "inputs", "output", "backward_fn", "tape")

    def __init__(self, op: str, inputs: Tuple[Tensor, ...], output: Tensor,
                 backward_fn: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]],
                 tape: "Tape"):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn
        self.tape = tape


class Tape:
    """Ordered record of primitive applications; activate with ``with``."""

    def __init__(self):
        self.nodes: List[Node] = []
        self._token = None

    def __enter__(self) -> "Tape":
        self._token = _active_tape.set(self)
        return self

    def __exit__(self, *exc):
        _active_tape.reset(self._token)
        self._token = None
        return False

    def __len__(self) -> int:
        return len(self.nodes)


def active_tape() -> Optional[Tape]:
    return _active_tape.get()


def as_tensor(x: ArrayLike) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(op: str, inputs: Tuple[Tensor, ...], out_data: np.ndarray,
            backward_fn) -> Tensor:
    out = Tensor(out_data)
    tape = _active_tape.get()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        node = Node(op, inputs, out, backward_fn, tape)
        out.node = node
        tape.nodes.append(node)
    return out


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# arithmetic and shape primitives
# ---------------------------------------------------------------------------

def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _record("add", (a, b), a.data + b.data, backward)


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _record("sub", (a, b), a.data - b.data, backward)


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _record("mul", (a, b), a.data * b.data, backward)


def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    """Matrix product of two 2-D tensors."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")

    def backward(g):
        return g @ b.data.T, a.data.T @ g

    return _record("matmul", (a, b), a.data @ b.data, backward)


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise DimensionError(f"transpose expects a 2-D tensor, got shape {a.shape}")

    def backward(g):
        return (g.T,)

    return _record("transpose", (a,), a.data.T.copy(), backward)


def reshape(a: Tensor, shape: Tuple[int, ...]) -> Tensor:
    original = a.shape

    def backward(g):
        return (g.reshape(original),)

    return _record("reshape", (a,), a.data.reshape(shape), backward)


def getitem(a: Tensor, index) -> Tensor:
    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return _record("getitem", (a,), np.array(a.data[index]), backward)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, cuts, axis=axis))

    return _record("concat", tensors, np.concatenate([t.data for t in tensors], axis=axis),
                   backward)


def stack_rows(vectors: Sequence[Tensor]) -> Tensor:
    """Stack 1-D tensors of equal length into a 2-D tensor, one per row."""
    return concat([reshape(v, (1, v.shape[-1])) for v in vectors], axis=0)


def sum(a: Tensor, axis: Optional[int] = None) -> Tensor:  # noqa: A001
    shape = a.shape

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _record("sum", (a,), np.sum(a.data, axis=axis), backward)


def mean(a: Tensor, axis: Optional[int] = None) -> Tensor:
    count = a.size if axis is None else a.shape[axis]
    return mul(sum(a, axis=axis), 1.0 / count)


# ---------------------------------------------------------------------------
# elementwise nonlinearities
# ---------------------------------------------------------------------------

def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)

    def backward(g):
        return (g * (1.0 - y * y),)

    return _record("tanh", (x,), y, backward)


def stable_sigmoid(v: np.ndarray) -> np.ndarray:
    # branch-free stable form: exp never sees a positive argument
    e = np.exp(-np.abs(v))
    return np.where(v >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(x: Tensor) -> Tensor:
    y = stable_sigmoid(x.data)

    def backward(g):
        return (g * y * (1.0 - y),)

    return _record("sigmoid", (x,), y, backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def backward(g):
        return (g * mask,)

    return _record("relu", (x,), x.data * mask, backward)


def signed_sqrt(x: Tensor) -> Tensor:
    """sign(v) * sqrt(|v|); the derivative is capped at 1e6 around zero."""
    mag = np.abs(x.data)
    y = np.sign(x.data) * np.sqrt(mag)

    def backward(g):
        return (g * 0.5 / np.sqrt(np.maximum(mag, SIGNED_SQRT_FLOOR)),)

    return _record("signed_sqrt", (x,), y, backward)


_ELEMENTWISE = {"tanh": tanh, "sigmoid": sigmoid, "relu": relu, "signed_sqrt": signed_sqrt}


def elementwise(f: str, x: ArrayLike) -> Tensor:
    try:
        fn = _ELEMENTWISE[f]
    except KeyError:
        raise ValueError(f"unknown elementwise function {f!r}; "
                         f"expected one of {sorted(_ELEMENTWISE)}") from None
    return fn(as_tensor(x))


# ---------------------------------------------------------------------------
# normalisation
# ---------------------------------------------------------------------------

def softmax(x: Tensor, axis: int = -1) -> Tensor:
    if x.size == 0:
        raise DimensionError("softmax of an empty tensor")
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / np.sum(e, axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - np.sum(g * y, axis=axis, keepdims=True)),)

    return _record("softmax", (x,), y, backward)


def l2_normalize_rows(x: Tensor, eps: float = NORM_EPS) -> Tensor:
    """Divide each row by max(||row||, eps); all-zero rows stay zero."""
    if x.ndim != 2:
        raise DimensionError(f"l2_normalize_rows expects a 2-D tensor, got {x.shape}")
    norms = np.sqrt(np.sum(x.data * x.data, axis=1, keepdims=True))
    denom = np.maximum(norms, eps)
    y = x.data / denom
    clipped = norms <= eps

    def backward(g):
        radial = np.sum(g * y, axis=1, keepdims=True)
        grad = (g - np.where(clipped, 0.0, y * radial)) / denom
        return (grad,)

    return _record("l2_normalize_rows", (x,), y, backward)


# ---------------------------------------------------------------------------
# temporal convolution and pooling
# ---------------------------------------------------------------------------

def _pad_amounts(width: int, padding: str) -> Tuple[int, int]:
    if padding == "valid":
        return 0, 0
    if padding == "same":
        return (width - 1) // 2, width // 2
    raise ValueError(f"padding must be 'same' or 'valid', got {padding!r}")


def conv1d(x: Tensor, kernels: Tensor, stride: int = 1, padding: str = "valid") -> Tensor:
    """Temporal cross-correlation of ``x`` (T x c_in) with ``kernels`` (w x c_in x c_out)."""
    x, kernels = as_tensor(x), as_tensor(kernels)
    if x.ndim != 2 or kernels.ndim != 3:
        raise DimensionError(f"conv1d expects x (T, c_in) and kernels (w, c_in, c_out), "
                             f"got {x.shape} and {kernels.shape}")
    if stride < 1:
        raise ValueError(f"stride must be positive, got {stride}")
    width, c_in, c_out = kernels.shape
    if x.shape[1] != c_in:
        raise DimensionError(f"conv1d channel mismatch: x {x.shape} vs kernels {kernels.shape}")
    left, right = _pad_amounts(width, padding)
    length = x.shape[0] + left + right
    if width > length:
        raise DimensionError(f"conv1d kernel width {width} exceeds padded input length "
                             f"{length} (x {x.shape})")
    out_len = (length - width) // stride + 1
    padded = np.pad(x.data, ((left, right), (0, 0)))
    rows = (np.arange(out_len) * stride)[:, None] + np.arange(width)[None, :]
    cols = padded[rows].reshape(out_len, width * c_in)
    flat_k = kernels.data.reshape(width * c_in, c_out)

    def backward(g):
        d_cols = (g @ flat_k.T).reshape(out_len, width, c_in)
        d_padded = np.zeros_like(padded)
        np.add.at(d_padded, rows, d_cols)
        d_x = d_padded[left:left + x.shape[0]]
        d_k = (cols.T @ g).reshape(width, c_in, c_out)
        return d_x, d_k

    return _record("conv1d", (x, kernels), cols @ flat_k, backward)


def max_pool1d(x: Tensor, window: int, stride: int) -> Tensor:
    """Per-channel windowed maximum; gradient goes to the first maximum."""
    if x.ndim != 2:
        raise DimensionError(f"max_pool1d expects a (T, c) tensor, got {x.shape}")
    if window < 1 or stride < 1:
        raise ValueError("window and stride must be positive")
    length, channels = x.shape
    if window > length:
        raise DimensionError(f"pooling window {window} exceeds input length {length}")
    out_len = (length - window) // stride + 1
    rows = (np.arange(out_len) * stride)[:, None] + np.arange(window)[None, :]
    windows = x.data[rows]                      # out_len x window x c
    arg = np.argmax(windows, axis=1)            # first index on ties
    src = rows[np.arange(out_len)[:, None], arg]
    y = np.take_along_axis(windows, arg[:, None, :], axis=1)[:, 0, :]
    chan = np.broadcast_to(np.arange(channels), src.shape)

    def backward(g):
        d_x = np.zeros_like(x.data)
        np.add.at(d_x, (src, chan), g)
        return (d_x,)

    return _record("max_pool1d", (x,), y, backward)


# ---------------------------------------------------------------------------
# loss primitive
# ---------------------------------------------------------------------------

def bce_with_logits_sum(logits: Tensor, targets: ArrayLike) -> Tensor:
    """Sum of sigmoid cross-entropies, evaluated without forming log(sigmoid)."""
    t = np.asarray(targets.data if isinstance(targets, Tensor) else targets, dtype=np.float64)
    if t.shape != logits.shape:
        raise DimensionError(f"logits {logits.shape} and targets {t.shape} differ")
    z = logits.data
    value = np.sum(np.maximum(z, 0.0) - z * t + np.log1p(np.exp(-np.abs(z))))

    def backward(g):
        return (g * (stable_sigmoid(z) - t),)

    return _record("bce_with_logits_sum", (logits,), np.array(value), backward)


# ---------------------------------------------------------------------------
# reverse sweep and gradient oracle
# ---------------------------------------------------------------------------

def backward(loss: Tensor) -> Dict[Tensor, np.ndarray]:
    """Reverse sweep from a scalar ``loss``.

    Leaf tensors that require gradients get ``.grad`` accumulated and are
    returned in a ``{tensor: gradient}`` map.  Detached tensors never appear.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss.node is None:
        raise ContractError("loss was not recorded on a tape (no input requires grad, "
                            "or no Tape was active)")
    tape = loss.node.tape
    grads: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: Dict[int, Tensor] = {}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        for inp, gi in zip(node.inputs, node.backward_fn(g)):
            if gi is None or not inp.requires_grad:
                continue
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
            if inp.node is None:
                leaves[key] = inp
    result: Dict[Tensor, np.ndarray] = {}
    for key, leaf in leaves.items():
        g = np.asarray(grads[key], dtype=np.float64).reshape(leaf.shape)
        leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g
        result[leaf] = g
    return result


def finite_difference_check(f: Callable, x: Union[Tensor, Sequence[Tensor]],
                            h: float = 1e-4,
                            observe: Optional[Callable[["Tape"], None]] = None) -> float:
    """Max relative error between tape gradients and central differences.

    ``f`` maps the tensor(s) ``x`` to a scalar tensor.  For each input the
    error is max_j |g_ad[j] - g_fd[j]| / max(||g_ad||_inf, ||g_fd||_inf, 1e-8),
    i.e. measured against that input's gradient scale, so coordinates whose
    gradient is many orders smaller than its neighbours do not turn the O(h^2)
    truncation term into a spurious relative failure.

    ``observe``, if given, receives the tape of the unperturbed evaluation and
    of every perturbed one (used to detect probes that straddle a kink).
    """
    xs = [x] if isinstance(x, Tensor) else list(x)
    leaves = [Tensor(t.data, requires_grad=True) for t in xs]

    def call(args):
        return f(args[0]) if isinstance(x, Tensor) else f(args)

    with Tape() as tape:
        out = call(leaves)
    if observe is not None:
        observe(tape)
    if out.node is None:
        analytic = [np.zeros(t.shape) for t in leaves]
    else:
        grad_map = backward(out)
        analytic = [grad_map.get(t, np.zeros(t.shape)) for t in leaves]

    worst = 0.0
    for i, t in enumerate(xs):
        base = t.data.astype(np.float64).copy()
        flat = base.reshape(-1)
        g_ad = analytic[i].reshape(-1)
        g_fd = np.empty_like(g_ad)
        for j in range(flat.size):
            old = flat[j]
            flat[j] = old + h
            plus = _evaluate(call, xs, i, base, observe)
            flat[j] = old - h
            minus = _evaluate(call, xs, i, base, observe)
            flat[j] = old
            g_fd[j] = (plus - minus) / (2.0 * h)
        if g_ad.size:
            scale = max(np.abs(g_ad).max(), np.abs(g_fd).max(), 1e-8)
            worst = max(worst, float(np.abs(g_ad - g_fd).max() / scale))
    return worst


def _evaluate(call, xs, i, replacement, observe=None) -> float:
    if observe is None:
        args = [Tensor(replacement) if k == i else Tensor(t.data) for k, t in enumerate(xs)]
        return float(call(args).data)
    args = [Tensor(replacement if k == i else t.data, requires_grad=True)
            for k, t in enumerate(xs)]
    with Tape() as tape:
        value = float(call(args).data)
    observe(tape)
    return value
