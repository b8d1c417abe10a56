"""Dense tensors with reverse-mode automatic differentiation.

Every value flowing through the engine is a :class:`Tensor` wrapping a
row-major numpy array. Differentiable operations record themselves on the
active :class:`Tape` (if any); :meth:`Tape.backward` replays the records in
reverse and accumulates gradients into every ``requires_grad`` tensor that
is reachable from the loss. With no tape active, operations run eagerly
with no graph bookkeeping, which is the inference path.

Element type is float32 by default and float64 under
:func:`use_dtype`, the verification mode used by the finite-difference
gradient checks.
"""

from __future__ import annotations

from contextlib import contextmanager
from typing import Callable, Iterator, Sequence

import numpy as np

from .errors import ContractError, ShapeError, VerificationError

_DEFAULT_DTYPE = np.float32
_ACTIVE_TAPE: "Tape | None" = None


def default_dtype() -> np.dtype:
    return np.dtype(_DEFAULT_DTYPE)


def set_default_dtype(dtype) -> None:
    """Switch the global element type (float32 for training, float64 for verification)."""
    global _DEFAULT_DTYPE
    dt = np.dtype(dtype)
    if dt not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ContractError(f"unsupported element type {dt}; use float32 or float64")
    _DEFAULT_DTYPE = dt.type


@contextmanager
def use_dtype(dtype) -> Iterator[None]:
    """Temporarily switch the default element type (e.g. float64 for gradient checks)."""
    previous = _DEFAULT_DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(previous)


class Tensor:
    """A dense n-dimensional array, optionally tracked for gradients.

    Tensors are immutable after construction except through designated
    parameter-update entry points (the optimizer mutates ``data`` of
    parameters in place). ``grad`` is populated by :meth:`Tape.backward`
    and accumulates across backward passes until explicitly zeroed.
    """

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            arr = np.asarray(data)
            if not np.issubdtype(arr.dtype, np.floating):
                arr = arr.astype(_DEFAULT_DTYPE)
        else:
            arr = np.asarray(data, dtype=dtype)
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on non-scalar tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        """A view of the same data cut off from the recorded graph."""
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def reshape(self, shape: Sequence[int]) -> "Tensor":
        return reshape(self, shape)

    def sum(self) -> "Tensor":
        """Sum of all elements, as a scalar tensor."""
        return record(
            (self,),
            self.data.sum(dtype=self.data.dtype),
            lambda g: (np.broadcast_to(g, self.data.shape),),
        )

    def mean(self) -> "Tensor":
        n = self.data.size
        return record(
            (self,),
            self.data.mean(dtype=self.data.dtype),
            lambda g: (np.broadcast_to(g / n, self.data.shape),),
        )

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{flag})"

    # arithmetic ------------------------------------------------------

    def __add__(self, other):
        return _elementwise_binary(self, other, np.add, lambda a, b, g: (g, g))

    __radd__ = __add__

    def __sub__(self, other):
        return _elementwise_binary(self, other, np.subtract, lambda a, b, g: (g, -g))

    def __rsub__(self, other):
        return _as_tensor(other) - self

    def __mul__(self, other):
        return _elementwise_binary(self, other, np.multiply, lambda a, b, g: (g * b, g * a))

    __rmul__ = __mul__

    def __neg__(self):
        return record((self,), -self.data, lambda g: (-g,))


class Parameter:
    """A named trainable tensor paired with its gradient.

    ``grad`` always holds an array of the value's shape; parameters that a
    backward pass never reaches keep their zeros. Gradients accumulate
    across passes, so the training loop zeroes them between steps.
    """

    __slots__ = ("name", "value")

    def __init__(self, name: str, value):
        self.name = name
        self.value = value if isinstance(value, Tensor) else Tensor(value)
        self.value.requires_grad = True
        self.value.grad = np.zeros_like(self.value.data)

    @property
    def data(self) -> np.ndarray:
        return self.value.data

    @property
    def grad(self) -> np.ndarray:
        g = self.value.grad
        if g is None:
            g = np.zeros_like(self.value.data)
            self.value.grad = g
        return g

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.data.shape

    def zero_grad(self) -> None:
        self.value.grad = np.zeros_like(self.value.data)

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


class Tape:
    """Ordered record of one step's differentiable operations.

    Use as a context manager around the forward pass, then call
    :meth:`backward` on the scalar loss. Entries are recorded in execution
    order, which is a topological order of the data flow, so the reverse
    walk visits every operation after all of its consumers.
    """

    def __init__(self):
        self._entries: list[tuple[tuple[Tensor, ...], Tensor, Callable]] = []

    def __enter__(self) -> "Tape":
        global _ACTIVE_TAPE
        if _ACTIVE_TAPE is not None:
            raise ContractError("a tape is already active; tapes do not nest")
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, *exc) -> None:
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = None

    def __len__(self) -> int:
        return len(self._entries)

    def record(self, inputs: tuple[Tensor, ...], output: Tensor, backward: Callable) -> None:
        self._entries.append((inputs, output, backward))

    def backward(self, loss: Tensor) -> None:
        """Populate ``grad`` on every requires_grad tensor reachable from ``loss``."""
        if loss.data.size != 1:
            raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}")
        if not self._entries:
            raise ContractError("backward() on an empty tape")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        tensors: dict[int, Tensor] = {id(loss): loss}
        for inputs, output, backward_rule in reversed(self._entries):
            out_grad = grads.get(id(output))
            if out_grad is None:
                continue
            for tensor, grad in zip(inputs, backward_rule(out_grad)):
                if grad is None or not tensor.requires_grad:
                    continue
                key = id(tensor)
                if key in grads:
                    grads[key] = grads[key] + grad
                else:
                    grads[key] = grad
                    tensors[key] = tensor
        for key, grad in grads.items():
            tensor = tensors[key]
            tensor.grad = grad if tensor.grad is None else tensor.grad + grad


def active_tape() -> Tape | None:
    return _ACTIVE_TAPE


def record(inputs: tuple[Tensor, ...], out_data: np.ndarray, backward: Callable) -> Tensor:
    """Create an op result, recording it on the active tape when gradients are needed.

    ``backward`` maps the upstream gradient array to one gradient array (or
    None) per input, in order. This is the extension point every layer and
    loss uses to define custom differentiable operations.
    """
    out = Tensor(out_data, requires_grad=any(t.requires_grad for t in inputs))
    if _ACTIVE_TAPE is not None and out.requires_grad:
        _ACTIVE_TAPE.record(inputs, out, backward)
    return out


def _as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient over the axes numpy broadcasting introduced."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _elementwise_binary(a, b, forward, backward) -> Tensor:
    at, bt = _as_tensor(a), _as_tensor(b)
    try:
        out_data = forward(at.data, bt.data)
    except ValueError:
        raise ShapeError(
            f"operands of shapes {at.shape} and {bt.shape} do not broadcast"
        ) from None

    def rule(g, at=at, bt=bt):
        ga, gb = backward(at.data, bt.data, g)
        return (
            _unbroadcast(ga, at.data.shape) if ga is not None else None,
            _unbroadcast(gb, bt.data.shape) if gb is not None else None,
        )

    return record((at, bt), out_data, rule)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of two rank-2 tensors."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shapes {a.shape} and {b.shape} are incompatible")

    def rule(g, a=a, b=b):
        return g @ b.data.T, a.data.T @ g

    return record((a, b), a.data @ b.data, rule)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    x = _as_tensor(x)
    shape = tuple(int(s) for s in shape)
    target = int(np.prod(shape)) if -1 not in shape else -1
    if target != -1 and target != x.size:
        raise ShapeError(f"cannot reshape {x.shape} ({x.size} elements) into {shape}")
    old_shape = x.data.shape
    return record((x,), x.data.reshape(shape), lambda g: (g.reshape(old_shape),))


def flatten(x: Tensor) -> Tensor:
    """Collapse all axes after the leading batch axis."""
    x = _as_tensor(x)
    if x.data.ndim < 2:
        raise ShapeError(f"flatten needs a batched tensor, got shape {x.shape}")
    return reshape(x, (x.shape[0], -1))


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    """Concatenate along one axis; all other extents must agree."""
    tensors = tuple(_as_tensor(t) for t in tensors)
    if not tensors:
        raise ContractError("concat of zero tensors")
    ndim = tensors[0].data.ndim
    axis = axis % ndim
    for t in tensors[1:]:
        if t.data.ndim != ndim or any(
            t.shape[d] != tensors[0].shape[d] for d in range(ndim) if d != axis
        ):
            raise ShapeError(
                f"concat extents disagree off axis {axis}: "
                f"{[t.shape for t in tensors]}"
            )
    out = np.concatenate([t.data for t in tensors], axis=axis)
    offsets = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def rule(g):
        return tuple(np.split(g, offsets, axis=axis))

    return record(tensors, out, rule)


# activations ---------------------------------------------------------


def relu(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    return record((x,), np.maximum(x.data, 0), lambda g: (g * (x.data > 0),))


def leaky_relu(x: Tensor, alpha: float) -> Tensor:
    if not 0.0 < alpha < 1.0:
        raise ContractError(f"leaky_relu slope must be in (0, 1), got {alpha}")
    x = _as_tensor(x)
    out = np.where(x.data > 0, x.data, x.data * x.dtype.type(alpha))
    return record((x,), out, lambda g: (np.where(x.data > 0, g, g * alpha),))


def tanh(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    out = np.tanh(x.data)
    return record((x,), out, lambda g: (g * (1.0 - out * out),))


def sigmoid(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    # Split by sign so exp never overflows.
    out = np.empty_like(x.data)
    pos = x.data >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x.data[pos]))
    ex = np.exp(x.data[~pos])
    out[~pos] = ex / (1.0 + ex)
    return record((x,), out, lambda g: (g * out * (1.0 - out),))


_ACTIVATIONS = {"relu": relu, "tanh": tanh, "sigmoid": sigmoid}


def activation(kind: str, x: Tensor, alpha: float = 0.4) -> Tensor:
    """Dispatch by name; ``leaky_relu`` takes the negative slope ``alpha``."""
    if kind == "leaky_relu":
        return leaky_relu(x, alpha)
    try:
        return _ACTIVATIONS[kind](x)
    except KeyError:
        raise ContractError(f"unknown activation {kind!r}") from None


# verification --------------------------------------------------------


def finite_diff_check(
    f: Callable[[Tensor], Tensor], x: np.ndarray, h: float | None = None
) -> float:
    """Max relative error of analytic vs central-difference gradients of f at x.

    The analytic side comes from one taped backward pass; the central
    differences re-evaluate ``f`` eagerly at ``x +- h`` per element, so the
    two routes share no gradient code. Error per element is
    ``|analytic - central| / max(1, |central|)``. Intended to run in
    float64 mode; the default step is 1e-6 there and 1e-3 in float32.
    """
    x = np.asarray(x, dtype=_DEFAULT_DTYPE)
    if h is None:
        h = 1e-6 if x.dtype == np.float64 else 1e-3

    leaf = Tensor(x.copy(), requires_grad=True)
    with Tape() as tape:
        out = f(leaf)
        if out.data.size != 1:
            raise ContractError("finite_diff_check needs a scalar-valued function")
        if not np.isfinite(out.data).all():
            raise VerificationError("function returned a non-finite value at x")
        tape.backward(out)
    analytic = leaf.grad.reshape(-1)

    flat = x.reshape(-1)
    worst = 0.0
    for i in range(flat.size):
        saved = flat[i]
        flat[i] = saved + h
        hi = f(Tensor(x.copy())).item()
        flat[i] = saved - h
        lo = f(Tensor(x.copy())).item()
        flat[i] = saved
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise VerificationError(f"non-finite value at perturbed element {i}")
        central = (hi - lo) / (2.0 * h)
        err = abs(analytic[i] - central) / max(1.0, abs(central))
        worst = max(worst, float(err))
    return worst
