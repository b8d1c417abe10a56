"""Neural layer forward/backward computations shared by both networks.

Convolutions use channels-last layout (N, H, W, C) and TF-style ``same``
padding: output extent is ``ceil(in / stride)`` and when total padding is
odd the extra row/column goes on the bottom/right. Transposed convolution
is the exact adjoint of that convolution, so stride-2 doubles the spatial
extents and stride-1 preserves them.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, ShapeError
from .tensor import Parameter, Tensor, default_dtype, matmul, record

INIT_STD = 0.02  # zero-mean normal for kernels; biases start at zero


def init_kernel(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    return (rng.standard_normal(shape) * INIT_STD).astype(default_dtype())


@dataclass
class DenseLayer:
    kernel: Parameter  # (in, out)
    bias: Parameter  # (out,)

    @classmethod
    def build(cls, name: str, n_in: int, n_out: int, rng: np.random.Generator) -> "DenseLayer":
        return cls(
            kernel=Parameter(f"{name}.kernel", init_kernel(rng, (n_in, n_out))),
            bias=Parameter(f"{name}.bias", np.zeros(n_out, dtype=default_dtype())),
        )

    def parameters(self) -> list[Parameter]:
        return [self.kernel, self.bias]


@dataclass
class SpectralState:
    """Persistent power-iteration state for one spectrally normalized kernel."""

    u: np.ndarray  # unit vector, length c_out
    n_power_iterations: int = 1
    sigma: float | None = None  # cached estimate from the last update


@dataclass
class Conv2DLayer:
    kernel: Parameter  # (kh, kw, c_in, c_out)
    bias: Parameter  # (c_out,)
    stride: int
    spectral: SpectralState | None = None

    @classmethod
    def build(
        cls,
        name: str,
        c_in: int,
        c_out: int,
        rng: np.random.Generator,
        kernel_size: int = 4,
        stride: int = 2,
        spectral: bool = False,
    ) -> "Conv2DLayer":
        state = None
        if spectral:
            u = rng.standard_normal(c_out)
            state = SpectralState(u=u / np.linalg.norm(u))
        return cls(
            kernel=Parameter(f"{name}.kernel", init_kernel(rng, (kernel_size, kernel_size, c_in, c_out))),
            bias=Parameter(f"{name}.bias", np.zeros(c_out, dtype=default_dtype())),
            stride=stride,
            spectral=state,
        )

    def parameters(self) -> list[Parameter]:
        return [self.kernel, self.bias]


@dataclass
class Deconv2DLayer:
    kernel: Parameter  # (kh, kw, c_out, c_in)
    bias: Parameter  # (c_out,)
    stride: int

    @classmethod
    def build(
        cls,
        name: str,
        c_in: int,
        c_out: int,
        rng: np.random.Generator,
        kernel_size: int = 4,
        stride: int = 2,
    ) -> "Deconv2DLayer":
        return cls(
            kernel=Parameter(f"{name}.kernel", init_kernel(rng, (kernel_size, kernel_size, c_out, c_in))),
            bias=Parameter(f"{name}.bias", np.zeros(c_out, dtype=default_dtype())),
            stride=stride,
        )

    def parameters(self) -> list[Parameter]:
        return [self.kernel, self.bias]


@dataclass
class BatchNormState:
    gamma: Parameter  # (c,)
    beta: Parameter  # (c,)
    running_mean: np.ndarray = field(repr=False)
    running_var: np.ndarray = field(repr=False)
    momentum: float = 0.9
    epsilon: float = 1e-5

    @classmethod
    def build(cls, name: str, channels: int) -> "BatchNormState":
        dt = default_dtype()
        return cls(
            gamma=Parameter(f"{name}.gamma", np.ones(channels, dtype=dt)),
            beta=Parameter(f"{name}.beta", np.zeros(channels, dtype=dt)),
            running_mean=np.zeros(channels, dtype=dt),
            running_var=np.ones(channels, dtype=dt),
        )

    def parameters(self) -> list[Parameter]:
        return [self.gamma, self.beta]


# convolution cores (plain ndarray; all autodiff rules are built from these)


def _same_pads(extent: int, k: int, s: int) -> tuple[int, int]:
    out = -(-extent // s)
    total = max((out - 1) * s + k - extent, 0)
    return total // 2, total - total // 2  # odd remainder goes bottom/right


def _conv_fwd(x: np.ndarray, w: np.ndarray, s: int) -> np.ndarray:
    n, h, wid, _ = x.shape
    kh, kw, _, c_out = w.shape
    ph, pw = _same_pads(h, kh, s), _same_pads(wid, kw, s)
    xp = np.pad(x, ((0, 0), ph, pw, (0, 0)))
    ho, wo = -(-h // s), -(-wid // s)
    out = np.zeros((n, ho, wo, c_out), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            patch = xp[:, i : i + (ho - 1) * s + 1 : s, j : j + (wo - 1) * s + 1 : s, :]
            out += patch @ w[i, j]
    return out


def _conv_bwd_input(g: np.ndarray, w: np.ndarray, s: int, x_shape: tuple[int, ...]) -> np.ndarray:
    n, h, wid, c_in = x_shape
    kh, kw, _, _ = w.shape
    (pt, pb), (pl, pr) = _same_pads(h, kh, s), _same_pads(wid, kw, s)
    ho, wo = g.shape[1], g.shape[2]
    xp_grad = np.zeros((n, h + pt + pb, wid + pl + pr, c_in), dtype=g.dtype)
    for i in range(kh):
        for j in range(kw):
            xp_grad[:, i : i + (ho - 1) * s + 1 : s, j : j + (wo - 1) * s + 1 : s, :] += g @ w[i, j].T
    return xp_grad[:, pt : pt + h, pl : pl + wid, :]


def _conv_bwd_kernel(x: np.ndarray, g: np.ndarray, s: int, k_shape: tuple[int, ...]) -> np.ndarray:
    kh, kw, _, _ = k_shape
    h, wid = x.shape[1], x.shape[2]
    ph, pw = _same_pads(h, kh, s), _same_pads(wid, kw, s)
    xp = np.pad(x, ((0, 0), ph, pw, (0, 0)))
    ho, wo = g.shape[1], g.shape[2]
    dw = np.zeros(k_shape, dtype=g.dtype)
    for i in range(kh):
        for j in range(kw):
            patch = xp[:, i : i + (ho - 1) * s + 1 : s, j : j + (wo - 1) * s + 1 : s, :]
            dw[i, j] = np.tensordot(patch, g, axes=([0, 1, 2], [0, 1, 2]))
    return dw


def conv2d(x: Tensor, layer: Conv2DLayer, kernel: Tensor | None = None) -> Tensor:
    """Strided same-padded convolution; (N,H,W,Cin) -> (N,H/s,W/s,Cout).

    ``kernel`` overrides the layer's raw kernel tensor (the spectral
    normalization path passes the normalized view).
    """
    k = kernel if kernel is not None else layer.kernel.value
    kh, kw, c_in, _ = k.shape
    s = layer.stride
    if x.data.ndim != 4 or x.shape[3] != c_in:
        raise ShapeError(f"conv2d input {x.shape} does not match kernel channels {c_in}")
    if x.shape[1] % s or x.shape[2] % s:
        raise ShapeError(f"conv2d spatial extents {x.shape[1:3]} not divisible by stride {s}")

    out = _conv_fwd(x.data, k.data, s) + layer.bias.data

    def rule(g, x=x, k=k):
        return (
            _conv_bwd_input(g, k.data, s, x.data.shape),
            _conv_bwd_kernel(x.data, g, s, k.data.shape),
            g.sum(axis=(0, 1, 2)),
        )

    return record((x, k, layer.bias.value), out, rule)


def conv2d_transpose(x: Tensor, layer: Deconv2DLayer) -> Tensor:
    """Transposed convolution; (N,H,W,Cin) -> (N,H*s,W*s,Cout).

    Implemented as the adjoint of ``conv2d``: the forward pass is the
    input-gradient of a same-padded convolution running the other way, so
    the two operations stay exact mirrors of each other.
    """
    k = layer.kernel.value
    kh, kw, c_out, c_in = k.shape
    s = layer.stride
    if s not in (1, 2):
        raise ContractError(f"conv2d_transpose stride must be 1 or 2, got {s}")
    if x.data.ndim != 4 or x.shape[3] != c_in:
        raise ShapeError(f"conv2d_transpose input {x.shape} does not match kernel channels {c_in}")
    n, h, w = x.shape[0], x.shape[1], x.shape[2]
    up_shape = (n, h * s, w * s, c_out)

    out = _conv_bwd_input(x.data, k.data, s, up_shape) + layer.bias.data

    def rule(g, x=x, k=k):
        return (
            _conv_fwd(g, k.data, s),
            _conv_bwd_kernel(g, x.data, s, k.data.shape),
            g.sum(axis=(0, 1, 2)),
        )

    return record((x, k, layer.bias.value), out, rule)


def batchnorm(x: Tensor, state: BatchNormState, mode: str) -> Tensor:
    """Per-channel batch normalization over (N, H, W) with learnable scale/shift.

    Train mode normalizes by batch statistics (biased variance) and folds
    them into the running stats; infer mode normalizes by the running
    stats. Differentiable with respect to x, gamma and beta.
    """
    if mode not in ("train", "infer"):
        raise ContractError(f"batchnorm mode must be 'train' or 'infer', got {mode!r}")
    if x.data.ndim != 4 or x.shape[3] != state.gamma.shape[0]:
        raise ShapeError(f"batchnorm input {x.shape} does not match {state.gamma.shape[0]} channels")
    axes = (0, 1, 2)
    eps = x.dtype.type(state.epsilon)

    if mode == "infer":
        inv = 1.0 / np.sqrt(state.running_var.astype(x.dtype) + eps)
        mean = state.running_mean.astype(x.dtype)
        xhat = (x.data - mean) * inv
        out = state.gamma.data * xhat + state.beta.data

        def infer_rule(g, x=x):
            return (
                g * (state.gamma.data * inv),
                (g * xhat).sum(axis=axes),
                g.sum(axis=axes),
            )

        return record((x, state.gamma.value, state.beta.value), out, infer_rule)

    m = x.shape[0] * x.shape[1] * x.shape[2]
    if m < 2:
        raise ContractError(f"batchnorm train mode needs N*H*W >= 2, got {m}")
    mu = x.data.mean(axis=axes)
    var = x.data.var(axis=axes)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = state.gamma.data * xhat + state.beta.data

    mom = state.running_mean.dtype.type(state.momentum)
    state.running_mean = mom * state.running_mean + (1 - mom) * mu.astype(state.running_mean.dtype)
    state.running_var = mom * state.running_var + (1 - mom) * var.astype(state.running_var.dtype)

    def rule(g, x=x):
        dgamma = (g * xhat).sum(axis=axes)
        dbeta = g.sum(axis=axes)
        dx = (state.gamma.data * inv / m) * (m * g - dbeta - xhat * dgamma)
        return dx, dgamma, dbeta

    return record((x, state.gamma.value, state.beta.value), out, rule)


def dropout(x: Tensor, rate: float, mode: str, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: zero with probability ``rate`` and rescale survivors."""
    if not 0.0 <= rate < 1.0:
        raise ContractError(f"dropout rate must be in [0, 1), got {rate}")
    if mode == "infer" or rate == 0.0:
        return x
    if rng is None:
        raise ContractError("train-mode dropout needs a seed stream")
    keep = (rng.random(x.shape) >= rate).astype(x.dtype)
    scale = x.dtype.type(1.0 / (1.0 - rate))
    return record((x,), x.data * keep * scale, lambda g: (g * keep * scale,))


def kernel_matrix(kernel: np.ndarray) -> np.ndarray:
    """Reshape a (kh, kw, c_in, c_out) kernel to the (c_out, kh*kw*c_in) matrix."""
    return kernel.transpose(3, 0, 1, 2).reshape(kernel.shape[3], -1)


def spectral_normalize(
    layer: Conv2DLayer,
    update: bool = True,
    n_iterations: int | None = None,
) -> tuple[Tensor, float]:
    """Kernel divided by its estimated top singular value.

    The kernel is viewed as a matrix with one row per output channel.
    When ``update`` is set, ``n_iterations`` power-iteration steps refresh
    the persistent ``u`` vector; the estimate is then
    ``sigma = u . W v`` with ``v = W^T u / ||W^T u||``. The returned tensor
    is ``kernel / sigma`` with sigma held constant for the step, so
    gradients flow through the raw kernel only. A vanishing kernel is
    returned unchanged with a warning.
    """
    state = layer.spectral
    if state is None:
        raise ContractError("layer has no spectral normalization state")
    w = kernel_matrix(layer.kernel.data).astype(np.float64)

    if update or state.sigma is None:
        u = state.u.astype(np.float64)
        steps = state.n_power_iterations if n_iterations is None else n_iterations
        if not update:
            steps = 0
        for _ in range(steps):
            wu = w.T @ u
            nv = np.linalg.norm(wu)
            if nv == 0.0 or not np.isfinite(nv):
                warnings.warn("spectral_normalize: vanishing kernel, left unnormalized")
                return layer.kernel.value, 1.0
            v = wu / nv
            wv = w @ v
            u = wv / np.linalg.norm(wv)
        wu = w.T @ u
        nv = np.linalg.norm(wu)
        if nv < 1e-30 or not np.isfinite(nv):
            warnings.warn("spectral_normalize: vanishing kernel, left unnormalized")
            return layer.kernel.value, 1.0
        sigma = float(u @ w @ (wu / nv))
        if update:
            state.u = u.astype(state.u.dtype)
        state.sigma = sigma
    else:
        sigma = state.sigma

    return layer.kernel.value * (1.0 / sigma), sigma
