"""The generator/discriminator pair and their conditional input encodings.

The generator maps a latent vector concatenated with a one-hot emotion
label through a dense layer into an 8x8 feature block, then upsamples with
three stride-2 transposed convolutions (batchnorm + LeakyReLU 0.4 each)
and a stride-1 tanh output layer. The discriminator concatenates the image
with spatially broadcast label planes, runs four stride-2 spectrally
normalized convolutions with LeakyReLU 0.4, and ends in a sigmoid dense
head. Test-scale variants shrink the latent width, filter counts and image
extent while preserving the block pattern.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from . import tensor as T
from .errors import ConfigError, LabelError
from .layers import (
    BatchNormState,
    Conv2DLayer,
    Deconv2DLayer,
    DenseLayer,
    batchnorm,
    conv2d,
    conv2d_transpose,
    dropout,
    spectral_normalize,
)
from .tensor import Parameter, Tensor, default_dtype

NUM_CLASSES = 7
EMOTION_NAMES = ("Angry", "Disgust", "Fear", "Happy", "Neutral", "Sad", "Surprise")


@dataclass
class ArchConfig:
    """Dimensions of one generator/discriminator pair.

    Defaults are the full-scale architecture; tests scale ``latent_dim``,
    ``base_filters`` and ``image_size`` down while keeping the block
    pattern.
    """

    latent_dim: int = 150
    num_classes: int = NUM_CLASSES
    image_size: int = 64
    base_filters: int = 64
    dropout_rate: float = 0.0
    leaky_slope: float = 0.4
    noise: str = "normal"  # or "uniform" for U(-1, 1)

    def __post_init__(self):
        if min(self.latent_dim, self.num_classes, self.image_size, self.base_filters) < 1:
            raise ConfigError("architecture dimensions must be positive")
        if self.image_size % 16 != 0:
            raise ConfigError(f"image_size must be a multiple of 16, got {self.image_size}")
        if not 0.0 < self.leaky_slope < 1.0:
            raise ConfigError(f"leaky_slope must be in (0, 1), got {self.leaky_slope}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.noise not in ("normal", "uniform"):
            raise ConfigError(f"noise must be 'normal' or 'uniform', got {self.noise!r}")

    @property
    def input_width(self) -> int:
        return self.latent_dim + self.num_classes

    @property
    def seed_extent(self) -> int:
        return self.image_size // 8

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ConditionVector:
    """An emotion label with its one-hot encoding."""

    label: int
    one_hot: np.ndarray = field(default=None)  # type: ignore[assignment]
    num_classes: int = NUM_CLASSES

    def __post_init__(self):
        if not 0 <= self.label < self.num_classes:
            raise LabelError(f"label {self.label} outside 0..{self.num_classes - 1}")
        if self.one_hot is None:
            self.one_hot = one_hot(self.label, self.num_classes)
        hot = np.flatnonzero(self.one_hot == 1.0)
        if len(self.one_hot) != self.num_classes or len(hot) != 1 or hot[0] != self.label:
            raise LabelError(f"one_hot vector does not encode label {self.label}")


@dataclass
class LatentInput:
    """A noise vector joined with its condition, as the generator consumes it."""

    z: np.ndarray
    y: ConditionVector
    joint: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.joint is None:
            self.joint = np.concatenate([self.z, self.y.one_hot.astype(self.z.dtype)])
        if len(self.joint) != len(self.z) + len(self.y.one_hot):
            raise ConfigError("joint vector length must be latent_dim + num_classes")


def one_hot(label: int, num_classes: int = NUM_CLASSES) -> np.ndarray:
    if not 0 <= int(label) < num_classes:
        raise LabelError(f"label {label} outside 0..{num_classes - 1}")
    vec = np.zeros(num_classes, dtype=default_dtype())
    vec[int(label)] = 1.0
    return vec


def _check_labels(labels: np.ndarray, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise LabelError(f"labels must lie in 0..{num_classes - 1}")
    return labels.astype(np.int64)


def one_hot_batch(labels: np.ndarray, num_classes: int = NUM_CLASSES) -> np.ndarray:
    labels = _check_labels(labels, num_classes)
    out = np.zeros((labels.shape[0], num_classes), dtype=default_dtype())
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def broadcast_label(y: ConditionVector | int, height: int, width: int, num_classes: int = NUM_CLASSES) -> Tensor:
    """Expand a label to (H, W, num_classes) constant planes; plane c holds one_hot[c]."""
    if not isinstance(y, ConditionVector):
        y = ConditionVector(int(y), num_classes=num_classes)
    planes = np.broadcast_to(y.one_hot, (height, width, num_classes)).copy()
    return Tensor(planes)


def _label_planes(labels: np.ndarray, height: int, width: int, num_classes: int) -> np.ndarray:
    hot = one_hot_batch(labels, num_classes)  # (N, C)
    return np.broadcast_to(hot[:, None, None, :], (hot.shape[0], height, width, num_classes)).copy()


class GeneratorNet:
    """Layer stack producing (N, image_size, image_size, 1) images in [-1, 1]."""

    prefix = "gen"

    def __init__(self, arch: ArchConfig, rng: np.random.Generator):
        self.arch = arch
        s0 = arch.seed_extent
        b = arch.base_filters
        self.seed_shape = (s0, s0, 8 * b)
        self.dense = DenseLayer.build("gen.dense", arch.input_width, s0 * s0 * 8 * b, rng)
        self.blocks: list[tuple[Deconv2DLayer, BatchNormState]] = []
        channels = [8 * b, 4 * b, 2 * b, b]
        for i, (c_in, c_out) in enumerate(zip(channels, channels[1:]), start=1):
            deconv = Deconv2DLayer.build(f"gen.deconv{i}", c_in, c_out, rng, stride=2)
            self.blocks.append((deconv, BatchNormState.build(f"gen.bn{i}", c_out)))
        self.out = Deconv2DLayer.build("gen.out", b, 1, rng, stride=1)

    def parameters(self) -> list[Parameter]:
        params = list(self.dense.parameters())
        for deconv, bn in self.blocks:
            params += deconv.parameters() + bn.parameters()
        return params + self.out.parameters()

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Non-trainable state that checkpoints must carry."""
        out = {}
        for i, (_, bn) in enumerate(self.blocks, start=1):
            out[f"gen.bn{i}.running_mean"] = bn.running_mean
            out[f"gen.bn{i}.running_var"] = bn.running_var
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for i, (_, bn) in enumerate(self.blocks, start=1):
            bn.running_mean = arrays[f"gen.bn{i}.running_mean"].copy()
            bn.running_var = arrays[f"gen.bn{i}.running_var"].copy()


class DiscriminatorNet:
    """Conv stack scoring an (image, label) pair with a probability in (0, 1)."""

    prefix = "disc"

    def __init__(self, arch: ArchConfig, rng: np.random.Generator):
        self.arch = arch
        b = arch.base_filters
        channels = [1 + arch.num_classes, b, 2 * b, 4 * b, 8 * b]
        self.convs: list[Conv2DLayer] = []
        for i, (c_in, c_out) in enumerate(zip(channels, channels[1:]), start=1):
            self.convs.append(
                Conv2DLayer.build(f"disc.conv{i}", c_in, c_out, rng, stride=2, spectral=True)
            )
        final_extent = arch.image_size // 16
        self.flat_width = final_extent * final_extent * 8 * b
        self.dense = DenseLayer.build("disc.dense", self.flat_width, 1, rng)

    def parameters(self) -> list[Parameter]:
        params: list[Parameter] = []
        for conv in self.convs:
            params += conv.parameters()
        return params + self.dense.parameters()

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for i, conv in enumerate(self.convs, start=1):
            out[f"disc.conv{i}.spectral_u"] = conv.spectral.u
            sigma = conv.spectral.sigma
            out[f"disc.conv{i}.spectral_sigma"] = np.asarray(
                [0.0 if sigma is None else sigma], dtype=np.float64
            )
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for i, conv in enumerate(self.convs, start=1):
            conv.spectral.u = arrays[f"disc.conv{i}.spectral_u"].copy()
            sigma = float(arrays[f"disc.conv{i}.spectral_sigma"][0])
            conv.spectral.sigma = None if sigma == 0.0 else sigma


def build_generator(arch: ArchConfig | None = None, seed: int = 0) -> GeneratorNet:
    arch = arch or ArchConfig()
    return GeneratorNet(arch, np.random.default_rng([seed, 71]))


def build_discriminator(arch: ArchConfig | None = None, seed: int = 0) -> DiscriminatorNet:
    arch = arch or ArchConfig()
    return DiscriminatorNet(arch, np.random.default_rng([seed, 72]))


def sample_noise(rng: np.random.Generator, n: int, arch: ArchConfig) -> np.ndarray:
    if arch.noise == "uniform":
        z = rng.uniform(-1.0, 1.0, size=(n, arch.latent_dim))
    else:
        z = rng.standard_normal((n, arch.latent_dim))
    return z.astype(default_dtype())


def generator_forward(
    net: GeneratorNet,
    z: Tensor | np.ndarray,
    labels: np.ndarray,
    mode: str = "train",
    trace: list | None = None,
) -> Tensor:
    """Map (N, latent_dim) noise plus labels to (N, size, size, 1) images in [-1, 1]."""
    arch = net.arch
    labels = _check_labels(labels, arch.num_classes)
    z = z if isinstance(z, Tensor) else Tensor(z)
    if z.data.ndim != 2 or z.shape[1] != arch.latent_dim:
        raise ConfigError(f"noise shape {z.shape} does not match latent_dim {arch.latent_dim}")
    joint = T.concat([z, Tensor(one_hot_batch(labels, arch.num_classes))], axis=1)

    x = T.matmul(joint, net.dense.kernel.value) + net.dense.bias.value
    x = T.reshape(x, (x.shape[0],) + net.seed_shape)
    if trace is not None:
        trace.append(("gen.dense", x.shape))
    for i, (deconv, bn) in enumerate(net.blocks, start=1):
        x = conv2d_transpose(x, deconv)
        x = batchnorm(x, bn, mode)
        x = T.leaky_relu(x, arch.leaky_slope)
        if trace is not None:
            trace.append((f"gen.deconv{i}", x.shape))
    x = T.tanh(conv2d_transpose(x, net.out))
    if trace is not None:
        trace.append(("gen.out", x.shape))
    return x


def discriminator_forward(
    net: DiscriminatorNet,
    image: Tensor | np.ndarray,
    labels: np.ndarray,
    mode: str = "train",
    rng: np.random.Generator | None = None,
    power_update: bool | None = None,
    trace: list | None = None,
) -> Tensor:
    """Score (N, size, size, 1) images against their labels; output in (0, 1).

    ``power_update`` controls whether this forward refreshes the spectral
    power-iteration state; it defaults to updating in train mode. The
    training loop updates once per step and reuses the cached estimate for
    the step's remaining forwards.
    """
    arch = net.arch
    labels = _check_labels(labels, arch.num_classes)
    image = image if isinstance(image, Tensor) else Tensor(image)
    expected = (arch.image_size, arch.image_size, 1)
    if image.data.ndim != 4 or image.shape[1:] != expected:
        raise ConfigError(f"image shape {image.shape} does not match (N, {expected})")
    if power_update is None:
        power_update = mode == "train"

    planes = Tensor(_label_planes(labels, arch.image_size, arch.image_size, arch.num_classes))
    x = T.concat([image, planes], axis=3)
    if trace is not None:
        trace.append(("disc.input", x.shape))
    for i, conv in enumerate(net.convs, start=1):
        normalized, _ = spectral_normalize(conv, update=power_update)
        x = conv2d(x, conv, kernel=normalized)
        x = T.leaky_relu(x, arch.leaky_slope)
        if arch.dropout_rate > 0.0:
            x = dropout(x, arch.dropout_rate, mode, rng)
        if trace is not None:
            trace.append((f"disc.conv{i}", x.shape))
    x = T.flatten(x)
    x = T.sigmoid(T.matmul(x, net.dense.kernel.value) + net.dense.bias.value)
    if trace is not None:
        trace.append(("disc.dense", x.shape))
    return x
