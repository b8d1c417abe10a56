"""The finite-difference verification suite behind the gradcheck command.

Every differentiable operation in the engine is checked on small random
tensors (spatial extents at most 4) in float64 mode against central
differences. Each entry reports the worst relative error over all input
elements; the suite passes when every entry is below the tolerance.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import ContractError
from .layers import (
    BatchNormState,
    Conv2DLayer,
    Deconv2DLayer,
    batchnorm,
    conv2d,
    conv2d_transpose,
    dropout,
    spectral_normalize,
)
from .models import ArchConfig, build_discriminator, build_generator, discriminator_forward, generator_forward
from .optim import bce, d_loss, g_loss
from .tensor import Tensor, finite_diff_check

TOLERANCE = 1e-6


def run_suite(seed: int = 0) -> list[tuple[str, float]]:
    """Max finite-difference error per op, computed in float64 mode."""
    if T.default_dtype() != np.float64:
        with T.use_dtype(np.float64):
            return run_suite(seed)
    rng = np.random.default_rng(seed)
    results: list[tuple[str, float]] = []

    def check(name, f, x):
        results.append((name, finite_diff_check(f, x)))

    # elementwise arithmetic and broadcasting
    b = Tensor(rng.standard_normal((2, 3)))
    check("add", lambda x: (x + b).sum(), rng.standard_normal((2, 3)))
    check("sub", lambda x: (b - x).sum(), rng.standard_normal((2, 3)))
    check("mul", lambda x: (x * b).mean(), rng.standard_normal((2, 3)))
    check("negate", lambda x: (-x).sum(), rng.standard_normal((2, 3)))
    check("scale", lambda x: (x * 2.5).sum(), rng.standard_normal((2, 3)))
    row = Tensor(rng.standard_normal(3))
    check("broadcast_add", lambda x: ((x + row) * b).sum(), rng.standard_normal((2, 3)))

    # matmul and reshaping
    m = Tensor(rng.standard_normal((4, 2)))
    check("matmul", lambda x: T.matmul(x, m).sum(), rng.standard_normal((3, 4)))
    w_reshape = Tensor(rng.standard_normal((4, 6)))
    check("reshape", lambda x: (x.reshape((4, 6)) * w_reshape).sum(), rng.standard_normal((2, 3, 4)))
    concat_tail = Tensor(rng.standard_normal((2, 3)))
    concat_w = Tensor(rng.standard_normal((2, 5)))
    check("concat", lambda x: (T.concat([x, concat_tail], axis=1) * concat_w).sum(),
          rng.standard_normal((2, 2)))

    # activations
    check("relu", lambda x: T.relu(x).sum(), rng.standard_normal((3, 3)) + 0.05)
    check("leaky_relu", lambda x: T.leaky_relu(x, 0.4).sum(), rng.standard_normal((3, 3)) + 0.05)
    check("tanh", lambda x: T.tanh(x).sum(), rng.standard_normal((3, 3)))
    check("sigmoid", lambda x: T.sigmoid(x).sum(), rng.standard_normal((3, 3)))

    # dense layer
    kernel = Tensor(rng.standard_normal((4, 3)))
    bias = Tensor(rng.standard_normal(3))
    check("dense_input", lambda x: (T.matmul(x, kernel) + bias).sum(), rng.standard_normal((2, 4)))
    x_fixed = Tensor(rng.standard_normal((2, 4)))
    check("dense_kernel", lambda k: (T.matmul(x_fixed, k) + bias).sum(), kernel.data.copy())

    # convolutions (strides 1 and 2, both inputs and kernels)
    conv_rng = np.random.default_rng(seed + 1)
    for stride in (1, 2):
        conv = Conv2DLayer.build("op", 2, 3, conv_rng, stride=stride)
        conv.kernel.value.data = conv_rng.standard_normal(conv.kernel.shape)
        conv.bias.value.data = conv_rng.standard_normal(conv.bias.shape)
        xc = conv_rng.standard_normal((2, 4, 4, 2))
        check(f"conv2d_s{stride}_input", lambda x, c=conv: conv2d(x, c).sum(), xc)
        xt = Tensor(xc)
        check(f"conv2d_s{stride}_kernel",
              lambda k, c=conv, xt=xt: conv2d(xt, c, kernel=k).sum(),
              conv.kernel.data.copy())

        deconv = Deconv2DLayer.build("op", 2, 3, conv_rng, stride=stride)
        deconv.kernel.value.data = conv_rng.standard_normal(deconv.kernel.shape)
        xd = conv_rng.standard_normal((1, 4, 4, 2))

        def deconv_wrt_kernel(k, d=deconv, xd=xd):
            saved = d.kernel.value
            d.kernel.value = k
            try:
                return conv2d_transpose(Tensor(xd), d).sum()
            finally:
                d.kernel.value = saved

        check(f"conv2d_transpose_s{stride}_input", lambda x, d=deconv: conv2d_transpose(x, d).sum(), xd)
        check(f"conv2d_transpose_s{stride}_kernel", deconv_wrt_kernel, deconv.kernel.data.copy())

    # batch normalization (train mode)
    bn = BatchNormState.build("op", 3)
    bn.gamma.value.data = 1.0 + 0.3 * conv_rng.standard_normal(3)
    bn.beta.value.data = conv_rng.standard_normal(3)
    xb = conv_rng.standard_normal((4, 2, 2, 3))
    weights = Tensor(conv_rng.standard_normal((4, 2, 2, 3)))

    def bn_loss(x, state=bn):
        state.running_mean = np.zeros(3)
        state.running_var = np.ones(3)
        return (batchnorm(x, state, "train") * weights).sum()

    check("batchnorm_input", bn_loss, xb)

    def bn_gamma(gamma, state=bn):
        saved = state.gamma.value
        state.gamma.value = gamma
        try:
            return (batchnorm(Tensor(xb), state, "train") * weights).sum()
        finally:
            state.gamma.value = saved

    check("batchnorm_gamma", bn_gamma, bn.gamma.data.copy())

    # dropout (fixed mask via a reseeded stream)
    def dropout_loss(x):
        return dropout(x, 0.3, "train", np.random.default_rng(99)).sum()

    check("dropout", dropout_loss, conv_rng.standard_normal((4, 4)))

    # losses
    probs = 0.2 + 0.6 * conv_rng.random((5, 1))
    check("bce_real", lambda p: bce(p, 1.0), probs.copy())
    check("bce_fake", lambda p: bce(p, 0.0), probs.copy())
    fake_probs = Tensor(0.2 + 0.6 * conv_rng.random((5, 1)))
    check("d_loss", lambda p: d_loss(p, fake_probs), probs.copy())
    check("g_loss", lambda p: g_loss(p), probs.copy())

    # spectrally normalized convolution: sigma is frozen for the step, so
    # establish the estimate once and check the resulting linear map.
    sconv = Conv2DLayer.build("op", 2, 3, conv_rng, stride=2, spectral=True)
    sconv.kernel.value.data = conv_rng.standard_normal(sconv.kernel.shape)
    spectral_normalize(sconv, update=True, n_iterations=20)
    xs = Tensor(conv_rng.standard_normal((1, 4, 4, 2)))

    def spectral_wrt_kernel(k, c=sconv):
        saved = c.kernel.value
        c.kernel.value = k
        try:
            normalized, _ = spectral_normalize(c, update=False)
            return conv2d(xs, c, kernel=normalized).sum()
        finally:
            c.kernel.value = saved

    check("spectral_conv_kernel", spectral_wrt_kernel, sconv.kernel.data.copy())

    # full networks at test scale, end to end through both losses
    arch = ArchConfig(latent_dim=4, base_filters=2, image_size=16)
    gen = build_generator(arch, seed=seed)
    disc = build_discriminator(arch, seed=seed)
    labels = np.array([0, 3])
    z_fixed = conv_rng.standard_normal((2, 4))

    def g_through_networks(z):
        images = generator_forward(gen, z, labels, mode="infer")
        return g_loss(discriminator_forward(disc, images, labels, "infer", power_update=False))

    check("g_loss_through_networks", g_through_networks, z_fixed)

    real_images = np.tanh(conv_rng.standard_normal((2, 16, 16, 1)))
    fake_images = generator_forward(gen, z_fixed, labels, mode="infer").data

    def d_through_networks(k, disc=disc):
        saved = disc.dense.kernel.value
        disc.dense.kernel.value = k
        try:
            p_real = discriminator_forward(disc, real_images, labels, "infer", power_update=False)
            p_fake = discriminator_forward(disc, fake_images, labels, "infer", power_update=False)
            return d_loss(p_real, p_fake)
        finally:
            disc.dense.kernel.value = saved

    check("d_loss_through_networks", d_through_networks, disc.dense.kernel.data.copy())
    return results


def worst(results: list[tuple[str, float]]) -> tuple[str, float]:
    if not results:
        raise ContractError("empty gradcheck results")
    return max(results, key=lambda item: item[1])
