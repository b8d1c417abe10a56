"""Adversarial binary cross-entropy losses and the Adam update rule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError
from .tensor import Parameter, Tensor, record

PROB_EPS = 1e-7  # probabilities are clamped to [PROB_EPS, 1 - PROB_EPS] before log

REAL = 1.0
FAKE = 0.0


def bce(p: Tensor, target: float) -> Tensor:
    """Mean binary cross-entropy of probabilities ``p`` against a constant target.

    ``target`` is 1.0 for real and 0.0 for fake. Inputs are clamped away
    from {0, 1}; clamped elements contribute no gradient.
    """
    if target not in (REAL, FAKE):
        raise ContractError(f"bce target must be 0 or 1, got {target}")
    eps = p.dtype.type(PROB_EPS)
    pc = np.clip(p.data, eps, 1.0 - eps)
    t = p.dtype.type(target)
    loss = -(t * np.log(pc) + (1.0 - t) * np.log1p(-pc)).mean(dtype=p.dtype)
    n = p.data.size
    inside = (p.data > eps) & (p.data < 1.0 - eps)

    def rule(g, p=p):
        return (g * inside * (pc - t) / (pc * (1.0 - pc) * n),)

    return record((p,), loss, rule)


def d_loss(real_p: Tensor, fake_p: Tensor) -> Tensor:
    """Discriminator objective: bce(real, 1) + bce(fake, 0).

    The caller must detach the generated images before scoring them, so
    that this loss reaches discriminator parameters only.
    """
    return bce(real_p, REAL) + bce(fake_p, FAKE)


def g_loss(fake_p: Tensor) -> Tensor:
    """Non-saturating generator objective: bce of fake scores against the real target."""
    return bce(fake_p, REAL)


@dataclass
class AdamState:
    """First/second moment buffers and step count for one parameter set."""

    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    epsilon: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_init(
    params: list[Parameter],
    lr: float = 2e-4,
    beta1: float = 0.5,
    beta2: float = 0.999,
    epsilon: float = 1e-8,
) -> AdamState:
    state = AdamState(lr=lr, beta1=beta1, beta2=beta2, epsilon=epsilon)
    for p in params:
        state.m[p.name] = np.zeros_like(p.data)
        state.v[p.name] = np.zeros_like(p.data)
    return state


def adam_step(params: list[Parameter], state: AdamState) -> None:
    """One bias-corrected Adam update, in place, from each parameter's gradient."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    correct1 = 1.0 - b1**state.t
    correct2 = 1.0 - b2**state.t
    for p in params:
        g = p.grad
        if g.shape != p.data.shape:
            raise ContractError(f"gradient shape {g.shape} != value shape {p.shape} for {p.name}")
        m = state.m[p.name]
        v = state.v[p.name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        m_hat = m / correct1
        v_hat = v / correct2
        p.value.data -= state.lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
