"""Trainable parameters, initializers, and the Adam optimizer."""

from __future__ import annotations

import numpy as np

from .config import active_dtype
from .errors import ShapeError


class Parameter:
    """A named trainable tensor with an accumulated gradient."""

    __slots__ = ("value", "grad", "name", "trainable")

    def __init__(self, value: np.ndarray, name: str, trainable: bool = True):
        self.value = np.asarray(value, dtype=active_dtype())
        self.grad = np.zeros_like(self.value)
        self.name = name
        self.trainable = trainable

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad[...] = 0.0

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.value.shape})"


def he_normal(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    """He-normal init for conv kernels: std = sqrt(2 / fan_in)."""
    std = np.sqrt(2.0 / fan_in)
    return (rng.standard_normal(shape) * std).astype(active_dtype())


def mirror_spatial(kernel: np.ndarray) -> np.ndarray:
    """Tie a kernel's two leading spatial axes: k[b, a] = k[a, b].

    Copies the upper spatial triangle over the lower one, so every entry
    keeps the marginal distribution it was drawn from (averaging the
    kernel with its transpose would shrink the off-diagonal variance
    instead). A spatially symmetric kernel commutes with transposing the
    input, so a freshly initialized network maps a transposed image to
    the transposed feature map; training is free to break the tie.
    """
    if kernel.ndim < 2 or kernel.shape[0] != kernel.shape[1]:
        raise ShapeError(
            f"mirror_spatial expects square leading axes, got {kernel.shape}")
    out = kernel.copy()
    k = out.shape[0]
    for a in range(k):
        for b in range(a + 1, k):
            out[b, a] = out[a, b]
    return out


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int,
                   fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, shape).astype(active_dtype())


def lstm_uniform(rng: np.random.Generator, shape, hidden: int) -> np.ndarray:
    """uniform(-1/sqrt(u), 1/sqrt(u)), applied to every LSTM tensor."""
    limit = 1.0 / np.sqrt(hidden)
    return rng.uniform(-limit, limit, shape).astype(active_dtype())


class AdamState:
    """Per-parameter Adam moments and step counter."""

    __slots__ = ("m", "v", "step", "beta1", "beta2", "epsilon", "learning_rate")

    def __init__(self, shape, learning_rate: float = 0.01, beta1: float = 0.9,
                 beta2: float = 0.999, epsilon: float = 1e-8):
        self.m = np.zeros(shape, dtype=active_dtype())
        self.v = np.zeros(shape, dtype=active_dtype())
        self.step = 0
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.learning_rate = learning_rate


def adam_step(param: Parameter, state: AdamState) -> None:
    """One Adam update with bias correction, in place."""
    if state.m.shape != param.value.shape:
        raise ShapeError(
            f"Adam state shape {state.m.shape} does not match parameter "
            f"{param.name} shape {param.value.shape}")
    g = param.grad
    state.step += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * g
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * (g * g)
    m_hat = state.m / (1.0 - state.beta1 ** state.step)
    v_hat = state.v / (1.0 - state.beta2 ** state.step)
    param.value -= state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)


class Adam:
    """Adam over a list of parameters; lazily creates one state per param."""

    def __init__(self, parameters, learning_rate: float = 0.01,
                 beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8):
        self.parameters = list(parameters)
        self.states = {
            p.name: AdamState(p.value.shape, learning_rate, beta1, beta2, epsilon)
            for p in self.parameters
        }

    def step(self) -> None:
        for p in self.parameters:
            if p.trainable:
                adam_step(p, self.states[p.name])

    def zero_grad(self) -> None:
        for p in self.parameters:
            p.zero_grad()
