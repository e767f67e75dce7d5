"""Gradient-weighted fusion of the wavelet and attention branches.

Each branch's feature map is weighted by one minus its normalized
backpropagation gradient, so the branch that currently dominates the
gradient signal is damped and the quieter branch passes through:

    fused = (1 - g_w) * f_wav + (1 - g_sa) * f_sa

The weights are statistics, not parameters: gradients captured on the
previous step are batch-averaged, normalized to [0, 1), and folded into an
exponential moving average held by :class:`FusionState`. The weights enter
the forward pass as constants (no gradient flows through them), and the
state starts at zero so the first step reduces to a plain sum.
"""

from __future__ import annotations

import numpy as np

from .config import active_dtype, checked_enabled
from .errors import NumericError, ShapeError
from .tape import Value

__all__ = ["FusionState", "normalize_gradients", "fuse", "update_fusion_state"]

_EPS = 1e-8


class FusionState:
    """Moving average of each branch's normalized gradient magnitude.

    shape: the per-sample feature map shape the averages track, [H, W, C].
    decay: EMA decay; with zero init a constant signal g reaches
        g * (1 - decay**t) after t updates.
    """

    __slots__ = ("decay", "g_w_ema", "g_sa_ema", "updates")

    def __init__(self, shape, decay: float = 0.9):
        shape = tuple(int(s) for s in shape)
        if not 0.0 <= decay < 1.0:
            raise ValueError(f"decay must lie in [0, 1), got {decay}")
        self.decay = float(decay)
        self.g_w_ema = np.zeros(shape, dtype=active_dtype())
        self.g_sa_ema = np.zeros(shape, dtype=active_dtype())
        self.updates = 0

    @property
    def initialized(self) -> bool:
        """True once at least one gradient update has been folded in."""
        return self.updates > 0


def normalize_gradients(raw: np.ndarray) -> np.ndarray:
    """Min-max normalize gradient magnitudes to [0, 1).

    Returns (|raw| - min) / (max - min + 1e-8); a constant input maps to
    all zeros.
    """
    raw = np.asarray(raw)
    if raw.size == 0:
        raise ShapeError("normalize_gradients: empty input")
    mag = np.abs(raw)
    lo = mag.min()
    hi = mag.max()
    return (mag - lo) / (hi - lo + _EPS)


def _align_weight(g: np.ndarray, feat_shape) -> np.ndarray:
    """Broadcast a per-sample weight map over an optional batch axis."""
    if g.shape == feat_shape:
        return g
    if len(feat_shape) == g.ndim + 1 and feat_shape[1:] == g.shape:
        return g[None]
    raise ShapeError(
        f"fusion weight shape {g.shape} does not match features {feat_shape}")


def fuse(f_wav: Value, f_sa: Value, g_w: np.ndarray, g_sa: np.ndarray) -> Value:
    """Weighted sum of the two branches with weights held constant.

    The weights (normalized gradient statistics) see no gradient; backward
    passes (1 - g_w) and (1 - g_sa) straight through to the branches.
    """
    if f_wav.shape != f_sa.shape:
        raise ShapeError(
            f"fuse: branch shapes differ, {f_wav.shape} vs {f_sa.shape}")
    if f_wav.tape is not f_sa.tape:
        raise ShapeError("fuse: operands live on different tapes")
    g_w = np.asarray(g_w)
    g_sa = np.asarray(g_sa)
    if checked_enabled():
        for label, g in (("g_w", g_w), ("g_sa", g_sa)):
            if g.size and (g.min() < 0.0 or g.max() > 1.0):
                raise NumericError(f"fuse: {label} outside [0, 1]")
    # keep the graph closed over the feature dtype; float64 weights from
    # numpy promotion must not upgrade a float32 forward pass
    dtype = f_wav.data.dtype
    w_wav = (1.0 - _align_weight(g_w, f_wav.shape)).astype(dtype, copy=False)
    w_sa = (1.0 - _align_weight(g_sa, f_sa.shape)).astype(dtype, copy=False)
    out = w_wav * f_wav.data + w_sa * f_sa.data
    return f_wav.tape.record(out, (f_wav, f_sa),
                             lambda g: (g * w_wav, g * w_sa))


def update_fusion_state(state: FusionState, grad_wav: np.ndarray,
                        grad_sa: np.ndarray) -> None:
    """Fold freshly captured branch gradients into the moving averages.

    Gradients may be per sample [H, W, C] or batched [B, H, W, C]; a batch
    is averaged before normalization so the statistics stay per-map.
    """
    def reduce(grad: np.ndarray) -> np.ndarray:
        grad = np.asarray(grad)
        if grad.ndim == state.g_w_ema.ndim + 1:
            grad = grad.mean(axis=0)
        if grad.shape != state.g_w_ema.shape:
            raise ShapeError(
                f"fusion state expects {state.g_w_ema.shape}, got {grad.shape}")
        return normalize_gradients(grad)

    d = state.decay
    state.g_w_ema = d * state.g_w_ema + (1.0 - d) * reduce(grad_wav)
    state.g_sa_ema = d * state.g_sa_ema + (1.0 - d) * reduce(grad_sa)
    state.updates += 1
