"""Soft attention and symmetry-aware feature attention.

Soft attention scores each spatial position with a 1x1 projection, takes a
softmax over all positions, rescales by H*W so a uniform map weights every
position by one, and blends the gated features back in through a learnable
gain that starts at zero (the block is an exact identity at init).

The symmetry-aware path runs in three stages:

  fdab      squeeze features to one channel through separable convolutions
            (256, 64, 1 filters), then sweep the map twice with LSTMs,
            once row-wise (rows as timesteps) and once column-wise, and
            sum the sweeps
  sab       multiply the swept map elementwise with its mirror across the
            main diagonal, so symmetric responses reinforce (square maps
            only)
  safa_map  expand the symmetry map back through separable convolutions
            into a sigmoid gate with values in (0, 1); a zero-initialized
            gain ahead of the sigmoid starts the gate at one half

All entry points accept [H, W, C] features or a batched [B, H, W, C].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .config import active_dtype
from .errors import ShapeError
from .params import Parameter, he_normal, lstm_uniform, mirror_spatial
from .tape import Value

__all__ = [
    "FDAB_FILTERS", "SepConvParams", "LSTMParams",
    "SoftAttentionParams", "SaFAParams", "ForwardTrace",
    "spatial_attention_map", "soft_attention",
    "fdab", "sab", "safa_map", "safa_attention",
]

# channel counts of the squeeze (and mirrored expand) stacks, last is the
# single-channel map fed to the LSTMs
FDAB_FILTERS = (256, 64, 1)


@dataclass
class SepConvParams:
    """Weights of one separable convolution (depthwise, pointwise, bias)."""

    depthwise: Parameter
    pointwise: Parameter
    bias: Parameter

    @classmethod
    def create(cls, rng: np.random.Generator, cin: int, cout: int,
               prefix: str, kernel: int = 3) -> "SepConvParams":
        k = int(kernel)
        # spatially symmetric start, same reason as the backbone stages
        dw0 = mirror_spatial(he_normal(rng, (k, k, cin), fan_in=k * k))
        return cls(
            depthwise=Parameter(dw0, name=f"{prefix}_dw"),
            pointwise=Parameter(he_normal(rng, (cin, cout), fan_in=cin),
                                name=f"{prefix}_pw"),
            bias=Parameter(np.zeros(cout, dtype=active_dtype()),
                           name=f"{prefix}_b"),
        )

    def parameters(self) -> list[Parameter]:
        return [self.depthwise, self.pointwise, self.bias]

    def apply(self, x: Value) -> Value:
        tape = x.tape
        return ops.separable_conv2d(x, tape.leaf(self.depthwise),
                                    tape.leaf(self.pointwise),
                                    tape.leaf(self.bias))


@dataclass
class LSTMParams:
    """Weights of one LSTM (input, recurrent, bias; gate order i, f, g, o)."""

    wx: Parameter
    wh: Parameter
    bias: Parameter

    @classmethod
    def create(cls, rng: np.random.Generator, input_dim: int, hidden: int,
               prefix: str) -> "LSTMParams":
        return cls(
            wx=Parameter(lstm_uniform(rng, (input_dim, 4 * hidden), hidden),
                         name=f"{prefix}_wx"),
            wh=Parameter(lstm_uniform(rng, (hidden, 4 * hidden), hidden),
                         name=f"{prefix}_wh"),
            bias=Parameter(np.zeros(4 * hidden, dtype=active_dtype()),
                           name=f"{prefix}_b"),
        )

    def parameters(self) -> list[Parameter]:
        return [self.wx, self.wh, self.bias]

    def apply(self, seq: Value) -> Value:
        tape = seq.tape
        return ops.lstm_forward(seq, tape.leaf(self.wx), tape.leaf(self.wh),
                                tape.leaf(self.bias))


@dataclass
class SoftAttentionParams:
    """1x1 score projection plus the zero-initialized blend gain."""

    score_w: Parameter
    score_b: Parameter
    gamma: Parameter

    @classmethod
    def create(cls, rng: np.random.Generator, channels: int,
               prefix: str = "soft_attn") -> "SoftAttentionParams":
        dt = active_dtype()
        return cls(
            score_w=Parameter(he_normal(rng, (channels, 1), fan_in=channels),
                              name=f"{prefix}/score_w"),
            score_b=Parameter(np.zeros(1, dtype=dt), name=f"{prefix}/score_b"),
            gamma=Parameter(np.zeros((), dtype=dt), name=f"{prefix}/gamma"),
        )

    def parameters(self) -> list[Parameter]:
        return [self.score_w, self.score_b, self.gamma]


@dataclass
class SaFAParams:
    """Weights of the symmetry-aware attention path for a fixed map size.

    The squeeze stack always reduces through 256, 64, 1 channels and the
    expand stack mirrors it; the two LSTMs are sized so their per-timestep
    hidden states tile straight back to the map (hidden W for the row
    sweep, hidden H for the column sweep).
    """

    height: int
    width: int
    fdab_convs: list[SepConvParams]
    lstm_h: LSTMParams
    lstm_w: LSTMParams
    out_convs: list[SepConvParams]
    out_gain: Parameter

    @classmethod
    def create(cls, rng: np.random.Generator, channels: int, height: int,
               width: int, prefix: str = "safa") -> "SaFAParams":
        f1, f2, f3 = FDAB_FILTERS
        down_dims = [(channels, f1), (f1, f2), (f2, f3)]
        up_dims = [(f3, f1), (f1, f2), (f2, f3)]
        lstm_h = LSTMParams.create(rng, width, width, f"{prefix}/lstm_h")
        if height == width:
            # both sweeps start from the same weights, so a symmetric map
            # sweeps to a symmetric output from the first step and the
            # transpose product downstream reads plain squares; training
            # is free to split the two directions afterwards
            lstm_w = LSTMParams(
                wx=Parameter(lstm_h.wx.value.copy(), name=f"{prefix}/lstm_w_wx"),
                wh=Parameter(lstm_h.wh.value.copy(), name=f"{prefix}/lstm_w_wh"),
                bias=Parameter(lstm_h.bias.value.copy(),
                               name=f"{prefix}/lstm_w_b"),
            )
        else:
            lstm_w = LSTMParams.create(rng, height, height, f"{prefix}/lstm_w")
        return cls(
            height=int(height),
            width=int(width),
            fdab_convs=[SepConvParams.create(rng, ci, co, f"{prefix}/fdab{i}")
                        for i, (ci, co) in enumerate(down_dims)],
            lstm_h=lstm_h,
            lstm_w=lstm_w,
            out_convs=[SepConvParams.create(rng, ci, co, f"{prefix}/out{i}")
                       for i, (ci, co) in enumerate(up_dims)],
            out_gain=Parameter(np.zeros((), dtype=active_dtype()),
                               name=f"{prefix}/out_gain"),
        )

    def parameters(self) -> list[Parameter]:
        out: list[Parameter] = []
        for block in self.fdab_convs:
            out.extend(block.parameters())
        out.extend(self.lstm_h.parameters())
        out.extend(self.lstm_w.parameters())
        for block in self.out_convs:
            out.extend(block.parameters())
        out.append(self.out_gain)
        return out


@dataclass
class ForwardTrace:
    """Named intermediates of one forward pass.

    Per-sample shapes are given; batched passes carry a leading batch axis.
    Branches disabled by ablation flags leave their fields None.
    """

    f_enc: Value | None = None        # [H, W, C]
    f_h: Value | None = None          # [H, W] rows-as-timesteps view
    f_w_spatial: Value | None = None  # [W, H] columns-as-timesteps view
    f_hlstm: Value | None = None      # [H, W, 1]
    f_wlstm: Value | None = None      # [H, W, 1]
    f_lstm: Value | None = None       # [H, W, 1]
    f_symmetry: Value | None = None   # [H, W, 1]
    f_attn: Value | None = None       # [H, W, 1]
    f_sa: Value | None = None         # [H, W, C]
    f_wav: Value | None = None        # [H, W, C]
    f_fuse: Value | None = None       # [H, W, C]
    f_final: Value | None = None      # [H, W, C]
    pooled: Value | None = None       # [C]
    logits: Value | None = None       # [K]


# ---------------------------------------------------------------------------
# soft attention

def _spatial_dims(x: Value, what: str):
    if x.ndim == 3:
        return False, x.shape[0], x.shape[1]
    if x.ndim == 4:
        return True, x.shape[1], x.shape[2]
    raise ShapeError(f"{what} expects [H,W,C] or [B,H,W,C], got {x.shape}")


def spatial_attention_map(x: Value, params: SoftAttentionParams) -> Value:
    """Softmax attention over spatial positions, rescaled to mean one.

    Returns a [..., H, W, 1] map; before rescaling the map is a
    distribution over the H*W positions, so the returned entries sum
    to H*W.
    """
    batched, h, w = _spatial_dims(x, "spatial_attention_map")
    tape = x.tape
    score = ops.affine(x, tape.leaf(params.score_w), tape.leaf(params.score_b))
    flat_shape = (x.shape[0], h * w) if batched else (h * w,)
    flat = ops.reshape(score, flat_shape)
    attn = ops.softmax(flat)
    rescaled = ops.mul_const(attn, float(h * w))
    return ops.reshape(rescaled, score.shape)


def soft_attention(x: Value, params: SoftAttentionParams) -> Value:
    """Blend attention-gated features back in: x + gamma * (A * x).

    gamma starts at zero, so a freshly initialized block returns x exactly;
    with uniform scores the rescaled map is all ones and gamma = 1 doubles
    the input.
    """
    attn = spatial_attention_map(x, params)
    gated = ops.broadcast_mul(attn, x)
    return ops.add(x, ops.scale(gated, x.tape.leaf(params.gamma)))


# ---------------------------------------------------------------------------
# symmetry-aware attention

def fdab(f_enc: Value, params: SaFAParams,
         trace: ForwardTrace | None = None) -> Value:
    """Direction-aware sweep of the squeezed feature map.

    Separable convolutions reduce C to a single channel; the map is then
    read as H rows of width W (row LSTM, hidden W) and as W columns of
    height H (column LSTM, hidden H). Both sweeps tile back to
    [..., H, W, 1] and are summed.
    """
    batched, h, w = _spatial_dims(f_enc, "fdab")
    if (h, w) != (params.height, params.width):
        raise ShapeError(
            f"fdab: feature map {h}x{w} does not match parameters "
            f"{params.height}x{params.width}")
    t = f_enc
    for i, block in enumerate(params.fdab_convs):
        t = block.apply(t)
        if i < len(params.fdab_convs) - 1:
            t = ops.relu(t)
    grid_shape = (f_enc.shape[0], h, w) if batched else (h, w)
    map_shape = grid_shape + (1,)
    f_h = ops.reshape(t, grid_shape)
    f_w_spatial = ops.transpose_last2(f_h)
    f_hlstm = ops.reshape(params.lstm_h.apply(f_h), map_shape)
    f_wlstm = ops.reshape(
        ops.transpose_last2(params.lstm_w.apply(f_w_spatial)), map_shape)
    f_lstm = ops.add(f_hlstm, f_wlstm)
    if trace is not None:
        trace.f_h = f_h
        trace.f_w_spatial = f_w_spatial
        trace.f_hlstm = f_hlstm
        trace.f_wlstm = f_wlstm
        trace.f_lstm = f_lstm
    return f_lstm


def sab(f_lstm: Value) -> Value:
    """Elementwise product of the map with its transpose.

    Position (i, j) is multiplied with its mirror (j, i), so the result is
    always symmetric across the main diagonal. Requires a square map.
    """
    batched, h, w = _spatial_dims(f_lstm, "sab")
    if f_lstm.shape[-1] != 1:
        raise ShapeError(f"sab expects a single-channel map, got {f_lstm.shape}")
    if h != w:
        raise ShapeError(f"sab requires a square map, got {h}x{w}")
    grid_shape = (f_lstm.shape[0], h, w) if batched else (h, w)
    grid = ops.reshape(f_lstm, grid_shape)
    sym = ops.mul(grid, ops.transpose_last2(grid))
    return ops.reshape(sym, f_lstm.shape)


def safa_map(f_symmetry: Value, params: SaFAParams) -> Value:
    """Expand the symmetry map into a sigmoid attention gate in (0, 1).

    The stack output is scaled by a zero-initialized gain before the
    sigmoid, so a fresh gate sits exactly at one half and the expand
    stack stays gradient-silent until the gain moves. Without the warm
    start, sign-coordinated optimizer steps through the wide stack
    saturate the gate shut before the classifier has learned anything,
    and a shut gate blocks every gradient behind it.
    """
    if f_symmetry.shape[-1] != 1:
        raise ShapeError(
            f"safa_map expects a single-channel map, got {f_symmetry.shape}")
    t = f_symmetry
    for i, block in enumerate(params.out_convs):
        t = block.apply(t)
        if i < len(params.out_convs) - 1:
            t = ops.relu(t)
    return ops.sigmoid(ops.scale(t, t.tape.leaf(params.out_gain)))


def safa_attention(x: Value, params: SaFAParams,
                   trace: ForwardTrace | None = None) -> Value:
    """Full symmetry-aware chain: fdab, sab, then the sigmoid gate."""
    f_lstm = fdab(x, params, trace)
    f_symmetry = sab(f_lstm)
    f_attn = safa_map(f_symmetry, params)
    if trace is not None:
        trace.f_symmetry = f_symmetry
        trace.f_attn = f_attn
    return f_attn
