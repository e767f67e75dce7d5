"""Single-level 2-D Haar transform and the boundary feature map.

The transform is orthonormal: each 2x2 block ``[a, b; c, d]`` maps to

    ll = (a + b + c + d) / 2      lh = (a - b + c - d) / 2
    hl = (a + b - c - d) / 2      hh = (a - b - c + d) / 2

and the block matrix of this map is symmetric and involutive, so the
inverse (and the adjoint) reuse the same sign table. Inputs are
``[H, W, C]`` or ``[B, H, W, C]`` with even H and W; subbands have halved
spatial dims.

``boundary_features`` drops the low-low subband and reconstructs, which
equals subtracting each 2x2 block's mean. That projection is self-adjoint,
so its backward pass applies the same projection to the gradient.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .errors import ShapeError
from .tape import Value

__all__ = ["HaarSubbands", "haar_dwt2", "haar_idwt2", "boundary_features"]

# sign of (a, b, c, d) in each subband; also the sign of each subband in
# the reconstruction of (a, b, c, d), since the block matrix is symmetric
_SIGNS = {
    "ll": (1.0, 1.0, 1.0, 1.0),
    "lh": (1.0, -1.0, 1.0, -1.0),
    "hl": (1.0, 1.0, -1.0, -1.0),
    "hh": (1.0, -1.0, -1.0, 1.0),
}
_ORDER = ("ll", "lh", "hl", "hh")


class HaarSubbands(NamedTuple):
    """The four subbands of a single-level 2-D Haar transform."""

    ll: Value
    lh: Value
    hl: Value
    hh: Value


def _check_spatial(shape, what: str) -> bool:
    """Validate rank and even spatial dims; return True when batched."""
    if len(shape) not in (3, 4):
        raise ShapeError(f"{what} expects [H,W,C] or [B,H,W,C], got {shape}")
    batched = len(shape) == 4
    h, w = (shape[1], shape[2]) if batched else (shape[0], shape[1])
    if h % 2 or w % 2:
        raise ShapeError(f"{what} needs even spatial dims, got {h}x{w}")
    return batched


def _quadrants(xb: np.ndarray):
    return (xb[:, 0::2, 0::2, :], xb[:, 0::2, 1::2, :],
            xb[:, 1::2, 0::2, :], xb[:, 1::2, 1::2, :])


def _analyze(xb: np.ndarray, name: str) -> np.ndarray:
    a, b, c, d = _quadrants(xb)
    sa, sb, sc, sd = _SIGNS[name]
    return 0.5 * (sa * a + sb * b + sc * c + sd * d)


def _synthesize(subs) -> np.ndarray:
    ll, lh, hl, hh = subs
    bs, h2, w2, ch = ll.shape
    out = np.empty((bs, 2 * h2, 2 * w2, ch), dtype=ll.dtype)
    quads = ((0, 0), (0, 1), (1, 0), (1, 1))
    for q, name in enumerate(_ORDER):
        sa, sb, sc, sd = _SIGNS[name]
        i, j = quads[q]
        out[:, i::2, j::2, :] = 0.5 * (sa * ll + sb * lh + sc * hl + sd * hh)
    return out


def _scatter(g: np.ndarray, name: str) -> np.ndarray:
    """Adjoint of one analysis subband: spread g back over 2x2 blocks."""
    bs, h2, w2, ch = g.shape
    out = np.empty((bs, 2 * h2, 2 * w2, ch), dtype=g.dtype)
    sa, sb, sc, sd = _SIGNS[name]
    out[:, 0::2, 0::2, :] = g * (0.5 * sa)
    out[:, 0::2, 1::2, :] = g * (0.5 * sb)
    out[:, 1::2, 0::2, :] = g * (0.5 * sc)
    out[:, 1::2, 1::2, :] = g * (0.5 * sd)
    return out


def haar_dwt2(x: Value) -> HaarSubbands:
    """Forward transform; each subband is its own differentiable node."""
    batched = _check_spatial(x.shape, "haar_dwt2")
    xb = x.data if batched else x.data[None]
    tape = x.tape
    values = []
    for name in _ORDER:
        sub = _analyze(xb, name)

        def vjp(g, name=name):
            gx = _scatter(g if batched else g[None], name)
            return (gx if batched else gx[0],)

        values.append(tape.record(sub if batched else sub[0], (x,), vjp))
    return HaarSubbands(*values)


def haar_idwt2(subbands: HaarSubbands) -> Value:
    """Inverse transform; exact round trip with :func:`haar_dwt2`."""
    ll, lh, hl, hh = subbands
    tape = ll.tape
    for v in (lh, hl, hh):
        if v.tape is not tape:
            raise ShapeError("haar_idwt2: subbands live on different tapes")
        if v.shape != ll.shape:
            raise ShapeError(
                f"haar_idwt2: subband shapes differ, {v.shape} vs {ll.shape}")
    if ll.ndim not in (3, 4):
        raise ShapeError(f"haar_idwt2 expects rank 3 or 4 subbands, got {ll.shape}")
    batched = ll.ndim == 4
    subs = [v.data if batched else v.data[None] for v in (ll, lh, hl, hh)]
    out = _synthesize(subs)

    def vjp(g):
        gb = g if batched else g[None]
        grads = [_analyze(gb, name) for name in _ORDER]
        return tuple(gr if batched else gr[0] for gr in grads)

    return tape.record(out if batched else out[0], (ll, lh, hl, hh), vjp)


def boundary_features(x: Value) -> Value:
    """Reconstruction with the low-low subband zeroed, as one fused node.

    Keeps only the detail content of each 2x2 block, i.e. subtracts the
    block mean. The projection is self-adjoint, so the vjp applies it to
    the incoming gradient unchanged.
    """
    batched = _check_spatial(x.shape, "boundary_features")

    def project(arr: np.ndarray) -> np.ndarray:
        ab = arr if batched else arr[None]
        subs = [np.zeros_like(_analyze(ab, "ll"))] + \
            [_analyze(ab, name) for name in _ORDER[1:]]
        out = _synthesize(subs)
        return out if batched else out[0]

    return x.tape.record(project(x.data), (x,), lambda g: (project(g),))
