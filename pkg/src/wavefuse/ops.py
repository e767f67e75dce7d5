"""Differentiable operations recorded on a :class:`~wavefuse.tape.Tape`.

Layout convention: channels last. Spatial ops take ``[H, W, C]`` and also
accept a leading batch axis ``[B, H, W, C]``; sequence ops take ``[T, D]``
or ``[B, T, D]``. Shapes are validated strictly; the only sanctioned
broadcast is :func:`broadcast_mul` (a ``[..., H, W, 1]`` gate against
``[..., H, W, C]`` features).

Every op installs an exact vector-Jacobian product; vjp callbacks must not
mutate the incoming gradient.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError
from .tape import Tape, Value

__all__ = [
    "add", "mul", "mul_const", "scale", "broadcast_mul",
    "relu", "sigmoid", "tanh", "softmax",
    "reshape", "transpose_last2", "sum_all",
    "matmul", "affine", "global_average_pool",
    "conv2d", "separable_conv2d", "lstm_forward",
    "cross_entropy_loss",
]


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ShapeError(msg)


def _same_tape(*values: Value) -> Tape:
    tape = values[0].tape
    for v in values[1:]:
        _require(v.tape is tape, "operands live on different tapes")
    return tape


# ---------------------------------------------------------------------------
# elementwise arithmetic

def add(a: Value, b: Value) -> Value:
    _require(a.shape == b.shape, f"add: shape mismatch {a.shape} vs {b.shape}")
    tape = _same_tape(a, b)
    return tape.record(a.data + b.data, (a, b), lambda g: (g, g))


def mul(a: Value, b: Value) -> Value:
    """Elementwise product of same-shape tensors."""
    _require(a.shape == b.shape, f"mul: shape mismatch {a.shape} vs {b.shape}")
    tape = _same_tape(a, b)
    ad, bd = a.data, b.data
    return tape.record(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def mul_const(x: Value, c: float) -> Value:
    c = float(c)
    return x.tape.record(x.data * c, (x,), lambda g: (g * c,))


def scale(x: Value, s: Value) -> Value:
    """Multiply a tensor by a scalar value (e.g. a learnable gain)."""
    _require(s.shape == (), f"scale: scalar must have shape (), got {s.shape}")
    tape = _same_tape(x, s)
    xd, sd = x.data, s.data
    return tape.record(xd * sd, (x, s), lambda g: (g * sd, np.sum(g * xd)))


def broadcast_mul(gate: Value, x: Value) -> Value:
    """Channel-broadcast product: gate [..., H, W, 1] times x [..., H, W, C].

    This is the one sanctioned broadcast in the op set.
    """
    _require(gate.ndim == x.ndim and gate.shape[-1] == 1
             and gate.shape[:-1] == x.shape[:-1],
             f"broadcast_mul: gate {gate.shape} incompatible with {x.shape}")
    tape = _same_tape(gate, x)
    gd, xd = gate.data, x.data

    def vjp(g):
        return np.sum(g * xd, axis=-1, keepdims=True), g * gd

    return tape.record(gd * xd, (gate, x), vjp)


# ---------------------------------------------------------------------------
# activations

def relu(x: Value) -> Value:
    xd = x.data
    return x.tape.record(np.maximum(xd, 0.0), (x,),
                         lambda g: (g * (xd > 0),))


def _sigmoid_arr(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x: Value) -> Value:
    y = _sigmoid_arr(x.data)
    return x.tape.record(y, (x,), lambda g: (g * y * (1.0 - y),))


def tanh(x: Value) -> Value:
    y = np.tanh(x.data)
    return x.tape.record(y, (x,), lambda g: (g * (1.0 - y * y),))


def softmax(x: Value) -> Value:
    """Softmax along the last axis, stabilized by max subtraction."""
    xd = x.data
    _require(xd.ndim >= 1, "softmax requires at least one axis")
    shifted = xd - np.max(xd, axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / np.sum(e, axis=-1, keepdims=True)

    def vjp(g):
        dot = np.sum(g * y, axis=-1, keepdims=True)
        return (y * (g - dot),)

    return x.tape.record(y, (x,), vjp)


# ---------------------------------------------------------------------------
# shape manipulation and reductions

def reshape(x: Value, shape) -> Value:
    shape = tuple(int(s) for s in shape)
    _require(int(np.prod(shape, dtype=np.int64)) == x.data.size,
             f"reshape: cannot view {x.shape} as {shape}")
    old_shape = x.shape
    return x.tape.record(x.data.reshape(shape), (x,),
                         lambda g: (g.reshape(old_shape),))


def transpose_last2(x: Value) -> Value:
    _require(x.ndim >= 2, "transpose_last2 requires rank >= 2")
    return x.tape.record(np.swapaxes(x.data, -1, -2), (x,),
                         lambda g: (np.swapaxes(g, -1, -2),))


def sum_all(x: Value) -> Value:
    shape = x.shape
    dtype = x.data.dtype
    return x.tape.record(np.sum(x.data), (x,),
                         lambda g: (np.full(shape, g, dtype=dtype),))


# ---------------------------------------------------------------------------
# linear algebra

def matmul(a: Value, b: Value) -> Value:
    """2-D matrix product; backward is dA = dC @ B^T, dB = A^T @ dC."""
    _require(a.ndim == 2 and b.ndim == 2,
             f"matmul requires 2-D operands, got {a.shape} and {b.shape}")
    _require(a.shape[1] == b.shape[0],
             f"matmul: inner dims disagree, {a.shape} vs {b.shape}")
    tape = _same_tape(a, b)
    ad, bd = a.data, b.data
    return tape.record(ad @ bd, (a, b),
                       lambda g: (g @ bd.T, ad.T @ g))


def affine(x: Value, w: Value, b: Value) -> Value:
    """x @ w + b along the last axis; x may carry leading dims.

    Doubles as a 1x1 (pointwise) convolution when x is [..., H, W, C].
    """
    _require(w.ndim == 2, f"affine: weight must be 2-D, got {w.shape}")
    _require(x.shape[-1] == w.shape[0],
             f"affine: last dim {x.shape} does not match weight {w.shape}")
    _require(b.shape == (w.shape[1],),
             f"affine: bias {b.shape} does not match weight {w.shape}")
    tape = _same_tape(x, w, b)
    xd, wd = x.data, w.data
    n, m = wd.shape
    out = xd @ wd + b.data

    def vjp(g):
        gf = g.reshape(-1, m)
        xf = xd.reshape(-1, n)
        return (gf @ wd.T).reshape(xd.shape), xf.T @ gf, gf.sum(axis=0)

    return tape.record(out, (x, w, b), vjp)


def global_average_pool(x: Value) -> Value:
    """Per-channel spatial mean: [H, W, C] -> [C] (or [B, H, W, C] -> [B, C])."""
    _require(x.ndim in (3, 4), f"global_average_pool expects rank 3 or 4, got {x.shape}")
    batched = x.ndim == 4
    h, w = (x.shape[1], x.shape[2]) if batched else (x.shape[0], x.shape[1])
    axes = (1, 2) if batched else (0, 1)
    scale_ = 1.0 / (h * w)
    shape = x.shape

    def vjp(g):
        ge = g[:, None, None, :] if batched else g[None, None, :]
        return (np.broadcast_to(ge * scale_, shape).astype(g.dtype, copy=False).copy(),)

    return x.tape.record(np.mean(x.data, axis=axes), (x,), vjp)


# ---------------------------------------------------------------------------
# convolutions

def _spatial_rank(x: Value, opname: str) -> bool:
    _require(x.ndim in (3, 4), f"{opname} expects [H,W,C] or [B,H,W,C], got {x.shape}")
    return x.ndim == 4


def conv2d(x: Value, w: Value, b: Value, stride: int = 1) -> Value:
    """Full 2-D convolution, zero same-padding, odd kernel.

    x: [H, W, Cin] or [B, H, W, Cin]; w: [k, k, Cin, Cout]; b: [Cout].
    Output spatial dims are ceil(H / stride) x ceil(W / stride).
    """
    batched = _spatial_rank(x, "conv2d")
    _require(w.ndim == 4 and w.shape[0] == w.shape[1],
             f"conv2d: kernel must be [k,k,Cin,Cout], got {w.shape}")
    k = w.shape[0]
    _require(k % 2 == 1, f"conv2d: kernel size must be odd, got {k}")
    cin, cout = w.shape[2], w.shape[3]
    _require(x.shape[-1] == cin,
             f"conv2d: input channels {x.shape} do not match kernel {w.shape}")
    _require(b.shape == (cout,), f"conv2d: bias {b.shape} must be [{cout}]")
    _require(stride >= 1, "conv2d: stride must be positive")
    tape = _same_tape(x, w, b)

    xd = x.data if batched else x.data[None]
    bs, h, wd_, _ = xd.shape
    p = k // 2
    ho = -(-h // stride)
    wo = -(-wd_ // stride)
    xp = np.pad(xd, ((0, 0), (p, p), (p, p), (0, 0)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(1, 2))
    win = win[:, ::stride, ::stride]                      # [B,ho,wo,Cin,k,k]
    patches = np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3))
    patches = patches.reshape(bs * ho * wo, k * k * cin)
    wflat = w.data.reshape(k * k * cin, cout)
    out = (patches @ wflat + b.data).reshape(bs, ho, wo, cout)
    wdat = w.data
    xp_shape = xp.shape

    def vjp(g):
        gb = g if batched else g[None]
        gf = gb.reshape(bs * ho * wo, cout)
        dw = (patches.T @ gf).reshape(k, k, cin, cout)
        db = gf.sum(axis=0)
        dxp = np.zeros(xp_shape, dtype=gf.dtype)
        for i in range(k):
            for j in range(k):
                contrib = (gf @ wdat[i, j].T).reshape(bs, ho, wo, cin)
                dxp[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :] += contrib
        dx = dxp[:, p:p + h, p:p + wd_, :]
        return (dx if batched else dx[0]), dw, db

    return tape.record(out if batched else out[0], (x, w, b), vjp)


def separable_conv2d(x: Value, depthwise: Value, pointwise: Value,
                     bias: Value) -> Value:
    """Depthwise conv (same padding, stride 1), 1x1 pointwise mix, bias add.

    x: [H, W, Cin] or [B, H, W, Cin]; depthwise: [k, k, Cin];
    pointwise: [Cin, Cout]; bias: [Cout].
    """
    batched = _spatial_rank(x, "separable_conv2d")
    _require(depthwise.ndim == 3 and depthwise.shape[0] == depthwise.shape[1],
             f"separable_conv2d: depthwise must be [k,k,Cin], got {depthwise.shape}")
    k = depthwise.shape[0]
    _require(k % 2 == 1, f"separable_conv2d: kernel size must be odd, got {k}")
    cin = depthwise.shape[2]
    _require(x.shape[-1] == cin,
             f"separable_conv2d: input {x.shape} does not match depthwise {depthwise.shape}")
    _require(pointwise.ndim == 2 and pointwise.shape[0] == cin,
             f"separable_conv2d: pointwise {pointwise.shape} must be [{cin}, Cout]")
    cout = pointwise.shape[1]
    _require(bias.shape == (cout,), f"separable_conv2d: bias {bias.shape} must be [{cout}]")
    tape = _same_tape(x, depthwise, pointwise, bias)

    xd = x.data if batched else x.data[None]
    bs, h, w, _ = xd.shape
    p = k // 2
    xp = np.pad(xd, ((0, 0), (p, p), (p, p), (0, 0)))
    dw = depthwise.data
    depth = np.zeros_like(xd)
    for i in range(k):
        for j in range(k):
            depth += xp[:, i:i + h, j:j + w, :] * dw[i, j]
    pw = pointwise.data
    out = (depth.reshape(-1, cin) @ pw + bias.data).reshape(bs, h, w, cout)

    def vjp(g):
        gb = g if batched else g[None]
        gf = gb.reshape(-1, cout)
        db = gf.sum(axis=0)
        dpw = depth.reshape(-1, cin).T @ gf
        gdepth = (gf @ pw.T).reshape(bs, h, w, cin)
        ddw = np.empty_like(dw)
        dxp = np.zeros_like(xp)
        for i in range(k):
            for j in range(k):
                sl = xp[:, i:i + h, j:j + w, :]
                ddw[i, j] = np.sum(sl * gdepth, axis=(0, 1, 2))
                dxp[:, i:i + h, j:j + w, :] += gdepth * dw[i, j]
        dx = dxp[:, p:p + h, p:p + w, :]
        return (dx if batched else dx[0]), ddw, dpw, db

    return tape.record(out if batched else out[0], (x, depthwise, pointwise, bias), vjp)


# ---------------------------------------------------------------------------
# recurrence

def lstm_forward(seq: Value, wx: Value, wh: Value, b: Value) -> Value:
    """LSTM over a sequence, returning every hidden state.

    seq: [T, D] or [B, T, D]; wx: [D, 4u]; wh: [u, 4u]; b: [4u], with gate
    order (input, forget, candidate, output). Initial hidden and cell states
    are zero; backward runs full backpropagation through time.
    """
    batched = seq.ndim == 3
    _require(seq.ndim in (2, 3), f"lstm_forward expects [T,D] or [B,T,D], got {seq.shape}")
    _require(wx.ndim == 2 and wh.ndim == 2 and b.ndim == 1,
             "lstm_forward: weight ranks must be (2, 2, 1)")
    d = seq.shape[-1]
    _require(wx.shape[0] == d, f"lstm_forward: wx {wx.shape} does not match input dim {d}")
    _require(wx.shape[1] % 4 == 0, f"lstm_forward: wx second dim must be 4*u, got {wx.shape}")
    u = wx.shape[1] // 4
    _require(wh.shape == (u, 4 * u), f"lstm_forward: wh must be [{u}, {4*u}], got {wh.shape}")
    _require(b.shape == (4 * u,), f"lstm_forward: bias must be [{4*u}], got {b.shape}")
    tape = _same_tape(seq, wx, wh, b)

    xd = seq.data if batched else seq.data[None]
    bs, t, _ = xd.shape
    wxd, whd, bd = wx.data, wh.data, b.data
    h = np.zeros((bs, u), dtype=xd.dtype)
    c = np.zeros((bs, u), dtype=xd.dtype)
    hs = np.empty((bs, t, u), dtype=xd.dtype)
    cache = []
    for step in range(t):
        xt = xd[:, step]
        z = xt @ wxd + h @ whd + bd
        gi = _sigmoid_arr(z[:, :u])
        gf = _sigmoid_arr(z[:, u:2 * u])
        gc = np.tanh(z[:, 2 * u:3 * u])
        go = _sigmoid_arr(z[:, 3 * u:])
        c_prev, h_prev = c, h
        c = gf * c_prev + gi * gc
        hc = np.tanh(c)
        h = go * hc
        hs[:, step] = h
        cache.append((xt, h_prev, c_prev, gi, gf, gc, go, hc))

    def vjp(g):
        gb = g if batched else g[None]
        dwx = np.zeros_like(wxd)
        dwh = np.zeros_like(whd)
        db = np.zeros_like(bd)
        dx = np.empty_like(xd)
        dh_next = np.zeros((bs, u), dtype=xd.dtype)
        dc_next = np.zeros((bs, u), dtype=xd.dtype)
        for step in range(t - 1, -1, -1):
            xt, h_prev, c_prev, gi, gf, gc, go, hc = cache[step]
            dh = gb[:, step] + dh_next
            dgo = dh * hc
            dc = dc_next + dh * go * (1.0 - hc * hc)
            dgi = dc * gc
            dgc = dc * gi
            dgf = dc * c_prev
            dz = np.concatenate([
                dgi * gi * (1.0 - gi),
                dgf * gf * (1.0 - gf),
                dgc * (1.0 - gc * gc),
                dgo * go * (1.0 - go),
            ], axis=1)
            dwx += xt.T @ dz
            dwh += h_prev.T @ dz
            db += dz.sum(axis=0)
            dx[:, step] = dz @ wxd.T
            dh_next = dz @ whd.T
            dc_next = dc * gf
        return (dx if batched else dx[0]), dwx, dwh, db

    return tape.record(hs if batched else hs[0], (seq, wx, wh, b), vjp)


# ---------------------------------------------------------------------------
# loss

def cross_entropy_loss(logits: Value, labels) -> Value:
    """Mean negative log softmax probability of the true class.

    logits: [B, K]; labels: int array [B] with values in [0, K). Backward is
    the fused softmax-cross-entropy rule (probabilities minus one-hot,
    divided by B).
    """
    _require(logits.ndim == 2, f"cross_entropy_loss expects [B,K] logits, got {logits.shape}")
    lab = np.asarray(labels)
    bsz, k = logits.shape
    _require(lab.shape == (bsz,), f"cross_entropy_loss: labels {lab.shape} must be [{bsz}]")
    if lab.size and (lab.min() < 0 or lab.max() >= k):
        raise ShapeError(f"cross_entropy_loss: labels must lie in [0, {k})")
    ld = logits.data
    m = np.max(ld, axis=1, keepdims=True)
    lse = m + np.log(np.sum(np.exp(ld - m), axis=1, keepdims=True))
    logp = ld - lse
    rows = np.arange(bsz)
    loss = np.asarray(-np.mean(logp[rows, lab]), dtype=ld.dtype)

    def vjp(g):
        probs = np.exp(logp)
        probs[rows, lab] -= 1.0
        return (probs * (g / bsz),)

    return logits.tape.record(loss, (logits,), vjp)
