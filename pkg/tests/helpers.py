"""Shared test utilities: central-difference gradient checking.

``check_gradients`` rebuilds the forward pass from plain float64 arrays for
every perturbed entry, so it exercises exactly the code path under test and
never reuses tape state between evaluations.
"""

import numpy as np

from wavefuse.config import float64_mode
from wavefuse.tape import Tape
from wavefuse import ops


def relative_error(a, b, floor=1e-8) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.linalg.norm(a.ravel()), np.linalg.norm(b.ravel()), floor)
    return float(np.linalg.norm((a - b).ravel()) / denom)


def numeric_gradient(fn, arrays, index, h=1e-4):
    """Central-difference gradient of scalar fn(*arrays) wrt arrays[index]."""
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    flat = arrays[index].reshape(-1)
    grad = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = fn(*arrays)
        flat[i] = orig - h
        fm = fn(*arrays)
        flat[i] = orig
        grad[i] = (fp - fm) / (2.0 * h)
    return grad.reshape(arrays[index].shape)


def weighted_sum(out, weights):
    """Reduce a tensor Value to a scalar with fixed projection weights."""
    w = out.tape.constant(np.asarray(weights))
    return ops.sum_all(ops.mul(out, w))


def check_gradients(build, arrays, tol=1e-5, h=1e-4, wrt=None, name=""):
    """Compare tape gradients against central differences in 64-bit mode.

    build(tape, *values) must return a scalar Value; arrays are the float
    inputs, wrt selects which of them to verify (default all).
    """
    arrays = [np.asarray(a, dtype=np.float64) for a in arrays]
    if wrt is None:
        wrt = range(len(arrays))
    with float64_mode():
        tape = Tape()
        values = [tape.constant(a) for a in arrays]
        out = build(tape, *values)
        grads = tape.backward(out)
        analytic = [np.asarray(grads.of(v)) for v in values]

        def scalar(*xs):
            t = Tape()
            return float(build(t, *[t.constant(x) for x in xs]).data)

        for i in wrt:
            numeric = numeric_gradient(scalar, arrays, i, h)
            err = relative_error(analytic[i], numeric)
            assert err < tol, (
                f"{name or 'gradient check'}: input {i} relative error "
                f"{err:.3e} >= {tol}")


def check_parameter_gradients(loss_fn, params, tol=1e-5, h=1e-4,
                              max_entries=None, seed=0, name=""):
    """FD-check the gradients a backward pass accumulates into parameters.

    loss_fn() must build a fresh tape each call and return the scalar loss
    Value without running backward. Parameters must already be float64
    (created under float64_mode). max_entries caps the checked entries per
    parameter (random positions, seeded).
    """
    for p in params:
        assert p.value.dtype == np.float64, f"{p.name} is not float64"
        p.zero_grad()
    loss = loss_fn()
    loss.tape.backward(loss)
    rng = np.random.default_rng(seed)
    for p in params:
        flat = p.value.reshape(-1)
        if max_entries is None or flat.size <= max_entries:
            idx = np.arange(flat.size)
        else:
            idx = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        analytic = p.grad.reshape(-1)[idx].copy()
        numeric = np.empty_like(analytic)
        for j, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + h
            fp = float(loss_fn().data)
            flat[i] = orig - h
            fm = float(loss_fn().data)
            flat[i] = orig
            numeric[j] = (fp - fm) / (2.0 * h)
        err = relative_error(analytic, numeric, floor=1e-6)
        assert err < tol, (
            f"{name or 'gradient check'}: parameter {p.name} relative error "
            f"{err:.3e} >= {tol}")


# ---------------------------------------------------------------------------
# straight-line reference implementations (independent of wavefuse.ops)

def conv_oracle(x, w, b, stride=1):
    """Direct window-by-window convolution, zero same-padding."""
    h, wd, cin = x.shape
    k = w.shape[0]
    p = k // 2
    ho = -(-h // stride)
    wo = -(-wd // stride)
    xp = np.zeros((h + 2 * p, wd + 2 * p, cin), dtype=np.float64)
    xp[p:p + h, p:p + wd] = x
    out = np.empty((ho, wo, w.shape[3]), dtype=np.float64)
    for i in range(ho):
        for j in range(wo):
            win = xp[i * stride:i * stride + k, j * stride:j * stride + k, :]
            out[i, j] = np.tensordot(win, w, axes=([0, 1, 2], [0, 1, 2])) + b
    return out


def sepconv_oracle(x, dw, pw, b):
    """Depthwise window sums per pixel, then a pointwise mix."""
    h, w, cin = x.shape
    k = dw.shape[0]
    p = k // 2
    xp = np.zeros((h + 2 * p, w + 2 * p, cin), dtype=np.float64)
    xp[p:p + h, p:p + w] = x
    depth = np.empty((h, w, cin), dtype=np.float64)
    for i in range(h):
        for j in range(w):
            depth[i, j] = np.sum(xp[i:i + k, j:j + k, :] * dw, axis=(0, 1))
    return depth @ pw + b


def lstm_oracle(x, wx, wh, b):
    """Step-by-step gate equations, scalar-style, no shared code."""
    t = x.shape[0]
    u = wx.shape[1] // 4
    h = np.zeros(u)
    c = np.zeros(u)
    outs = []
    for step in range(t):
        z = x[step] @ wx + h @ wh + b
        gi = 1.0 / (1.0 + np.exp(-z[:u]))
        gf = 1.0 / (1.0 + np.exp(-z[u:2 * u]))
        gc = np.tanh(z[2 * u:3 * u])
        go = 1.0 / (1.0 + np.exp(-z[3 * u:]))
        c = gf * c + gi * gc
        h = go * np.tanh(c)
        outs.append(h.copy())
    return np.stack(outs)
