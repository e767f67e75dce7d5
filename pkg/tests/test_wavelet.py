"""Haar transform invariants and the boundary feature projection."""

import numpy as np
import pytest

from helpers import check_gradients, weighted_sum
from wavefuse import ops
from wavefuse.config import float64_mode
from wavefuse.errors import ShapeError
from wavefuse.tape import Tape
from wavefuse.wavelet import boundary_features, haar_dwt2, haar_idwt2


def dwt_data(x):
    subs = haar_dwt2(Tape().constant(x))
    return tuple(s.data for s in subs)


def block_mean_oracle(x):
    """Mean of each aligned 2x2 block, tiled back, via plain reshapes."""
    h, w, c = x.shape
    blocks = x.reshape(h // 2, 2, w // 2, 2, c)
    means = blocks.mean(axis=(1, 3), dtype=np.float64)
    return np.repeat(np.repeat(means, 2, axis=0), 2, axis=1)


def test_constant_channel_has_no_detail():
    x = np.full((6, 4, 2), 3.0, dtype=np.float32)
    ll, lh, hl, hh = dwt_data(x)
    assert np.allclose(ll, 6.0)  # orthonormal scaling doubles a constant
    for sub in (lh, hl, hh):
        assert np.array_equal(sub, np.zeros_like(sub))


def test_single_block_hand_values():
    x = np.array([[1.0, 2.0], [3.0, 4.0]], dtype=np.float32)[..., None]
    ll, lh, hl, hh = dwt_data(x)
    assert ll[0, 0, 0] == 5.0
    assert lh[0, 0, 0] == -1.0
    assert hl[0, 0, 0] == -2.0
    assert hh[0, 0, 0] == 0.0


def test_energy_preservation():
    rng = np.random.default_rng(0)
    for _ in range(20):
        x = rng.standard_normal((8, 6, 3)).astype(np.float32)
        subs = dwt_data(x)
        total = sum(float(np.sum(s.astype(np.float64) ** 2)) for s in subs)
        assert np.isclose(total, float(np.sum(x.astype(np.float64) ** 2)),
                          rtol=1e-5)


def test_round_trip():
    rng = np.random.default_rng(1)
    for _ in range(10):
        x = rng.standard_normal((4, 8, 2)).astype(np.float32)
        tape = Tape()
        rec = haar_idwt2(haar_dwt2(tape.constant(x)))
        np.testing.assert_allclose(rec.data, x, rtol=1e-5, atol=1e-6)


def test_idwt_of_zeros_is_zero():
    tape = Tape()
    zero = tape.constant(np.zeros((2, 3, 1)))
    out = haar_idwt2((zero, zero, zero, zero))
    assert np.array_equal(out.data, np.zeros((4, 6, 1), dtype=out.data.dtype))


def test_idwt_of_pure_ll_is_constant():
    tape = Tape()
    c = 1.5
    ll = tape.constant(np.full((3, 3, 1), 2.0 * c))
    zero = tape.constant(np.zeros((3, 3, 1)))
    out = haar_idwt2((ll, zero, zero, zero))
    assert np.allclose(out.data, c)


def test_idwt_shape_errors():
    tape = Tape()
    a = tape.constant(np.zeros((2, 2, 1)))
    b = tape.constant(np.zeros((2, 3, 1)))
    with pytest.raises(ShapeError):
        haar_idwt2((a, a, a, b))
    other = Tape().constant(np.zeros((2, 2, 1)))
    with pytest.raises(ShapeError):
        haar_idwt2((a, a, a, other))


def test_odd_dimensions_rejected():
    tape = Tape()
    with pytest.raises(ShapeError):
        haar_dwt2(tape.constant(np.zeros((3, 4, 1))))
    with pytest.raises(ShapeError):
        boundary_features(tape.constant(np.zeros((4, 6, 1))[:, :5]))


def test_boundary_of_constant_is_zero():
    tape = Tape()
    out = boundary_features(tape.constant(np.full((4, 4, 3), 2.5)))
    assert np.array_equal(out.data, np.zeros((4, 4, 3), dtype=out.data.dtype))


def test_boundary_hand_values():
    x = np.array([[1.0, 2.0], [3.0, 4.0]], dtype=np.float32)[..., None]
    out = boundary_features(Tape().constant(x)).data[..., 0]
    np.testing.assert_allclose(out, [[-1.5, -0.5], [0.5, 1.5]], atol=1e-7)


def test_boundary_equals_input_minus_block_mean():
    rng = np.random.default_rng(2)
    for _ in range(10):
        x = rng.standard_normal((6, 8, 2)).astype(np.float32)
        out = boundary_features(Tape().constant(x)).data
        np.testing.assert_allclose(out, x - block_mean_oracle(x),
                                   rtol=1e-5, atol=1e-6)


def test_boundary_is_idempotent():
    rng = np.random.default_rng(3)
    for _ in range(10):
        x = rng.standard_normal((4, 4, 3)).astype(np.float32)
        tape = Tape()
        once = boundary_features(tape.constant(x))
        twice = boundary_features(once)
        np.testing.assert_allclose(twice.data, once.data, rtol=1e-5, atol=1e-6)


def test_boundary_blocks_have_zero_mean():
    rng = np.random.default_rng(4)
    with float64_mode():
        x = rng.standard_normal((8, 8, 2))
        out = boundary_features(Tape().constant(x)).data
        blocks = out.reshape(4, 2, 4, 2, 2).mean(axis=(1, 3))
        np.testing.assert_allclose(blocks, 0.0, atol=1e-12)


def test_boundary_is_linear():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((6, 6, 2)).astype(np.float32)
    y = rng.standard_normal((6, 6, 2)).astype(np.float32)
    a, b = 1.7, -0.4
    lhs = boundary_features(Tape().constant(a * x + b * y)).data
    rhs = (a * boundary_features(Tape().constant(x)).data
           + b * boundary_features(Tape().constant(y)).data)
    np.testing.assert_allclose(lhs, rhs, rtol=1e-5, atol=1e-5)


def test_batched_matches_single():
    rng = np.random.default_rng(6)
    x = rng.standard_normal((3, 4, 4, 2)).astype(np.float32)
    batched = boundary_features(Tape().constant(x)).data
    singles = np.stack([boundary_features(Tape().constant(x[i])).data
                        for i in range(3)])
    np.testing.assert_allclose(batched, singles, rtol=1e-6)
    sub_b = dwt_data(x)
    for s, name in zip(sub_b, "ll lh hl hh".split()):
        singles = np.stack([dwt_data(x[i])["ll lh hl hh".split().index(name)]
                            for i in range(3)])
        np.testing.assert_allclose(s, singles, rtol=1e-6)


def test_wavelet_gradients():
    rng = np.random.default_rng(7)
    x = rng.standard_normal((4, 4, 2))
    rs = [rng.standard_normal((2, 2, 2)) for _ in range(4)]

    def dwt_loss(t, v):
        subs = haar_dwt2(v)
        total = weighted_sum(subs.ll, rs[0])
        for s, r in zip(subs[1:], rs[1:]):
            total = ops.add(total, weighted_sum(s, r))
        return total

    check_gradients(dwt_loss, [x], name="haar_dwt2")

    subs = [rng.standard_normal((2, 2, 2)) for _ in range(4)]
    r = rng.standard_normal((4, 4, 2))
    check_gradients(
        lambda t, a, b, c, d: weighted_sum(haar_idwt2((a, b, c, d)), r),
        subs, name="haar_idwt2")
    check_gradients(
        lambda t, v: weighted_sum(boundary_features(v), r), [x],
        name="boundary_features")
