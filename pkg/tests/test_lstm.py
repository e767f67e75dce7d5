"""LSTM forward semantics and backpropagation through time."""

import numpy as np
import pytest

from helpers import check_gradients, lstm_oracle, weighted_sum
from wavefuse import ops
from wavefuse.errors import ShapeError
from wavefuse.tape import Tape


def run_lstm(seq, wx, wh, b):
    tape = Tape()
    return ops.lstm_forward(tape.constant(seq), tape.constant(wx),
                            tape.constant(wh), tape.constant(b)).data


def test_zero_parameters_give_zero_hidden_states():
    rng = np.random.default_rng(0)
    seq = rng.standard_normal((5, 3)).astype(np.float32)
    u = 4
    out = run_lstm(seq, np.zeros((3, 4 * u)), np.zeros((u, 4 * u)),
                   np.zeros(4 * u))
    # gates sit at 0.5 and the candidate at tanh(0) = 0, so the cell never moves
    assert np.array_equal(out, np.zeros((5, u), dtype=out.dtype))


def test_causality_first_step_unaffected_by_later_input():
    rng = np.random.default_rng(1)
    wx = rng.standard_normal((2, 12)) * 0.3
    wh = rng.standard_normal((3, 12)) * 0.3
    b = rng.standard_normal(12) * 0.1
    first = rng.standard_normal((1, 2))
    two = np.concatenate([first, np.zeros((1, 2))])
    out1 = run_lstm(first, wx, wh, b)
    out2 = run_lstm(two, wx, wh, b)
    np.testing.assert_array_equal(out1[0], out2[0])


def test_matches_straight_line_oracle():
    rng = np.random.default_rng(2)
    for _ in range(5):
        x = rng.standard_normal((3, 2))
        wx = rng.standard_normal((2, 8)) * 0.5
        wh = rng.standard_normal((2, 8)) * 0.5
        b = rng.standard_normal(8) * 0.2
        out = run_lstm(x, wx, wh, b)
        np.testing.assert_allclose(out, lstm_oracle(x, wx, wh, b), rtol=1e-6,
                                   atol=1e-7)


def test_batched_matches_per_sequence():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((4, 5, 3)).astype(np.float32)
    wx = (rng.standard_normal((3, 8)) * 0.4).astype(np.float32)
    wh = (rng.standard_normal((2, 8)) * 0.4).astype(np.float32)
    b = (rng.standard_normal(8) * 0.1).astype(np.float32)
    batched = run_lstm(x, wx, wh, b)
    singles = np.stack([run_lstm(x[i], wx, wh, b) for i in range(4)])
    np.testing.assert_allclose(batched, singles, rtol=1e-5, atol=1e-6)


def test_shape_errors():
    tape = Tape()
    seq = tape.constant(np.ones((3, 2)))
    with pytest.raises(ShapeError):  # wx rows != input dim
        ops.lstm_forward(seq, tape.constant(np.ones((3, 8))),
                         tape.constant(np.ones((2, 8))),
                         tape.constant(np.ones(8)))
    with pytest.raises(ShapeError):  # second dim not 4u
        ops.lstm_forward(seq, tape.constant(np.ones((2, 6))),
                         tape.constant(np.ones((2, 6))),
                         tape.constant(np.ones(6)))
    with pytest.raises(ShapeError):  # wh mismatched with u
        ops.lstm_forward(seq, tape.constant(np.ones((2, 8))),
                         tape.constant(np.ones((3, 8))),
                         tape.constant(np.ones(8)))
    with pytest.raises(ShapeError):  # bias mismatched
        ops.lstm_forward(seq, tape.constant(np.ones((2, 8))),
                         tape.constant(np.ones((2, 8))),
                         tape.constant(np.ones(4)))


def test_bptt_gradients():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((3, 2))
    wx = rng.standard_normal((2, 8)) * 0.5
    wh = rng.standard_normal((2, 8)) * 0.5
    b = rng.standard_normal(8) * 0.2
    r = rng.standard_normal((3, 2))
    check_gradients(
        lambda t, xx, wxx, whh, bb: weighted_sum(
            ops.lstm_forward(xx, wxx, whh, bb), r),
        [x, wx, wh, b], name="lstm_forward")


def test_bptt_gradients_batched():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((2, 3, 2))
    wx = rng.standard_normal((2, 8)) * 0.5
    wh = rng.standard_normal((2, 8)) * 0.5
    b = rng.standard_normal(8) * 0.2
    r = rng.standard_normal((2, 3, 2))
    check_gradients(
        lambda t, xx, wxx, whh, bb: weighted_sum(
            ops.lstm_forward(xx, wxx, whh, bb), r),
        [x, wx, wh, b], name="lstm_forward batched")
