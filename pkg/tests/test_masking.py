"""Phase-sensitive targets, activations, and mask application."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from meetsep.audio import Spectrogram
from meetsep.errors import InvalidInputError, NumericError
from meetsep.masking import (
    SIGMOID,
    SOFTMAX,
    MaskSet,
    activate_masks,
    apply_mask,
    psm_target,
)


def _spec(bins):
    bins = np.asarray(bins, dtype=np.complex128)
    window_len = 2 * (bins.shape[1] - 1)
    return Spectrogram(bins, window_len // 2, window_len, 16000)


def _random_spec(rng, frames=6, freq=9):
    return _spec(rng.normal(size=(frames, freq)) + 1j * rng.normal(size=(frames, freq)))


# --- psm_target -------------------------------------------------------------


def test_psm_identity_case():
    rng = np.random.default_rng(0)
    y = _random_spec(rng)
    np.testing.assert_allclose(psm_target(y, y).values, y.magnitude(), rtol=1e-12)


def test_psm_quarter_turn_is_zero():
    y = _spec(np.full((2, 3), 1.0 + 0.0j))
    x = _spec(np.full((2, 3), 0.0 + 2.0j))  # +pi/2 ahead of the mixture
    np.testing.assert_allclose(psm_target(x, y).values, 0.0, atol=1e-12)


def test_psm_algebraic_oracle():
    # |X| cos(theta_Y - theta_X) = Re(X conj(Y)) / |Y| wherever |Y| > 0.
    rng = np.random.default_rng(1)
    x = _random_spec(rng, frames=40, freq=25)
    y = _random_spec(rng, frames=40, freq=25)
    got = psm_target(x, y).values
    oracle = np.real(x.bins * np.conj(y.bins)) / np.abs(y.bins)
    assert got.size == 1000
    np.testing.assert_allclose(got, oracle, rtol=1e-9, atol=1e-12)


def test_psm_bounded_by_target_magnitude():
    rng = np.random.default_rng(2)
    x = _random_spec(rng)
    y = _random_spec(rng)
    assert np.all(np.abs(psm_target(x, y).values) <= np.abs(x.bins) + 1e-12)


def test_psm_keeps_negative_values():
    # Anti-phase source: the target goes negative and must stay negative.
    y = _spec(np.ones((2, 2)))
    x = _spec(-3.0 * np.ones((2, 2)))
    np.testing.assert_allclose(psm_target(x, y).values, -3.0, rtol=1e-12)


def test_psm_zero_mixture_bin_uses_zero_phase():
    # Where |Y| = 0 the convention theta_Y := 0 reduces the value to Re(X).
    y = _spec(np.zeros((1, 2)))
    x = _spec(np.array([[3.0 + 4.0j, -1.0 + 1.0j]]))
    np.testing.assert_allclose(psm_target(x, y).values, [[3.0, -1.0]], rtol=1e-12)


def test_psm_shape_mismatch():
    rng = np.random.default_rng(3)
    with pytest.raises(InvalidInputError):
        psm_target(_random_spec(rng, frames=3), _random_spec(rng, frames=4))


# --- activate_masks ----------------------------------------------------------


def test_sigmoid_of_zero_logits():
    ms = activate_masks(np.zeros((2, 3, 4)), SIGMOID)
    assert np.all(ms.masks == 0.5)
    assert ms.activation == SIGMOID


def test_softmax_of_zero_logits_four_masks():
    ms = activate_masks(np.zeros((4, 3, 4)), SOFTMAX)
    np.testing.assert_allclose(ms.masks, 0.25, rtol=1e-15)


def test_softmax_shift_invariance():
    rng = np.random.default_rng(4)
    logits = rng.normal(size=(3, 5, 6))
    base = activate_masks(logits, SOFTMAX).masks
    shifted = activate_masks(logits + 17.5, SOFTMAX).masks
    np.testing.assert_allclose(base, shifted, rtol=1e-12)


@given(
    logits=arrays(
        np.float64,
        (3, 4, 5),
        elements=st.floats(min_value=-30, max_value=30),
    )
)
@settings(max_examples=50, deadline=None)
def test_softmax_masks_partition_unity(logits):
    masks = activate_masks(logits, SOFTMAX).masks
    np.testing.assert_allclose(masks.sum(axis=0), 1.0, atol=1e-6)
    assert masks.min() >= 0.0


def test_activate_rejects_non_finite():
    logits = np.zeros((2, 2, 2))
    logits[0, 0, 0] = np.inf
    with pytest.raises(NumericError):
        activate_masks(logits, SIGMOID)


def test_activate_rejects_bad_shape():
    with pytest.raises(InvalidInputError):
        activate_masks(np.zeros((3, 4)), SIGMOID)


def test_activate_rejects_unknown_activation():
    with pytest.raises(InvalidInputError):
        activate_masks(np.zeros((2, 2, 2)), "relu")


def test_mask_set_validation():
    with pytest.raises(InvalidInputError):
        MaskSet(np.full((1, 2, 2), 0.5), SIGMOID)  # fewer than two masks
    with pytest.raises(InvalidInputError):
        MaskSet(np.full((2, 2, 2), 1.5), SIGMOID)  # outside [0, 1]
    with pytest.raises(InvalidInputError):
        MaskSet(np.full((2, 2, 2), 0.9), SOFTMAX)  # columns sum to 1.8


# --- apply_mask ---------------------------------------------------------------


def test_all_ones_mask_is_bit_exact():
    rng = np.random.default_rng(5)
    y = _random_spec(rng)
    out = apply_mask(np.ones(y.bins.shape), y)
    np.testing.assert_array_equal(out.bins, y.bins)


def test_all_zeros_mask():
    rng = np.random.default_rng(6)
    y = _random_spec(rng)
    assert np.all(apply_mask(np.zeros(y.bins.shape), y).bins == 0)


def test_softmax_pair_reconstructs_mixture():
    rng = np.random.default_rng(7)
    y = _random_spec(rng, frames=10, freq=12)
    masks = activate_masks(rng.normal(size=(2, 10, 12)), SOFTMAX).masks
    total = apply_mask(masks[0], y).bins + apply_mask(masks[1], y).bins
    np.testing.assert_allclose(total, y.bins, rtol=1e-9, atol=1e-12)


def test_apply_mask_shape_mismatch():
    rng = np.random.default_rng(8)
    y = _random_spec(rng)
    with pytest.raises(InvalidInputError):
        apply_mask(np.ones((1, 1)), y)


def test_apply_mask_keeps_geometry():
    rng = np.random.default_rng(9)
    y = _random_spec(rng)
    out = apply_mask(np.full(y.bins.shape, 0.5), y)
    assert out.frame_stride_samples == y.frame_stride_samples
    assert out.window_len_samples == y.window_len_samples
    assert out.sample_rate == y.sample_rate
