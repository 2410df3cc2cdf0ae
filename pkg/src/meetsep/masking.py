"""Phase-sensitive targets, mask activations, and mask application.

Targets are magnitude-domain values attenuated by the cosine of the
phase difference between source and mixture. They may be negative and
are deliberately not clamped; the mask activation bounds predictions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .audio import Spectrogram
from .errors import InvalidInputError, NumericError

SIGMOID = "sigmoid"
SOFTMAX = "softmax"
_ACTIVATIONS = (SIGMOID, SOFTMAX)


@dataclass
class PsmTarget:
    """Phase-sensitive magnitude target, shape (frames, freq_bins)."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise InvalidInputError("target must be a 2-D matrix")
        if not np.all(np.isfinite(self.values)):
            raise NumericError("target contains non-finite entries")


@dataclass
class MaskSet:
    """N real-valued masks over one T-F grid, shape (n_masks, frames, bins).

    Sigmoid masks are independently bounded to [0, 1]; softmax masks
    additionally sum to 1 across masks at every bin.
    """

    masks: np.ndarray
    activation: str

    def __post_init__(self):
        self.masks = np.asarray(self.masks, dtype=np.float64)
        if self.activation not in _ACTIVATIONS:
            raise InvalidInputError(f"unknown activation {self.activation!r}")
        if self.masks.ndim != 3:
            raise InvalidInputError("masks must have shape (n_masks, frames, bins)")
        if self.masks.shape[0] < 2:
            raise InvalidInputError("a mask set holds at least two masks")
        if not np.all(np.isfinite(self.masks)):
            raise NumericError("masks contain non-finite entries")
        if self.masks.size:
            if self.masks.min() < 0.0 or self.masks.max() > 1.0:
                raise InvalidInputError("mask entries must lie in [0, 1]")
            if self.activation == SOFTMAX:
                sums = self.masks.sum(axis=0)
                if np.max(np.abs(sums - 1.0)) > 1e-6:
                    raise InvalidInputError("softmax masks must sum to 1 per bin")

    @property
    def n_masks(self) -> int:
        return self.masks.shape[0]


def psm_target(target_spec: Spectrogram, mixture_spec: Spectrogram) -> PsmTarget:
    """Magnitude of the target scaled by cos(phase difference to the mixture).

    Bins where the mixture magnitude is zero use mixture phase 0 by
    convention, so the value there reduces to the real part of the target.
    """
    if target_spec.bins.shape != mixture_spec.bins.shape:
        raise InvalidInputError("target and mixture spectrograms differ in shape")
    x = target_spec.bins
    y = mixture_spec.bins
    theta_y = np.where(np.abs(y) > 0.0, np.angle(y), 0.0)
    values = np.abs(x) * np.cos(theta_y - np.angle(x))
    return PsmTarget(values)


def activate_masks(logits: np.ndarray, activation: str) -> MaskSet:
    """Turn raw logits of shape (n_masks, frames, bins) into a MaskSet.

    Sigmoid acts elementwise; softmax acts across the mask axis at each
    T-F bin, which ties the masks into a partition of the mixture.
    """
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 3:
        raise InvalidInputError("logits must have shape (n_masks, frames, bins)")
    if not np.all(np.isfinite(logits)):
        raise NumericError("logits contain non-finite entries")
    if activation == SIGMOID:
        masks = expit(logits)
    elif activation == SOFTMAX:
        shifted = logits - logits.max(axis=0, keepdims=True)
        e = np.exp(shifted)
        masks = e / e.sum(axis=0, keepdims=True)
    else:
        raise InvalidInputError(f"unknown activation {activation!r}")
    return MaskSet(masks=masks, activation=activation)


def apply_mask(mask: np.ndarray, mixture_spec: Spectrogram) -> Spectrogram:
    """Masked magnitude with the mixture phase. For a real mask this equals
    mask * Y elementwise, which keeps an all-ones mask bit-exact."""
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != mixture_spec.bins.shape:
        raise InvalidInputError("mask and spectrogram differ in shape")
    return Spectrogram(
        bins=mask * mixture_spec.bins,
        frame_stride_samples=mixture_spec.frame_stride_samples,
        window_len_samples=mixture_spec.window_len_samples,
        sample_rate=mixture_spec.sample_rate,
    )
