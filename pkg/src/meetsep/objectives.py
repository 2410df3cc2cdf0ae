"""Separation training objectives and their analytic gradients.

Two squared-Frobenius losses over masked mixture magnitudes:

* permutation-invariant loss: every output mask is matched to exactly one
  phase-sensitive target, minimised over all output-to-target permutations;
* remix-invariant loss: outputs are assigned (many-to-one, possibly
  leaving a target empty) to the constituent mixtures of a mixture of
  mixtures, minimised over all assignments.

Both enumerate their choice space exhaustively and report the full
per-choice table. Ties break to the lexicographically smallest choice so
downstream gradients are deterministic.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from enum import Enum
from math import factorial
from typing import Sequence

import numpy as np

from .audio import Spectrogram
from .errors import InvalidInputError, NumericError
from .masking import SIGMOID, SOFTMAX, MaskSet, PsmTarget, activate_masks

MAX_PERMUTATION_OUTPUTS = 8
MAX_ASSIGNMENTS = 65536


class BatchKind(Enum):
    PIT = "pit"
    MIXIT = "mixit"


@dataclass
class LossReport:
    """Minimum loss, the choice achieving it, and the whole table.

    `best_choice` is a tuple: for the permutation loss, entry i is the
    target index matched to output i; for the remix loss, entry k is the
    mixture index output k is summed into. `normalized` records whether
    values were divided by frames*bins.
    """

    loss: float
    best_choice: tuple[int, ...]
    per_choice_losses: dict[tuple[int, ...], float]
    normalized: bool = False


@dataclass
class SchedulerConfig:
    """Per-step coin flip between the two objectives."""

    mixit_probability: float
    rng_seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.mixit_probability <= 1.0):
            raise InvalidInputError("mixit_probability must lie in [0, 1]")


def _check_shapes(masks: MaskSet, mixture: Spectrogram, targets: Sequence[PsmTarget]):
    shape = mixture.bins.shape
    if masks.masks.shape[1:] != shape:
        raise InvalidInputError("mask grid does not match the mixture spectrogram")
    for t in targets:
        if t.values.shape != shape:
            raise InvalidInputError("target shape does not match the mixture")


def pit_loss(
    masks: MaskSet,
    mixture: Spectrogram,
    targets: Sequence[PsmTarget],
    normalize: bool = False,
) -> LossReport:
    """Minimum over all permutations of the summed squared-Frobenius error
    between masked mixture magnitudes and phase-sensitive targets.

    Requires as many targets as masks; permutation count is capped at 8!.
    """
    n = masks.n_masks
    if len(targets) != n:
        raise InvalidInputError(f"expected {n} targets, got {len(targets)}")
    if n > MAX_PERMUTATION_OUTPUTS:
        raise InvalidInputError(
            f"{n} outputs exceed the exhaustive-permutation cap of "
            f"{MAX_PERMUTATION_OUTPUTS}"
        )
    _check_shapes(masks, mixture, targets)
    preds = masks.masks * mixture.magnitude()[None, :, :]

    # Pairwise costs once; each permutation is then a sum of n lookups.
    cost = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            diff = preds[i] - targets[j].values
            cost[i, j] = np.dot(diff.ravel(), diff.ravel())

    scale = 1.0 / preds[0].size if normalize else 1.0
    table: dict[tuple[int, ...], float] = {}
    best_choice = None
    best = np.inf
    for perm in itertools.permutations(range(n)):
        value = sum(cost[i, perm[i]] for i in range(n)) * scale
        table[perm] = value
        if value < best:
            best = value
            best_choice = perm
    return LossReport(best, best_choice, table, normalized=normalize)


def mixit_loss(
    masks: MaskSet,
    mom: Spectrogram,
    mixture_targets: Sequence[PsmTarget],
    normalize: bool = False,
) -> LossReport:
    """Minimum over all output-to-mixture assignments of the squared error
    between summed masked magnitudes and the constituent-mixture targets.

    Every output goes to exactly one mixture; a mixture may receive none,
    in which case its whole target counts as error. The assignment space
    has n_mixtures ** n_outputs entries, all enumerated.
    """
    n_out = masks.n_masks
    n_mix = len(mixture_targets)
    if n_out < n_mix:
        raise InvalidInputError(
            f"{n_out} outputs cannot cover {n_mix} mixtures"
        )
    if n_mix**n_out > MAX_ASSIGNMENTS:
        raise InvalidInputError(
            f"{n_mix}^{n_out} assignments exceed the cap of {MAX_ASSIGNMENTS}"
        )
    _check_shapes(masks, mom, mixture_targets)
    preds = masks.masks * mom.magnitude()[None, :, :]

    scale = 1.0 / preds[0].size if normalize else 1.0
    table: dict[tuple[int, ...], float] = {}
    best_choice = None
    best = np.inf
    for assignment in itertools.product(range(n_mix), repeat=n_out):
        value = 0.0
        for j in range(n_mix):
            group = [preds[i] for i in range(n_out) if assignment[i] == j]
            total = np.sum(group, axis=0) if group else 0.0
            diff = total - mixture_targets[j].values
            value += float(np.sum(diff * diff))
        value *= scale
        table[assignment] = value
        if value < best:
            best = value
            best_choice = assignment
    return LossReport(best, best_choice, table, normalized=normalize)


def loss_grad(
    logits: np.ndarray,
    activation: str,
    mixture: Spectrogram,
    targets: Sequence[PsmTarget],
    mode: BatchKind,
    return_report: bool = False,
):
    """Gradient of the raw (unnormalised) loss with respect to the mask
    logits, with the minimising choice held fixed.

    The chain runs residual -> mask -> activation. For the remix loss the
    residual of a mixture is shared by every output assigned to it.
    """
    logits = np.asarray(logits, dtype=np.float64)
    mask_set = activate_masks(logits, activation)
    masks = mask_set.masks
    mag = mixture.magnitude()
    preds = masks * mag[None, :, :]

    if mode is BatchKind.PIT:
        report = pit_loss(mask_set, mixture, targets)
        choice = report.best_choice
        d_masks = np.empty_like(masks)
        for i in range(masks.shape[0]):
            d_masks[i] = 2.0 * (preds[i] - targets[choice[i]].values) * mag
    elif mode is BatchKind.MIXIT:
        report = mixit_loss(mask_set, mixture, targets)
        choice = report.best_choice
        residuals = []
        for j in range(len(targets)):
            group = [preds[i] for i in range(masks.shape[0]) if choice[i] == j]
            total = np.sum(group, axis=0) if group else np.zeros_like(mag)
            residuals.append(2.0 * (total - targets[j].values))
        d_masks = np.empty_like(masks)
        for i in range(masks.shape[0]):
            d_masks[i] = residuals[choice[i]] * mag
    else:
        raise InvalidInputError(f"unknown mode {mode!r}")

    grads = grad_through_activation(d_masks, masks, activation)
    if not np.all(np.isfinite(grads)):
        raise NumericError("gradient contains non-finite entries")
    if return_report:
        return grads, report
    return grads


def grad_through_activation(
    d_masks: np.ndarray, masks: np.ndarray, activation: str
) -> np.ndarray:
    """Backpropagate mask-space gradients to logit space."""
    if activation == SIGMOID:
        return d_masks * masks * (1.0 - masks)
    if activation == SOFTMAX:
        inner = np.sum(masks * d_masks, axis=0, keepdims=True)
        return masks * (d_masks - inner)
    raise InvalidInputError(f"unknown activation {activation!r}")


def next_batch_kind(cfg: SchedulerConfig, step: int) -> BatchKind:
    """Stateless per-step draw: identical (seed, step) always gives the
    same answer, and the long-run fraction converges to the probability."""
    u = np.random.default_rng((cfg.rng_seed, step)).random()
    return BatchKind.MIXIT if u < cfg.mixit_probability else BatchKind.PIT


def permutation_count(n: int) -> int:
    return factorial(n)
