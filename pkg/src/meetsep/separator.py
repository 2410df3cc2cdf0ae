"""Desk-scale separation model: a deterministic multi-resolution feature
stack, a learnable weighted-sum layer merge, nearest-neighbour upsampling
to the spectrogram frame rate, and a small per-frame MLP mask head
trained by plain SGD with analytic gradients.

The feature stack stands in for a pretrained multi-layer encoder: layer 0
is the band-averaged log-magnitude spectrogram, and each further layer is
a 2x temporally decimated moving average of the previous one, so the
merge/upsample path is exercised with genuinely multi-rate inputs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .audio import Spectrogram, StftConfig, Waveform, interior_slice, istft, stft
from .errors import FormatError, InvalidInputError, TrainingError
from .masking import SIGMOID, SOFTMAX, MaskSet, PsmTarget, activate_masks, apply_mask, psm_target
from .objectives import (
    BatchKind,
    SchedulerConfig,
    grad_through_activation,
    loss_grad,
    next_batch_kind,
)

_INIT_TAG = 0
_PICK_TAG = 1


@dataclass
class FeatureStack:
    """L feature matrices over one signal, layer l of shape (frames_l, dim)
    at stride strides[l] samples."""

    layers: list[np.ndarray]
    strides: list[int]

    def __post_init__(self):
        if not self.layers:
            raise InvalidInputError("feature stack needs at least one layer")
        if len(self.layers) != len(self.strides):
            raise InvalidInputError("one stride per layer required")
        dim = self.layers[0].shape[1]
        for layer in self.layers:
            if layer.ndim != 2 or layer.shape[1] != dim:
                raise InvalidInputError("all layers must share the feature dim")

    @property
    def dim(self) -> int:
        return self.layers[0].shape[1]


@dataclass
class MergeWeights:
    """Logits of the layer-merge softmax; weights() sums to 1."""

    logits: np.ndarray

    def __post_init__(self):
        self.logits = np.asarray(self.logits, dtype=np.float64)
        if self.logits.ndim != 1 or self.logits.size == 0:
            raise InvalidInputError("merge logits must be a non-empty vector")
        if not np.all(np.isfinite(self.logits)):
            raise InvalidInputError("merge logits must be finite")

    def weights(self) -> np.ndarray:
        shifted = self.logits - self.logits.max()
        e = np.exp(shifted)
        return e / e.sum()


@dataclass
class MaskHeadParams:
    """One-hidden-layer per-frame MLP emitting n_masks * freq_bins logits."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    n_masks: int
    activation: str

    def __post_init__(self):
        self.w1 = np.asarray(self.w1, dtype=np.float64)
        self.b1 = np.asarray(self.b1, dtype=np.float64)
        self.w2 = np.asarray(self.w2, dtype=np.float64)
        self.b2 = np.asarray(self.b2, dtype=np.float64)
        if self.w1.ndim != 2 or self.w2.ndim != 2:
            raise InvalidInputError("weight matrices must be 2-D")
        hidden = self.w1.shape[1]
        if self.b1.shape != (hidden,) or self.w2.shape[0] != hidden:
            raise InvalidInputError("hidden dims disagree")
        if self.b2.shape != (self.w2.shape[1],):
            raise InvalidInputError("output bias dim disagrees")
        if self.n_masks < 2:
            raise InvalidInputError("head must emit at least two masks")
        if self.w2.shape[1] % self.n_masks != 0:
            raise InvalidInputError("output width must be n_masks * freq_bins")
        if self.activation not in (SIGMOID, SOFTMAX):
            raise InvalidInputError(f"unknown activation {self.activation!r}")
        for a in (self.w1, self.b1, self.w2, self.b2):
            if not np.all(np.isfinite(a)):
                raise InvalidInputError("head parameters must be finite")

    @property
    def input_dim(self) -> int:
        return self.w1.shape[0]

    @property
    def freq_bins(self) -> int:
        return self.w2.shape[1] // self.n_masks


@dataclass
class SeparationModel:
    """Everything needed to turn a waveform into separated waveforms."""

    stft_cfg: StftConfig
    n_feature_layers: int
    feature_dim: int
    merge: MergeWeights
    head: MaskHeadParams


@dataclass
class TrainConfig:
    steps: int = 2000
    learning_rate: float = 0.5
    seed: int = 0
    n_masks: int = 2
    scheduler: SchedulerConfig = field(
        default_factory=lambda: SchedulerConfig(mixit_probability=0.0)
    )
    activation: str | None = None  # default: softmax once mixit is in play
    hidden_dim: int = 96
    feature_dim: int = 64
    n_feature_layers: int = 3
    stft_cfg: StftConfig = field(default_factory=StftConfig)

    def __post_init__(self):
        if self.steps < 0:
            raise InvalidInputError("steps must be >= 0")
        if self.learning_rate < 0:
            raise InvalidInputError("learning_rate must be >= 0")
        if self.n_masks < 2:
            raise InvalidInputError("n_masks must be >= 2")

    def resolved_activation(self) -> str:
        if self.activation is not None:
            return self.activation
        return SOFTMAX if self.scheduler.mixit_probability > 0 else SIGMOID


@dataclass
class PitExample:
    """Synthetic mixture with its single-source references."""

    mixture: Waveform
    sources: list[Waveform]


@dataclass
class MixitExample:
    """Mixture of mixtures with its constituent (already overlapped) mixtures."""

    mom: Waveform
    mixtures: list[Waveform]


@dataclass
class TrainResult:
    model: SeparationModel
    loss_trace: list[float]


# --- feature extraction ----------------------------------------------------


def _band_edges(freq_bins: int, dim: int) -> np.ndarray:
    return np.array([(k * freq_bins) // dim for k in range(dim + 1)])


def _project_bands(frames: np.ndarray, dim: int) -> np.ndarray:
    edges = _band_edges(frames.shape[1], dim)
    return np.stack(
        [frames[:, edges[k] : edges[k + 1]].mean(axis=1) for k in range(dim)],
        axis=1,
    )


def extract_features(
    wave: Waveform, cfg: StftConfig, n_layers: int = 3, dim: int = 64
) -> FeatureStack:
    """Deterministic multi-resolution stack from the log-magnitude
    spectrogram. Layer 0 runs at the spectrogram stride; each further
    layer halves the frame rate by averaging adjacent frame pairs."""
    if n_layers < 1:
        raise InvalidInputError("need at least one feature layer")
    spec = stft(wave, cfg)
    if dim > spec.freq_bins:
        raise InvalidInputError(
            f"feature dim {dim} exceeds the {spec.freq_bins} available bins"
        )
    base = _project_bands(np.log1p(spec.magnitude()), dim)
    layers = [base]
    strides = [cfg.hop]
    for level in range(1, n_layers):
        prev = layers[-1]
        n_pairs = (prev.shape[0] + 1) // 2
        nxt = np.empty((n_pairs, prev.shape[1]))
        for k in range(n_pairs):
            nxt[k] = prev[2 * k : 2 * k + 2].mean(axis=0)
        layers.append(nxt)
        strides.append(cfg.hop * 2**level)
    return FeatureStack(layers=layers, strides=strides)


def interpolate_nearest(
    layer: np.ndarray, src_stride: int, target_frames: int, target_stride: int
) -> np.ndarray:
    """Upsample a layer to the target frame rate by copying rows: output
    frame t takes source frame rint(t * target_stride / src_stride),
    round-half-to-even, clamped to the valid range."""
    if src_stride < target_stride:
        raise InvalidInputError("nearest interpolation only increases resolution")
    ratio = target_stride / src_stride
    idx = np.rint(np.arange(target_frames) * ratio).astype(int)
    idx = np.clip(idx, 0, layer.shape[0] - 1)
    return layer[idx]


def merge_layers(
    stack: FeatureStack,
    merge: MergeWeights,
    target_frames: int,
    target_stride: int,
) -> np.ndarray:
    """Softmax-weighted sum of all layers after upsampling each to the
    target frame grid."""
    if merge.logits.size != len(stack.layers):
        raise InvalidInputError("one merge logit per layer required")
    interp = _interpolated_layers(stack, target_frames, target_stride)
    w = merge.weights()
    return np.tensordot(w, interp, axes=(0, 0))


def _interpolated_layers(
    stack: FeatureStack, target_frames: int, target_stride: int
) -> np.ndarray:
    return np.stack(
        [
            interpolate_nearest(layer, stride, target_frames, target_stride)
            for layer, stride in zip(stack.layers, stack.strides)
        ]
    )


# --- mask head --------------------------------------------------------------


def init_head(
    seed: int,
    input_dim: int,
    hidden_dim: int,
    freq_bins: int,
    n_masks: int,
    activation: str,
) -> MaskHeadParams:
    """Gaussian init scaled by 1/sqrt(fan_in); biases start at zero."""
    rng = np.random.default_rng((seed, _INIT_TAG))
    w1 = rng.standard_normal((input_dim, hidden_dim)) / np.sqrt(input_dim)
    w2 = rng.standard_normal((hidden_dim, n_masks * freq_bins)) / np.sqrt(hidden_dim)
    return MaskHeadParams(
        w1=w1,
        b1=np.zeros(hidden_dim),
        w2=w2,
        b2=np.zeros(n_masks * freq_bins),
        n_masks=n_masks,
        activation=activation,
    )


def _head_forward(features: np.ndarray, head: MaskHeadParams):
    hidden = np.tanh(features @ head.w1 + head.b1)
    flat = hidden @ head.w2 + head.b2
    frames = features.shape[0]
    logits = flat.reshape(frames, head.n_masks, head.freq_bins).transpose(1, 0, 2)
    return logits, hidden


def estimate_masks(features: np.ndarray, head: MaskHeadParams) -> MaskSet:
    """Per-frame MLP from merged features to activated T-F masks."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != head.input_dim:
        raise InvalidInputError(
            f"features of dim {features.shape} do not match head input "
            f"dim {head.input_dim}"
        )
    logits, _ = _head_forward(features, head)
    return activate_masks(logits, head.activation)


# --- training ---------------------------------------------------------------


@dataclass
class PreparedExample:
    """Everything about one training record that does not change while
    parameters move."""

    kind: BatchKind
    spec: Spectrogram
    targets: list[PsmTarget]
    interp_layers: np.ndarray  # (L, frames, dim)


def prepare_example(
    example, stft_cfg: StftConfig, n_layers: int, dim: int, n_masks: int
) -> PreparedExample:
    """Precompute spectrogram, phase-sensitive targets, and upsampled
    feature layers for one record.

    A permutation-loss record with fewer references than masks is padded
    with all-zero targets, which steer the surplus masks toward silence.
    """
    if isinstance(example, PitExample):
        kind = BatchKind.PIT
        mixture = example.mixture
        refs = example.sources
        if len(refs) > n_masks:
            raise InvalidInputError(
                f"{len(refs)} references exceed the {n_masks} available masks"
            )
    elif isinstance(example, MixitExample):
        kind = BatchKind.MIXIT
        mixture = example.mom
        refs = example.mixtures
        if len(refs) > n_masks:
            raise InvalidInputError(
                f"{len(refs)} mixtures exceed the {n_masks} available masks"
            )
    else:
        raise InvalidInputError(f"unknown example type {type(example).__name__}")

    n = min([len(mixture)] + [len(r) for r in refs])
    mixture = Waveform(mixture.samples[:n], mixture.sample_rate)
    spec = stft(mixture, stft_cfg)
    targets = [
        psm_target(stft(Waveform(r.samples[:n], r.sample_rate), stft_cfg), spec)
        for r in refs
    ]
    if kind is BatchKind.PIT:
        while len(targets) < n_masks:
            targets.append(PsmTarget(np.zeros_like(spec.bins, dtype=np.float64)))
    stack = extract_features(mixture, stft_cfg, n_layers=n_layers, dim=dim)
    interp = _interpolated_layers(stack, spec.frames, stft_cfg.hop)
    return PreparedExample(kind=kind, spec=spec, targets=targets, interp_layers=interp)


def step_loss_and_grads(
    prep: PreparedExample, merge: MergeWeights, head: MaskHeadParams
) -> tuple[float, dict[str, np.ndarray]]:
    """Normalised loss and its gradients for every trainable tensor.

    Backprop order: logit gradient from the objective, then the MLP chain,
    then the softmax merge weights via the per-layer feature inner
    products.
    """
    w = merge.weights()
    features = np.tensordot(w, prep.interp_layers, axes=(0, 0))
    logits, hidden = _head_forward(features, head)

    grads_logits, report = loss_grad(
        logits,
        head.activation,
        prep.spec,
        prep.targets,
        prep.kind,
        return_report=True,
    )
    norm = prep.spec.bins.size
    loss = report.loss / norm
    g_logits = grads_logits / norm

    frames = features.shape[0]
    g_flat = g_logits.transpose(1, 0, 2).reshape(frames, head.n_masks * head.freq_bins)
    g_w2 = hidden.T @ g_flat
    g_b2 = g_flat.sum(axis=0)
    g_hidden = g_flat @ head.w2.T
    g_pre = g_hidden * (1.0 - hidden * hidden)
    g_w1 = features.T @ g_pre
    g_b1 = g_pre.sum(axis=0)
    g_features = g_pre @ head.w1.T

    inner = np.tensordot(prep.interp_layers, g_features, axes=([1, 2], [0, 1]))
    g_merge = w * (inner - np.dot(w, inner))

    return loss, {
        "w1": g_w1,
        "b1": g_b1,
        "w2": g_w2,
        "b2": g_b2,
        "merge_logits": g_merge,
    }


def train(train_set, cfg: TrainConfig) -> TrainResult:
    """Plain gradient descent over the mask head and the merge weights.

    Fully deterministic given (seed, data, config): the per-step objective
    choice and record pick both come from stateless seeded draws. Raises
    TrainingError at the first non-finite loss.
    """
    if not train_set:
        raise InvalidInputError("training set is empty")
    activation = cfg.resolved_activation()

    prepared = {BatchKind.PIT: [], BatchKind.MIXIT: []}
    for example in train_set:
        prep = prepare_example(
            example, cfg.stft_cfg, cfg.n_feature_layers, cfg.feature_dim, cfg.n_masks
        )
        prepared[prep.kind].append(prep)

    freq_bins = cfg.stft_cfg.freq_bins
    head = init_head(
        cfg.seed, cfg.feature_dim, cfg.hidden_dim, freq_bins, cfg.n_masks, activation
    )
    merge = MergeWeights(np.zeros(cfg.n_feature_layers))

    trace: list[float] = []
    lr = cfg.learning_rate
    for step in range(cfg.steps):
        kind = next_batch_kind(cfg.scheduler, step)
        pool = prepared[kind] or prepared[BatchKind.PIT] or prepared[BatchKind.MIXIT]
        pick = np.random.default_rng((cfg.seed, _PICK_TAG, step)).integers(len(pool))
        prep = pool[int(pick)]

        loss, grads = step_loss_and_grads(prep, merge, head)
        if not np.isfinite(loss):
            raise TrainingError(f"non-finite loss at step {step}", step=step)
        trace.append(loss)

        head.w1 = head.w1 - lr * grads["w1"]
        head.b1 = head.b1 - lr * grads["b1"]
        head.w2 = head.w2 - lr * grads["w2"]
        head.b2 = head.b2 - lr * grads["b2"]
        merge = MergeWeights(merge.logits - lr * grads["merge_logits"])

    model = SeparationModel(
        stft_cfg=cfg.stft_cfg,
        n_feature_layers=cfg.n_feature_layers,
        feature_dim=cfg.feature_dim,
        merge=merge,
        head=head,
    )
    return TrainResult(model=model, loss_trace=trace)


def separate(wave: Waveform, model: SeparationModel) -> list[Waveform]:
    """Run the model on one waveform and reconstruct every masked source.

    Outputs are zero-padded to the input length so they stay sample-aligned
    with the mixture. Samples outside the fully-overlapped region are
    zeroed: there the overlap-add normalisation divides by vanishing
    window sums, which turns tiny mask errors into huge sample errors
    (estimated masks never yield an exactly consistent spectrogram)."""
    spec = stft(wave, model.stft_cfg)
    stack = extract_features(
        wave, model.stft_cfg, n_layers=model.n_feature_layers, dim=model.feature_dim
    )
    features = merge_layers(stack, model.merge, spec.frames, model.stft_cfg.hop)
    masks = estimate_masks(features, model.head)
    lo, hi = interior_slice(model.stft_cfg, spec.frames)
    out = []
    for i in range(masks.n_masks):
        rec = istft(apply_mask(masks.masks[i], spec), model.stft_cfg)
        samples = np.zeros(len(wave))
        samples[lo : min(hi, len(wave))] = rec.samples[lo : min(hi, len(wave))]
        out.append(Waveform(samples, wave.sample_rate))
    return out


# --- checkpoint and feature-stack files -------------------------------------

_CHECKPOINT_FORMAT = "meetsep-checkpoint"
_FEATURES_FORMAT = "meetsep-features"


def save_checkpoint(model: SeparationModel, path) -> None:
    payload = {
        "format": _CHECKPOINT_FORMAT,
        "version": 1,
        "stft": {
            "window_len": model.stft_cfg.window_len,
            "hop": model.stft_cfg.hop,
            "window_kind": model.stft_cfg.window_kind,
        },
        "features": {
            "n_layers": model.n_feature_layers,
            "dim": model.feature_dim,
        },
        "merge_logits": model.merge.logits.tolist(),
        "head": {
            "w1": model.head.w1.tolist(),
            "b1": model.head.b1.tolist(),
            "w2": model.head.w2.tolist(),
            "b2": model.head.b2.tolist(),
            "n_masks": model.head.n_masks,
            "activation": model.head.activation,
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True)


def load_checkpoint(path) -> SeparationModel:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format") != _CHECKPOINT_FORMAT:
        raise FormatError(f"{path} is not a checkpoint file")
    if payload.get("version") != 1:
        raise FormatError(f"unsupported checkpoint version {payload.get('version')}")
    head = payload["head"]
    return SeparationModel(
        stft_cfg=StftConfig(**payload["stft"]),
        n_feature_layers=payload["features"]["n_layers"],
        feature_dim=payload["features"]["dim"],
        merge=MergeWeights(np.array(payload["merge_logits"])),
        head=MaskHeadParams(
            w1=np.array(head["w1"]),
            b1=np.array(head["b1"]),
            w2=np.array(head["w2"]),
            b2=np.array(head["b2"]),
            n_masks=head["n_masks"],
            activation=head["activation"],
        ),
    )


def save_feature_stack(stack: FeatureStack, path) -> None:
    payload = {
        "format": _FEATURES_FORMAT,
        "version": 1,
        "strides": list(stack.strides),
        "layers": [layer.tolist() for layer in stack.layers],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True)


def load_feature_stack(path) -> FeatureStack:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format") != _FEATURES_FORMAT or payload.get("version") != 1:
        raise FormatError(f"{path} is not a feature-stack file")
    return FeatureStack(
        layers=[np.array(layer, dtype=np.float64) for layer in payload["layers"]],
        strides=list(payload["strides"]),
    )
