"""Meeting-style speech separation: losses, a trainable mask head,
source selection, transcript scoring, and a manifest pipeline."""

from ._version import __version__
from .audio import (
    PIPELINE_SAMPLE_RATE,
    MomRecord,
    Spectrogram,
    StftConfig,
    Waveform,
    interior_slice,
    istft,
    make_mom,
    mix_at_snr,
    read_wav,
    stft,
    write_wav,
)
from .errors import (
    AudioIOError,
    FormatError,
    InvalidInputError,
    MeetsepError,
    NumericError,
    TrainingError,
)
from .masking import MaskSet, PsmTarget, activate_masks, apply_mask, psm_target
from .metrics import (
    CpwerResult,
    SessionEntry,
    SessionTranscript,
    best_perm_si_snr,
    cpwer_us,
    edit_distance,
    si_snr,
    tokenize,
    wer,
)
from .objectives import (
    BatchKind,
    LossReport,
    SchedulerConfig,
    loss_grad,
    mixit_loss,
    next_batch_kind,
    pit_loss,
)
from .pipeline import (
    ExternalTranscriber,
    SessionManifest,
    SynthConfig,
    UtteranceSpec,
    evaluate_transcripts,
    load_manifest,
    run_pipeline,
    save_report,
    synth,
)
from .pseudospeech import MockTranscriber
from .selection import (
    EmbeddingTable,
    SelectionResult,
    SeparatedUtterance,
    embed,
    iterative_select,
    oracle_select,
    selection_accuracy,
)
from .separator import (
    MixitExample,
    PitExample,
    SeparationModel,
    TrainConfig,
    estimate_masks,
    extract_features,
    load_checkpoint,
    save_checkpoint,
    separate,
    train,
)

__all__ = [
    "PIPELINE_SAMPLE_RATE",
    "AudioIOError",
    "BatchKind",
    "CpwerResult",
    "EmbeddingTable",
    "ExternalTranscriber",
    "FormatError",
    "InvalidInputError",
    "LossReport",
    "MaskSet",
    "MeetsepError",
    "MixitExample",
    "MockTranscriber",
    "MomRecord",
    "NumericError",
    "PitExample",
    "PsmTarget",
    "SchedulerConfig",
    "SelectionResult",
    "SeparatedUtterance",
    "SeparationModel",
    "SessionEntry",
    "SessionManifest",
    "SessionTranscript",
    "Spectrogram",
    "StftConfig",
    "SynthConfig",
    "TrainConfig",
    "TrainingError",
    "UtteranceSpec",
    "Waveform",
    "activate_masks",
    "apply_mask",
    "best_perm_si_snr",
    "cpwer_us",
    "edit_distance",
    "embed",
    "estimate_masks",
    "evaluate_transcripts",
    "extract_features",
    "interior_slice",
    "istft",
    "iterative_select",
    "load_checkpoint",
    "load_manifest",
    "loss_grad",
    "make_mom",
    "mix_at_snr",
    "mixit_loss",
    "next_batch_kind",
    "oracle_select",
    "pit_loss",
    "psm_target",
    "read_wav",
    "run_pipeline",
    "save_checkpoint",
    "save_report",
    "selection_accuracy",
    "separate",
    "si_snr",
    "stft",
    "synth",
    "tokenize",
    "train",
    "wer",
    "write_wav",
]
