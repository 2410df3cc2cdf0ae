"""Request and response bodies for the HTTP surface.

Paths in requests are interpreted on the machine running the service;
the CLI runs the app in-process by default, so they are ordinary local
paths there.
"""

from __future__ import annotations

from pydantic import BaseModel, Field


class SynthRequest(BaseModel):
    out_dir: str
    seed: int = 0
    n_pit: int = 24
    n_mixit: int = 12
    n_sessions: int = 2
    utterances_per_session: int = 8
    speakers_per_session: int = 2
    words_per_utterance: int = 4
    snr_lo: float = -5.0
    snr_hi: float = 5.0


class SynthResponse(BaseModel):
    train_manifest: str
    sessions: str
    ref_transcripts: str
    n_pit: int
    n_mixit: int
    n_sessions: int


class TrainRequest(BaseModel):
    train_manifest: str
    checkpoint_out: str
    steps: int = 2000
    learning_rate: float = 0.5
    seed: int = 0
    n_masks: int = 2
    mixit_probability: float = Field(0.0, ge=0.0, le=1.0)
    activation: str | None = None
    hidden_dim: int = 96
    feature_dim: int = 64
    n_feature_layers: int = 3


class TrainResponse(BaseModel):
    checkpoint: str
    steps: int
    initial_loss: float
    final_loss: float


class SeparateRequest(BaseModel):
    checkpoint: str
    audio_path: str
    out_dir: str
    prefix: str = "source"


class SeparateResponse(BaseModel):
    sources: list[str]


class SelectRequest(BaseModel):
    manifest: str
    checkpoint: str
    iterations: int = 2
    outlier_fraction: float = Field(0.6, ge=0.0, lt=1.0)
    embeddings_path: str | None = None


class SessionSelection(BaseModel):
    session_id: str
    chosen: dict[str, int]
    iterations_run: int


class SelectResponse(BaseModel):
    sessions: list[SessionSelection]


class EvaluateRequest(BaseModel):
    hyp_path: str
    ref_path: str


class PipelineRequest(BaseModel):
    manifest: str
    checkpoint: str | None = None
    report_out: str | None = None
    hyp_out: str | None = None
    iterations: int = 2
    outlier_fraction: float = Field(0.6, ge=0.0, lt=1.0)
    apply_separation: bool = True
    transcriber_cmd: list[str] | None = None


class ErrorBody(BaseModel):
    error: str
    detail: str
