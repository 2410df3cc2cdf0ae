"""HTTP wrapper around the library.

One endpoint per pipeline stage. The app holds no state between
requests: checkpoints and manifests travel as paths, so a long-lived
server and an in-process instance behave identically.
"""

from __future__ import annotations

import logging
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .._version import __version__
from ..errors import MeetsepError
from ..metrics import load_sessions, save_sessions
from ..pipeline import (
    ExternalTranscriber,
    SynthConfig,
    evaluate_transcripts,
    hypothesis_transcripts,
    load_manifest,
    load_train_manifest,
    run_pipeline,
    save_report,
    synth,
)
from ..pseudospeech import MockTranscriber
from ..selection import EmbeddingTable, SeparatedUtterance, iterative_select
from ..separator import (
    SchedulerConfig,
    TrainConfig,
    load_checkpoint,
    save_checkpoint,
    separate,
    train,
)
from ..audio import read_wav, write_wav
from . import schemas

log = logging.getLogger("meetsep.service")


def create_app() -> FastAPI:
    app = FastAPI(title="meetsep", version=__version__)

    @app.exception_handler(MeetsepError)
    async def _domain_error(request: Request, exc: MeetsepError):
        return JSONResponse(
            status_code=400,
            content={"error": type(exc).__name__, "detail": str(exc)},
        )

    @app.exception_handler(FileNotFoundError)
    async def _missing_file(request: Request, exc: FileNotFoundError):
        return JSONResponse(
            status_code=400,
            content={"error": "FileNotFoundError", "detail": str(exc)},
        )

    @app.get("/health")
    async def health():
        return {"status": "ok"}

    @app.get("/version")
    async def version():
        return {"version": __version__}

    @app.post("/v1/synth", response_model=schemas.SynthResponse)
    def synth_endpoint(req: schemas.SynthRequest):
        cfg = SynthConfig(
            out_dir=req.out_dir,
            seed=req.seed,
            n_pit=req.n_pit,
            n_mixit=req.n_mixit,
            n_sessions=req.n_sessions,
            utterances_per_session=req.utterances_per_session,
            speakers_per_session=req.speakers_per_session,
            words_per_utterance=req.words_per_utterance,
            snr_range=(req.snr_lo, req.snr_hi),
        )
        return synth(cfg)

    @app.post("/v1/train", response_model=schemas.TrainResponse)
    def train_endpoint(req: schemas.TrainRequest):
        pool = load_train_manifest(req.train_manifest)
        cfg = TrainConfig(
            steps=req.steps,
            learning_rate=req.learning_rate,
            seed=req.seed,
            n_masks=req.n_masks,
            scheduler=SchedulerConfig(
                mixit_probability=req.mixit_probability, rng_seed=req.seed
            ),
            activation=req.activation,
            hidden_dim=req.hidden_dim,
            feature_dim=req.feature_dim,
            n_feature_layers=req.n_feature_layers,
        )
        result = train(pool, cfg)
        out = Path(req.checkpoint_out)
        out.parent.mkdir(parents=True, exist_ok=True)
        save_checkpoint(result.model, out)
        trace = result.loss_trace
        return {
            "checkpoint": str(out),
            "steps": req.steps,
            "initial_loss": trace[0] if trace else float("nan"),
            "final_loss": trace[-1] if trace else float("nan"),
        }

    @app.post("/v1/separate", response_model=schemas.SeparateResponse)
    def separate_endpoint(req: schemas.SeparateRequest):
        model = load_checkpoint(req.checkpoint)
        wave = read_wav(req.audio_path)
        sources = separate(wave, model)
        out_dir = Path(req.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = []
        for i, src in enumerate(sources):
            p = out_dir / f"{req.prefix}_{i}.wav"
            write_wav(src, p)
            paths.append(str(p))
        return {"sources": paths}

    @app.post("/v1/select", response_model=schemas.SelectResponse)
    def select_endpoint(req: schemas.SelectRequest):
        model = load_checkpoint(req.checkpoint)
        sessions = load_manifest(req.manifest)
        embedder = (
            EmbeddingTable.load(req.embeddings_path) if req.embeddings_path else None
        )
        rows = []
        for sess in sessions:
            utts = []
            for spec in sess.utterances:
                wave = read_wav(spec.audio_path)
                utts.append(
                    SeparatedUtterance(
                        utterance_id=spec.utterance_id,
                        speaker_label=spec.speaker_label,
                        mixture=wave,
                        sources=separate(wave, model),
                    )
                )
            result = iterative_select(
                utts,
                embedder=embedder,
                iterations=req.iterations,
                outlier_fraction=req.outlier_fraction,
            )
            rows.append(
                {
                    "session_id": sess.session_id,
                    "chosen": result.chosen,
                    "iterations_run": result.iterations_run,
                }
            )
        return {"sessions": rows}

    @app.post("/v1/evaluate")
    def evaluate_endpoint(req: schemas.EvaluateRequest):
        hyp = load_sessions(req.hyp_path)
        ref = load_sessions(req.ref_path)
        return evaluate_transcripts(hyp, ref)

    @app.post("/v1/pipeline")
    def pipeline_endpoint(req: schemas.PipelineRequest):
        sessions = load_manifest(req.manifest)
        model = load_checkpoint(req.checkpoint) if req.checkpoint else None
        if req.transcriber_cmd:
            transcriber = ExternalTranscriber(req.transcriber_cmd)
        else:
            transcriber = MockTranscriber()
        try:
            report = run_pipeline(
                sessions,
                model,
                transcriber,
                iterations=req.iterations,
                outlier_fraction=req.outlier_fraction,
                apply_separation=req.apply_separation,
            )
        finally:
            if isinstance(transcriber, ExternalTranscriber):
                transcriber.close()
        report["config"]["manifest"] = req.manifest
        report["config"]["checkpoint"] = req.checkpoint
        if req.transcriber_cmd:
            report["config"]["transcriber_cmd"] = req.transcriber_cmd
        if req.report_out:
            out = Path(req.report_out)
            out.parent.mkdir(parents=True, exist_ok=True)
            save_report(report, out)
        if req.hyp_out:
            out = Path(req.hyp_out)
            out.parent.mkdir(parents=True, exist_ok=True)
            save_sessions(hypothesis_transcripts(report), out)
        return report

    return app
