"""Manifest-driven end-to-end runs.

A session manifest lists diarised utterances (id, speaker label, start
time, audio path, optional reference text). `run_pipeline` separates
each utterance, picks one source per utterance with the iterative
selector, transcribes the picks, and scores everything against the
references. `synth` fabricates a complete self-consistent dataset
(training audio plus sessions) from the tone codec so the whole loop
can run hermetically.

Reports are plain dicts written as sorted-key JSON; `generated_at` is
the only field that varies between identical runs.
"""

from __future__ import annotations

import json
import os
import subprocess
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import pseudospeech
from ._version import __version__
from .audio import PIPELINE_SAMPLE_RATE, Waveform, make_mom, mix_at_snr, read_wav, write_wav
from .errors import FormatError, InvalidInputError, MeetsepError
from .metrics import (
    SessionEntry,
    SessionTranscript,
    cpwer_us,
    edit_distance,
    save_sessions,
    tokenize,
    wer,
)
from .selection import SeparatedUtterance, iterative_select, oracle_select, selection_accuracy
from .separator import MixitExample, PitExample, SeparationModel, separate

REPORT_SCHEMA_VERSION = 1


@dataclass
class UtteranceSpec:
    utterance_id: str
    speaker_label: str
    start_s: float
    audio_path: str
    reference_text: str | None = None


@dataclass
class SessionManifest:
    session_id: str
    utterances: list[UtteranceSpec] = field(default_factory=list)
    sources_dir: str | None = None

    def __post_init__(self):
        ids = [u.utterance_id for u in self.utterances]
        if len(set(ids)) != len(ids):
            raise InvalidInputError(
                f"session {self.session_id!r} repeats an utterance id"
            )


def _manifest_from_dict(payload: dict, where: str) -> SessionManifest:
    try:
        utts = [
            UtteranceSpec(
                utterance_id=str(u["utterance_id"]),
                speaker_label=str(u["speaker_label"]),
                start_s=float(u["start_s"]),
                audio_path=str(u["audio_path"]),
                reference_text=u.get("reference_text"),
            )
            for u in payload["utterances"]
        ]
        return SessionManifest(
            session_id=str(payload["session_id"]),
            utterances=utts,
            sources_dir=payload.get("sources_dir"),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{where}: bad session manifest ({exc})") from exc


def load_manifest(path) -> list[SessionManifest]:
    """Read a sessions file: either one session object or
    {"sessions": [...]}. Relative audio paths resolve against the
    manifest's directory."""
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
    if isinstance(payload, dict) and "sessions" in payload:
        raw = payload["sessions"]
    else:
        raw = [payload]
    sessions = [_manifest_from_dict(p, str(path)) for p in raw]
    for s in sessions:
        if s.sources_dir is not None and not os.path.isabs(s.sources_dir):
            s.sources_dir = str(path.parent / s.sources_dir)
        for u in s.utterances:
            if not os.path.isabs(u.audio_path):
                u.audio_path = str(path.parent / u.audio_path)
    return sessions


def save_manifest(sessions: list[SessionManifest], path) -> None:
    payload = {
        "sessions": [
            {
                "session_id": s.session_id,
                **({"sources_dir": s.sources_dir} if s.sources_dir else {}),
                "utterances": [
                    {
                        "utterance_id": u.utterance_id,
                        "speaker_label": u.speaker_label,
                        "start_s": u.start_s,
                        "audio_path": u.audio_path,
                        **(
                            {"reference_text": u.reference_text}
                            if u.reference_text is not None
                            else {}
                        ),
                    }
                    for u in s.utterances
                ],
            }
            for s in sessions
        ]
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


# --- dataset synthesis ------------------------------------------------------


@dataclass
class SynthConfig:
    out_dir: str
    seed: int = 0
    n_pit: int = 24
    n_mixit: int = 12
    n_sessions: int = 2
    utterances_per_session: int = 8
    speakers_per_session: int = 2
    words_per_utterance: int = 4
    snr_range: tuple[float, float] = (-5.0, 5.0)
    overlap_snr_range: tuple[float, float] = (0.0, 6.0)

    def __post_init__(self):
        if self.speakers_per_session < 2:
            raise InvalidInputError("need at least two speakers per session")
        if self.speakers_per_session > pseudospeech.N_SPEAKER_GRIDS:
            raise InvalidInputError(
                f"at most {pseudospeech.N_SPEAKER_GRIDS} speakers per session"
            )
        if self.words_per_utterance < 1:
            raise InvalidInputError("words_per_utterance must be >= 1")


def _render(rng: np.random.Generator, grid: int, n_words: int) -> tuple[Waveform, list[str]]:
    words = pseudospeech.random_words(rng, n_words)
    return pseudospeech.render_utterance(words, grid), words


def _quantized_sum(a: Waveform, b: Waveform) -> tuple[Waveform, Waveform, Waveform]:
    """Round both parts to float32 and add in float32, so that after the
    WAV round trip the mixture file equals the float32 sum of its
    constituent files bit for bit."""
    a32 = a.samples.astype(np.float32)
    b32 = b.samples.astype(np.float32)
    m32 = a32 + b32
    rate = a.sample_rate
    return (
        Waveform(m32.astype(np.float64), rate),
        Waveform(a32.astype(np.float64), rate),
        Waveform(b32.astype(np.float64), rate),
    )


def synth(cfg: SynthConfig) -> dict:
    """Fabricate training audio and scoreable sessions under `out_dir`.

    Writes train/ WAVs plus train_manifest.json, sessions/ WAVs plus
    sessions.json, and returns the two manifest paths. Deterministic in
    the seed: same config, same bytes.
    """
    out = Path(cfg.out_dir)
    train_dir = out / "train"
    sess_dir = out / "sessions"
    train_dir.mkdir(parents=True, exist_ok=True)
    sess_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)
    lo, hi = cfg.snr_range

    pit_entries = []
    for i in range(cfg.n_pit):
        g0, g1 = rng.choice(pseudospeech.N_SPEAKER_GRIDS, size=2, replace=False)
        a, _ = _render(rng, int(g0), cfg.words_per_utterance)
        b, _ = _render(rng, int(g1), cfg.words_per_utterance)
        _, scaled_b = mix_at_snr(a, b, float(rng.uniform(lo, hi)))
        mixture, a_q, b_q = _quantized_sum(a, scaled_b)
        names = (f"mix_{i:04d}.wav", f"src_{i:04d}_0.wav", f"src_{i:04d}_1.wav")
        for name, wave in zip(names, (mixture, a_q, b_q)):
            write_wav(wave, train_dir / name)
        pit_entries.append(
            {"mixture": f"train/{names[0]}", "sources": [f"train/{names[1]}", f"train/{names[2]}"]}
        )

    mixit_entries = []
    for i in range(cfg.n_mixit):
        grids = rng.choice(pseudospeech.N_SPEAKER_GRIDS, size=2, replace=False)
        m1, _ = _render(rng, int(grids[0]), cfg.words_per_utterance)
        m2, _ = _render(rng, int(grids[1]), cfg.words_per_utterance)
        record = make_mom(m1, m2, cfg.snr_range, rng_seed=int(rng.integers(2**31)))
        mom_q, s0_q, s1_q = _quantized_sum(record.sources[0], record.sources[1])
        names = (f"mom_{i:04d}.wav", f"momsrc_{i:04d}_0.wav", f"momsrc_{i:04d}_1.wav")
        for name, wave in zip(names, (mom_q, s0_q, s1_q)):
            write_wav(wave, train_dir / name)
        mixit_entries.append(
            {"mom": f"train/{names[0]}", "mixtures": [f"train/{names[1]}", f"train/{names[2]}"]}
        )

    train_manifest = out / "train_manifest.json"
    with open(train_manifest, "w", encoding="utf-8") as fh:
        json.dump(
            {
                "format": "meetsep-train",
                "version": 1,
                "pit": pit_entries,
                "mixit": mixit_entries,
            },
            fh,
            indent=2,
            sort_keys=True,
        )
        fh.write("\n")

    sessions = []
    for s in range(cfg.n_sessions):
        grids = rng.choice(
            pseudospeech.N_SPEAKER_GRIDS, size=cfg.speakers_per_session, replace=False
        )
        specs = []
        start = 0.0
        for k in range(cfg.utterances_per_session):
            talker = int(rng.integers(cfg.speakers_per_session))
            other = int(rng.integers(cfg.speakers_per_session - 1))
            if other >= talker:
                other += 1
            target, words = _render(rng, int(grids[talker]), cfg.words_per_utterance)
            interf, _ = _render(rng, int(grids[other]), cfg.words_per_utterance)
            o_lo, o_hi = cfg.overlap_snr_range
            polluted, _ = mix_at_snr(target, interf, float(rng.uniform(o_lo, o_hi)))
            uid = f"s{s:02d}u{k:03d}"
            name = f"{uid}.wav"
            write_wav(polluted, sess_dir / name)
            specs.append(
                UtteranceSpec(
                    utterance_id=uid,
                    speaker_label=f"spk{talker}",
                    start_s=round(start, 3),
                    audio_path=f"sessions/{name}",
                    reference_text=" ".join(words),
                )
            )
            start += polluted.duration + 0.5
        sessions.append(SessionManifest(session_id=f"session{s:02d}", utterances=specs))
    sessions_path = out / "sessions.json"
    save_manifest(sessions, sessions_path)
    save_sessions(
        [reference_transcript(s) for s in sessions], out / "ref_transcripts.json"
    )
    return {
        "train_manifest": str(train_manifest),
        "sessions": str(sessions_path),
        "ref_transcripts": str(out / "ref_transcripts.json"),
        "n_pit": cfg.n_pit,
        "n_mixit": cfg.n_mixit,
        "n_sessions": cfg.n_sessions,
    }


def load_train_manifest(path) -> list:
    """Read a training manifest into a mixed pool of supervised and
    mixture-of-mixtures examples, audio included."""
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
    if payload.get("format") != "meetsep-train":
        raise FormatError(f"{path} is not a training manifest")
    base = path.parent

    def _wav(rel):
        p = Path(rel)
        return read_wav(p if p.is_absolute() else base / p)

    pool: list = []
    for entry in payload.get("pit", []):
        pool.append(
            PitExample(
                mixture=_wav(entry["mixture"]),
                sources=[_wav(p) for p in entry["sources"]],
            )
        )
    for entry in payload.get("mixit", []):
        pool.append(
            MixitExample(
                mom=_wav(entry["mom"]),
                mixtures=[_wav(p) for p in entry["mixtures"]],
            )
        )
    if not pool:
        raise FormatError(f"{path} lists no training examples")
    return pool


def reference_transcript(manifest: SessionManifest) -> SessionTranscript:
    """Session transcript built from the manifest's reference texts
    (utterances without one are omitted)."""
    entries = [
        SessionEntry(u.speaker_label, u.start_s, u.reference_text)
        for u in manifest.utterances
        if u.reference_text
    ]
    return SessionTranscript(manifest.session_id, entries)


def hypothesis_transcripts(report: dict) -> list[SessionTranscript]:
    """Pull the transcribed picks out of a run report as session
    transcripts, ready for the transcript scorer."""
    out = []
    for sess in report["sessions"]:
        entries = [
            SessionEntry(r["speaker_label"], r["start_s"], r["hyp_text"])
            for r in sess["utterances"]
            if r["hyp_text"] is not None
        ]
        out.append(SessionTranscript(sess["session_id"], entries))
    return out


# --- end-to-end run ---------------------------------------------------------


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat()


def _sources_for(spec, wave, sources_dir, model):
    """Separated sources for one utterance: pre-separated WAVs named
    {utterance_id}_src{k}.wav when the session carries a sources_dir,
    the model otherwise."""
    if sources_dir is not None:
        found = []
        for p in Path(sources_dir).glob(f"{spec.utterance_id}_src*.wav"):
            suffix = p.stem.rsplit("_src", 1)[1]
            if suffix.isdigit():
                found.append((int(suffix), p))
        if found:
            return [read_wav(p) for _, p in sorted(found)]
    if model is None:
        raise InvalidInputError(
            f"no checkpoint and no pre-separated sources for {spec.utterance_id!r}"
        )
    return separate(wave, model)


def run_pipeline(
    sessions: list[SessionManifest],
    model: SeparationModel | None,
    transcriber,
    iterations: int = 2,
    outlier_fraction: float = 0.6,
    apply_separation: bool = True,
    embedder=None,
) -> dict:
    """Separate, select, transcribe, and score every session.

    With `apply_separation` off (or no model) the original utterance
    audio is transcribed directly, which gives the unseparated baseline.
    Per-utterance failures are recorded in the report and excluded from
    the aggregates rather than aborting the run.
    """
    if apply_separation and model is None:
        if any(s.sources_dir is None for s in sessions):
            raise InvalidInputError(
                "separation requested but no checkpoint and no pre-separated sources"
            )
    session_reports = []
    total_err = total_ref = 0
    cpwers, accuracies = [], []
    n_failures = 0
    for sess in sessions:
        utt_rows = []
        separated: list[SeparatedUtterance] = []
        hyp_entries: list[SessionEntry] = []
        ref_entries: list[SessionEntry] = []
        row_of: dict[str, dict] = {}
        for spec in sess.utterances:
            row = {
                "utterance_id": spec.utterance_id,
                "speaker_label": spec.speaker_label,
                "start_s": spec.start_s,
                "reference_text": spec.reference_text,
                "ref_words": len(tokenize(spec.reference_text)) if spec.reference_text else 0,
                "chosen_source": None,
                "oracle_source": None,
                "hyp_text": None,
                "wer": None,
                "word_errors": None,
                "error": None,
            }
            utt_rows.append(row)
            row_of[spec.utterance_id] = row
            try:
                wave = read_wav(spec.audio_path)
                if apply_separation:
                    sources = _sources_for(spec, wave, sess.sources_dir, model)
                    separated.append(
                        SeparatedUtterance(
                            utterance_id=spec.utterance_id,
                            speaker_label=spec.speaker_label,
                            mixture=wave,
                            sources=sources,
                        )
                    )
                else:
                    row["hyp_text"] = transcriber(wave)
            except MeetsepError as exc:
                row["error"] = str(exc)
                n_failures += 1

        sess_accuracy = None
        if apply_separation and separated:
            result = iterative_select(
                separated,
                embedder=embedder,
                iterations=iterations,
                outlier_fraction=outlier_fraction,
            )
            references = {
                u.utterance_id: row_of[u.utterance_id]["reference_text"]
                for u in separated
                if row_of[u.utterance_id]["reference_text"]
            }
            if references:
                with_refs = [u for u in separated if u.utterance_id in references]
                oracle = oracle_select(with_refs, references, transcriber)
                est = SelectionResultView(
                    {u.utterance_id: result.chosen[u.utterance_id] for u in with_refs}
                )
                sess_accuracy = selection_accuracy(est, oracle, with_refs)
                accuracies.append(sess_accuracy)
                for uid, idx in oracle.chosen.items():
                    row_of[uid]["oracle_source"] = idx
            for u in separated:
                row = row_of[u.utterance_id]
                row["chosen_source"] = result.chosen[u.utterance_id]
                try:
                    row["hyp_text"] = transcriber(u.sources[result.chosen[u.utterance_id]])
                except MeetsepError as exc:
                    row["error"] = str(exc)
                    n_failures += 1

        for row in utt_rows:
            if row["hyp_text"] is not None:
                hyp_entries.append(
                    SessionEntry(row["speaker_label"], row["start_s"], row["hyp_text"])
                )
            ref = row["reference_text"]
            if ref:
                ref_entries.append(
                    SessionEntry(row["speaker_label"], row["start_s"], ref)
                )
                if row["hyp_text"] is not None:
                    hyp_tokens = tokenize(row["hyp_text"])
                    ref_tokens = tokenize(ref)
                    row["word_errors"] = edit_distance(hyp_tokens, ref_tokens)
                    row["wer"] = wer(hyp_tokens, ref_tokens)
                    total_err += row["word_errors"]
                    total_ref += len(ref_tokens)

        report = {
            "session_id": sess.session_id,
            "utterances": sorted(utt_rows, key=lambda r: r["utterance_id"]),
            "cpwer": None,
            "speaker_mapping": None,
            "selection_accuracy": sess_accuracy,
        }
        if ref_entries and hyp_entries:
            cp = cpwer_us(
                SessionTranscript(sess.session_id, hyp_entries),
                SessionTranscript(sess.session_id, ref_entries),
            )
            report["cpwer"] = cp.cpwer
            report["speaker_mapping"] = {k: v for k, v in cp.speaker_mapping.items()}
            cpwers.append(cp.cpwer)
        session_reports.append(report)

    return {
        "schema_version": REPORT_SCHEMA_VERSION,
        "tool_version": __version__,
        "generated_at": _utc_now(),
        "config": {
            "apply_separation": bool(apply_separation),
            "iterations": iterations,
            "outlier_fraction": outlier_fraction,
            "embedder": "default" if embedder is None else type(embedder).__name__,
            "transcriber": type(transcriber).__name__,
        },
        "sessions": session_reports,
        "summary": {
            "n_sessions": len(sessions),
            "n_utterances": sum(len(s.utterances) for s in sessions),
            "n_failures": n_failures,
            "micro_wer": (total_err / total_ref) if total_ref else None,
            "mean_cpwer": float(np.mean(cpwers)) if cpwers else None,
            "mean_selection_accuracy": float(np.mean(accuracies)) if accuracies else None,
        },
    }


class SelectionResultView:
    """Minimal stand-in carrying just a chosen-source mapping."""

    def __init__(self, chosen: dict[str, int]):
        self.chosen = chosen


def save_report(report: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_report(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def strip_volatile(report: dict) -> dict:
    """Copy of a run report without the fields that legitimately differ
    between identical runs (currently just the timestamp)."""
    out = dict(report)
    out.pop("generated_at", None)
    return out


def evaluate_transcripts(hyp_sessions, ref_sessions) -> dict:
    """Score hypothesis transcripts against references session by session.

    Sessions pair by id; both speaker-mapped cpWER and a chronological
    speaker-agnostic WER are reported per session plus micro averages.
    """
    refs = {s.session_id: s for s in ref_sessions}
    hyps = {s.session_id: s for s in hyp_sessions}
    missing = sorted(set(refs) - set(hyps))
    if missing:
        raise InvalidInputError(f"hypothesis missing sessions: {missing}")
    rows = []
    total_cp_err = total_ref = total_chron_err = 0
    for sid in sorted(refs):
        cp = cpwer_us(hyps[sid], refs[sid])
        ref_chron = [
            t
            for e in sorted(refs[sid].entries, key=lambda e: e.start_s)
            for t in tokenize(e.text)
        ]
        hyp_chron = [
            t
            for e in sorted(hyps[sid].entries, key=lambda e: e.start_s)
            for t in tokenize(e.text)
        ]
        chron_err = edit_distance(hyp_chron, ref_chron)
        chron_wer = chron_err / len(ref_chron) if ref_chron else 0.0
        rows.append(
            {
                "session_id": sid,
                "cpwer": cp.cpwer,
                "speaker_mapping": dict(cp.speaker_mapping),
                "wer": chron_wer,
                "ref_words": cp.ref_words,
            }
        )
        total_cp_err += cp.errors
        total_chron_err += chron_err
        total_ref += cp.ref_words
    return {
        "schema_version": REPORT_SCHEMA_VERSION,
        "sessions": rows,
        "summary": {
            "micro_cpwer": (total_cp_err / total_ref) if total_ref else 0.0,
            "micro_wer": (total_chron_err / total_ref) if total_ref else 0.0,
            "n_sessions": len(rows),
        },
    }


class ExternalTranscriber:
    """Bridge to a transcriber subprocess speaking a line protocol:
    one WAV path in on stdin, one line of transcript out on stdout."""

    def __init__(self, command: list[str], workdir: str | None = None):
        if not command:
            raise InvalidInputError("transcriber command is empty")
        self.command = list(command)
        self._workdir = workdir
        self._proc: subprocess.Popen | None = None
        self._counter = 0

    def _ensure(self) -> subprocess.Popen:
        if self._proc is None or self._proc.poll() is not None:
            self._proc = subprocess.Popen(
                self.command,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
                bufsize=1,
            )
        return self._proc

    def __call__(self, wave: Waveform) -> str:
        import tempfile

        proc = self._ensure()
        fd, path = tempfile.mkstemp(suffix=".wav", dir=self._workdir)
        os.close(fd)
        try:
            write_wav(wave, path)
            assert proc.stdin is not None and proc.stdout is not None
            proc.stdin.write(path + "\n")
            proc.stdin.flush()
            line = proc.stdout.readline()
            if line == "":
                raise MeetsepError("transcriber process closed its output")
            return line.rstrip("\n")
        finally:
            os.unlink(path)

    def close(self) -> None:
        if self._proc is not None and self._proc.poll() is None:
            assert self._proc.stdin is not None
            self._proc.stdin.close()
            self._proc.wait(timeout=10)
        self._proc = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
