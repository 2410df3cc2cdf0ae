"""Choosing the right separated source per utterance.

The refinement loop alternates between averaging speaker embeddings over
a diarised session, discarding the utterances farthest from their
speaker's average (overlap-polluted ones tend to be outliers), and
re-selecting the source whose embedding best matches the cleaned
average. The first pass embeds the original utterance audio; later
passes embed the sources selected in the previous pass.

Embedders are pluggable: anything mapping a waveform to a fixed-length
vector works, and precomputed vectors can be supplied from a JSON table
keyed by (utterance_id, source_index) with index -1 for the original
utterance audio.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .audio import StftConfig, Waveform, stft
from .errors import FormatError, InvalidInputError
from .metrics import wer

EMBEDDING_DIM = 40
_LOG_FLOOR = 1e-10
MIXTURE_SOURCE_INDEX = -1

_filterbank_cache: dict[tuple[int, int, int], np.ndarray] = {}


def _mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def _mel_inv(m):
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


def _mel_filterbank(n_bands: int, freq_bins: int, sample_rate: int) -> np.ndarray:
    key = (n_bands, freq_bins, sample_rate)
    if key not in _filterbank_cache:
        nyquist = sample_rate / 2.0
        points = _mel_inv(np.linspace(0.0, _mel(nyquist), n_bands + 2))
        bin_freqs = np.linspace(0.0, nyquist, freq_bins)
        bank = np.zeros((n_bands, freq_bins))
        for b in range(n_bands):
            left, center, right = points[b], points[b + 1], points[b + 2]
            up = (bin_freqs - left) / max(center - left, 1e-9)
            down = (right - bin_freqs) / max(right - center, 1e-9)
            bank[b] = np.clip(np.minimum(up, down), 0.0, None)
        _filterbank_cache[key] = bank
    return _filterbank_cache[key]


def embed(wave: Waveform, n_bands: int = EMBEDDING_DIM) -> np.ndarray:
    """Default embedder: time-averaged log mel-band energies.

    Deterministic and cheap; a zero signal maps to the constant
    log(1e-10) vector. Signals shorter than one analysis window are
    zero-padded before the transform.
    """
    if len(wave) == 0:
        raise InvalidInputError("cannot embed an empty waveform")
    cfg = StftConfig()
    samples = wave.samples
    if samples.size < cfg.window_len:
        samples = np.pad(samples, (0, cfg.window_len - samples.size))
    spec = stft(Waveform(samples, wave.sample_rate), cfg)
    power = np.abs(spec.bins) ** 2
    bank = _mel_filterbank(n_bands, spec.freq_bins, wave.sample_rate)
    band_energy = power.mean(axis=0) @ bank.T
    return np.log(band_energy + _LOG_FLOOR)


def cosine_similarity(u: np.ndarray, v: np.ndarray) -> float:
    """Cosine of the angle between two vectors; 0 if either has no norm."""
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(np.dot(u, v) / (nu * nv))


@dataclass
class SeparatedUtterance:
    """One diarised utterance with its original audio and the candidate
    separated sources."""

    utterance_id: str
    speaker_label: str
    mixture: Waveform
    sources: list[Waveform]
    duration: float = 0.0

    def __post_init__(self):
        if len(self.sources) < 2:
            raise InvalidInputError("an utterance carries at least two sources")
        if self.duration <= 0.0:
            self.duration = self.mixture.duration
        if self.duration <= 0.0:
            raise InvalidInputError("utterance duration must be positive")


@dataclass
class SelectionResult:
    chosen: dict[str, int]
    speaker_embeddings: dict[str, np.ndarray] = field(default_factory=dict)
    iterations_run: int = 0


class EmbeddingTable:
    """Precomputed embeddings keyed by (utterance_id, source_index);
    source index -1 addresses the original utterance audio."""

    def __init__(self, entries: dict[tuple[str, int], np.ndarray]):
        self.entries = entries
        dims = {v.shape for v in entries.values()}
        if len(dims) > 1:
            raise InvalidInputError("embedding table mixes vector dimensions")

    def lookup(self, utterance_id: str, source_index: int) -> np.ndarray:
        key = (utterance_id, source_index)
        if key not in self.entries:
            raise InvalidInputError(
                f"no embedding for utterance {utterance_id!r} source {source_index}"
            )
        return self.entries[key]

    @classmethod
    def load(cls, path) -> "EmbeddingTable":
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
        if payload.get("format") != "meetsep-embeddings":
            raise FormatError(f"{path} is not an embedding table")
        entries = {}
        for item in payload["entries"]:
            key = (str(item["utterance_id"]), int(item["source_index"]))
            entries[key] = np.asarray(item["values"], dtype=np.float64)
        return cls(entries)

    def save(self, path) -> None:
        payload = {
            "format": "meetsep-embeddings",
            "version": 1,
            "entries": [
                {"utterance_id": uid, "source_index": idx, "values": vec.tolist()}
                for (uid, idx), vec in sorted(self.entries.items())
            ],
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, sort_keys=True)


def _resolve_embedder(embedder):
    if embedder is None:
        embedder = embed
    if isinstance(embedder, EmbeddingTable):
        return (
            lambda utt: embedder.lookup(utt.utterance_id, MIXTURE_SOURCE_INDEX),
            lambda utt, k: embedder.lookup(utt.utterance_id, k),
        )
    return (
        lambda utt: np.asarray(embedder(utt.mixture), dtype=np.float64),
        lambda utt, k: np.asarray(embedder(utt.sources[k]), dtype=np.float64),
    )


def iterative_select(
    utts: list[SeparatedUtterance],
    embedder=None,
    iterations: int = 2,
    outlier_fraction: float = 0.6,
) -> SelectionResult:
    """Pick one source per utterance by iteratively refined speaker
    averages.

    Pass 0 works from embeddings of the original utterance audio; every
    utterance then adopts the source most cosine-similar to its speaker's
    outlier-cleaned average, and `iterations` further passes repeat the
    averaging with the embeddings of the chosen sources. Ties take the
    lowest source index. Outlier removal drops the floor(fraction * n)
    utterances with the largest Euclidean distance to the speaker mean,
    always keeping at least one.
    """
    if not utts:
        raise InvalidInputError("utterance list is empty")
    if iterations < 0:
        raise InvalidInputError("iterations must be >= 0")
    if not (0.0 <= outlier_fraction < 1.0):
        raise InvalidInputError("outlier_fraction must lie in [0, 1)")
    ids = [u.utterance_id for u in utts]
    if len(set(ids)) != len(ids):
        raise InvalidInputError("duplicate utterance ids")

    mix_of, src_of = _resolve_embedder(embedder)
    n_sources = len(utts[0].sources)
    for u in utts:
        if len(u.sources) != n_sources:
            raise InvalidInputError("all utterances need the same source count")

    source_embs = {
        u.utterance_id: [src_of(u, k) for k in range(n_sources)] for u in utts
    }
    current = {u.utterance_id: mix_of(u) for u in utts}
    dims = {e.shape for e in current.values()}
    dims |= {e.shape for embs in source_embs.values() for e in embs}
    if len(dims) != 1:
        raise InvalidInputError("embedding dimensions disagree across the session")

    speakers: dict[str, list[SeparatedUtterance]] = {}
    for u in utts:
        speakers.setdefault(u.speaker_label, []).append(u)

    chosen: dict[str, int] = {}
    means: dict[str, np.ndarray] = {}
    for _ in range(iterations + 1):
        for label, group in speakers.items():
            embs = np.stack([current[u.utterance_id] for u in group])
            mean = embs.mean(axis=0)
            # Drop the far tail, keep at least one utterance, recompute.
            n_drop = min(int(outlier_fraction * len(group)), len(group) - 1)
            if n_drop > 0:
                dist = np.linalg.norm(embs - mean, axis=1)
                order = np.argsort(-dist, kind="stable")
                keep = np.sort(order[n_drop:])
                mean = embs[keep].mean(axis=0)
            means[label] = mean
        for u in utts:
            sims = [
                cosine_similarity(e, means[u.speaker_label])
                for e in source_embs[u.utterance_id]
            ]
            chosen[u.utterance_id] = int(np.argmax(sims))
        current = {
            u.utterance_id: source_embs[u.utterance_id][chosen[u.utterance_id]]
            for u in utts
        }
    return SelectionResult(
        chosen=chosen, speaker_embeddings=means, iterations_run=iterations
    )


def oracle_select(utts, reference_transcripts, transcriber) -> SelectionResult:
    """Upper-bound selection: per utterance, the source whose transcription
    has the lowest WER against the reference; ties take the lowest index."""
    chosen = {}
    for u in utts:
        if u.utterance_id not in reference_transcripts:
            raise InvalidInputError(f"no reference for utterance {u.utterance_id!r}")
        ref = reference_transcripts[u.utterance_id]
        rates = [wer(transcriber(src), ref) for src in u.sources]
        chosen[u.utterance_id] = int(np.argmin(rates))
    return SelectionResult(chosen=chosen)


def selection_accuracy(
    est: SelectionResult, oracle: SelectionResult, utts
) -> float:
    """Fraction of total audio duration on which the estimated selection
    agrees with the oracle selection."""
    ids = {u.utterance_id for u in utts}
    if set(est.chosen) != ids or set(oracle.chosen) != ids:
        raise InvalidInputError("selections cover different utterance sets")
    total = sum(u.duration for u in utts)
    matched = sum(
        u.duration
        for u in utts
        if est.chosen[u.utterance_id] == oracle.chosen[u.utterance_id]
    )
    return matched / total
