"""Evaluation: word error rate, scale-invariant SNR, best-permutation
SI-SNR, and session-level speaker-attributed WER for an unknown number of
hypothesis speakers (surplus hypothesis speakers are dropped, not
counted as insertions, unless asked otherwise)."""

from __future__ import annotations

import itertools
import json
import string
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .audio import Waveform
from .errors import FormatError, InvalidInputError

MAX_ENUMERATED_REF_SPEAKERS = 10
_AUTO_ENUMERATION_LIMIT = 100_000

_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


def tokenize(text: str) -> list[str]:
    """Lowercase, strip ASCII punctuation, split on whitespace."""
    return [t for t in text.lower().translate(_PUNCT_TABLE).split() if t]


def _as_tokens(value) -> list[str]:
    if isinstance(value, str):
        return tokenize(value)
    return list(value)


def edit_distance(a, b) -> int:
    """Uniform-cost Levenshtein distance between token sequences."""
    a, b = _as_tokens(a), _as_tokens(b)
    if len(a) > len(b):
        a, b = b, a
    current = list(range(len(a) + 1))
    for i, tb in enumerate(b, start=1):
        previous, current = current, [i] + [0] * len(a)
        for j, ta in enumerate(a, start=1):
            change = previous[j - 1] + (ta != tb)
            current[j] = min(previous[j] + 1, current[j - 1] + 1, change)
    return current[len(a)]


def wer(hyp, ref) -> float:
    """(substitutions + deletions + insertions) / reference length."""
    hyp, ref = _as_tokens(hyp), _as_tokens(ref)
    if not ref:
        raise InvalidInputError("reference transcript is empty")
    return edit_distance(hyp, ref) / len(ref)


# --- SI-SNR ------------------------------------------------------------------


def si_snr(est: Waveform, ref: Waveform) -> float:
    """Scale-invariant SNR in dB after mean removal.

    Zero residual energy returns +inf (the "perfect" sentinel, which
    compares above every finite value); an estimate carrying no component
    along the reference returns -inf.
    """
    if len(est) != len(ref):
        raise InvalidInputError("est and ref lengths differ")
    if est.sample_rate != ref.sample_rate:
        raise InvalidInputError("est and ref sample rates differ")
    e = est.samples - est.samples.mean()
    r = ref.samples - ref.samples.mean()
    r_energy = float(np.dot(r, r))
    if r_energy == 0.0:
        raise InvalidInputError("reference has zero energy after mean removal")
    scale = float(np.dot(e, r)) / r_energy
    target = scale * r
    noise = e - target
    target_energy = float(np.dot(target, target))
    noise_energy = float(np.dot(noise, noise))
    if target_energy == 0.0:
        return float("-inf")
    if noise_energy == 0.0:
        return float("inf")
    return 10.0 * np.log10(target_energy / noise_energy)


def best_perm_si_snr(ests, refs) -> tuple[float, tuple[int, ...]]:
    """Maximise the mean SI-SNR over all estimate-to-reference
    permutations; ties break to the lexicographically smallest one."""
    if len(ests) != len(refs):
        raise InvalidInputError("estimate and reference counts differ")
    n = len(ests)
    if n == 0:
        raise InvalidInputError("nothing to permute")
    if n > 8:
        raise InvalidInputError("permutation search capped at 8 signals")
    pair = [[si_snr(ests[i], refs[j]) for j in range(n)] for i in range(n)]
    best_mean = float("-inf")
    best_perm = None
    for perm in itertools.permutations(range(n)):
        mean = sum(pair[i][perm[i]] for i in range(n)) / n
        if mean > best_mean:
            best_mean = mean
            best_perm = perm
    return best_mean, best_perm


# --- session-level speaker-attributed WER ------------------------------------


@dataclass
class SessionEntry:
    speaker: str
    start_s: float
    text: str


@dataclass
class SessionTranscript:
    """All utterances of one recording session with speaker attribution."""

    session_id: str
    entries: list[SessionEntry]

    def speaker_streams(self) -> dict[str, list[str]]:
        """Tokens per speaker, concatenated in chronological order.

        The sort on start time is stable, so entries sharing a timestamp
        keep their input order.
        """
        streams: dict[str, list[SessionEntry]] = {}
        for entry in self.entries:
            streams.setdefault(entry.speaker, []).append(entry)
        out = {}
        for speaker, items in streams.items():
            items = sorted(items, key=lambda e: e.start_s)
            tokens: list[str] = []
            for e in items:
                tokens.extend(_as_tokens(e.text))
            out[speaker] = tokens
        return out


@dataclass
class CpwerResult:
    cpwer: float
    speaker_mapping: dict[str, str | None]
    errors: int
    ref_words: int
    method: str


def _mapping_cost(ref_tokens, hyp_tokens_padded, mapping, insert_unmapped):
    errors = sum(
        edit_distance(hyp_tokens_padded[h], ref_tokens[r])
        for r, h in enumerate(mapping)
    )
    if insert_unmapped:
        mapped = set(mapping)
        errors += sum(
            len(stream)
            for h, stream in enumerate(hyp_tokens_padded)
            if h not in mapped
        )
    return errors


def cpwer_us(
    hyp: SessionTranscript,
    ref: SessionTranscript,
    count_unmapped_as_insertions: bool = False,
    method: str = "auto",
) -> CpwerResult:
    """Concatenated minimum-permutation WER with surplus-speaker removal.

    Each reference speaker is matched to a distinct hypothesis speaker
    (virtual empty speakers pad an under-clustered hypothesis); words of
    unmatched hypothesis speakers are dropped entirely by default. The
    score is total edit errors over total reference words, minimised over
    all injective mappings.

    method: "enumerate" walks every mapping (reference speakers capped at
    10), "hungarian" solves the same assignment via scipy, "auto" picks
    enumeration while the mapping count stays small.
    """
    ref_streams = ref.speaker_streams()
    hyp_streams = hyp.speaker_streams()
    ref_ids = sorted(ref_streams)
    hyp_ids = sorted(hyp_streams)
    ref_tokens = [ref_streams[s] for s in ref_ids]
    total_ref = sum(len(t) for t in ref_tokens)
    if total_ref == 0:
        raise InvalidInputError("reference session has no words")

    hyp_tokens = [hyp_streams[s] for s in hyp_ids]
    labels: list[str | None] = list(hyp_ids)
    while len(hyp_tokens) < len(ref_tokens):
        hyp_tokens.append([])
        labels.append(None)

    n_ref, n_hyp = len(ref_tokens), len(hyp_tokens)
    n_mappings = 1
    for k in range(n_hyp, n_hyp - n_ref, -1):
        n_mappings *= k
    if method == "auto":
        method = "enumerate" if n_mappings <= _AUTO_ENUMERATION_LIMIT else "hungarian"
    if method == "enumerate":
        if n_ref > MAX_ENUMERATED_REF_SPEAKERS:
            raise InvalidInputError(
                f"{n_ref} reference speakers exceed the enumeration cap of "
                f"{MAX_ENUMERATED_REF_SPEAKERS}; use method='hungarian'"
            )
        best_errors = None
        best_mapping = None
        for mapping in itertools.permutations(range(n_hyp), n_ref):
            errors = _mapping_cost(
                ref_tokens, hyp_tokens, mapping, count_unmapped_as_insertions
            )
            if best_errors is None or errors < best_errors:
                best_errors = errors
                best_mapping = mapping
    elif method == "hungarian":
        cost = np.empty((n_ref, n_hyp))
        for r in range(n_ref):
            for h in range(n_hyp):
                cost[r, h] = edit_distance(hyp_tokens[h], ref_tokens[r])
                if count_unmapped_as_insertions:
                    cost[r, h] -= len(hyp_tokens[h])
        rows, cols = linear_sum_assignment(cost)
        best_mapping = tuple(int(cols[list(rows).index(r)]) for r in range(n_ref))
        best_errors = _mapping_cost(
            ref_tokens, hyp_tokens, best_mapping, count_unmapped_as_insertions
        )
    else:
        raise InvalidInputError(f"unknown method {method!r}")

    mapping = {
        ref_ids[r]: labels[best_mapping[r]] for r in range(n_ref)
    }
    return CpwerResult(
        cpwer=best_errors / total_ref,
        speaker_mapping=mapping,
        errors=best_errors,
        ref_words=total_ref,
        method=method,
    )


# --- session transcript files -------------------------------------------


def session_to_dict(session: SessionTranscript) -> dict:
    return {
        "session_id": session.session_id,
        "entries": [
            {"speaker": e.speaker, "start_s": e.start_s, "text": e.text}
            for e in session.entries
        ],
    }


def session_from_dict(payload: dict, where: str = "<payload>") -> SessionTranscript:
    try:
        entries = [
            SessionEntry(
                speaker=str(e["speaker"]),
                start_s=float(e["start_s"]),
                text=str(e["text"]),
            )
            for e in payload["entries"]
        ]
        return SessionTranscript(session_id=str(payload["session_id"]), entries=entries)
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{where}: malformed session transcript: {exc}") from exc


def load_sessions(path) -> list[SessionTranscript]:
    """Read a session transcript file holding either one session object or
    {"sessions": [...]}."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
    if isinstance(payload, dict) and "sessions" in payload:
        items = payload["sessions"]
    else:
        items = [payload]
    return [session_from_dict(item, where=str(path)) for item in items]


def save_sessions(sessions: list[SessionTranscript], path) -> None:
    payload = {"sessions": [session_to_dict(s) for s in sessions]}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
