"""Synthetic "speech" with an exactly decodable transcript.

Real ASR is out of scope, so pipeline fixtures use a tone codec: each
word is a pure sine held for one 0.25 s slot, and each speaker owns a
disjoint set of carrier frequencies aligned to the 40 Hz analysis grid
of the 400-point transform. A mock transcriber recovers the word
sequence by finding the dominant carrier per slot, which makes word
error rates meaningful end to end: a well-separated source decodes to
its speaker's words, a mixture decodes to whoever is louder.
"""

from __future__ import annotations

import numpy as np

from .audio import PIPELINE_SAMPLE_RATE, Waveform
from .errors import InvalidInputError

VOCABULARY = (
    "alpha", "bravo", "charlie", "delta", "echo", "foxtrot", "golf", "hotel",
    "india", "juliett", "kilo", "lima", "mike", "november", "oscar", "papa",
)
SLOT_SECONDS = 0.25
SLOT_SAMPLES = int(SLOT_SECONDS * PIPELINE_SAMPLE_RATE)  # 4000
N_SPEAKER_GRIDS = 4
_GRID_BASE_BINS = (10, 60, 110, 160)  # x 40 Hz: 400, 2400, 4400, 6400 Hz
_BIN_HZ = 40.0


def carrier_hz(speaker_grid: int, word_index: int) -> float:
    """Carrier frequency for a word on a speaker's grid."""
    if not 0 <= speaker_grid < N_SPEAKER_GRIDS:
        raise InvalidInputError(f"speaker grid {speaker_grid} out of range")
    if not 0 <= word_index < len(VOCABULARY):
        raise InvalidInputError(f"word index {word_index} out of range")
    return (_GRID_BASE_BINS[speaker_grid] + 2 * word_index) * _BIN_HZ


def render_utterance(
    words: list[str] | list[int],
    speaker_grid: int,
    amplitude: float = 0.3,
) -> Waveform:
    """Render a word sequence as one tone per 0.25 s slot."""
    if not words:
        raise InvalidInputError("cannot render an empty word list")
    if not 0.0 < amplitude <= 1.0:
        raise InvalidInputError("amplitude must lie in (0, 1]")
    indices = []
    for w in words:
        if isinstance(w, str):
            if w not in VOCABULARY:
                raise InvalidInputError(f"unknown word {w!r}")
            indices.append(VOCABULARY.index(w))
        else:
            indices.append(int(w))
    t = np.arange(SLOT_SAMPLES) / PIPELINE_SAMPLE_RATE
    slots = [
        amplitude * np.sin(2.0 * np.pi * carrier_hz(speaker_grid, idx) * t)
        for idx in indices
    ]
    return Waveform(np.concatenate(slots), PIPELINE_SAMPLE_RATE)


def random_words(rng: np.random.Generator, n_words: int) -> list[str]:
    return [VOCABULARY[int(i)] for i in rng.integers(len(VOCABULARY), size=n_words)]


def decode_wave(wave: Waveform, min_peak: float = 0.02) -> list[str]:
    """Recover the word sequence from the dominant carrier in each slot.

    Slots whose strongest candidate tone would correspond to an
    amplitude below `min_peak` are treated as silence and skipped.
    """
    if wave.sample_rate != PIPELINE_SAMPLE_RATE:
        raise InvalidInputError(
            f"decoder expects {PIPELINE_SAMPLE_RATE} Hz, got {wave.sample_rate}"
        )
    # Candidate carriers land exactly on slot-DFT bins: the slot is 4000
    # samples, so its bins are 4 Hz apart and a 40*b Hz carrier sits on
    # slot bin 10*b.
    candidates = []
    for grid in range(N_SPEAKER_GRIDS):
        for w in range(len(VOCABULARY)):
            slot_bin = (_GRID_BASE_BINS[grid] + 2 * w) * 10
            candidates.append((slot_bin, w))
    bins = np.array([c[0] for c in candidates])
    word_of = np.array([c[1] for c in candidates])

    out: list[str] = []
    n_slots = len(wave) // SLOT_SAMPLES
    for s in range(n_slots):
        slot = wave.samples[s * SLOT_SAMPLES : (s + 1) * SLOT_SAMPLES]
        mags = np.abs(np.fft.rfft(slot)[bins])
        peak = int(np.argmax(mags))
        # A clean sine of amplitude a contributes a * N/2 at its bin.
        if mags[peak] < min_peak * SLOT_SAMPLES / 2:
            continue
        out.append(VOCABULARY[int(word_of[peak])])
    return out


class MockTranscriber:
    """Callable transcriber over the tone codec; returns a space-joined
    word string, empty for silence."""

    def __init__(self, min_peak: float = 0.02):
        self.min_peak = min_peak

    def __call__(self, wave: Waveform) -> str:
        return " ".join(decode_wave(wave, self.min_peak))
