"""Shared fixtures: deterministic toy audio, a small trained model, and a
synthesized dataset directory reused across test modules."""

from __future__ import annotations

import numpy as np
import pytest

from meetsep.audio import Waveform, mix_at_snr
from meetsep.pseudospeech import N_SPEAKER_GRIDS, random_words, render_utterance
from meetsep.separator import PitExample, TrainConfig, train


def toy_pit_set(seed: int = 0, n: int = 12, words: int = 4) -> list[PitExample]:
    """Two-tone-speaker supervised mixtures; the built-in 2-speaker fixture."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        g0, g1 = rng.choice(N_SPEAKER_GRIDS, size=2, replace=False)
        a = render_utterance(random_words(rng, words), int(g0))
        b = render_utterance(random_words(rng, words), int(g1))
        mixture, scaled_b = mix_at_snr(a, b, float(rng.uniform(-5.0, 5.0)))
        out.append(PitExample(mixture=mixture, sources=[a, scaled_b]))
    return out


def random_speech(rng: np.random.Generator, seconds: float = 1.0) -> Waveform:
    n = int(seconds * 16000)
    return Waveform(rng.normal(size=n), 16000)


@pytest.fixture(scope="session")
def toy_train_set():
    return toy_pit_set(seed=0, n=12)


@pytest.fixture(scope="session")
def small_model(toy_train_set):
    """A quickly trained 2-mask model, good enough for plumbing tests."""
    cfg = TrainConfig(steps=300, learning_rate=0.5, seed=0, n_masks=2)
    return train(toy_train_set, cfg).model


@pytest.fixture(scope="session")
def synth_dir(tmp_path_factory):
    from meetsep.pipeline import SynthConfig, synth

    out = tmp_path_factory.mktemp("dataset")
    info = synth(
        SynthConfig(
            out_dir=str(out),
            seed=11,
            n_pit=10,
            n_mixit=4,
            n_sessions=2,
            utterances_per_session=6,
            words_per_utterance=4,
        )
    )
    return out, info
