"""Embedding, iterative source selection, oracle selection, and the
duration-weighted agreement metric."""

from __future__ import annotations

import itertools

import numpy as np
import pytest

from meetsep.audio import Waveform
from meetsep.errors import FormatError, InvalidInputError
from meetsep.pseudospeech import render_utterance
from meetsep.selection import (
    EMBEDDING_DIM,
    MIXTURE_SOURCE_INDEX,
    EmbeddingTable,
    SeparatedUtterance,
    cosine_similarity,
    embed,
    iterative_select,
    oracle_select,
    selection_accuracy,
)

RATE = 16000


def _wave(seed, n=8000):
    return Waveform(np.random.default_rng(seed).normal(size=n), RATE)


def _utt(uid, speaker, mixture, sources, duration=0.0):
    return SeparatedUtterance(
        utterance_id=uid,
        speaker_label=speaker,
        mixture=mixture,
        sources=sources,
        duration=duration,
    )


# --- embed / cosine ----------------------------------------------------------


def test_embed_deterministic():
    w = _wave(0)
    np.testing.assert_array_equal(embed(w), embed(w))
    assert embed(w).shape == (EMBEDDING_DIM,)


def test_embed_zero_wave_hits_log_floor():
    e = embed(Waveform(np.zeros(4000), RATE))
    np.testing.assert_allclose(e, np.log(1e-10), rtol=1e-12)


def test_embed_pads_short_signal():
    e = embed(Waveform(np.ones(50), RATE))
    assert e.shape == (EMBEDDING_DIM,)
    assert np.all(np.isfinite(e))


def test_embed_rejects_empty():
    with pytest.raises(InvalidInputError):
        embed(Waveform(np.zeros(0), RATE))


def test_embed_separates_tone_bands():
    # Frozen regression: utterances on different carrier grids embed with
    # cosine similarity below 0.99, the same grid well above it.
    a = embed(render_utterance(["alpha", "bravo"], 0))
    b = embed(render_utterance(["alpha", "bravo"], 3))
    a2 = embed(render_utterance(["charlie", "delta"], 0))
    assert cosine_similarity(a, b) < 0.99
    assert cosine_similarity(a, a2) > cosine_similarity(a, b)


def test_cosine_similarity_basics():
    u = np.array([1.0, 0.0])
    assert cosine_similarity(u, 5 * u) == pytest.approx(1.0)
    assert cosine_similarity(u, np.array([0.0, 2.0])) == pytest.approx(0.0)
    assert cosine_similarity(u, np.zeros(2)) == 0.0


# --- SeparatedUtterance -------------------------------------------------------


def test_utterance_needs_two_sources():
    with pytest.raises(InvalidInputError):
        _utt("u0", "A", _wave(1), [_wave(2)])


def test_utterance_duration_defaults_to_mixture():
    u = _utt("u0", "A", Waveform(np.ones(8000), RATE), [_wave(1), _wave(2)])
    assert u.duration == 0.5
    explicit = _utt("u1", "A", _wave(3), [_wave(1), _wave(2)], duration=2.0)
    assert explicit.duration == 2.0


# --- iterative_select ---------------------------------------------------------


def _planted_session(n_utts=5):
    """One speaker; source 0 is always that speaker's tone, source 1 a
    different band. Any sane selector must pick 0 for every utterance."""
    utts = []
    for k in range(n_utts):
        words = ["alpha", "echo"] if k % 2 == 0 else ["kilo", "papa"]
        correct = render_utterance(words, 0)
        wrong = render_utterance(words, 3)
        utts.append(_utt(f"u{k}", "A", correct, [correct, wrong]))
    return utts


def test_planted_optimum_selects_source_zero():
    utts = _planted_session()
    for iterations in (0, 1, 2):
        result = iterative_select(utts, iterations=iterations)
        assert set(result.chosen.values()) == {0}
        assert result.iterations_run == iterations


def test_zero_iterations_runs_single_pass():
    result = iterative_select(_planted_session(), iterations=0)
    assert result.iterations_run == 0
    assert len(result.chosen) == 5
    assert "A" in result.speaker_embeddings


def _table_session(rng, n_per_speaker=4, d=12):
    """Planted embeddings through an EmbeddingTable: the correct source
    sits near the speaker's direction, the leakage source points
    somewhere random, so the correct picks form the only tight cluster."""
    u0 = np.eye(d)[0]
    u1 = np.eye(d)[1]
    directions = {"A": u0, "B": u1}
    entries = {}
    utts = []
    for s, label in enumerate(("A", "B")):
        mine = directions[label]
        for k in range(n_per_speaker):
            uid = f"{label}{k}"
            correct = mine + 0.05 * rng.normal(size=d)
            scatter = rng.normal(size=d)
            wrong = scatter / np.linalg.norm(scatter)
            order = int(rng.integers(2))
            pair = [correct, wrong] if order == 0 else [wrong, correct]
            entries[(uid, MIXTURE_SOURCE_INDEX)] = mine + 0.2 * rng.normal(size=d)
            entries[(uid, 0)] = pair[0]
            entries[(uid, 1)] = pair[1]
            utts.append(
                _utt(uid, label, Waveform(np.ones(800), RATE),
                     [_wave(1), _wave(2)])
            )
    correct_index = {
        u.utterance_id: int(
            np.argmax([
                entries[(u.utterance_id, k)] @ directions[u.speaker_label]
                for k in range(2)
            ])
        )
        for u in utts
    }
    return utts, EmbeddingTable(entries), correct_index


def test_table_backed_selection_finds_planted_sources():
    rng = np.random.default_rng(17)
    utts, table, correct = _table_session(rng)
    result = iterative_select(utts, embedder=table, iterations=2)
    assert result.chosen == correct


def test_selection_agrees_with_brute_force_cosine_oracle():
    # Oracle: per speaker, the source combination maximising the total
    # pairwise within-speaker cosine similarity.
    rng = np.random.default_rng(23)
    utts, table, _ = _table_session(rng)
    result = iterative_select(utts, embedder=table, iterations=2)

    oracle: dict[str, int] = {}
    for label in ("A", "B"):
        group = [u for u in utts if u.speaker_label == label]
        best_score, best_pick = -np.inf, None
        for pick in itertools.product(range(2), repeat=len(group)):
            embs = [table.lookup(u.utterance_id, k) for u, k in zip(group, pick)]
            score = sum(
                cosine_similarity(a, b) for a, b in itertools.combinations(embs, 2)
            )
            if score > best_score:
                best_score, best_pick = score, pick
        for u, k in zip(group, best_pick):
            oracle[u.utterance_id] = k
    assert result.chosen == oracle


def test_selection_invariant_to_source_embedding_scale():
    # The cosine step ignores positive per-vector scaling, so rescaling
    # individual source embeddings cannot change a single-pass selection.
    # (Later passes feed chosen sources into Euclidean outlier removal,
    # where scale is legitimately meaningful.)
    rng = np.random.default_rng(29)
    utts, table, _ = _table_session(rng)
    scaled = EmbeddingTable(
        {
            key: (vec * (1.0 + 9.0 * rng.random()) if key[1] >= 0 else vec)
            for key, vec in table.entries.items()
        }
    )
    a = iterative_select(utts, embedder=table, iterations=0)
    b = iterative_select(utts, embedder=scaled, iterations=0)
    assert a.chosen == b.chosen


def test_outlier_removal_rescues_polluted_average():
    # Three clean utterances plus one whose mixture embedding points at
    # the wrong speaker. With outlier removal off the polluted average
    # may misassign the bad utterance; with the default fraction it is
    # dropped from the average and the right source wins.
    d = 8
    u0, u1 = np.eye(d)[0], np.eye(d)[1]
    entries = {}
    utts = []
    for k in range(3):
        uid = f"c{k}"
        entries[(uid, MIXTURE_SOURCE_INDEX)] = u0
        entries[(uid, 0)] = u0
        entries[(uid, 1)] = u1
        utts.append(_utt(uid, "A", Waveform(np.ones(800), RATE), [_wave(1), _wave(2)]))
    entries[("bad", MIXTURE_SOURCE_INDEX)] = 4.0 * u1  # heavy overlap
    entries[("bad", 0)] = u0 + 0.1 * u1
    entries[("bad", 1)] = u1
    utts.append(_utt("bad", "A", Waveform(np.ones(800), RATE), [_wave(1), _wave(2)]))

    table = EmbeddingTable(entries)
    cleaned = iterative_select(utts, embedder=table, iterations=1,
                               outlier_fraction=0.6)
    assert cleaned.chosen["bad"] == 0
    assert all(cleaned.chosen[f"c{k}"] == 0 for k in range(3))


def test_selection_tie_takes_lowest_index():
    d = 4
    vec = np.eye(d)[0]
    entries = {
        ("u0", MIXTURE_SOURCE_INDEX): vec,
        ("u0", 0): vec.copy(),
        ("u0", 1): vec.copy(),
        ("u1", MIXTURE_SOURCE_INDEX): vec,
        ("u1", 0): vec.copy(),
        ("u1", 1): vec.copy(),
    }
    utts = [
        _utt("u0", "A", Waveform(np.ones(800), RATE), [_wave(1), _wave(2)]),
        _utt("u1", "A", Waveform(np.ones(800), RATE), [_wave(3), _wave(4)]),
    ]
    result = iterative_select(utts, embedder=EmbeddingTable(entries))
    assert result.chosen == {"u0": 0, "u1": 0}


def test_iterative_select_input_validation():
    utts = _planted_session(3)
    with pytest.raises(InvalidInputError):
        iterative_select([])
    with pytest.raises(InvalidInputError):
        iterative_select(utts, iterations=-1)
    with pytest.raises(InvalidInputError):
        iterative_select(utts, outlier_fraction=1.0)
    dup = utts + [utts[0]]
    with pytest.raises(InvalidInputError):
        iterative_select(dup)
    uneven = utts[:2] + [
        _utt("u9", "A", _wave(5), [_wave(6), _wave(7), _wave(8)])
    ]
    with pytest.raises(InvalidInputError):
        iterative_select(uneven)


def test_iterative_select_rejects_mixed_dims():
    utts = _planted_session(2)
    calls = itertools.count()

    def lopsided(wave):
        return np.ones(3 if next(calls) == 0 else 4)

    with pytest.raises(InvalidInputError):
        iterative_select(utts, embedder=lopsided)


# --- EmbeddingTable -----------------------------------------------------------


def test_embedding_table_round_trip(tmp_path):
    entries = {
        ("u0", -1): np.array([1.0, 2.0]),
        ("u0", 0): np.array([3.0, 4.0]),
        ("u0", 1): np.array([5.0, 6.0]),
    }
    path = tmp_path / "emb.json"
    EmbeddingTable(entries).save(path)
    loaded = EmbeddingTable.load(path)
    assert set(loaded.entries) == set(entries)
    for key, vec in entries.items():
        np.testing.assert_array_equal(loaded.entries[key], vec)


def test_embedding_table_lookup_missing():
    table = EmbeddingTable({("u0", 0): np.zeros(2)})
    with pytest.raises(InvalidInputError):
        table.lookup("u0", 1)


def test_embedding_table_rejects_mixed_dims():
    with pytest.raises(InvalidInputError):
        EmbeddingTable({("a", 0): np.zeros(2), ("b", 0): np.zeros(3)})


def test_embedding_table_rejects_wrong_format(tmp_path):
    path = tmp_path / "notemb.json"
    path.write_text('{"format": "meetsep-train", "entries": []}')
    with pytest.raises(FormatError):
        EmbeddingTable.load(path)


# --- oracle_select / selection_accuracy ----------------------------------------


class _PlantedTranscriber:
    """Maps each waveform to a transcript planted by object identity."""

    def __init__(self):
        self.texts = {}

    def plant(self, wave, text):
        self.texts[id(wave)] = text
        return wave

    def __call__(self, wave):
        return self.texts[id(wave)]


def test_oracle_select_picks_exact_match():
    t = _PlantedTranscriber()
    sources = [t.plant(_wave(1), "alpha bravo"), t.plant(_wave(2), "echo kilo")]
    utt = _utt("u0", "A", _wave(0), sources)
    result = oracle_select([utt], {"u0": "echo kilo"}, t)
    assert result.chosen == {"u0": 1}


def test_oracle_select_tie_takes_index_zero():
    t = _PlantedTranscriber()
    sources = [t.plant(_wave(1), "same text"), t.plant(_wave(2), "same text")]
    utt = _utt("u0", "A", _wave(0), sources)
    assert oracle_select([utt], {"u0": "same text"}, t).chosen == {"u0": 0}


def test_oracle_select_three_way_wer_ranking():
    # Reference of 10 words; hypotheses engineered for WER 0.4, 0.1, 0.2.
    ref = "w1 w2 w3 w4 w5 w6 w7 w8 w9 w10"
    t = _PlantedTranscriber()
    sources = [
        t.plant(_wave(1), "x1 x2 x3 x4 w5 w6 w7 w8 w9 w10"),   # 4 subs
        t.plant(_wave(2), "w1 w2 w3 w4 w5 w6 w7 w8 w9 xx"),    # 1 sub
        t.plant(_wave(3), "w1 w2 w3 w4 w5 w6 w7 w8 yy zz"),    # 2 subs
    ]
    utt = _utt("u0", "A", _wave(0), sources)
    assert oracle_select([utt], {"u0": ref}, t).chosen == {"u0": 1}


def test_oracle_select_missing_reference():
    t = _PlantedTranscriber()
    utt = _utt("u0", "A", _wave(0), [t.plant(_wave(1), "a"), t.plant(_wave(2), "b")])
    with pytest.raises(InvalidInputError):
        oracle_select([utt], {}, t)


class _Chosen:
    def __init__(self, chosen):
        self.chosen = chosen


def test_selection_accuracy_duration_weighting():
    utts = [
        _utt("a", "A", _wave(1), [_wave(2), _wave(3)], duration=2.0),
        _utt("b", "A", _wave(4), [_wave(5), _wave(6)], duration=3.0),
        _utt("c", "A", _wave(7), [_wave(8), _wave(9)], duration=5.0),
    ]
    est = _Chosen({"a": 0, "b": 1, "c": 0})
    oracle = _Chosen({"a": 0, "b": 1, "c": 1})
    assert selection_accuracy(est, oracle, utts) == pytest.approx(0.5)
    assert selection_accuracy(oracle, oracle, utts) == 1.0
    none = _Chosen({"a": 1, "b": 0, "c": 0})
    assert selection_accuracy(none, oracle, utts) == 0.0


def test_selection_accuracy_rejects_mismatched_sets():
    utts = [_utt("a", "A", _wave(1), [_wave(2), _wave(3)], duration=1.0)]
    with pytest.raises(InvalidInputError):
        selection_accuracy(_Chosen({"a": 0}), _Chosen({"b": 0}), utts)
