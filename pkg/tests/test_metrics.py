from __future__ import annotations

import jiwer
import numpy as np
import pytest
from conftest import STELLA

from speechaudit_hub.core.align import align, normalize
from speechaudit_hub.core.exceptions import SidecarKeyError
from speechaudit_hub.core.metrics import (
    EMPTY_REF,
    OOV_SENTENCE,
    SentenceVectors,
    flag_summary,
    score_all,
    score_pair,
    semdist,
    semdist_vectors,
    wil,
)
from speechaudit_hub.core.models import EmbERConfig, EmbeddingTable, UtteranceRecord

CFG = EmbERConfig()


def _replace_once(text: str, old: str, new: str) -> str:
    assert old in text
    return text.replace(old, new, 1)


def test_reference_paragraph_has_69_words():
    assert len(normalize(STELLA)) == 69


@pytest.fixture
def table1(toy_embeddings):
    hyps = {
        "ins_to": _replace_once(STELLA, "go meet", "go to meet"),
        "ins_i": _replace_once(STELLA, "She can", "She I can"),
        "del_a": _replace_once(STELLA, "maybe a snack", "maybe snack"),
        "sub_similar": _replace_once(STELLA, "from the store", "from this store"),
        "sub_dissimilar": _replace_once(STELLA, "plastic snake", "plastic snack"),
    }
    return {name: score_pair(STELLA, hyp, toy_embeddings, CFG) for name, hyp in hyps.items()}


def test_single_error_rows_share_wer(table1):
    for vec in table1.values():
        assert vec.wer == pytest.approx(1 / 69)


def test_ember_discounts_similar_substitution(table1):
    assert table1["sub_similar"].ember == pytest.approx(0.1 / 69)
    assert table1["sub_dissimilar"].ember == pytest.approx(1 / 69)
    assert table1["sub_similar"].ember / table1["sub_dissimilar"].ember == pytest.approx(0.1)
    assert table1["del_a"].ember == pytest.approx(1 / 69)


def test_wil_penalizes_substitution_more_than_insertion(table1):
    assert table1["ins_to"].wil == pytest.approx(1 / 70)
    assert table1["sub_dissimilar"].wil == pytest.approx(1 - 68**2 / 69**2)
    assert table1["del_a"].wil == pytest.approx(1 / 69)
    assert table1["sub_dissimilar"].wil > table1["ins_to"].wil


@pytest.mark.parametrize(
    ("ref", "hyp", "expected"),
    [
        ("a b", "a b c d", {"wer": 1.0, "mer": 0.5, "wil": 0.5}),
        ("go meet", "go to meet", {"wer": 0.5}),
        ("a b c", "x c d", {"wer": 1.0}),
        ("ab", "ac", {"cer": 0.5}),
        ("a b", "", {"wer": 1.0, "mer": 1.0, "wil": 1.0}),
        ("", "", {"wer": 0.0, "cer": 0.0, "mer": 0.0, "wil": 0.0, "ember": 0.0, "semdist": 0.0}),
    ],
)
def test_hand_computed_values(ref, hyp, expected):
    vec = score_pair(ref, hyp, EmbeddingTable.empty(), CFG)
    for metric, value in expected.items():
        assert getattr(vec, metric) == pytest.approx(value), metric


def test_empty_reference_is_flagged():
    vec = score_pair("", "a", EmbeddingTable.empty(), CFG)
    assert vec.wer == 1.0
    assert EMPTY_REF in vec.flags
    assert not score_pair("", "", EmbeddingTable.empty(), CFG).flags


def test_normalization_invariance(toy_embeddings):
    a = score_pair("  Go Meet ", "go TO meet", toy_embeddings, CFG)
    b = score_pair("go meet", "go to meet", toy_embeddings, CFG)
    assert a.as_dict() == b.as_dict()


def _random_text(rng: np.random.Generator, vocab: list[str], min_len: int = 0) -> str:
    return " ".join(vocab[i] for i in rng.integers(len(vocab), size=int(rng.integers(min_len, 9))))


def test_metric_identities_on_random_pairs(toy_embeddings):
    rng = np.random.default_rng(11)
    vocab = sorted(toy_embeddings.vectors)
    for _ in range(1000):
        ref = _random_text(rng, vocab)
        hyp = _random_text(rng, vocab)
        vec = score_pair(ref, hyp, toy_embeddings, CFG)
        assert vec.mer <= vec.wer + 1e-12
        assert vec.mer <= vec.wil + 1e-12
        assert 0.0 <= vec.mer <= 1.0 and 0.0 <= vec.wil <= 1.0
        assert vec.ember <= vec.wer + 1e-12
        assert 0.0 <= vec.semdist <= 2.0
        assert score_pair(ref, ref, toy_embeddings, CFG).semdist == 0.0
        assert score_pair(hyp, ref, toy_embeddings, CFG).semdist == pytest.approx(vec.semdist, abs=1e-12)

        plain = score_pair(ref, hyp, EmbeddingTable.empty(), CFG)
        assert plain.ember == pytest.approx(plain.wer)


def test_matches_jiwer_on_random_pairs():
    rng = np.random.default_rng(7)
    vocab = ["alpha", "beta", "gamma", "delta", "eps"]
    for _ in range(300):
        ref = _random_text(rng, vocab, min_len=1)
        hyp = _random_text(rng, vocab, min_len=1)
        vec = score_pair(ref, hyp, EmbeddingTable.empty(), CFG)
        assert vec.wer == pytest.approx(jiwer.wer(ref, hyp))
        assert vec.mer == pytest.approx(jiwer.mer(ref, hyp))
        assert vec.wil == pytest.approx(jiwer.wil(ref, hyp))
        assert vec.cer == pytest.approx(jiwer.cer(ref, hyp))


def test_wil_of_empty_sides():
    assert wil(align([], [])) == 0.0
    assert wil(align(["a"], [])) == 1.0


def test_semdist_geometry():
    assert semdist_vectors(np.array([1.0, 0.0]), np.array([-1.0, 0.0])) == pytest.approx(2.0)
    assert semdist_vectors(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == pytest.approx(1.0)
    flags: set[str] = set()
    assert semdist_vectors(np.zeros(2), np.array([1.0, 0.0]), flags) == 1.0
    assert OOV_SENTENCE in flags


def test_semdist_oov_sentence_is_flagged(toy_embeddings):
    vec = score_pair("unknown words", "the", toy_embeddings, CFG)
    assert vec.semdist == 1.0
    assert OOV_SENTENCE in vec.flags


def test_precomputed_sentence_vectors(toy_embeddings):
    provider = SentenceVectors(
        toy_embeddings,
        {"u1|ref": np.array([1.0, 0.0]), "u1|m1": np.array([0.0, 1.0])},
    )
    assert semdist(["a"], ["a"], toy_embeddings, provider, sample_id="u1", model_id="m1") == pytest.approx(1.0)
    with pytest.raises(SidecarKeyError):
        semdist(["a"], ["b"], toy_embeddings, provider, sample_id="u1", model_id="m2")


def test_score_all_rows_and_flags(toy_embeddings):
    records = [
        UtteranceRecord("u1", "s1", "d1", "go meet", {"m2": "go to meet", "m1": "go meet"}),
        UtteranceRecord("u2", "s1", "d1", "", {"m2": "the", "m1": ""}),
    ]
    scores = score_all(records, toy_embeddings, CFG)
    assert scores[["sample_id", "model_id"]].values.tolist() == [
        ["u1", "m1"],
        ["u1", "m2"],
        ["u2", "m1"],
        ["u2", "m2"],
    ]
    assert scores.loc[0, "wer"] == 0.0
    assert scores.loc[1, "wer"] == pytest.approx(0.5)

    summary = flag_summary(scores)
    assert summary["rows"] == 4
    assert summary[EMPTY_REF] == 1
    assert summary["flagged"][0]["sample_id"] == "u2"
