from __future__ import annotations

import pytest

from speechaudit_hub.analysis.synthetic import PLANTED, generate_corpus
from speechaudit_hub.core.exceptions import ConfigError
from speechaudit_hub.core.ingest import load_embeddings, load_manifest
from speechaudit_hub.core.models import METRICS


def test_fixture_corpus_on_disk(fixture_corpus):
    records = load_manifest(fixture_corpus / "manifest.jsonl")
    assert len(records) == 40
    assert records[0].model_ids == ["m1", "m2", "m3", "m4"]
    assert len({r.speaker_id for r in records}) == 20

    with_audio = [r for r in records if r.audio_path]
    assert with_audio
    for record in with_audio:
        assert record.snr_db is None
        assert (fixture_corpus / "audio" / f"{record.sample_id}.wav").exists()

    emb = load_embeddings(fixture_corpus / "embeddings.txt")
    assert "snake" in emb and "snack" in emb


def test_group_shares_are_exact():
    corpus = generate_corpus(n_utterances=200, seed=3)
    speakers = {r.speaker_id: r for r in corpus.records}
    assert len(speakers) == 20
    assert sum(r.typicality == "atypical" for r in speakers.values()) == 6
    assert sum(r.l1 == "nonnative" for r in speakers.values()) == 8
    assert sum(r.sex == "unknown" for r in speakers.values()) == 1
    assert sum(r.age_raw is None for r in speakers.values()) == 4


def test_truth_and_scores_layout():
    corpus = generate_corpus(n_utterances=60, n_models=3, n_datasets=3, seed=1, wav_share=0.0)
    assert len(corpus.planted_scores) == 180
    assert list(corpus.planted_scores.columns) == ["sample_id", "model_id", *METRICS]
    truth = corpus.truth("cer")
    assert set(PLANTED) <= set(truth)
    assert {"dataset[d2]", "dataset[d3]", "model[m2]", "model[m3]"} <= set(truth)
    assert truth["x_snr"] == pytest.approx(PLANTED["x_snr"] / corpus.response_sd["cer"])
    assert 0.0 < corpus.analytic_r2 < 1.0
    assert not corpus.audio


def test_generation_is_deterministic():
    a = generate_corpus(n_utterances=30, seed=9)
    b = generate_corpus(n_utterances=30, seed=9)
    assert a.records == b.records
    assert a.planted_scores.equals(b.planted_scores)


def test_invalid_arguments():
    with pytest.raises(ConfigError):
        generate_corpus(n_models=1)
    with pytest.raises(ConfigError):
        generate_corpus(wav_share=1.5)
