from __future__ import annotations

import json

import numpy as np
import pandas as pd
import pytest
from conftest import manifest_row, write_jsonl

from speechaudit_hub.core.exceptions import (
    DuplicateSampleError,
    EmbeddingFormatError,
    ManifestError,
    ModelSetMismatchError,
    ScoreSchemaError,
)
from speechaudit_hub.core.ingest import (
    SCORE_COLUMNS,
    load_embeddings,
    load_manifest,
    load_sentence_vectors,
    read_scores,
    write_manifest,
    write_scores,
)


def test_load_jsonl_manifest(tmp_path):
    path = write_jsonl(
        tmp_path / "m.jsonl",
        [
            manifest_row("u1", sex="F", l1="L2", typicality="dysarthric", age="20s"),
            manifest_row("u2", audio_path="audio/u2.wav", duration_s=None),
        ],
    )
    records = load_manifest(path)
    assert [r.sample_id for r in records] == ["u1", "u2"]
    first = records[0]
    assert (first.sex, first.l1, first.typicality) == ("female", "nonnative", "atypical")
    assert first.age_raw == "20s"
    assert first.model_ids == ["m1", "m2"]
    second = records[1]
    assert second.sex == "unknown"
    assert second.duration_s is None
    assert second.audio_path == str((tmp_path / "audio" / "u2.wav").resolve())


def test_load_csv_manifest(tmp_path):
    frame = pd.DataFrame(
        {
            "sample_id": ["u1", "u2"],
            "speaker_id": ["s1", "s2"],
            "dataset_id": ["d1", "d1"],
            "reference": ["go meet", "a b"],
            "duration_s": ["1.5", "2"],
            "hyp__m1": ["go meet", "a"],
            "hyp__m2": ["go to meet", "a b"],
        }
    )
    path = tmp_path / "m.csv"
    frame.to_csv(path, index=False)
    records = load_manifest(path)
    assert records[0].hypotheses == {"m1": "go meet", "m2": "go to meet"}
    assert records[1].duration_s == 2.0


def test_duplicate_sample_id(tmp_path):
    path = write_jsonl(tmp_path / "m.jsonl", [manifest_row("u1"), manifest_row("u1")])
    with pytest.raises(DuplicateSampleError, match="u1"):
        load_manifest(path)


def test_model_set_mismatch(tmp_path):
    path = write_jsonl(
        tmp_path / "m.jsonl",
        [manifest_row("u1"), manifest_row("u2", hypotheses={"m1": "x"})],
    )
    with pytest.raises(ModelSetMismatchError, match="2"):
        load_manifest(path)


@pytest.mark.parametrize("duration", [0, -1.5])
def test_non_positive_duration(tmp_path, duration):
    path = write_jsonl(tmp_path / "m.jsonl", [manifest_row("u1", duration_s=duration)])
    with pytest.raises(ManifestError):
        load_manifest(path)


def test_malformed_json_reports_line(tmp_path):
    path = tmp_path / "m.jsonl"
    path.write_text(json.dumps(manifest_row("u1")) + "\n{broken\n", encoding="utf-8")
    with pytest.raises(ManifestError, match="2"):
        load_manifest(path)


def test_unknown_level_value_rejected(tmp_path):
    path = write_jsonl(tmp_path / "m.jsonl", [manifest_row("u1", sex="robot")])
    with pytest.raises(ManifestError):
        load_manifest(path)


def test_manifest_round_trip(tmp_path):
    path = write_jsonl(tmp_path / "m.jsonl", [manifest_row("u1", sex="male", age="34"), manifest_row("u2")])
    records = load_manifest(path)
    for fmt in ("jsonl", "csv"):
        out = tmp_path / f"copy.{fmt}"
        write_manifest(records, out, format=fmt)
        assert load_manifest(out) == records


def test_load_embeddings_with_header(tmp_path):
    path = tmp_path / "emb.txt"
    path.write_text("3 2\nThe 1 0\nstore 0 1\nthe 5 5\n", encoding="utf-8")
    table = load_embeddings(path)
    assert table.dim == 2
    assert len(table) == 2
    assert table.duplicates == 1
    np.testing.assert_array_equal(table.get("THE"), [1.0, 0.0])
    assert "Store" in table


def test_embedding_dimension_mismatch_names_line(tmp_path):
    path = tmp_path / "emb.txt"
    path.write_text("a 1 0 0\nb 1 0\n", encoding="utf-8")
    with pytest.raises(EmbeddingFormatError, match="2"):
        load_embeddings(path)


def test_embedding_header_mismatch(tmp_path):
    path = tmp_path / "emb.txt"
    path.write_text("1 4\na 1 0\n", encoding="utf-8")
    with pytest.raises(EmbeddingFormatError):
        load_embeddings(path)


@pytest.mark.parametrize("content", ["", "a 1 x\n"])
def test_bad_embedding_files(tmp_path, content):
    path = tmp_path / "emb.txt"
    path.write_text(content, encoding="utf-8")
    with pytest.raises(EmbeddingFormatError):
        load_embeddings(path)


def test_case_sensitive_embeddings(tmp_path):
    path = tmp_path / "emb.txt"
    path.write_text("The 1 0\nthe 0 1\n", encoding="utf-8")
    table = load_embeddings(path, case_mode="as-is")
    assert len(table) == 2
    np.testing.assert_array_equal(table.get("the"), [0.0, 1.0])


def test_sentence_vectors(tmp_path):
    path = tmp_path / "vec.jsonl"
    write_jsonl(path, [{"key": "u1|ref", "vec": [1, 0]}, {"key": "u1|m1", "vec": [0, 1]}])
    vectors = load_sentence_vectors(path)
    np.testing.assert_array_equal(vectors["u1|m1"], [0.0, 1.0])

    write_jsonl(path, [{"key": "u1|ref", "vec": [1, 0]}, {"key": "u1|m1", "vec": [0, 1, 2]}])
    with pytest.raises(EmbeddingFormatError):
        load_sentence_vectors(path)


def test_scores_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    frame = pd.DataFrame(
        {"sample_id": ["001", "002"], "model_id": ["m1", "m1"], **{c: rng.random(2) for c in SCORE_COLUMNS[2:]}}
    )
    frame["flags"] = ""
    path = tmp_path / "scores.csv"
    write_scores(frame, path)
    back = read_scores(path)
    assert list(back.columns) == list(SCORE_COLUMNS)
    assert back["sample_id"].tolist() == ["001", "002"]
    np.testing.assert_allclose(back[list(SCORE_COLUMNS[2:])].to_numpy(), frame[list(SCORE_COLUMNS[2:])].to_numpy(), rtol=1e-8)


def test_empty_scores_round_trip(tmp_path):
    path = tmp_path / "scores.csv"
    write_scores(pd.DataFrame(columns=list(SCORE_COLUMNS)), path)
    assert read_scores(path).empty


def test_scores_missing_column(tmp_path):
    path = tmp_path / "scores.csv"
    pd.DataFrame({"sample_id": ["u1"], "model_id": ["m1"], "wer": [0.1]}).to_csv(path, index=False)
    with pytest.raises(ScoreSchemaError, match="cer"):
        read_scores(path)
