from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

from speechaudit_hub.analysis.synthetic import generate_corpus, write_corpus
from speechaudit_hub.core.models import EmbeddingTable
from speechaudit_hub.infra.settings import SettingsLoader
from speechaudit_hub.logging_config import setup_logging

# эталонный абзац на 69 слов
STELLA = (
    "Please call Stella. Ask her to bring these things with her from the store: "
    "Six spoons of fresh snow peas, five thick slabs of blue cheese, and maybe a snack for her brother Bob. "
    "We also need a small plastic snake and a big toy frog for the kids. "
    "She can scoop these things into three red bags, and we will go meet her Wednesday at the train station."
)


@pytest.fixture(scope="session", autouse=True)
def _isolated_logs(tmp_path_factory: pytest.TempPathFactory):
    settings = SettingsLoader()
    settings.reload()
    settings._cache["LOG_PATH"] = str(tmp_path_factory.mktemp("logs") / "audit.log")
    setup_logging()
    yield


@pytest.fixture
def settings(monkeypatch: pytest.MonkeyPatch, tmp_path: Path):
    """Настройки с корнем запусков во временном каталоге; после теста перечитываются."""
    loader = SettingsLoader()
    monkeypatch.setenv("SPEECHAUDIT_OUTPUT_ROOT", str(tmp_path / "runs"))
    loader.reload()
    yield loader
    monkeypatch.delenv("SPEECHAUDIT_OUTPUT_ROOT", raising=False)
    loader.reload()


@pytest.fixture
def toy_embeddings() -> EmbeddingTable:
    vectors = {
        "the": np.array([1.0, 0.0, 0.0]),
        "this": np.array([0.9, 0.1, 0.0]),
        "snake": np.array([0.0, 0.0, 1.0]),
        "snack": np.array([0.0, 1.0, 0.0]),
        "go": np.array([0.5, 0.5, 0.0]),
        "meet": np.array([0.0, 0.5, 0.5]),
    }
    return EmbeddingTable(dim=3, vectors=vectors)


def write_jsonl(path: Path, rows: list[dict]) -> Path:
    path.write_text("".join(json.dumps(r, ensure_ascii=False) + "\n" for r in rows), encoding="utf-8")
    return path


def manifest_row(sample_id: str, **overrides) -> dict:
    row = {
        "sample_id": sample_id,
        "speaker_id": f"spk_{sample_id}",
        "dataset_id": "d1",
        "reference": "go meet her",
        "hypotheses": {"m1": "go meet her", "m2": "go to meet her"},
        "duration_s": 2.0,
        "snr_db": 20.0,
    }
    row.update(overrides)
    return row


@pytest.fixture(scope="session")
def fixture_corpus(tmp_path_factory: pytest.TempPathFactory) -> Path:
    """Синтетический корпус на 40 высказываний, записанный на диск."""
    directory = tmp_path_factory.mktemp("corpus")
    write_corpus(generate_corpus(n_utterances=40, seed=0), directory)
    return directory
