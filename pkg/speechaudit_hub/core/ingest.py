from __future__ import annotations

import json
import logging
import math
import unicodedata
from collections.abc import Iterable, Mapping
from pathlib import Path
from typing import Any, Literal

import numpy as np
import pandas as pd

from speechaudit_hub.core.exceptions import (
    AuditInputError,
    DuplicateSampleError,
    EmbeddingFormatError,
    ManifestError,
    ModelSetMismatchError,
    ScoreSchemaError,
)
from speechaudit_hub.core.models import METRICS, CaseMode, EmbeddingTable, UtteranceRecord
from speechaudit_hub.infra.storage import write_csv, write_text

logger = logging.getLogger(__name__)

ManifestFormat = Literal["jsonl", "csv"]

SCORE_COLUMNS: tuple[str, ...] = ("sample_id", "model_id", *METRICS)
HYP_PREFIX = "hyp__"

_SEX_ALIASES = {
    "f": "female", "female": "female", "woman": "female", "w": "female",
    "m": "male", "male": "male", "man": "male",
}
_L1_ALIASES = {
    "native": "native", "l1": "native",
    "nonnative": "nonnative", "non-native": "nonnative", "non_native": "nonnative", "l2": "nonnative",
}
_TYP_ALIASES = {
    "typical": "typical", "control": "typical",
    "atypical": "atypical", "dysarthric": "atypical", "disordered": "atypical",
}
_UNKNOWN = {"", "unknown", "na", "n/a", "none", "null"}


def _level(value: Any, aliases: Mapping[str, str], field: str, line: int) -> str:
    if value is None:
        return "unknown"
    key = str(value).strip().lower()
    if key in _UNKNOWN:
        return "unknown"
    if key not in aliases:
        raise ManifestError(line, f"недопустимое значение {field}='{value}'")
    return aliases[key]


def _opt_float(value: Any, field: str, line: int) -> float | None:
    if value is None or (isinstance(value, str) and not value.strip()):
        return None
    try:
        out = float(value)
    except (TypeError, ValueError) as e:
        raise ManifestError(line, f"{field} должно быть числом, получено '{value}'") from e
    if not math.isfinite(out):
        raise ManifestError(line, f"{field} должно быть конечным числом")
    return out


def _opt_str(value: Any) -> str | None:
    if value is None:
        return None
    text = str(value).strip()
    return text or None


def _required(row: Mapping[str, Any], field: str, line: int) -> str:
    value = row.get(field)
    if value is None or not str(value).strip():
        raise ManifestError(line, f"отсутствует обязательное поле '{field}'")
    return str(value).strip()


def _record_from_row(row: Mapping[str, Any], hypotheses: dict[str, str], line: int, base_dir: Path) -> UtteranceRecord:
    sample_id = _required(row, "sample_id", line)
    reference = row.get("reference")
    if not isinstance(reference, str):
        raise ManifestError(line, "поле 'reference' должно быть строкой")
    if not hypotheses:
        raise ManifestError(line, "нужна хотя бы одна гипотеза")

    duration = _opt_float(row.get("duration_s"), "duration_s", line)
    if duration is not None and duration <= 0:
        raise ManifestError(line, f"duration_s должна быть > 0 (sample_id '{sample_id}')")

    audio = _opt_str(row.get("audio_path"))
    if audio is not None and not Path(audio).is_absolute():
        audio = str((base_dir / audio).resolve())

    age = row.get("age_raw", row.get("age"))
    try:
        return UtteranceRecord(
            sample_id=sample_id,
            speaker_id=_required(row, "speaker_id", line),
            dataset_id=_required(row, "dataset_id", line),
            reference=reference,
            hypotheses=hypotheses,
            duration_s=duration,
            audio_path=audio,
            age_raw=_opt_str(age),
            sex=_level(row.get("sex"), _SEX_ALIASES, "sex", line),
            l1=_level(row.get("l1"), _L1_ALIASES, "l1", line),
            typicality=_level(row.get("typicality"), _TYP_ALIASES, "typicality", line),
            snr_db=_opt_float(row.get("snr_db"), "snr_db", line),
        )
    except ManifestError:
        raise
    except AuditInputError as e:
        raise ManifestError(line, str(e)) from e


def _iter_jsonl(path: Path) -> Iterable[tuple[int, dict[str, Any], dict[str, str]]]:
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as e:
                raise ManifestError(line_no, f"некорректный JSON ({e.msg})") from e
            if not isinstance(row, dict):
                raise ManifestError(line_no, "ожидался JSON-объект")
            hyps = row.get("hypotheses")
            if not isinstance(hyps, dict) or not all(isinstance(v, str) for v in hyps.values()):
                raise ManifestError(line_no, "поле 'hypotheses' должно быть объектом model_id -> текст")
            yield line_no, row, {str(k): v for k, v in hyps.items()}


def _iter_csv(path: Path) -> Iterable[tuple[int, dict[str, Any], dict[str, str]]]:
    frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    hyp_cols = [c for c in frame.columns if c.startswith(HYP_PREFIX)]
    if not hyp_cols:
        raise ManifestError(1, f"нет ни одной колонки гипотез '{HYP_PREFIX}<model_id>'")
    for idx, row in enumerate(frame.to_dict(orient="records")):
        # строка 1 содержит заголовок
        hyps = {c[len(HYP_PREFIX):]: row[c] for c in hyp_cols}
        yield idx + 2, row, hyps


def load_manifest(path: str | Path, format: ManifestFormat | None = None) -> list[UtteranceRecord]:
    p = Path(path)
    if not p.exists():
        raise AuditInputError(f"Файл манифеста не найден: {p}")
    fmt = format or ("csv" if p.suffix.lower() == ".csv" else "jsonl")
    rows = _iter_csv(p) if fmt == "csv" else _iter_jsonl(p)

    records: list[UtteranceRecord] = []
    seen: dict[str, int] = {}
    expected_models: set[str] | None = None

    for line_no, row, hyps in rows:
        record = _record_from_row(row, hyps, line_no, p.parent)
        if record.sample_id in seen:
            raise DuplicateSampleError(record.sample_id, line_no)
        seen[record.sample_id] = line_no

        models = set(record.hypotheses)
        if expected_models is None:
            expected_models = models
        elif models != expected_models:
            raise ModelSetMismatchError(line_no, expected_models, models)
        records.append(record)

    logger.info("Loaded manifest %s: %d records, models=%s", p, len(records), sorted(expected_models or ()))
    return records


def _record_to_row(record: UtteranceRecord) -> dict[str, Any]:
    row: dict[str, Any] = {
        "sample_id": record.sample_id,
        "speaker_id": record.speaker_id,
        "dataset_id": record.dataset_id,
        "reference": record.reference,
        "hypotheses": {m: record.hypotheses[m] for m in record.model_ids},
    }
    optional = {
        "duration_s": record.duration_s,
        "audio_path": record.audio_path,
        "age_raw": record.age_raw,
        "snr_db": record.snr_db,
    }
    row.update({k: v for k, v in optional.items() if v is not None})
    for name in ("sex", "l1", "typicality"):
        value = getattr(record, name)
        if value != "unknown":
            row[name] = value
    return row


def write_manifest(records: Iterable[UtteranceRecord], path: str | Path, format: ManifestFormat = "jsonl") -> None:
    rows = [_record_to_row(r) for r in records]
    if format == "jsonl":
        text = "".join(json.dumps(r, ensure_ascii=False) + "\n" for r in rows)
        write_text(path, text)
        return

    flat: list[dict[str, Any]] = []
    for r in rows:
        hyps = r.pop("hypotheses")
        r.update({f"{HYP_PREFIX}{m}": t for m, t in hyps.items()})
        flat.append(r)
    columns = [
        "sample_id", "speaker_id", "dataset_id", "reference",
        "duration_s", "audio_path", "age_raw", "sex", "l1", "typicality", "snr_db",
    ]
    hyp_cols = sorted({c for r in flat for c in r if c.startswith(HYP_PREFIX)})
    frame = pd.DataFrame(flat, columns=columns + hyp_cols)
    buf = frame.to_csv(index=False, lineterminator="\n")
    write_text(path, buf)


def _is_header(parts: list[str]) -> bool:
    if len(parts) != 2:
        return False
    try:
        int(parts[0])
        int(parts[1])
    except ValueError:
        return False
    return True


def load_embeddings(path: str | Path, case_mode: CaseMode = "lowercase") -> EmbeddingTable:
    """Читает текстовый файл векторов: "token v1 ... vd", опционально с заголовком "count dim"."""
    p = Path(path)
    if not p.exists():
        raise AuditInputError(f"Файл эмбеддингов не найден: {p}")

    vectors: dict[str, np.ndarray] = {}
    dim: int | None = None
    header_dim: int | None = None
    duplicates = 0
    first = True

    with open(p, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if first:
                first = False
                if _is_header(parts):
                    header_dim = int(parts[1])
                    continue

            token, values = parts[0], parts[1:]
            if dim is None:
                dim = len(values)
                if dim == 0:
                    raise EmbeddingFormatError(line_no, "нет компонент вектора")
                if header_dim is not None and header_dim != dim:
                    raise EmbeddingFormatError(line_no, f"размерность {dim} не совпадает с заголовком ({header_dim})")
            elif len(values) != dim:
                raise EmbeddingFormatError(line_no, f"ожидалось {dim} компонент, получено {len(values)}")

            try:
                vec = np.asarray(values, dtype=np.float64)
            except ValueError as e:
                raise EmbeddingFormatError(line_no, "нечисловая компонента вектора") from e

            key = unicodedata.normalize("NFC", token)
            if case_mode == "lowercase":
                key = key.lower()
            if key in vectors:
                duplicates += 1
                continue
            vec.setflags(write=False)
            vectors[key] = vec

    if dim is None:
        raise EmbeddingFormatError(0, "файл пуст")
    if duplicates:
        logger.warning("Embeddings %s: %d duplicate tokens ignored (first occurrence kept)", p, duplicates)
    logger.info("Loaded embeddings %s: %d tokens, dim=%d", p, len(vectors), dim)
    return EmbeddingTable(dim=dim, vectors=vectors, case_mode=case_mode, duplicates=duplicates)


def load_sentence_vectors(path: str | Path) -> dict[str, np.ndarray]:
    """Векторы предложений для SemDist: строки {"key": "<sample_id>|ref", "vec": [...]}."""
    p = Path(path)
    if not p.exists():
        raise AuditInputError(f"Файл векторов предложений не найден: {p}")
    out: dict[str, np.ndarray] = {}
    dim: int | None = None
    with open(p, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                key = str(row["key"])
                vec = np.asarray(row["vec"], dtype=np.float64)
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                raise EmbeddingFormatError(line_no, "ожидалась строка {key, vec}") from e
            if vec.ndim != 1 or (dim is not None and vec.shape[0] != dim):
                raise EmbeddingFormatError(line_no, "несогласованная размерность вектора")
            dim = vec.shape[0]
            out[key] = vec
    return out


def write_scores(scores: pd.DataFrame, path: str | Path) -> None:
    missing = [c for c in SCORE_COLUMNS if c not in scores.columns]
    if missing:
        raise ScoreSchemaError(missing[0])
    write_csv(path, scores.loc[:, list(SCORE_COLUMNS)])


def read_scores(path: str | Path) -> pd.DataFrame:
    p = Path(path)
    frame = pd.read_csv(p, dtype={"sample_id": str, "model_id": str}, encoding="utf-8")
    for column in SCORE_COLUMNS:
        if column not in frame.columns:
            raise ScoreSchemaError(column)
    frame = frame.loc[:, list(SCORE_COLUMNS)]
    try:
        frame[list(METRICS)] = frame[list(METRICS)].astype(np.float64)
    except ValueError as e:
        raise ScoreSchemaError("metrics", "нечисловые значения") from e
    return frame.reset_index(drop=True)
