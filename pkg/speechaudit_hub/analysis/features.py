from __future__ import annotations

import logging
import math
import re
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Literal

import numpy as np
import pandas as pd

from speechaudit_hub.analysis.wada import load_wada_table, wada_snr_file, wav_duration
from speechaudit_hub.core.exceptions import (
    AuditInputError,
    ConstantColumnError,
    MissingMetadataError,
    UndefinedSnrError,
)
from speechaudit_hub.core.models import UtteranceRecord

logger = logging.getLogger(__name__)

SnrSource = Literal["manifest", "wada", "manifest_then_wada"]

# сырая колонка -> стандартизованная
CONTINUOUS: dict[str, str] = {
    "snr_db": "x_snr",
    "log_duration": "x_len",
    "age_years": "x_age",
}
CATEGORICAL: tuple[str, ...] = ("sex", "l1", "typicality")

_RANGE = re.compile(r"^\s*(\d+(?:\.\d+)?)\s*[-–]\s*(\d+(?:\.\d+)?)\s*$")


def load_age_bins(path: str | Path | None = None) -> dict[str, float]:
    if path is None:
        source = resources.files("speechaudit_hub.data").joinpath("age_bins.csv")
        frame = pd.read_csv(str(source), dtype={"label": str})
    else:
        frame = pd.read_csv(path, dtype={"label": str})
    if not {"label", "midpoint_years"} <= set(frame.columns):
        raise AuditInputError("Таблица возрастных интервалов должна содержать колонки label, midpoint_years")
    return {str(r.label).strip().lower(): float(r.midpoint_years) for r in frame.itertuples(index=False)}


def parse_age(age_raw: str | None, bin_map: Mapping[str, float]) -> float | None:
    if age_raw is None:
        return None
    text = str(age_raw).strip()
    if not text:
        return None
    try:
        value = float(text)
    except ValueError:
        value = None
    if value is not None:
        return value if math.isfinite(value) and value >= 0 else None

    m = _RANGE.match(text)
    if m:
        lo, hi = float(m.group(1)), float(m.group(2))
        return (lo + hi) / 2.0 if hi >= lo else None
    return bin_map.get(text.lower())


@dataclass
class StandardizationStats:
    means: dict[str, float] = field(default_factory=dict)
    stds: dict[str, float] = field(default_factory=dict)

    def zscore(self, column: str, values: np.ndarray) -> np.ndarray:
        return (np.asarray(values, dtype=np.float64) - self.means[column]) / self.stds[column]

    def to_json(self) -> dict[str, Any]:
        return {"columns": {c: {"mean": self.means[c], "std": self.stds[c]} for c in self.means}}

    @classmethod
    def from_json(cls, data: Mapping[str, Any]) -> "StandardizationStats":
        cols = data.get("columns", {})
        return cls(
            means={c: float(v["mean"]) for c, v in cols.items()},
            stds={c: float(v["std"]) for c, v in cols.items()},
        )


def fit_stats(raw: pd.DataFrame, columns: Sequence[str]) -> StandardizationStats:
    stats = StandardizationStats()
    for column in columns:
        values = raw[column].to_numpy(dtype=np.float64)
        mean = float(values.mean())
        std = float(values.std(ddof=0))
        if not std > 0.0:
            raise ConstantColumnError(column)
        stats.means[column] = mean
        stats.stds[column] = std
    return stats


def apply_stats(raw: pd.DataFrame, stats: StandardizationStats) -> pd.DataFrame:
    out = pd.DataFrame(index=raw.index)
    for column, z_name in CONTINUOUS.items():
        out[z_name] = stats.zscore(column, raw[column].to_numpy())
    return out


def _resolve_duration(record: UtteranceRecord) -> float | None:
    if record.duration_s is not None:
        return record.duration_s
    if record.audio_path and Path(record.audio_path).exists():
        return wav_duration(record.audio_path)
    return None


def _resolve_snr(record: UtteranceRecord, source: SnrSource, table: pd.DataFrame | None) -> tuple[float | None, str]:
    if source in ("manifest", "manifest_then_wada") and record.snr_db is not None:
        return record.snr_db, "manifest"
    if source == "manifest":
        return None, "missing"
    if not record.audio_path or not Path(record.audio_path).exists():
        return None, "missing"
    try:
        return wada_snr_file(record.audio_path, table), "wada"
    except UndefinedSnrError as e:
        logger.warning("WADA-SNR undefined for %s: %s", record.sample_id, e)
        return None, "missing"


def build_features(
    records: Sequence[UtteranceRecord],
    snr_source: SnrSource = "manifest_then_wada",
    age_bins: Mapping[str, float] | None = None,
) -> tuple[pd.DataFrame, StandardizationStats]:
    """Таблица признаков по высказываниям и статистики стандартизации (пул по всему корпусу)."""
    if not records:
        raise AuditInputError("Нет записей для построения признаков")
    bins = load_age_bins() if age_bins is None else dict(age_bins)
    table = load_wada_table() if snr_source != "manifest" else None

    rows: list[dict[str, Any]] = []
    no_duration: list[str] = []
    no_snr: list[str] = []
    for record in records:
        duration = _resolve_duration(record)
        if duration is None or duration <= 0:
            no_duration.append(record.sample_id)
        snr, origin = _resolve_snr(record, snr_source, table)
        if snr is None:
            no_snr.append(record.sample_id)
        rows.append(
            {
                "sample_id": record.sample_id,
                "speaker_id": record.speaker_id,
                "dataset_id": record.dataset_id,
                "snr_db": snr,
                "snr_origin": origin,
                "duration_s": duration,
                "age_raw_years": parse_age(record.age_raw, bins),
                "sex": record.sex,
                "l1": record.l1,
                "typicality": record.typicality,
            }
        )

    if no_duration:
        raise MissingMetadataError("duration_s", no_duration)
    if no_snr:
        raise MissingMetadataError("snr_db", no_snr)

    frame = pd.DataFrame(rows)
    missing = frame["age_raw_years"].isna()
    if missing.all():
        raise ConstantColumnError("age_years")
    # пропуски возраста заполняем средним и отмечаем флагом
    age_mean = float(frame.loc[~missing, "age_raw_years"].mean())
    frame["age_years"] = frame["age_raw_years"].fillna(age_mean).astype(np.float64)
    frame["x_miss"] = missing.astype(np.int64)
    frame["snr_db"] = frame["snr_db"].astype(np.float64)
    frame["duration_s"] = frame["duration_s"].astype(np.float64)
    frame["log_duration"] = np.log(frame["duration_s"].to_numpy())

    stats = fit_stats(frame, list(CONTINUOUS))
    z = apply_stats(frame, stats)
    frame = pd.concat([frame, z], axis=1)

    n_wada = int((frame["snr_origin"] == "wada").sum())
    logger.info(
        "Built features for %d utterances (snr from wada=%d, missing ages=%d)",
        len(frame),
        n_wada,
        int(missing.sum()),
    )
    columns = [
        "sample_id", "speaker_id", "dataset_id",
        "snr_db", "snr_origin", "duration_s", "log_duration", "age_raw_years", "age_years",
        "x_snr", "x_len", "x_age", "x_miss", "sex", "l1", "typicality",
    ]
    return frame.loc[:, columns], stats


def read_features(path: str | Path) -> pd.DataFrame:
    frame = pd.read_csv(
        path,
        dtype={"sample_id": str, "speaker_id": str, "dataset_id": str, "sex": str, "l1": str, "typicality": str},
        keep_default_na=False,
        na_values={"age_raw_years": [""]},
    )
    return frame


def dataset_profile(features: pd.DataFrame) -> pd.DataFrame:
    """Профиль наборов данных: средние и доли по каждому dataset_id."""
    rows: list[dict[str, Any]] = []
    for dataset_id, group in features.groupby("dataset_id", sort=True):
        ages = group["age_raw_years"].dropna()
        rows.append(
            {
                "dataset_id": dataset_id,
                "utterances": len(group),
                "speakers": int(group["speaker_id"].nunique()),
                "mean_snr_db": float(group["snr_db"].mean()),
                "mean_duration_s": float(group["duration_s"].mean()),
                "mean_age_years": float(ages.mean()) if len(ages) else float("nan"),
                "age_missing_ratio": float(group["x_miss"].mean()),
                "male_ratio": float((group["sex"] == "male").mean()),
                "nonnative_ratio": float((group["l1"] == "nonnative").mean()),
                "atypical_ratio": float((group["typicality"] == "atypical").mean()),
            }
        )
    return pd.DataFrame(rows)
