from __future__ import annotations

import logging
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, replace
from typing import Any, Literal

import numpy as np
import pandas as pd

from speechaudit_hub.analysis.meaf import CONTINUOUS_TERMS, DEMOGRAPHIC_FACTORS, FitResult, term_name
from speechaudit_hub.core.exceptions import ConfigError, InsufficientDataError, StaleFitError

logger = logging.getLogger(__name__)

DecileScope = Literal["pooled", "per_dataset"]
N_DECILES = 10

_SCOPE_ALIASES: dict[str, DecileScope] = {
    "pooled": "pooled",
    "per_dataset": "per_dataset",
    "per-dataset": "per_dataset",
}


def parse_scope(value: str) -> DecileScope:
    try:
        return _SCOPE_ALIASES[str(value).strip().lower()]
    except KeyError:
        raise ConfigError(f"decile_scope должен быть pooled или per-dataset, получено '{value}'") from None


@dataclass(frozen=True)
class SdiScore:
    sample_id: str
    metric: str
    value: float
    decile: int = 0
    dataset_id: str = ""
    degenerate: bool = False


def _demographic_effect(factor: str, level: str, fit: FitResult) -> float:
    if fit.dropped.get(factor) == "excluded":
        return 0.0
    levels = fit.factor_levels.get(factor)
    if levels is None or level not in levels:
        raise StaleFitError(factor, level)
    if level == fit.reference_levels.get(factor):
        return 0.0
    term = term_name(factor, level)
    if term not in fit.coefficients:
        raise StaleFitError(factor, level)
    return fit.coefficients[term]


def sdi(features: Mapping[str, Any], fit: FitResult) -> float:
    """beta' x плюс сдвиги демографических уровней; свободный член, dataset и model не входят."""
    value = 0.0
    for term in CONTINUOUS_TERMS:
        if term in fit.coefficients:
            value += fit.coefficients[term] * float(features[term])
    for factor in DEMOGRAPHIC_FACTORS:
        value += _demographic_effect(factor, str(features[factor]), fit)
    return float(value)


def _decile_codes(values: np.ndarray) -> tuple[np.ndarray, bool]:
    n = values.size
    order = np.argsort(values, kind="stable")
    ranks = np.empty(n, dtype=np.int64)
    ranks[order] = np.arange(1, n + 1)
    deciles = np.minimum(N_DECILES, (N_DECILES * (ranks - 1)) // n + 1)

    # вырожденность: равные значения попали в разные децили
    sorted_values = values[order]
    sorted_deciles = deciles[order]
    ties = (sorted_values[1:] == sorted_values[:-1]) & (sorted_deciles[1:] != sorted_deciles[:-1])
    return deciles, bool(ties.any())


def assign_deciles(scores: Sequence[SdiScore], scope: DecileScope = "pooled") -> list[SdiScore]:
    """Ранговые децили 1..10; при равенстве порядок входа сохраняется."""
    if not scores:
        return []
    groups: dict[str, list[int]] = {}
    for idx, score in enumerate(scores):
        key = score.dataset_id if scope == "per_dataset" else ""
        groups.setdefault(key, []).append(idx)

    out: list[SdiScore] = list(scores)
    for key, idx in groups.items():
        values = np.array([scores[i].value for i in idx], dtype=np.float64)
        deciles, degenerate = _decile_codes(values)
        if degenerate:
            logger.warning(
                "SDI deciles for %s%s split tied values; assignment follows input order",
                scores[idx[0]].metric,
                f" dataset={key}" if key else "",
            )
        for pos, i in enumerate(idx):
            out[i] = replace(scores[i], decile=int(deciles[pos]), degenerate=degenerate)
    return out


def sdi_scores(
    features: pd.DataFrame,
    fit: FitResult,
    scope: DecileScope = "pooled",
) -> list[SdiScore]:
    if features.empty:
        raise InsufficientDataError("Нет признаков для расчёта SDI")
    raw = [
        SdiScore(
            sample_id=str(row["sample_id"]),
            metric=fit.metric,
            value=sdi(row, fit),
            dataset_id=str(row["dataset_id"]),
        )
        for row in features.to_dict(orient="records")
    ]
    return assign_deciles(raw, scope)


def compute_sdi(
    features: pd.DataFrame,
    fits: Mapping[str, FitResult],
    scope: DecileScope = "pooled",
) -> list[SdiScore]:
    out: list[SdiScore] = []
    for metric in fits:
        out.extend(sdi_scores(features, fits[metric], scope))
    return out


def sdi_frame(scores: Iterable[SdiScore]) -> pd.DataFrame:
    rows = [{"sample_id": s.sample_id, "metric": s.metric, "sdi": s.value, "decile": s.decile} for s in scores]
    return pd.DataFrame(rows, columns=["sample_id", "metric", "sdi", "decile"])


def read_sdi(path: str) -> pd.DataFrame:
    return pd.read_csv(path, dtype={"sample_id": str, "metric": str}, keep_default_na=False)


def degenerate_metrics(scores: Iterable[SdiScore]) -> list[str]:
    return sorted({s.metric for s in scores if s.degenerate})
