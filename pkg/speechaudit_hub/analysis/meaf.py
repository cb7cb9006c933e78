"""
MEAF: регрессия с фиксированными эффектами по каждой метрике.

Строка матрицы плана соответствует паре (высказывание, модель). Колонки:
свободный член, стандартизованные непрерывные признаки, дамми демографии
(sex, l1, typicality), дамми набора данных и модели. Кодирование drop-first,
ошибки кластеризуются по speaker_id (CR1).
"""

from __future__ import annotations

import logging
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from typing import Any

import numpy as np
import pandas as pd
from scipy import linalg

from speechaudit_hub.core.exceptions import (
    ConfigError,
    ConstantColumnError,
    InsufficientDataError,
    JoinError,
    RankDeficiencyError,
)
from speechaudit_hub.core.models import L1_LEVELS, METRICS, SEX_LEVELS, TYPICALITY_LEVELS

logger = logging.getLogger(__name__)

CONTINUOUS_TERMS: tuple[str, ...] = ("x_snr", "x_len", "x_age", "x_miss")
DEMOGRAPHIC_FACTORS: tuple[str, ...] = ("sex", "l1", "typicality")
SYSTEMIC_FACTORS: tuple[str, ...] = ("dataset", "model")
FACTORS: tuple[str, ...] = DEMOGRAPHIC_FACTORS + SYSTEMIC_FACTORS

# предпочтительные опорные уровни; для dataset/model берётся первый по алфавиту
_PREFERRED_REFERENCE: dict[str, str] = {"sex": "female", "l1": "native", "typicality": "typical"}
_CANONICAL_ORDER: dict[str, tuple[str, ...]] = {
    "sex": SEX_LEVELS,
    "l1": L1_LEVELS,
    "typicality": TYPICALITY_LEVELS,
}
_FACTOR_COLUMN: dict[str, str] = {
    "sex": "sex",
    "l1": "l1",
    "typicality": "typicality",
    "dataset": "dataset_id",
    "model": "model_id",
}


def term_name(factor: str, level: str) -> str:
    return f"{factor}[{level}]"


def block_of(factor: str) -> str:
    return "demographic" if factor in DEMOGRAPHIC_FACTORS else factor


@dataclass(frozen=True)
class DesignMatrix:
    metric: str
    columns: tuple[str, ...]
    blocks: tuple[str, ...]
    X: np.ndarray
    y: np.ndarray
    clusters: np.ndarray
    sample_ids: np.ndarray
    model_ids: np.ndarray
    response_mean: float = 0.0
    response_std: float = 1.0
    reference_levels: dict[str, str] = field(default_factory=dict)
    factor_levels: dict[str, list[str]] = field(default_factory=dict)
    dropped: dict[str, str] = field(default_factory=dict)

    @property
    def n(self) -> int:
        return int(self.X.shape[0])

    @property
    def k(self) -> int:
        return int(self.X.shape[1])

    @classmethod
    def from_arrays(
        cls,
        X: np.ndarray,
        y: np.ndarray,
        columns: Sequence[str],
        clusters: Sequence[Any] | None = None,
        metric: str = "y",
    ) -> "DesignMatrix":
        """Матрица плана из готовых массивов; без кластеров каждая строка считается своим кластером."""
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        n = X.shape[0]
        if clusters is None:
            codes = np.arange(n, dtype=np.int64)
        else:
            _, codes = np.unique(np.asarray(clusters), return_inverse=True)
        blocks = tuple("intercept" if c == "intercept" else "continuous" for c in columns)
        ids = np.array([str(i) for i in range(n)], dtype=object)
        return cls(
            metric=metric,
            columns=tuple(columns),
            blocks=blocks,
            X=X,
            y=y,
            clusters=codes.astype(np.int64),
            sample_ids=ids,
            model_ids=np.full(n, "", dtype=object),
        )


@dataclass
class FitResult:
    metric: str
    columns: tuple[str, ...]
    blocks: dict[str, str]
    coefficients: dict[str, float]
    clustered_se: dict[str, float]
    classical_se: dict[str, float]
    r2: float
    f_stat: float
    n: int
    k: int
    n_clusters: int
    rank: int
    residuals: np.ndarray = field(default_factory=lambda: np.empty(0), repr=False)
    fitted: np.ndarray = field(default_factory=lambda: np.empty(0), repr=False)
    response_mean: float = 0.0
    response_std: float = 1.0
    reference_levels: dict[str, str] = field(default_factory=dict)
    factor_levels: dict[str, list[str]] = field(default_factory=dict)
    dropped: dict[str, str] = field(default_factory=dict)
    cov_unscaled: np.ndarray | None = field(default=None, repr=False)

    def coef(self, term: str) -> float:
        return self.coefficients.get(term, 0.0)


def _join(features: pd.DataFrame, scores: pd.DataFrame, metrics: Iterable[str]) -> pd.DataFrame:
    needed = ["sample_id", "model_id", *metrics]
    missing_cols = [c for c in needed if c not in scores.columns]
    if missing_cols:
        raise JoinError("колонки оценок", missing_cols)

    feature_ids = set(features["sample_id"].astype(str))
    score_ids = set(scores["sample_id"].astype(str))
    if score_ids - feature_ids:
        raise JoinError("оценки без признаков", sorted(score_ids - feature_ids))
    if feature_ids - score_ids:
        raise JoinError("признаки без оценок", sorted(feature_ids - score_ids))

    joined = scores.loc[:, needed].merge(features, on="sample_id", how="inner", validate="many_to_one")

    # каждая запись должна быть оценена одним и тем же набором моделей
    models = sorted(joined["model_id"].astype(str).unique())
    per_sample = joined.groupby("sample_id")["model_id"].nunique()
    incomplete = per_sample[per_sample != len(models)].index.astype(str).tolist()
    if incomplete or len(joined) != len(feature_ids) * len(models):
        raise JoinError("оценки не для всех моделей", incomplete or ["(повторяющиеся пары)"])
    return joined


def _choose_reference(factor: str, present: list[str]) -> str:
    preferred = _PREFERRED_REFERENCE.get(factor)
    if preferred is not None and preferred in present:
        return preferred
    return present[0]


def _ordered_levels(factor: str, values: pd.Series) -> list[str]:
    present = set(values.astype(str))
    order = _CANONICAL_ORDER.get(factor)
    if order is not None:
        return [lvl for lvl in order if lvl in present] + sorted(present - set(order))
    return sorted(present)


@dataclass(frozen=True)
class _Regressors:
    columns: tuple[str, ...]
    blocks: tuple[str, ...]
    X: np.ndarray
    clusters: np.ndarray
    reference_levels: dict[str, str]
    factor_levels: dict[str, list[str]]
    dropped: dict[str, str]


def _regressors(joined: pd.DataFrame, exclude_factors: Iterable[str] = ()) -> _Regressors:
    excluded = set(exclude_factors)
    unknown = excluded - set(FACTORS) - set(CONTINUOUS_TERMS)
    if unknown:
        raise ConfigError(f"Неизвестные факторы для исключения: {sorted(unknown)}")

    n = len(joined)
    cols: list[np.ndarray] = [np.ones(n)]
    names: list[str] = ["intercept"]
    blocks: list[str] = ["intercept"]
    dropped: dict[str, str] = {}
    references: dict[str, str] = {}
    levels_by_factor: dict[str, list[str]] = {}

    for term in CONTINUOUS_TERMS:
        if term in excluded:
            dropped[term] = "excluded"
            continue
        values = joined[term].to_numpy(dtype=np.float64)
        if np.ptp(values) == 0.0:
            dropped[term] = "constant"
            logger.warning("Term %s is constant in the audit data; dropped from the design", term)
            continue
        cols.append(values)
        names.append(term)
        blocks.append("continuous")

    for factor in FACTORS:
        if factor in excluded:
            dropped[factor] = "excluded"
            continue
        values = joined[_FACTOR_COLUMN[factor]].astype(str)
        levels = _ordered_levels(factor, values)
        levels_by_factor[factor] = levels
        if len(levels) < 2:
            dropped[factor] = f"single level '{levels[0]}'"
            references[factor] = levels[0]
            logger.warning("Factor %s has a single level (%s); dummy block dropped", factor, levels[0])
            continue
        reference = _choose_reference(factor, levels)
        references[factor] = reference
        raw = values.to_numpy()
        for level in levels:
            if level == reference:
                continue
            cols.append((raw == level).astype(np.float64))
            names.append(term_name(factor, level))
            blocks.append(block_of(factor))

    _, clusters = np.unique(joined["speaker_id"].astype(str).to_numpy(), return_inverse=True)
    return _Regressors(
        columns=tuple(names),
        blocks=tuple(blocks),
        X=np.column_stack(cols),
        clusters=clusters.astype(np.int64),
        reference_levels=references,
        factor_levels=levels_by_factor,
        dropped=dropped,
    )


def _standardized_response(joined: pd.DataFrame, metric: str) -> tuple[np.ndarray, float, float]:
    raw = joined[metric].to_numpy(dtype=np.float64)
    mean = float(raw.mean())
    std = float(raw.std(ddof=0))
    if not std > 0.0:
        raise ConstantColumnError(metric)
    return (raw - mean) / std, mean, std


def _design(joined: pd.DataFrame, reg: _Regressors, metric: str) -> DesignMatrix:
    y, mean, std = _standardized_response(joined, metric)
    return DesignMatrix(
        metric=metric,
        columns=reg.columns,
        blocks=reg.blocks,
        X=reg.X,
        y=y,
        clusters=reg.clusters,
        sample_ids=joined["sample_id"].astype(str).to_numpy(dtype=object),
        model_ids=joined["model_id"].astype(str).to_numpy(dtype=object),
        response_mean=mean,
        response_std=std,
        reference_levels=dict(reg.reference_levels),
        factor_levels={k: list(v) for k, v in reg.factor_levels.items()},
        dropped=dict(reg.dropped),
    )


def build_design(
    features: pd.DataFrame,
    scores: pd.DataFrame,
    metric: str,
    exclude_factors: Iterable[str] = (),
) -> DesignMatrix:
    joined = _join(features, scores, [metric])
    return _design(joined, _regressors(joined, exclude_factors), metric)


def _qr_solve(design: DesignMatrix) -> tuple[np.ndarray, np.ndarray, int]:
    """Коэффициенты и (X'X)^-1 через QR с выбором ведущего столбца."""
    X, y = design.X, design.y
    n, k = X.shape
    if n <= k:
        raise InsufficientDataError(f"Наблюдений ({n}) должно быть больше, чем колонок ({k})")

    Q, R, piv = linalg.qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    tol = diag[0] * max(n, k) * np.finfo(np.float64).eps if diag.size else 0.0
    rank = int(np.sum(diag > tol))
    if rank < k:
        dependent = [design.columns[j] for j in piv[rank:]]
        raise RankDeficiencyError(dependent)

    beta_piv = linalg.solve_triangular(R, Q.T @ y)
    beta = np.empty(k)
    beta[piv] = beta_piv

    r_inv = linalg.solve_triangular(R, np.eye(k))
    cov_piv = r_inv @ r_inv.T
    cov = np.empty((k, k))
    cov[np.ix_(piv, piv)] = cov_piv
    return beta, cov, rank


def cluster_robust_se(design: DesignMatrix, fit: FitResult) -> dict[str, float]:
    """CR1: V = c (X'X)^-1 (sum_g X_g' u_g u_g' X_g) (X'X)^-1."""
    n, k = design.n, design.k
    n_groups = int(design.clusters.max()) + 1 if design.clusters.size else 0
    if n_groups < 2:
        raise InsufficientDataError(f"Для кластерных ошибок нужно хотя бы 2 кластера, получено {n_groups}")

    cov = fit.cov_unscaled
    if cov is None:
        _, cov, _ = _qr_solve(design)

    scores = design.X * fit.residuals[:, None]
    per_cluster = np.zeros((n_groups, k))
    np.add.at(per_cluster, design.clusters, scores)
    meat = per_cluster.T @ per_cluster

    c = (n_groups / (n_groups - 1)) * ((n - 1) / (n - k))
    v = c * (cov @ meat @ cov)
    se = np.sqrt(np.clip(np.diag(v), 0.0, None))
    return dict(zip(design.columns, se.tolist()))


def fit_ols(design: DesignMatrix) -> FitResult:
    beta, cov, rank = _qr_solve(design)
    n, k = design.n, design.k

    fitted = design.X @ beta
    residuals = design.y - fitted
    ssr = float(residuals @ residuals)
    centered = design.y - design.y.mean()
    sst = float(centered @ centered)
    r2 = float(np.clip(1.0 - ssr / sst, 0.0, 1.0)) if sst > 0 else 0.0

    if k < 2:
        f_stat = 0.0
    elif r2 >= 1.0:
        f_stat = float("inf")
    else:
        f_stat = (r2 / (k - 1)) / ((1.0 - r2) / (n - k))

    sigma2 = ssr / (n - k)
    classical = np.sqrt(np.clip(np.diag(cov) * sigma2, 0.0, None))
    n_clusters = int(np.unique(design.clusters).size)

    fit = FitResult(
        metric=design.metric,
        columns=design.columns,
        blocks=dict(zip(design.columns, design.blocks)),
        coefficients=dict(zip(design.columns, beta.tolist())),
        clustered_se={},
        classical_se=dict(zip(design.columns, classical.tolist())),
        r2=r2,
        f_stat=float(f_stat),
        n=n,
        k=k,
        n_clusters=n_clusters,
        rank=rank,
        residuals=residuals,
        fitted=fitted,
        response_mean=design.response_mean,
        response_std=design.response_std,
        reference_levels=dict(design.reference_levels),
        factor_levels={f: list(v) for f, v in design.factor_levels.items()},
        dropped=dict(design.dropped),
        cov_unscaled=cov,
    )
    fit.clustered_se = cluster_robust_se(design, fit)
    logger.debug("Fitted %s: n=%d k=%d clusters=%d r2=%.4f", design.metric, n, k, n_clusters, r2)
    return fit


def fit_all_metrics(
    features: pd.DataFrame,
    scores: pd.DataFrame,
    metrics: Sequence[str] = METRICS,
    exclude_factors: Iterable[str] = (),
) -> dict[str, FitResult]:
    """Одна матрица регрессоров на все метрики, отличаются только отклики."""
    joined = _join(features, scores, metrics)
    reg = _regressors(joined, exclude_factors)
    fits: dict[str, FitResult] = {}
    for metric in metrics:
        fits[metric] = fit_ols(_design(joined, reg, metric))
        logger.info(
            "MEAF fit %s: r2=%.4f f=%.2f n=%d k=%d clusters=%d",
            metric,
            fits[metric].r2,
            fits[metric].f_stat,
            fits[metric].n,
            fits[metric].k,
            fits[metric].n_clusters,
        )
    return fits


def _reference_for(term: str, fit: FitResult) -> str:
    if "[" not in term:
        return ""
    factor = term.split("[", 1)[0]
    return fit.reference_levels.get(factor, "")


def fit_table(fits: Mapping[str, FitResult]) -> tuple[pd.DataFrame, pd.DataFrame]:
    """Плоские таблицы: коэффициенты по термам и сводка качества подгонки."""
    coef_rows: list[dict[str, Any]] = []
    summary_rows: list[dict[str, Any]] = []
    for metric, fit in fits.items():
        for term in fit.columns:
            se = fit.clustered_se.get(term, float("nan"))
            coef = fit.coefficients[term]
            coef_rows.append(
                {
                    "metric": metric,
                    "term": term,
                    "block": fit.blocks.get(term, ""),
                    "coef": coef,
                    "se": se,
                    "classical_se": fit.classical_se.get(term, float("nan")),
                    "t": coef / se if se > 0 else float("nan"),
                    "reference_level": _reference_for(term, fit),
                }
            )
        summary_rows.append(
            {
                "metric": metric,
                "r2": fit.r2,
                "f": fit.f_stat,
                "n": fit.n,
                "k": fit.k,
                "clusters": fit.n_clusters,
            }
        )
    coef_columns = ["metric", "term", "block", "coef", "se", "classical_se", "t", "reference_level"]
    summary_columns = ["metric", "r2", "f", "n", "k", "clusters"]
    return pd.DataFrame(coef_rows, columns=coef_columns), pd.DataFrame(summary_rows, columns=summary_columns)


def fit_to_json(fit: FitResult) -> dict[str, Any]:
    terms: list[dict[str, Any]] = []
    for term in fit.columns:
        entry: dict[str, Any] = {
            "name": term,
            "block": fit.blocks.get(term, ""),
            "coef": fit.coefficients[term],
            "se": fit.clustered_se.get(term),
            "classical_se": fit.classical_se.get(term),
        }
        reference = _reference_for(term, fit)
        if reference:
            entry["reference_level"] = reference
        terms.append(entry)
    return {
        "metric": fit.metric,
        "terms": terms,
        "r2": fit.r2,
        "f": fit.f_stat,
        "n": fit.n,
        "k": fit.k,
        "clusters": fit.n_clusters,
        "rank": fit.rank,
        "response": {"mean": fit.response_mean, "std": fit.response_std},
        "reference_levels": fit.reference_levels,
        "factor_levels": fit.factor_levels,
        "dropped": fit.dropped,
    }


def _num(value: Any) -> float:
    # inf/NaN сохраняются в JSON как null
    return float("nan") if value is None else float(value)


def fit_from_json(data: Mapping[str, Any]) -> FitResult:
    terms = data.get("terms", [])
    columns = tuple(str(t["name"]) for t in terms)
    f_raw = data.get("f")
    r2 = float(data.get("r2", 0.0))
    f_stat = float("inf") if f_raw is None and r2 >= 1.0 else _num(f_raw)
    response = data.get("response", {})
    return FitResult(
        metric=str(data["metric"]),
        columns=columns,
        blocks={str(t["name"]): str(t.get("block", "")) for t in terms},
        coefficients={str(t["name"]): float(t["coef"]) for t in terms},
        clustered_se={str(t["name"]): _num(t.get("se")) for t in terms},
        classical_se={str(t["name"]): _num(t.get("classical_se")) for t in terms},
        r2=r2,
        f_stat=f_stat,
        n=int(data.get("n", 0)),
        k=int(data.get("k", len(columns))),
        n_clusters=int(data.get("clusters", 0)),
        rank=int(data.get("rank", len(columns))),
        response_mean=float(response.get("mean", 0.0)),
        response_std=float(response.get("std", 1.0)),
        reference_levels={str(k): str(v) for k, v in data.get("reference_levels", {}).items()},
        factor_levels={str(k): [str(x) for x in v] for k, v in data.get("factor_levels", {}).items()},
        dropped={str(k): str(v) for k, v in data.get("dropped", {}).items()},
    )
