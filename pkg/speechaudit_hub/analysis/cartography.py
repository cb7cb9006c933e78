"""
Картография по ансамблю моделей: для каждого высказывания средняя ошибка mu
и разброс между моделями sigma (стандартное отклонение по генеральной
совокупности), квадранты по медианам и связь с децилями SDI.
"""

from __future__ import annotations

import logging
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Literal

import numpy as np
import pandas as pd
from scipy import stats

from speechaudit_hub.analysis.figures import decile_colors, decile_label, new_figure, save_svg
from speechaudit_hub.core.exceptions import AuditInputError, InsufficientDataError, JoinError

logger = logging.getLogger(__name__)

Quadrant = Literal["easy", "ambiguous", "hard_consensus"]
QUADRANTS: tuple[str, ...] = ("easy", "ambiguous", "hard_consensus")

# страты для графиков по группам: имя в файле -> (фактор, уровень)
STRATA: dict[str, tuple[str, str]] = {
    "female": ("sex", "female"),
    "nonnative": ("l1", "nonnative"),
    "atypical": ("typicality", "atypical"),
}
TAG_FACTORS: tuple[str, ...] = ("sex", "l1", "typicality")


@dataclass(frozen=True)
class CartographyPoint:
    sample_id: str
    metric: str
    mu: float
    sigma: float
    sdi_decile: int = 0
    quadrant: str = ""
    group_tags: frozenset[str] = field(default_factory=frozenset)


def group_tags(features: pd.DataFrame) -> dict[str, frozenset[str]]:
    return {
        str(row["sample_id"]): frozenset(f"{f}={row[f]}" for f in TAG_FACTORS)
        for row in features.to_dict(orient="records")
    }


def cartography(
    scores: pd.DataFrame,
    metric: str,
    tags: Mapping[str, frozenset[str]] | None = None,
) -> list[CartographyPoint]:
    if metric not in scores.columns:
        raise AuditInputError(f"В таблице оценок нет метрики '{metric}'")

    order = pd.unique(scores["sample_id"].astype(str))
    models = sorted(scores["model_id"].astype(str).unique())
    if len(models) < 2:
        raise InsufficientDataError(f"Для картографии нужно хотя бы 2 модели, получено {len(models)}")

    wide = scores.pivot_table(index="sample_id", columns="model_id", values=metric, aggfunc="first")
    wide = wide.reindex(index=order, columns=models)
    holes = wide.isna().any(axis=1)
    if holes.any():
        raise JoinError(f"оценки '{metric}' для пар (sample, model)", wide.index[holes].tolist())

    values = wide.to_numpy(dtype=np.float64)
    lo = values.min(axis=1)
    hi = values.max(axis=1)
    mu = np.clip(values.mean(axis=1), lo, hi)
    sigma = values.std(axis=1, ddof=0)
    # одинаковые оценки всех моделей: разброс ровно ноль
    same = hi == lo
    sigma[same] = 0.0
    mu[same] = lo[same]

    tags = tags or {}
    return [
        CartographyPoint(
            sample_id=sid,
            metric=metric,
            mu=float(m),
            sigma=float(s),
            group_tags=tags.get(sid, frozenset()),
        )
        for sid, m, s in zip(wide.index, mu, sigma)
    ]


def quadrants_reliable(points: Sequence[CartographyPoint]) -> bool:
    if len(points) < 2:
        return False
    mu = np.array([p.mu for p in points])
    sigma = np.array([p.sigma for p in points])
    return bool(np.ptp(mu) > 0 and np.ptp(sigma) > 0)


def classify_quadrants(points: Sequence[CartographyPoint]) -> list[CartographyPoint]:
    """Пороги по медианам mu и sigma; "высокое" значит строго выше медианы.

    Высокое sigma всегда ambiguous, при любом mu. Среди точек с низким sigma
    высокое mu даёт hard_consensus, низкое easy.
    """
    if not points:
        return []
    mu = np.array([p.mu for p in points])
    sigma = np.array([p.sigma for p in points])
    mu_high = mu > np.median(mu)
    sigma_high = sigma > np.median(sigma)

    if not quadrants_reliable(points):
        logger.warning("Quadrants for %s are unreliable: mu or sigma distribution is degenerate", points[0].metric)

    out: list[CartographyPoint] = []
    for p, mh, sh in zip(points, mu_high, sigma_high):
        if sh:
            quadrant = "ambiguous"
        else:
            quadrant = "hard_consensus" if mh else "easy"
        out.append(replace(p, quadrant=quadrant))
    return out


def attach_deciles(points: Sequence[CartographyPoint], sdi: pd.DataFrame) -> list[CartographyPoint]:
    if not points:
        return []
    metric = points[0].metric
    subset = sdi[sdi["metric"] == metric]
    deciles = dict(zip(subset["sample_id"].astype(str), subset["decile"].astype(int)))
    missing = [p.sample_id for p in points if p.sample_id not in deciles]
    if missing:
        raise JoinError(f"децили SDI для '{metric}'", missing)
    return [replace(p, sdi_decile=deciles[p.sample_id]) for p in points]


def _rank_corr(x: np.ndarray, y: np.ndarray, axis: int = -1) -> np.ndarray:
    # корреляция Пирсона по рангам == Спирмен; векторизовано по перестановкам
    xc = x - x.mean(axis=axis, keepdims=True)
    yc = y - y.mean(axis=axis, keepdims=True)
    num = (xc * yc).sum(axis=axis)
    den = np.sqrt((xc * xc).sum(axis=axis) * (yc * yc).sum(axis=axis))
    return num / den


def spearman_permutation(
    x: Sequence[float],
    y: Sequence[float],
    permutations: int = 10_000,
    seed: int = 0,
) -> tuple[float, float]:
    """rho Спирмена и двусторонний перестановочный p-value."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.size < 3 or np.ptp(x) == 0 or np.ptp(y) == 0:
        return float("nan"), 1.0

    rho = float(stats.spearmanr(x, y).statistic)
    rx = stats.rankdata(x)
    ry = stats.rankdata(y)
    result = stats.permutation_test(
        (rx, ry),
        _rank_corr,
        permutation_type="pairings",
        n_resamples=permutations,
        vectorized=True,
        alternative="two-sided",
        batch=max(1, min(permutations, 2_000_000 // max(x.size, 1))),
        random_state=np.random.default_rng(seed),
    )
    return rho, float(result.pvalue)


@dataclass
class SdiCorrelation:
    metric: str
    n: int
    rho_mu: float
    p_mu: float
    rho_sigma: float
    p_sigma: float
    permutations: int
    seed: int
    deciles: list[dict[str, Any]] = field(default_factory=list)
    quadrant_counts: dict[str, int] = field(default_factory=dict)
    quadrants_reliable: bool = True

    def as_dict(self) -> dict[str, Any]:
        return {
            "metric": self.metric,
            "n": self.n,
            "spearman_sdi_mu": {"rho": self.rho_mu, "p": self.p_mu},
            "spearman_sdi_sigma": {"rho": self.rho_sigma, "p": self.p_sigma},
            "permutations": self.permutations,
            "seed": self.seed,
            "deciles": self.deciles,
            "quadrants": self.quadrant_counts,
            "quadrants_reliable": self.quadrants_reliable,
            "quadrant_thresholds": "median",
        }


def decile_table(points: Sequence[CartographyPoint]) -> list[dict[str, Any]]:
    frame = pd.DataFrame({"decile": [p.sdi_decile for p in points], "mu": [p.mu for p in points], "sigma": [p.sigma for p in points]})
    grouped = frame.groupby("decile", sort=True).agg(n=("mu", "size"), mean_mu=("mu", "mean"), mean_sigma=("sigma", "mean"))
    return [
        {"decile": int(d), "n": int(r.n), "mean_mu": float(r.mean_mu), "mean_sigma": float(r.mean_sigma)}
        for d, r in grouped.iterrows()
    ]


def correlate_sdi(
    points: Sequence[CartographyPoint],
    sdi: pd.DataFrame,
    permutations: int = 10_000,
    seed: int = 0,
) -> SdiCorrelation:
    if not points:
        raise InsufficientDataError("Нет точек картографии для корреляции с SDI")
    metric = points[0].metric
    subset = sdi[sdi["metric"] == metric]
    values = dict(zip(subset["sample_id"].astype(str), subset["sdi"].astype(float)))
    missing = [p.sample_id for p in points if p.sample_id not in values]
    if missing:
        raise JoinError(f"значения SDI для '{metric}'", missing)

    x = [values[p.sample_id] for p in points]
    rho_mu, p_mu = spearman_permutation(x, [p.mu for p in points], permutations, seed)
    rho_sigma, p_sigma = spearman_permutation(x, [p.sigma for p in points], permutations, seed)

    counts = {q: 0 for q in QUADRANTS}
    for p in points:
        if p.quadrant:
            counts[p.quadrant] += 1
    # hard не отдельный квадрант: все точки с высоким mu, включая ambiguous
    mu = np.array([p.mu for p in points])
    counts["hard"] = int((mu > np.median(mu)).sum())

    return SdiCorrelation(
        metric=metric,
        n=len(points),
        rho_mu=rho_mu,
        p_mu=p_mu,
        rho_sigma=rho_sigma,
        p_sigma=p_sigma,
        permutations=permutations,
        seed=seed,
        deciles=decile_table(points),
        quadrant_counts=counts,
        quadrants_reliable=quadrants_reliable(points),
    )


def cartography_frame(points: Iterable[CartographyPoint]) -> pd.DataFrame:
    rows = [
        {
            "sample_id": p.sample_id,
            "metric": p.metric,
            "mu": p.mu,
            "sigma": p.sigma,
            "quadrant": p.quadrant,
            "sdi_decile": p.sdi_decile,
        }
        for p in points
    ]
    return pd.DataFrame(rows, columns=["sample_id", "metric", "mu", "sigma", "quadrant", "sdi_decile"])


def stratum(points: Iterable[CartographyPoint], name: str) -> list[CartographyPoint]:
    factor, level = STRATA[name]
    tag = f"{factor}={level}"
    return [p for p in points if tag in p.group_tags]


def emit_cartography_svg(
    points: Sequence[CartographyPoint],
    path: str | Path,
    color_by: Literal["sdi_decile", "group_tag"] = "sdi_decile",
    tag_factor: str = "sex",
    title: str | None = None,
) -> None:
    """Диаграмма mu/sigma; одна группа точек на цвет, id групп начинаются с "points-"."""
    if not points:
        raise InsufficientDataError("Нет точек для графика картографии")
    metric = points[0].metric

    fig = new_figure()
    ax = fig.add_subplot(1, 1, 1)

    if color_by == "sdi_decile":
        colors = decile_colors()
        for decile in range(1, len(colors) + 1):
            group = [p for p in points if p.sdi_decile == decile]
            ax.scatter(
                [p.mu for p in group],
                [p.sigma for p in group],
                s=14,
                color=colors[decile - 1],
                label=decile_label(decile),
                gid=f"points-d{decile:02d}",
            )
        legend_title = "SDI decile"
    elif color_by == "group_tag":
        prefix = f"{tag_factor}="
        levels = sorted({t[len(prefix):] for p in points for t in p.group_tags if t.startswith(prefix)})
        for i, level in enumerate(levels):
            group = [p for p in points if f"{prefix}{level}" in p.group_tags]
            ax.scatter(
                [p.mu for p in group],
                [p.sigma for p in group],
                s=14,
                color=f"C{i}",
                label=level,
                gid=f"points-{tag_factor}-{level}",
            )
        legend_title = tag_factor
    else:
        raise AuditInputError(f"Неизвестный режим раскраски '{color_by}'")

    ax.set_xlabel(f"mean {metric} across models (mu)")
    ax.set_ylabel("inter-model std (sigma)")
    ax.set_title(title or f"Cartography: {metric}")
    ax.legend(title=legend_title, fontsize=7, title_fontsize=8, loc="upper left", bbox_to_anchor=(1.01, 1.0))
    fig.tight_layout()
    save_svg(fig, path)
