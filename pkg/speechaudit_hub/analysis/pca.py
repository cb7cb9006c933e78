from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd
from scipy import linalg

from speechaudit_hub.analysis.figures import new_figure, save_svg
from speechaudit_hub.core.exceptions import AuditInputError, ConstantColumnError, InsufficientDataError
from speechaudit_hub.core.models import METRICS

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PcaResult:
    metrics: tuple[str, ...]
    loadings: np.ndarray
    eigenvalues: np.ndarray
    explained_variance_ratio: np.ndarray
    means: np.ndarray
    stds: np.ndarray

    @property
    def n_components(self) -> int:
        return int(self.loadings.shape[1])

    def component_names(self) -> list[str]:
        return [f"PC{i + 1}" for i in range(self.n_components)]

    def loadings_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.loadings, columns=self.component_names())
        frame.insert(0, "metric", list(self.metrics))
        return frame

    def variance_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "component": self.component_names(),
                "eigenvalue": self.eigenvalues,
                "explained_variance_ratio": self.explained_variance_ratio,
                "cumulative_ratio": np.cumsum(self.explained_variance_ratio),
            }
        )


def _matrix(scores: pd.DataFrame, metrics: Sequence[str]) -> np.ndarray:
    missing = [m for m in metrics if m not in scores.columns]
    if missing:
        raise AuditInputError(f"В таблице оценок нет метрик: {missing}")
    return scores.loc[:, list(metrics)].to_numpy(dtype=np.float64)


def standardize(values: np.ndarray, means: np.ndarray, stds: np.ndarray) -> np.ndarray:
    return (values - means) / stds


def pca_metrics(scores: pd.DataFrame, metrics: Sequence[str] = METRICS) -> PcaResult:
    """PCA по корреляционной матрице метрик (все строки пар высказывание/модель)."""
    values = _matrix(scores, metrics)
    n, p = values.shape
    if n <= p:
        raise InsufficientDataError(f"Для PCA нужно больше {p} строк, получено {n}")

    means = values.mean(axis=0)
    stds = values.std(axis=0, ddof=0)
    for metric, sd in zip(metrics, stds):
        if not sd > 0.0:
            raise ConstantColumnError(metric)

    z = standardize(values, means, stds)
    corr = (z.T @ z) / n
    eigenvalues, vectors = linalg.eigh(corr)

    order = np.argsort(eigenvalues)[::-1]
    eigenvalues = np.clip(eigenvalues[order], 0.0, None)
    vectors = vectors[:, order]

    # знак: наибольшая по модулю компонента каждого столбца положительна
    lead = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[lead, np.arange(p)])
    signs[signs == 0] = 1.0
    vectors = vectors * signs

    ratio = eigenvalues / eigenvalues.sum()
    logger.info(
        "PCA on %d rows: top-3 explained variance %.3f",
        n,
        float(ratio[:3].sum()),
    )
    return PcaResult(
        metrics=tuple(metrics),
        loadings=vectors,
        eigenvalues=eigenvalues,
        explained_variance_ratio=ratio,
        means=means,
        stds=stds,
    )


def project(scores: pd.DataFrame | np.ndarray, result: PcaResult, n_components: int = 3) -> np.ndarray:
    if not 1 <= n_components <= result.n_components:
        raise AuditInputError(f"n_components должно быть от 1 до {result.n_components}")
    values = scores if isinstance(scores, np.ndarray) else _matrix(scores, result.metrics)
    z = standardize(np.asarray(values, dtype=np.float64), result.means, result.stds)
    return z @ result.loadings[:, :n_components]


def reconstruct(projected: np.ndarray, result: PcaResult) -> np.ndarray:
    """Обратное отображение в стандартизованное пространство метрик."""
    k = projected.shape[1]
    return projected @ result.loadings[:, :k].T


def _percent(result: PcaResult, i: int) -> str:
    return f"PC{i + 1} ({100.0 * result.explained_variance_ratio[i]:.1f}%)"


def emit_loadings_figure(result: PcaResult, path: str | Path) -> None:
    """Нагрузки метрик на три первые компоненты: PC1/PC2 и PC1/PC3."""
    fig = new_figure(figsize=(10.0, 4.8))
    for panel, other in enumerate((1, 2)):
        ax = fig.add_subplot(1, 2, panel + 1)
        if other >= result.n_components:
            continue
        xs = result.loadings[:, 0]
        ys = result.loadings[:, other]
        for metric, x, y in zip(result.metrics, xs, ys):
            ax.annotate("", xy=(x, y), xytext=(0.0, 0.0), arrowprops={"arrowstyle": "->", "color": "C0"})
            ax.text(x * 1.08, y * 1.08, metric, ha="center", va="center", fontsize=9)
        ax.axhline(0.0, color="0.8", linewidth=0.8)
        ax.axvline(0.0, color="0.8", linewidth=0.8)
        ax.set_xlim(-1.1, 1.1)
        ax.set_ylim(-1.1, 1.1)
        ax.set_aspect("equal")
        ax.set_xlabel(_percent(result, 0))
        ax.set_ylabel(_percent(result, other))
    top3 = 100.0 * float(result.explained_variance_ratio[:3].sum())
    fig.suptitle(f"Metric loadings (top-3 components: {top3:.1f}% of variance)")
    fig.tight_layout()
    save_svg(fig, path)


def emit_scores_figure(scores: pd.DataFrame, result: PcaResult, path: str | Path, dataset_of: dict[str, str] | None = None) -> None:
    """Проекция строк на PC1/PC2: цвет по набору данных, маркер по модели, поверх векторы нагрузок."""
    coords = project(scores, result, n_components=2)
    datasets = (
        scores["sample_id"].astype(str).map(dataset_of).fillna("").to_numpy()
        if dataset_of is not None
        else np.full(len(scores), "", dtype=object)
    )
    models = scores["model_id"].astype(str).to_numpy()
    markers = ("o", "s", "^", "D", "v", "P", "X", "*")

    fig = new_figure(figsize=(7.2, 5.4))
    ax = fig.add_subplot(1, 1, 1)
    for i, dataset in enumerate(sorted(set(datasets))):
        for j, model in enumerate(sorted(set(models))):
            mask = (datasets == dataset) & (models == model)
            if not mask.any():
                continue
            ax.scatter(
                coords[mask, 0],
                coords[mask, 1],
                s=8,
                alpha=0.6,
                color=f"C{i % 10}",
                marker=markers[j % len(markers)],
                label=f"{dataset or 'all'} / {model}",
                gid=f"points-{dataset or 'all'}-{model}",
            )

    scale = float(np.abs(coords).max()) if coords.size else 1.0
    for metric, (x, y) in zip(result.metrics, result.loadings[:, :2]):
        ax.annotate("", xy=(x * scale, y * scale), xytext=(0.0, 0.0), arrowprops={"arrowstyle": "->", "color": "black"})
        ax.text(x * scale * 1.05, y * scale * 1.05, metric, fontsize=8)

    ax.set_xlabel(_percent(result, 0))
    ax.set_ylabel(_percent(result, 1))
    ax.set_title("Latent space of ASR performance")
    ax.legend(fontsize=6, loc="upper left", bbox_to_anchor=(1.01, 1.0))
    fig.tight_layout()
    save_svg(fig, path)
