from __future__ import annotations

import logging
import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from typing import Any

import pandas as pd
from prettytable import PrettyTable, TableStyle

from speechaudit_hub.analysis.meaf import DEMOGRAPHIC_FACTORS
from speechaudit_hub.core.models import METRICS

logger = logging.getLogger(__name__)

TAIL_WER = 0.5

_REFERENCE: dict[str, str] = {"sex": "female", "l1": "native", "typicality": "typical"}


def diversity_tax(scores: pd.DataFrame, features: pd.DataFrame, metrics: Sequence[str] = METRICS) -> pd.DataFrame:
    """Средние метрик по демографическим уровням и моделям и разрыв с опорным уровнем."""
    joined = scores.merge(features.loc[:, ["sample_id", *DEMOGRAPHIC_FACTORS]], on="sample_id", how="inner")
    rows: list[dict[str, Any]] = []
    for factor in DEMOGRAPHIC_FACTORS:
        reference = _REFERENCE[factor]
        means = joined.groupby([factor, "model_id"], sort=True)[list(metrics)].mean()
        counts = joined.groupby([factor, "model_id"], sort=True).size()
        for (level, model_id), values in means.iterrows():
            ref_key = (reference, model_id)
            for metric in metrics:
                ref_mean = means.at[ref_key, metric] if ref_key in means.index else math.nan
                rows.append(
                    {
                        "factor": factor,
                        "level": level,
                        "reference_level": reference,
                        "model_id": model_id,
                        "metric": metric,
                        "n": int(counts[(level, model_id)]),
                        "mean": float(values[metric]),
                        "gap": float(values[metric] - ref_mean),
                    }
                )
    columns = ["factor", "level", "reference_level", "model_id", "metric", "n", "mean", "gap"]
    return pd.DataFrame(rows, columns=columns)


def dataset_metric_summary(scores: pd.DataFrame, features: pd.DataFrame, metrics: Sequence[str] = METRICS) -> pd.DataFrame:
    joined = scores.merge(features.loc[:, ["sample_id", "dataset_id"]], on="sample_id", how="inner")
    rows: list[dict[str, Any]] = []
    for (dataset_id, model_id), group in joined.groupby(["dataset_id", "model_id"], sort=True):
        tail = float((group["wer"] > TAIL_WER).mean())
        for metric in metrics:
            values = group[metric].to_numpy(dtype=float)
            rows.append(
                {
                    "dataset_id": dataset_id,
                    "model_id": model_id,
                    "metric": metric,
                    "n": len(values),
                    "mean": float(values.mean()),
                    "std": float(values.std(ddof=0)),
                    "tail_share": tail,
                }
            )
    return pd.DataFrame(rows, columns=["dataset_id", "model_id", "metric", "n", "mean", "std", "tail_share"])


def _fmt(value: Any, digits: int) -> str:
    if isinstance(value, float):
        if math.isnan(value):
            return "n/a"
        if math.isinf(value):
            return "inf"
        return f"{value:.{digits}f}"
    return str(value)


def markdown_table(frame: pd.DataFrame, digits: int = 4) -> str:
    table = PrettyTable()
    table.set_style(TableStyle.MARKDOWN)
    table.field_names = [str(c) for c in frame.columns]
    for row in frame.itertuples(index=False):
        table.add_row([_fmt(v, digits) for v in row])
    return table.get_string()


@dataclass
class ReportInputs:
    config: dict[str, Any]
    config_hash: str
    flag_summary: dict[str, Any]
    profile: pd.DataFrame
    dataset_metrics: pd.DataFrame
    coefficients: pd.DataFrame
    fit_summary: pd.DataFrame
    reference_levels: dict[str, str]
    dropped: dict[str, dict[str, str]]
    diversity: pd.DataFrame
    correlations: list[dict[str, Any]]
    stratify_metric: str
    pca_variance: pd.DataFrame
    pca_loadings: pd.DataFrame
    figures: list[str] = field(default_factory=list)
    percent: bool = False


def _scaled(frame: pd.DataFrame, columns: Sequence[str], percent: bool) -> pd.DataFrame:
    # x100 только при выводе, артефакты остаются в долях
    if not percent:
        return frame
    out = frame.copy()
    for c in columns:
        out[c] = out[c] * 100.0
    return out


def _coefficient_view(coefficients: pd.DataFrame) -> pd.DataFrame:
    view = coefficients.copy()
    view["cell"] = [f"{c:+.3f} ({s:.3f})" for c, s in zip(view["coef"], view["se"])]
    wide = view.pivot(index="term", columns="metric", values="cell")
    order = list(dict.fromkeys(view["term"]))
    metric_order = [m for m in METRICS if m in wide.columns]
    wide = wide.reindex(index=order, columns=metric_order).reset_index()
    return wide


def _correlation_view(correlations: Sequence[Mapping[str, Any]]) -> pd.DataFrame:
    rows = []
    for c in correlations:
        q = c.get("quadrants", {})
        rows.append(
            {
                "metric": c["metric"],
                "rho(SDI, mu)": c["spearman_sdi_mu"]["rho"],
                "p(mu)": c["spearman_sdi_mu"]["p"],
                "rho(SDI, sigma)": c["spearman_sdi_sigma"]["rho"],
                "p(sigma)": c["spearman_sdi_sigma"]["p"],
                "easy": q.get("easy", 0),
                "ambiguous": q.get("ambiguous", 0),
                "hard": q.get("hard", 0),
                "hard_consensus": q.get("hard_consensus", 0),
            }
        )
    return pd.DataFrame(rows)


def build_report(inputs: ReportInputs) -> str:
    pct = inputs.percent
    lines: list[str] = ["# Аудит ASR: отчёт", ""]
    lines.append(f"- Хеш конфигурации: `{inputs.config_hash}`")
    lines.append(f"- Seed: {inputs.config.get('seed')}")
    lines.append(f"- Источник SNR: {inputs.config.get('snr_source')}")
    lines.append(f"- Децили SDI: {inputs.config.get('decile_scope')}")
    lines.append(f"- Метрики в {'процентах' if pct else 'долях'}")
    lines.append("")

    lines += ["## Профиль наборов данных", "", markdown_table(inputs.profile, 3), ""]

    means = inputs.dataset_metrics.pivot_table(
        index=["dataset_id", "model_id"], columns="metric", values="mean", sort=True
    ).reindex(columns=[m for m in METRICS]).reset_index()
    lines += ["## Метрики по наборам данных и моделям", ""]
    lines += [markdown_table(_scaled(means, list(METRICS), pct), 3), ""]

    flags = inputs.flag_summary
    lines += [
        "## Флаги оценивания",
        "",
        f"- Пар (высказывание, модель): {flags.get('rows', 0)}",
        f"- Пустой эталон (empty_ref): {flags.get('empty_ref', 0)}",
        f"- Предложение вне словаря (oov_sentence): {flags.get('oov_sentence', 0)}",
        "",
    ]

    lines += ["## MEAF: эластичность метрик", ""]
    refs = ", ".join(f"{k}={v}" for k, v in sorted(inputs.reference_levels.items()))
    lines.append(f"Опорные уровни: {refs}. В скобках указаны кластерные (по спикеру, CR1) стандартные ошибки.")
    lines.append("")
    lines += [markdown_table(_coefficient_view(inputs.coefficients)), ""]
    lines += [markdown_table(inputs.fit_summary, 4), ""]
    dropped = sorted({(term, reason) for per_metric in inputs.dropped.values() for term, reason in per_metric.items()})
    if dropped:
        lines.append("Исключённые термы: " + "; ".join(f"{t} ({r})" for t, r in dropped))
        lines.append("")

    tax = inputs.diversity[inputs.diversity["level"] != inputs.diversity["reference_level"]]
    tax = tax.pivot_table(index=["factor", "level", "model_id"], columns="metric", values="gap", sort=True)
    tax = tax.reindex(columns=[m for m in METRICS if m in tax.columns]).reset_index()
    lines += ["## Налог на разнообразие (разница средних с опорным уровнем)", ""]
    lines += [markdown_table(_scaled(tax, [m for m in METRICS if m in tax.columns], pct), 3), ""]

    lines += ["## SDI и картография", ""]
    lines.append("Квадранты по медианам mu и sigma: easy (низкие mu и sigma), ambiguous (высокое sigma при любом mu), "
                 "hard_consensus (высокое mu, низкое sigma). Колонка hard считает все точки с высоким mu.")
    lines.append("")
    lines += [markdown_table(_correlation_view(inputs.correlations), 4), ""]
    for c in inputs.correlations:
        if c["metric"] == inputs.stratify_metric:
            lines += [f"Средние mu и sigma по децилям SDI ({c['metric']}):", ""]
            lines += [markdown_table(pd.DataFrame(c["deciles"]), 4), ""]

    lines += ["## PCA метрик", ""]
    lines += [markdown_table(inputs.pca_variance, 4), ""]
    lines += [markdown_table(inputs.pca_loadings, 3), ""]

    if inputs.figures:
        lines += ["## Графики", ""]
        lines += [f"![{name}]({name})" for name in inputs.figures]
        lines.append("")

    logger.debug("Report built: %d lines", len(lines))
    return "\n".join(lines)
