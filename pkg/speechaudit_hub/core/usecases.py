from __future__ import annotations

import logging
from pathlib import Path
from typing import Any

import pandas as pd

from speechaudit_hub.analysis.cartography import (
    STRATA,
    attach_deciles,
    cartography,
    cartography_frame,
    classify_quadrants,
    correlate_sdi,
    emit_cartography_svg,
    group_tags,
    stratum,
)
from speechaudit_hub.analysis.config import AuditConfig
from speechaudit_hub.analysis.features import build_features, dataset_profile, load_age_bins, read_features
from speechaudit_hub.analysis.meaf import fit_all_metrics, fit_from_json, fit_table, fit_to_json
from speechaudit_hub.analysis.pca import emit_loadings_figure, emit_scores_figure, pca_metrics
from speechaudit_hub.analysis.report import (
    ReportInputs,
    build_report,
    dataset_metric_summary,
    diversity_tax,
)
from speechaudit_hub.analysis.sdi import compute_sdi, degenerate_metrics, read_sdi, sdi_frame
from speechaudit_hub.analysis.synthetic import generate_corpus, write_corpus
from speechaudit_hub.analysis.wada import TABLE_FILE, write_wada_table
from speechaudit_hub.core.ingest import (
    load_embeddings,
    load_manifest,
    load_sentence_vectors,
    read_scores,
    write_scores,
)
from speechaudit_hub.core.metrics import SentenceVectors, flag_summary, score_all
from speechaudit_hub.core.models import METRICS, EmbERConfig
from speechaudit_hub.decorators import log_action
from speechaudit_hub.infra.run_store import PIPELINE, RunStore
from speechaudit_hub.infra.settings import SettingsLoader
from speechaudit_hub.infra.storage import write_csv, write_json, write_text

logger = logging.getLogger(__name__)


def _records(config: AuditConfig):
    config.require_paths("manifest")
    return load_manifest(config.manifest, config.manifest_format or None)


def _inputs(config: AuditConfig, *names: str) -> dict[str, str]:
    return {n: getattr(config, n) for n in names if getattr(config, n)}


def _load_fits(store: RunStore) -> dict[str, Any]:
    data = store.load_json("fits.json", key="metrics")
    return {f["metric"]: fit_from_json(f) for f in data.get("metrics", [])}


@log_action("SCORE", verbose=True)
def cmd_score(config: AuditConfig) -> dict[str, Any]:
    config.require_paths("manifest", "embeddings")
    if config.sentence_vectors:
        config.require_paths("sentence_vectors")

    records = _records(config)
    emb = load_embeddings(config.embeddings)
    precomputed = load_sentence_vectors(config.sentence_vectors) if config.sentence_vectors else None
    provider = SentenceVectors(emb, precomputed)
    cfg = EmbERConfig(similarity_threshold=config.ember_threshold, similar_sub_weight=config.ember_sub_weight)

    scores = score_all(records, emb, cfg, provider)
    flags = flag_summary(scores)

    store = RunStore(config.output_dir)
    write_scores(scores, store.path("scores.csv"))
    write_json(store.path("score_flags.json"), flags)
    artifacts = ["scores.csv", "score_flags.json"]
    store.record_run("score", config, _inputs(config, "manifest", "embeddings", "sentence_vectors"), artifacts)

    return {
        "rows": len(scores),
        "samples": len(records),
        "models": records[0].model_ids if records else [],
        "empty_ref": flags["empty_ref"],
        "oov_sentence": flags["oov_sentence"],
        "means": {m: float(scores[m].mean()) for m in METRICS} if len(scores) else {},
        "artifacts": artifacts,
        "output_dir": str(store.root),
    }


@log_action("FEATURES", verbose=True)
def cmd_features(config: AuditConfig) -> dict[str, Any]:
    records = _records(config)
    if config.age_bins:
        config.require_paths("age_bins")
    bins = load_age_bins(config.age_bins or None)
    features, stats = build_features(records, snr_source=config.snr_source, age_bins=bins)  # type: ignore[arg-type]
    profile = dataset_profile(features)

    store = RunStore(config.output_dir)
    write_csv(store.path("features.csv"), features)
    write_json(store.path("standardization.json"), {"snr_source": config.snr_source, **stats.to_json()})
    write_csv(store.path("dataset_profile.csv"), profile)
    artifacts = ["features.csv", "standardization.json", "dataset_profile.csv"]
    store.record_run("features", config, _inputs(config, "manifest", "age_bins"), artifacts)

    return {
        "rows": len(features),
        "samples": len(features),
        "datasets": profile["dataset_id"].tolist(),
        "snr_from_wada": int((features["snr_origin"] == "wada").sum()),
        "missing_ages": int(features["x_miss"].sum()),
        "artifacts": artifacts,
        "output_dir": str(store.root),
    }


@log_action("FIT", verbose=True)
def cmd_fit(config: AuditConfig) -> dict[str, Any]:
    store = RunStore(config.output_dir)
    scores = read_scores(store.require("scores.csv"))
    features = read_features(store.require("features.csv"))

    fits = fit_all_metrics(features, scores)
    coefficients, summary = fit_table(fits)

    write_json(store.path("fits.json"), {"metrics": [fit_to_json(f) for f in fits.values()]})
    write_csv(store.path("coefficients.csv"), coefficients)
    write_csv(store.path("fit_summary.csv"), summary)
    artifacts = ["fits.json", "coefficients.csv", "fit_summary.csv"]
    store.record_run("fit", config, {}, artifacts)

    return {
        "rows": next(iter(fits.values())).n if fits else 0,
        "metrics": list(fits),
        "summary": summary.to_dict(orient="records"),
        "artifacts": artifacts,
        "output_dir": str(store.root),
    }


@log_action("SDI", verbose=True)
def cmd_sdi(config: AuditConfig) -> dict[str, Any]:
    store = RunStore(config.output_dir)
    fits = _load_fits(store)
    features = read_features(store.require("features.csv"))

    scores = compute_sdi(features, fits, scope=config.decile_scope)  # type: ignore[arg-type]
    write_csv(store.path("sdi.csv"), sdi_frame(scores))
    artifacts = ["sdi.csv"]
    store.record_run("sdi", config, {}, artifacts)

    return {
        "rows": len(scores),
        "metrics": list(fits),
        "scope": config.decile_scope,
        "degenerate": degenerate_metrics(scores),
        "artifacts": artifacts,
        "output_dir": str(store.root),
    }


@log_action("CARTOGRAPHY", verbose=True)
def cmd_cartography(config: AuditConfig) -> dict[str, Any]:
    store = RunStore(config.output_dir)
    scores = read_scores(store.require("scores.csv"))
    sdi = read_sdi(str(store.require("sdi.csv")))
    features = read_features(store.require("features.csv"))
    tags = group_tags(features)

    frames: list[pd.DataFrame] = []
    summaries: list[dict[str, Any]] = []
    figures: list[str] = []
    strata: dict[str, int] = {}
    for metric in METRICS:
        points = attach_deciles(classify_quadrants(cartography(scores, metric, tags)), sdi)
        frames.append(cartography_frame(points))
        summaries.append(correlate_sdi(points, sdi, config.permutations, config.seed).as_dict())

        name = f"cartography_{metric}.svg"
        emit_cartography_svg(points, store.path(name))
        figures.append(name)

        if metric != config.stratify_metric:
            continue
        for stratum_name in STRATA:
            subset = stratum(points, stratum_name)
            strata[stratum_name] = len(subset)
            if not subset:
                logger.warning("Stratum %s is empty; figure skipped", stratum_name)
                continue
            name = f"cartography_{metric}_{stratum_name}.svg"
            emit_cartography_svg(subset, store.path(name), title=f"Cartography: {metric}, {stratum_name} only")
            figures.append(name)

    write_csv(store.path("cartography.csv"), pd.concat(frames, ignore_index=True))
    write_json(
        store.path("cartography_summary.json"),
        {"stratify_metric": config.stratify_metric, "strata": strata, "metrics": summaries},
    )
    artifacts = ["cartography.csv", "cartography_summary.json", *figures]
    store.record_run("cartography", config, {}, artifacts)

    return {
        "rows": sum(len(f) for f in frames),
        "metrics": list(METRICS),
        "correlations": [
            {"metric": s["metric"], "rho": s["spearman_sdi_mu"]["rho"], "p": s["spearman_sdi_mu"]["p"]}
            for s in summaries
        ],
        "artifacts": artifacts,
        "output_dir": str(store.root),
    }


@log_action("PCA", verbose=True)
def cmd_pca(config: AuditConfig) -> dict[str, Any]:
    store = RunStore(config.output_dir)
    scores = read_scores(store.require("scores.csv"))
    features = read_features(store.require("features.csv"))

    result = pca_metrics(scores)
    write_csv(store.path("pca_loadings.csv"), result.loadings_frame())
    write_csv(store.path("pca_variance.csv"), result.variance_frame())
    emit_loadings_figure(result, store.path("pca_loadings.svg"))
    dataset_of = dict(zip(features["sample_id"].astype(str), features["dataset_id"].astype(str)))
    emit_scores_figure(scores, result, store.path("pca_scores.svg"), dataset_of)

    artifacts = ["pca_loadings.csv", "pca_variance.csv", "pca_loadings.svg", "pca_scores.svg"]
    store.record_run("pca", config, {}, artifacts)
    return {
        "rows": len(scores),
        "explained_variance_ratio": result.explained_variance_ratio.tolist(),
        "top3": float(result.explained_variance_ratio[:3].sum()),
        "artifacts": artifacts,
        "output_dir": str(store.root),
    }


_REPORT_NEEDS = (
    "scores.csv",
    "score_flags.json",
    "features.csv",
    "dataset_profile.csv",
    "fits.json",
    "coefficients.csv",
    "fit_summary.csv",
    "sdi.csv",
    "cartography_summary.json",
    "pca_loadings.csv",
    "pca_variance.csv",
)


def _build_missing(config: AuditConfig, store: RunStore) -> list[str]:
    missing = store.missing_commands(_REPORT_NEEDS)
    if not missing:
        return []
    # всё, что ниже по конвейеру от первой недостающей команды, пересобираем
    start = PIPELINE.index(missing[0])
    ran: list[str] = []
    for command in PIPELINE[start:]:
        if command == "report":
            break
        _COMMANDS[command](config)
        ran.append(command)
    return ran


@log_action("REPORT", verbose=True)
def cmd_report(config: AuditConfig) -> dict[str, Any]:
    store = RunStore(config.output_dir)
    built = _build_missing(config, store) if config.build_missing else []
    for name in _REPORT_NEEDS:
        store.require(name)

    scores = read_scores(store.path("scores.csv"))
    features = read_features(store.path("features.csv"))
    tax = diversity_tax(scores, features)
    per_dataset = dataset_metric_summary(scores, features)
    write_csv(store.path("diversity_tax.csv"), tax)
    write_csv(store.path("dataset_metrics.csv"), per_dataset)

    fits = store.load_json("fits.json", key="metrics")["metrics"]
    cart = store.load_json("cartography_summary.json", key="metrics")
    figure_names = [f"cartography_{m}.svg" for m in METRICS]
    figure_names += [f"cartography_{config.stratify_metric}_{s}.svg" for s in STRATA]
    figure_names += ["pca_loadings.svg", "pca_scores.svg"]

    inputs = ReportInputs(
        config=config.as_dict(),
        config_hash=config.config_hash(),
        flag_summary=store.load_json("score_flags.json"),
        profile=pd.read_csv(store.path("dataset_profile.csv"), dtype={"dataset_id": str}),
        dataset_metrics=per_dataset,
        coefficients=pd.read_csv(store.path("coefficients.csv"), keep_default_na=False, na_values={"se": [""], "t": [""]}),
        fit_summary=pd.read_csv(store.path("fit_summary.csv")),
        reference_levels=fits[0].get("reference_levels", {}) if fits else {},
        dropped={f["metric"]: f.get("dropped", {}) for f in fits},
        diversity=tax,
        correlations=cart.get("metrics", []),
        stratify_metric=str(cart.get("stratify_metric", config.stratify_metric)),
        pca_variance=pd.read_csv(store.path("pca_variance.csv")),
        pca_loadings=pd.read_csv(store.path("pca_loadings.csv")),
        figures=[n for n in figure_names if store.exists(n)],
        percent=config.report_percent,
    )
    write_text(store.path("report.md"), build_report(inputs))

    artifacts = ["diversity_tax.csv", "dataset_metrics.csv", "report.md"]
    store.record_run("report", config, {}, artifacts)
    return {
        "built": built,
        "artifacts": artifacts,
        "output_dir": str(store.root),
    }


_COMMANDS = {
    "score": cmd_score,
    "features": cmd_features,
    "fit": cmd_fit,
    "sdi": cmd_sdi,
    "cartography": cmd_cartography,
    "pca": cmd_pca,
    "report": cmd_report,
}


def run_command(name: str, config: AuditConfig) -> dict[str, Any]:
    return _COMMANDS[name](config)


@log_action("GEN_SYNTHETIC", verbose=True)
def cmd_gen_synthetic(
    output_dir: str | Path,
    n_utterances: int = 40,
    n_models: int = 4,
    n_datasets: int = 2,
    seed: int = 0,
    wav_share: float = 0.25,
) -> dict[str, Any]:
    corpus = generate_corpus(
        n_utterances=n_utterances,
        n_models=n_models,
        n_datasets=n_datasets,
        seed=seed,
        wav_share=wav_share,
    )
    return write_corpus(corpus, output_dir)


@log_action("GEN_WADA_TABLE")
def cmd_gen_wada_table(path: str | Path | None = None, n_quantiles: int = 1 << 16) -> dict[str, Any]:
    """Пересчёт таблицы WADA-SNR; по умолчанию в OUTPUT_ROOT/wada_table.csv."""
    target = Path(path) if path else Path(SettingsLoader().get("OUTPUT_ROOT", "runs")) / TABLE_FILE
    table = write_wada_table(target, n_quantiles=n_quantiles)
    return {"path": str(target), "rows": len(table)}
