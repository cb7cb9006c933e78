from __future__ import annotations

import logging

import numpy as np
import pandas as pd
import pytest
import statsmodels.api as sm

from speechaudit_hub.analysis.features import build_features
from speechaudit_hub.analysis.meaf import (
    DesignMatrix,
    build_design,
    fit_all_metrics,
    fit_from_json,
    fit_ols,
    fit_table,
    fit_to_json,
)
from speechaudit_hub.analysis.synthetic import generate_corpus
from speechaudit_hub.core.exceptions import (
    ConfigError,
    InsufficientDataError,
    JoinError,
    RankDeficiencyError,
)
from speechaudit_hub.core.models import METRICS

MODELS = ("m1", "m2", "m3", "m4")


def toy_features(n: int = 40, seed: int = 0) -> pd.DataFrame:
    rng = np.random.default_rng(seed)
    idx = np.arange(n)
    return pd.DataFrame(
        {
            "sample_id": [f"u{i:03d}" for i in idx],
            "speaker_id": [f"s{i // 2:03d}" for i in idx],
            "dataset_id": np.where((idx // 8) % 2 == 0, "d1", "d2"),
            "x_snr": rng.standard_normal(n),
            "x_len": rng.standard_normal(n),
            "x_age": rng.standard_normal(n),
            "x_miss": (idx % 5 == 0).astype(int),
            "sex": np.where(idx % 2 == 0, "female", "male"),
            "l1": np.where((idx // 2) % 2 == 0, "native", "nonnative"),
            "typicality": np.where((idx // 4) % 2 == 0, "typical", "atypical"),
        }
    )


def toy_scores(features: pd.DataFrame, seed: int = 1) -> pd.DataFrame:
    rng = np.random.default_rng(seed)
    n = len(features) * len(MODELS)
    return pd.DataFrame(
        {
            "sample_id": np.repeat(features["sample_id"].to_numpy(), len(MODELS)),
            "model_id": np.tile(MODELS, len(features)),
            **{m: rng.random(n) for m in METRICS},
        }
    )


def test_noiseless_line_is_recovered_exactly():
    x = np.linspace(-2, 2, 30)
    design = DesignMatrix.from_arrays(np.column_stack([np.ones(30), x]), 2 * x + 1, ["intercept", "x"], clusters=np.arange(30) % 10)
    fit = fit_ols(design)
    assert fit.coefficients["x"] == pytest.approx(2.0)
    assert fit.coefficients["intercept"] == pytest.approx(1.0)
    assert fit.r2 == pytest.approx(1.0)


def test_orthogonal_noise_gives_zero_r2():
    rng = np.random.default_rng(2)
    X = np.column_stack([np.ones(100), rng.standard_normal((100, 2))])
    raw = rng.standard_normal(100)
    y = raw - X @ np.linalg.lstsq(X, raw, rcond=None)[0]
    fit = fit_ols(DesignMatrix.from_arrays(X, y, ["intercept", "a", "b"]))
    assert fit.r2 == pytest.approx(0.0, abs=1e-12)
    assert fit.f_stat == pytest.approx(0.0, abs=1e-9)


def test_matches_statsmodels():
    rng = np.random.default_rng(4)
    n = 200
    X = np.column_stack([np.ones(n), rng.standard_normal((n, 3))])
    groups = np.arange(n) % 20
    y = X @ np.array([0.5, 1.0, -2.0, 0.3]) + rng.standard_normal(n) + 0.5 * rng.standard_normal(20)[groups]
    columns = ["intercept", "a", "b", "c"]

    clustered = fit_ols(DesignMatrix.from_arrays(X, y, columns, clusters=groups))
    singleton = fit_ols(DesignMatrix.from_arrays(X, y, columns))

    ols = sm.OLS(y, X)
    plain = ols.fit()
    np.testing.assert_allclose([clustered.coefficients[c] for c in columns], plain.params, rtol=1e-8)
    np.testing.assert_allclose([clustered.classical_se[c] for c in columns], plain.bse, rtol=1e-8)
    np.testing.assert_allclose([singleton.clustered_se[c] for c in columns], ols.fit(cov_type="HC1").bse, rtol=1e-8)
    cl = ols.fit(cov_type="cluster", cov_kwds={"groups": groups})
    np.testing.assert_allclose([clustered.clustered_se[c] for c in columns], cl.bse, rtol=1e-6)
    assert clustered.r2 == pytest.approx(plain.rsquared)
    assert clustered.f_stat == pytest.approx(plain.fvalue)

    normal_eq = np.linalg.solve(X.T @ X, X.T @ y)
    np.testing.assert_allclose([clustered.coefficients[c] for c in columns], normal_eq, rtol=1e-8)


def test_duplicated_rows_inflate_clustered_se():
    rng = np.random.default_rng(6)
    base = 60
    X0 = np.column_stack([np.ones(base), rng.standard_normal((base, 2))])
    y0 = X0 @ np.array([0.0, 1.0, -1.0]) + rng.standard_normal(base)
    X = np.repeat(X0, 4, axis=0)
    y = np.repeat(y0, 4)
    fit = fit_ols(DesignMatrix.from_arrays(X, y, ["intercept", "a", "b"], clusters=np.repeat(np.arange(base), 4)))
    for term in fit.columns:
        assert fit.clustered_se[term] > fit.classical_se[term]


def test_independent_clusters_match_classical_on_average():
    rng = np.random.default_rng(8)
    ratios = []
    for _ in range(200):
        n = 400
        X = np.column_stack([np.ones(n), rng.standard_normal(n)])
        y = X @ np.array([0.2, 0.5]) + rng.standard_normal(n)
        fit = fit_ols(DesignMatrix.from_arrays(X, y, ["intercept", "x"], clusters=np.arange(n) // 4))
        ratios.append(fit.clustered_se["x"] / fit.classical_se["x"])
    assert 0.8 <= float(np.mean(ratios)) <= 1.2


def test_design_columns_and_references():
    features = toy_features()
    design = build_design(features, toy_scores(features), "wer")
    assert design.n == 160
    assert design.k == 12
    assert design.columns[:5] == ("intercept", "x_snr", "x_len", "x_age", "x_miss")
    assert "sex[male]" in design.columns and "sex[female]" not in design.columns
    assert "typicality[atypical]" in design.columns
    assert "dataset[d2]" in design.columns and "model[m4]" in design.columns
    assert design.reference_levels == {"sex": "female", "l1": "native", "typicality": "typical", "dataset": "d1", "model": "m1"}
    assert design.y.mean() == pytest.approx(0.0, abs=1e-12)
    assert design.y.std() == pytest.approx(1.0)


def test_single_level_factor_is_dropped_with_warning(caplog):
    features = toy_features()
    features["sex"] = "female"
    with caplog.at_level(logging.WARNING):
        design = build_design(features, toy_scores(features), "wer")
    assert not any(c.startswith("sex[") for c in design.columns)
    assert design.dropped["sex"] == "single level 'female'"
    assert "single level" in caplog.text


def test_unknown_exclusion_rejected():
    features = toy_features()
    with pytest.raises(ConfigError):
        build_design(features, toy_scores(features), "wer", exclude_factors=("accent",))


def test_rank_deficiency_names_columns():
    features = toy_features()
    features["x_len"] = features["x_snr"]
    with pytest.raises(RankDeficiencyError) as err:
        fit_all_metrics(features, toy_scores(features))
    assert set(err.value.columns) & {"x_snr", "x_len"}


def test_too_few_rows():
    with pytest.raises(InsufficientDataError):
        fit_ols(DesignMatrix.from_arrays(np.eye(3), np.arange(3.0), ["a", "b", "c"]))


def test_incomplete_model_set_is_a_join_error():
    features = toy_features()
    scores = toy_scores(features).iloc[1:]
    with pytest.raises(JoinError):
        fit_all_metrics(features, scores)


def test_identical_responses_give_identical_fits():
    features = toy_features()
    scores = toy_scores(features)
    scores["cer"] = scores["wer"]
    fits = fit_all_metrics(features, scores)
    assert fits["cer"].coefficients == pytest.approx(fits["wer"].coefficients)


def test_response_equal_to_regressor():
    features = toy_features()
    scores = toy_scores(features)
    scores["wer"] = scores["sample_id"].map(dict(zip(features["sample_id"], features["x_snr"])))
    fit = fit_all_metrics(features, scores)["wer"]
    sd = float(scores["wer"].std(ddof=0))
    assert fit.coefficients["x_snr"] == pytest.approx(1.0 / sd)
    assert fit.r2 == pytest.approx(1.0)


def test_invariance_to_row_order_and_affine_rescaling():
    features = toy_features()
    scores = toy_scores(features)
    base = fit_all_metrics(features, scores)["wer"]

    shuffled = fit_all_metrics(features, scores.sample(frac=1.0, random_state=3).reset_index(drop=True))["wer"]
    rescaled_scores = scores.copy()
    rescaled_scores["wer"] = 3.0 * scores["wer"] + 5.0
    rescaled = fit_all_metrics(features, rescaled_scores)["wer"]

    for other in (shuffled, rescaled):
        for term in base.columns:
            assert other.coefficients[term] == pytest.approx(base.coefficients[term], abs=1e-10)
            assert other.clustered_se[term] == pytest.approx(base.clustered_se[term], abs=1e-10)


def test_dropping_a_block_cannot_raise_r2():
    features = toy_features()
    scores = toy_scores(features)
    full = fit_all_metrics(features, scores)
    reduced = fit_all_metrics(features, scores, exclude_factors=("dataset",))
    for metric in METRICS:
        assert reduced[metric].r2 <= full[metric].r2 + 1e-12
        assert reduced[metric].dropped["dataset"] == "excluded"


def test_json_round_trip_and_tables():
    features = toy_features()
    fits = fit_all_metrics(features, toy_scores(features))
    restored = fit_from_json(fit_to_json(fits["wer"]))
    assert restored.coefficients == fits["wer"].coefficients
    assert restored.reference_levels == fits["wer"].reference_levels
    assert restored.factor_levels == fits["wer"].factor_levels

    coefficients, summary = fit_table(fits)
    assert len(coefficients) == 12 * len(METRICS)
    assert summary["metric"].tolist() == list(METRICS)
    assert set(coefficients["block"]) == {"intercept", "continuous", "demographic", "dataset", "model"}


@pytest.fixture(scope="module")
def planted_fits():
    corpus = generate_corpus(n_utterances=5000, n_models=4, seed=7, wav_share=0.0)
    features, _ = build_features(corpus.records, snr_source="manifest")
    return corpus, fit_all_metrics(features, corpus.planted_scores)


def test_planted_coefficients_are_recovered(planted_fits):
    corpus, fits = planted_fits
    truth = corpus.truth("wer")
    fit = fits["wer"]
    for term in ("x_snr", "x_len", "l1[nonnative]", "typicality[atypical]"):
        assert abs(fit.coefficients[term] - truth[term]) <= 3 * fit.clustered_se[term], term

    for metric in METRICS:
        truth = corpus.truth(metric)
        for term, value in truth.items():
            fit = fits[metric]
            assert abs(fit.coefficients[term] - value) <= 4 * fit.clustered_se[term], (metric, term)


def test_planted_r2_matches_analytic(planted_fits):
    corpus, fits = planted_fits
    for fit in fits.values():
        assert fit.r2 == pytest.approx(corpus.analytic_r2, abs=0.05)
        assert fit.n_clusters == 500
