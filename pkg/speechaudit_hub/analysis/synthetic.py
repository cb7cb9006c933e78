"""
Синтетический корпус с заложенными коэффициентами.

Отклик строится по той же схеме, что и MEAF-регрессия: непрерывные признаки
(стандартизованные так же, как в features), демографические сдвиги, сдвиги
набора данных и модели, шум спикера и остаточный шум. Гипотезы получаются
порчей эталона с вероятностью ошибки, растущей с трудностью.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd
from scipy.io import wavfile

from speechaudit_hub.analysis.features import load_age_bins, parse_age
from speechaudit_hub.analysis.wada import synth_mixture
from speechaudit_hub.core.exceptions import ConfigError
from speechaudit_hub.core.ingest import write_manifest
from speechaudit_hub.core.models import METRICS, UtteranceRecord
from speechaudit_hub.infra.storage import write_csv, write_json, write_text

logger = logging.getLogger(__name__)

PLANTED: dict[str, float] = {
    "x_snr": -0.3,
    "x_len": 0.2,
    "x_age": 0.1,
    "x_miss": 0.0,
    "sex[male]": 0.0,
    "sex[unknown]": 0.0,
    "l1[nonnative]": 0.3,
    "typicality[atypical]": 0.8,
}
P_ATYPICAL = 0.3
P_NONNATIVE = 0.4
SPEAKER_VARIANCE = 0.1

VOCABULARY: tuple[str, ...] = (
    "the", "this", "a", "an", "to", "go", "walk", "meet", "i", "you",
    "we", "they", "store", "shop", "market", "plastic", "snake", "snack", "bag", "box",
    "red", "blue", "green", "small", "big", "little", "house", "home", "car", "bus",
    "train", "road", "street", "city", "town", "water", "river", "tree", "forest", "dog",
    "cat", "bird", "fish", "bread", "milk", "cheese", "apple", "orange", "table", "chair",
    "book", "paper", "pen", "school", "work", "day", "night", "morning", "evening", "today",
    "tomorrow", "please", "call", "stella", "ask", "her", "bring", "these", "things",
)
# пары близких по смыслу слов: у них почти совпадающие векторы
SIMILAR_PAIRS: tuple[tuple[str, str], ...] = (
    ("the", "this"),
    ("a", "an"),
    ("store", "shop"),
    ("go", "walk"),
    ("small", "little"),
    ("house", "home"),
    ("city", "town"),
    ("road", "street"),
)
EMBEDDING_DIM = 16

_AGE_LABELS: dict[int, str] = {1: "teens", 2: "twenties", 3: "thirties", 4: "fourties", 5: "fifties", 6: "sixties", 7: "seventies"}


@dataclass
class SyntheticCorpus:
    records: list[UtteranceRecord]
    planted_scores: pd.DataFrame
    planted: dict[str, float]
    response_sd: dict[str, float]
    analytic_r2: float
    embeddings: dict[str, np.ndarray]
    audio: dict[str, np.ndarray] = field(default_factory=dict)
    sample_rate: int = 8000
    seed: int = 0

    def truth(self, metric: str = "wer") -> dict[str, float]:
        """Заложенные коэффициенты в единицах стандартизованного отклика."""
        sd = self.response_sd[metric]
        return {term: value / sd for term, value in self.planted.items()}


def _zscore(values: np.ndarray) -> np.ndarray:
    return (values - values.mean()) / values.std(ddof=0)


def _embeddings(rng: np.random.Generator) -> dict[str, np.ndarray]:
    vectors = {w: rng.standard_normal(EMBEDDING_DIM) for w in VOCABULARY}
    for left, right in SIMILAR_PAIRS:
        vectors[right] = vectors[left] + 0.3 * rng.standard_normal(EMBEDDING_DIM)
    # антонимичная пара для проверки непохожих замен
    vectors["snack"] = -vectors["snake"] + 0.1 * rng.standard_normal(EMBEDDING_DIM)
    return vectors


def _corrupt(words: list[str], p_error: float, rng: np.random.Generator) -> list[str]:
    out: list[str] = []
    for word in words:
        if rng.random() >= p_error:
            out.append(word)
            continue
        kind = rng.random()
        if kind < 0.6:
            out.append(VOCABULARY[int(rng.integers(len(VOCABULARY)))])
        elif kind < 0.8:
            continue
        else:
            out.append(word)
            out.append(VOCABULARY[int(rng.integers(len(VOCABULARY)))])
    return out


def _age_raw(years: float, kind: int) -> str | None:
    if kind == 0:
        return None
    if kind == 1:
        return _AGE_LABELS[min(7, max(1, int(years // 10)))]
    return str(int(round(years)))


def _exact_share(n: int, share: float, rng: np.random.Generator) -> np.ndarray:
    """Ровно round(share * n) отмеченных спикеров в случайных позициях."""
    mask = np.zeros(n, dtype=bool)
    mask[rng.permutation(n)[: int(round(share * n))]] = True
    return mask


def generate_corpus(
    n_utterances: int = 40,
    n_models: int = 4,
    n_datasets: int = 2,
    seed: int = 0,
    utterances_per_speaker: int | None = None,
    speaker_sd: float | None = None,
    noise_sd: float | None = None,
    wav_share: float = 0.25,
    sample_rate: int = 8000,
) -> SyntheticCorpus:
    """Корпус с заложенными эффектами.

    По умолчанию у спикера около 10 высказываний, но не меньше 20 спикеров
    в маленьких корпусах: демографические столбцы задаются на уровне спикера.
    Если noise_sd не задан, остаточный шум подбирается так, чтобы дисперсия
    отклика была равна 1; тогда аналитический R^2 равен дисперсии сигнала.
    """
    if n_utterances < 2 or n_models < 2 or n_datasets < 1:
        raise ConfigError("Нужно хотя бы 2 высказывания, 2 модели и 1 набор данных")
    if not 0.0 <= wav_share <= 1.0:
        raise ConfigError("wav_share должен лежать в [0, 1]")

    rng = np.random.default_rng(seed)
    bins = load_age_bins()
    models = [f"m{j + 1}" for j in range(n_models)]
    datasets = [f"d{d + 1}" for d in range(n_datasets)]
    if utterances_per_speaker is None:
        utterances_per_speaker = min(10, max(1, n_utterances // 20))
    n_speakers = max(2, math.ceil(n_utterances / utterances_per_speaker))

    # спикеры: демография общая для всех их высказываний
    spk_dataset = np.arange(n_speakers) % n_datasets
    # доли групп точные, чтобы маленький корпус не давал вырожденный дизайн
    spk_typ = _exact_share(n_speakers, P_ATYPICAL, rng)
    spk_l1 = _exact_share(n_speakers, P_NONNATIVE, rng)
    spk_sex = np.where(_exact_share(n_speakers, 0.45, rng), "male", "female").astype(object)
    spk_sex[rng.permutation(n_speakers)[: int(round(0.05 * n_speakers))]] = "unknown"
    spk_age_years = rng.uniform(18.0, 79.0, size=n_speakers)
    # 0: возраст не указан, 1: словесная категория, 2: число
    age_kind = np.full(n_speakers, 2)
    order = rng.permutation(n_speakers)
    n_missing = int(round(0.2 * n_speakers))
    n_binned = int(round(0.15 * n_speakers))
    age_kind[order[:n_missing]] = 0
    age_kind[order[n_missing : n_missing + n_binned]] = 1
    spk_age_raw = [_age_raw(a, int(k)) for a, k in zip(spk_age_years, age_kind, strict=True)]
    sd_u = math.sqrt(SPEAKER_VARIANCE) if speaker_sd is None else speaker_sd
    spk_effect = sd_u * rng.standard_normal(n_speakers)

    speaker = np.arange(n_utterances) % n_speakers
    dataset_idx = spk_dataset[speaker]
    snr = 25.0 - 8.0 * dataset_idx + 6.0 * rng.standard_normal(n_utterances)
    duration = np.exp(1.2 + 0.5 * rng.standard_normal(n_utterances))

    ages = np.array([np.nan if (v := parse_age(spk_age_raw[s], bins)) is None else v for s in speaker])
    missing = np.isnan(ages)
    if missing.all():
        ages[:] = 40.0
        missing[:] = False
    ages = np.where(missing, np.nanmean(ages), ages)

    x = {
        "x_snr": _zscore(snr),
        "x_len": _zscore(np.log(duration)),
        "x_age": _zscore(ages) if np.ptp(ages) > 0 else np.zeros(n_utterances),
        "x_miss": missing.astype(np.float64),
    }
    typ = spk_typ[speaker].astype(np.float64)
    l1 = spk_l1[speaker].astype(np.float64)
    sex = spk_sex[speaker]

    sdi_part = (
        sum(PLANTED[t] * x[t] for t in ("x_snr", "x_len", "x_age", "x_miss"))
        + PLANTED["typicality[atypical]"] * typ
        + PLANTED["l1[nonnative]"] * l1
        + PLANTED["sex[male]"] * (sex == "male")
        + PLANTED["sex[unknown]"] * (sex == "unknown")
    )
    gamma = 0.25 * np.arange(n_datasets)
    delta = np.round(0.15 * rng.standard_normal(n_models), 6)
    delta -= delta[0]

    # строки (высказывание, модель) в порядке манифеста и model_id
    row_utt = np.repeat(np.arange(n_utterances), n_models)
    row_model = np.tile(np.arange(n_models), n_utterances)
    signal = sdi_part[row_utt] + gamma[dataset_idx[row_utt]] + delta[row_model]
    var_signal = float(signal.var())
    if noise_sd is None:
        var_e = 1.0 - var_signal - sd_u**2
        if var_e <= 0.05:
            raise ConfigError(f"Сигнал слишком сильный для единичной дисперсии (var={var_signal:.3f})")
        sd_e = math.sqrt(var_e)
    else:
        sd_e = noise_sd
    analytic_r2 = var_signal / (var_signal + sd_u**2 + sd_e**2)

    planted = dict(PLANTED)
    for d in range(1, n_datasets):
        planted[f"dataset[{datasets[d]}]"] = float(gamma[d] - gamma[0])
    for j in range(1, n_models):
        planted[f"model[{models[j]}]"] = float(delta[j])

    base = signal + spk_effect[speaker[row_utt]]
    scores: dict[str, np.ndarray] = {}
    response_sd: dict[str, float] = {}
    for k, metric in enumerate(METRICS):
        y = base + sd_e * rng.standard_normal(base.size)
        response_sd[metric] = float(y.std(ddof=0))
        # аффинная шкала: стандартизация в регрессии её снимает
        scores[metric] = 0.3 + (0.08 + 0.01 * k) * y

    planted_scores = pd.DataFrame(
        {
            "sample_id": [f"u{i:05d}" for i in row_utt],
            "model_id": [models[j] for j in row_model],
            **scores,
        }
    )

    # тексты: вероятность ошибки слова растёт с откликом wer
    difficulty = scores["wer"].reshape(n_utterances, n_models)
    records: list[UtteranceRecord] = []
    audio: dict[str, np.ndarray] = {}
    with_audio = rng.random(n_utterances) < wav_share
    for i in range(n_utterances):
        sample_id = f"u{i:05d}"
        words = [VOCABULARY[int(w)] for w in rng.integers(len(VOCABULARY), size=int(rng.integers(8, 21)))]
        hypotheses = {
            models[j]: " ".join(_corrupt(words, float(np.clip(difficulty[i, j] - 0.15, 0.0, 0.9)), rng))
            for j in range(n_models)
        }
        s = speaker[i]
        records.append(
            UtteranceRecord(
                sample_id=sample_id,
                speaker_id=f"{datasets[spk_dataset[s]]}_s{s:04d}",
                dataset_id=datasets[dataset_idx[i]],
                reference=" ".join(words),
                hypotheses=hypotheses,
                duration_s=float(round(duration[i], 4)),
                audio_path=f"audio/{sample_id}.wav" if with_audio[i] else None,
                age_raw=spk_age_raw[s],
                sex=str(sex[i]),
                l1="nonnative" if l1[i] else "native",
                typicality="atypical" if typ[i] else "typical",
                snr_db=None if with_audio[i] else float(round(snr[i], 4)),
            )
        )
        if with_audio[i]:
            audio[sample_id] = synth_mixture(float(snr[i]), seconds=1.0, sample_rate=sample_rate, seed=seed * 100_003 + i)

    logger.info(
        "Generated synthetic corpus: %d utterances x %d models, %d speakers, analytic r2=%.3f",
        n_utterances,
        n_models,
        n_speakers,
        analytic_r2,
    )
    return SyntheticCorpus(
        records=records,
        planted_scores=planted_scores,
        planted=planted,
        response_sd=response_sd,
        analytic_r2=analytic_r2,
        embeddings=_embeddings(rng),
        audio=audio,
        sample_rate=sample_rate,
        seed=seed,
    )


def write_embeddings(vectors: dict[str, np.ndarray], path: str | Path) -> None:
    dim = len(next(iter(vectors.values()))) if vectors else 0
    lines = [f"{len(vectors)} {dim}"]
    lines += [f"{token} " + " ".join(f"{v:.6f}" for v in vec) for token, vec in vectors.items()]
    write_text(path, "\n".join(lines) + "\n")


def write_corpus(corpus: SyntheticCorpus, directory: str | Path) -> dict[str, Any]:
    """manifest.jsonl, embeddings.txt, planted_scores.csv, truth.json и WAV-файлы."""
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)

    for sample_id, samples in corpus.audio.items():
        wav_path = root / "audio" / f"{sample_id}.wav"
        wav_path.parent.mkdir(parents=True, exist_ok=True)
        peak = float(np.abs(samples).max()) or 1.0
        wavfile.write(wav_path, corpus.sample_rate, (0.9 * samples / peak).astype(np.float32))

    # относительные пути аудио: ingest разрешает их от каталога манифеста
    write_manifest(corpus.records, root / "manifest.jsonl", format="jsonl")
    write_embeddings(corpus.embeddings, root / "embeddings.txt")
    write_csv(root / "planted_scores.csv", corpus.planted_scores)
    write_json(
        root / "truth.json",
        {
            "seed": corpus.seed,
            "planted": corpus.planted,
            "response_sd": corpus.response_sd,
            "analytic_r2": corpus.analytic_r2,
        },
    )
    return {
        "directory": str(root),
        "samples": len(corpus.records),
        "audio_files": len(corpus.audio),
        "analytic_r2": corpus.analytic_r2,
    }
