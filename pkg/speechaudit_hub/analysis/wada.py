"""
WADA-SNR: слепая оценка SNR по распределению амплитуд.

Речь моделируется амплитудами Gamma(0.4) со случайным знаком, шум гауссовский.
Статистика g = ln(E|z|) - E[ln|z|] монотонно растёт с SNR; ожидаемое значение g
для каждого SNR из [-20, 100] дБ (шаг 1 дБ) заранее табулируется и обращается
линейной интерполяцией.
"""

from __future__ import annotations

import functools
import logging
import math
from importlib import resources
from pathlib import Path

import numpy as np
import pandas as pd
from scipy import integrate, interpolate, special, stats
from scipy.io import wavfile

from speechaudit_hub.core.exceptions import AudioError, ConfigError, UndefinedSnrError
from speechaudit_hub.infra.settings import SettingsLoader
from speechaudit_hub.infra.storage import write_csv

logger = logging.getLogger(__name__)

SPEECH_SHAPE = 0.4
SNR_MIN_DB = -20.0
SNR_MAX_DB = 100.0
MIN_SECONDS = 0.1
# доля отсчётов на пиковой амплитуде, выше которой сигнал считается клиппированным
CLIP_SHARE = 0.01
TABLE_FILE = "wada_table.csv"


def read_wav(path: str | Path) -> tuple[np.ndarray, int]:
    try:
        sample_rate, data = wavfile.read(str(path))
    except (OSError, ValueError) as e:
        raise AudioError(str(path), f"не удалось прочитать WAV ({e})") from e

    if data.dtype == np.uint8:
        samples = (data.astype(np.float64) - 128.0) / 128.0
    elif np.issubdtype(data.dtype, np.integer):
        samples = data.astype(np.float64) / float(np.iinfo(data.dtype).max + 1)
    else:
        samples = data.astype(np.float64)

    if samples.ndim == 2:
        samples = samples.mean(axis=1)
    return samples, int(sample_rate)


def wav_duration(path: str | Path) -> float:
    samples, sample_rate = read_wav(path)
    return len(samples) / float(sample_rate)


def g_statistic(samples: np.ndarray) -> float:
    amp = np.abs(np.asarray(samples, dtype=np.float64))
    amp = amp[amp > 0]
    if amp.size == 0:
        raise UndefinedSnrError("сигнал состоит из нулей")
    return float(np.log(amp.mean()) - np.log(amp).mean())


def _stratified(ppf, n: int, rng: np.random.Generator) -> np.ndarray:
    # квантили на равномерной сетке: выборочные моменты почти совпадают с теоретическими
    p = (np.arange(n, dtype=np.float64) + 0.5) / n
    return ppf(p)[rng.permutation(n)]


def speech_like(n: int, rng: np.random.Generator, shape: float = SPEECH_SHAPE) -> np.ndarray:
    amp = _stratified(lambda p: stats.gamma.ppf(p, shape), n, rng)
    signs = rng.choice(np.array([-1.0, 1.0]), size=n)
    return amp * signs


def gaussian_noise(n: int, rng: np.random.Generator) -> np.ndarray:
    return _stratified(stats.norm.ppf, n, rng)


def mix_at_snr(speech: np.ndarray, noise: np.ndarray, snr_db: float) -> np.ndarray:
    p_speech = float(np.mean(speech**2))
    p_noise = float(np.mean(noise**2))
    scale = np.sqrt(p_speech / (p_noise * 10.0 ** (snr_db / 10.0)))
    return speech + scale * noise


def synth_mixture(
    snr_db: float | None,
    seconds: float = 2.0,
    sample_rate: int = 16_000,
    seed: int = 0,
) -> np.ndarray:
    """Синтетическая "речь" с гауссовским шумом на заданном SNR; при None без шума."""
    n = int(round(seconds * sample_rate))
    rng = np.random.default_rng(seed)
    speech = speech_like(n, rng)
    if snr_db is None:
        return speech
    return mix_at_snr(speech, gaussian_noise(n, rng), snr_db)


def _log_abs_shifted_normal(t: float) -> float:
    """E[ln|t + n|], n ~ N(0, 1); интеграл с логарифмической особенностью в нуле."""
    norm = 1.0 / math.sqrt(2.0 * math.pi)

    def f(u: float) -> float:
        return math.log(abs(u)) * norm * math.exp(-0.5 * (u - t) ** 2) if u != 0.0 else 0.0

    lo, hi = t - 12.0, t + 12.0
    if lo < 0.0:
        return integrate.quad(f, lo, 0.0, limit=200)[0] + integrate.quad(f, 0.0, hi, limit=200)[0]
    return integrate.quad(f, lo, hi, limit=200)[0]


@functools.lru_cache(maxsize=1)
def _log_abs_spline() -> tuple[interpolate.CubicSpline, float, float]:
    t_grid = np.logspace(-4, 4, 161)
    h = np.array([_log_abs_shifted_normal(float(t)) for t in t_grid])
    return interpolate.CubicSpline(np.log(t_grid), h), float(t_grid[0]), float(t_grid[-1])


def _expected_log_abs(t: np.ndarray) -> np.ndarray:
    spline, t_lo, t_hi = _log_abs_spline()
    out = np.empty_like(t)
    low = t <= t_lo
    high = t >= t_hi
    mid = ~(low | high)
    out[low] = spline(np.log(t_lo)) + 0.5 * t[low] ** 2
    out[high] = np.log(t[high]) - 0.5 / t[high] ** 2
    out[mid] = spline(np.log(t[mid]))
    return out


def _expected_g(amplitudes: np.ndarray, speech_power: float, snr_db: float) -> float:
    sigma = math.sqrt(speech_power / 10.0 ** (snr_db / 10.0))
    t = amplitudes / sigma
    # E|a + sigma*n| для сложенного нормального распределения
    mean_abs = sigma * (math.sqrt(2.0 / math.pi) * np.exp(-0.5 * t**2) + t * (1.0 - 2.0 * special.ndtr(-t)))
    mean_log = math.log(sigma) + _expected_log_abs(t)
    return float(math.log(mean_abs.mean()) - mean_log.mean())


def generate_wada_table(n_quantiles: int = 1 << 16, shape: float = SPEECH_SHAPE) -> pd.DataFrame:
    """Ожидаемое g для смеси Gamma-речи и гауссовского шума при SNR от -20 до 100 дБ.

    Внутреннее ожидание по шуму считается точно (сложенное нормальное) или
    квадратурой (логарифм), внешнее по равномерной сетке квантилей Gamma.
    """
    p = (np.arange(n_quantiles, dtype=np.float64) + 0.5) / n_quantiles
    amplitudes = stats.gamma.ppf(p, shape)
    speech_power = shape * (shape + 1.0)

    snr_grid = np.arange(SNR_MIN_DB, SNR_MAX_DB + 1.0, 1.0)
    g = np.array([_expected_g(amplitudes, speech_power, s) for s in snr_grid])
    g = np.maximum.accumulate(g)
    return pd.DataFrame({"snr_db": snr_grid, "expected_g": g})


def write_wada_table(path: str | Path, n_quantiles: int = 1 << 16) -> pd.DataFrame:
    table = generate_wada_table(n_quantiles=n_quantiles)
    write_csv(path, table)
    logger.info("WADA table written to %s (%d rows)", path, len(table))
    return table


def bundled_table_path() -> Path:
    return Path(str(resources.files("speechaudit_hub.data").joinpath(TABLE_FILE)))


def configured_table_path() -> Path:
    custom = SettingsLoader().get("WADA_TABLE")
    return Path(custom) if custom else bundled_table_path()


@functools.lru_cache(maxsize=4)
def _read_table(path: str) -> pd.DataFrame:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"Таблица WADA-SNR не найдена: {p}")
    try:
        table = pd.read_csv(p, dtype=float)
    except ValueError as e:
        raise ConfigError(f"Таблица WADA-SNR {p}: {e}") from e
    if list(table.columns) != ["snr_db", "expected_g"] or table.empty:
        raise ConfigError(f"Таблица WADA-SNR {p}: ожидаются колонки snr_db, expected_g")
    if np.any(np.diff(table["expected_g"].to_numpy()) < 0):
        raise ConfigError(f"Таблица WADA-SNR {p}: expected_g должна быть неубывающей")
    logger.debug("WADA table loaded from %s (%d rows)", p, len(table))
    return table


def load_wada_table() -> pd.DataFrame:
    """Таблица из настройки WADA_TABLE, по умолчанию файл из пакета."""
    return _read_table(str(configured_table_path()))


def wada_snr(samples: np.ndarray, sample_rate: int, table: pd.DataFrame | None = None) -> float:
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 1:
        raise UndefinedSnrError("ожидается моно-сигнал")
    if sample_rate <= 0 or x.size < MIN_SECONDS * sample_rate:
        raise UndefinedSnrError(f"сигнал короче {MIN_SECONDS} с")
    if not np.all(np.isfinite(x)):
        raise UndefinedSnrError("сигнал содержит нечисловые отсчёты")
    peak = float(np.max(np.abs(x)))
    if peak > 0.0:
        at_peak = float(np.mean(np.abs(x) >= peak * (1.0 - 1e-6)))
        if at_peak > CLIP_SHARE:
            raise UndefinedSnrError(f"клиппинг: {at_peak:.1%} отсчётов на пиковой амплитуде")

    g = g_statistic(x)
    table = load_wada_table() if table is None else table
    snr = float(np.interp(g, table["expected_g"].to_numpy(), table["snr_db"].to_numpy()))
    return float(np.clip(snr, SNR_MIN_DB, SNR_MAX_DB))


def wada_snr_file(path: str | Path, table: pd.DataFrame | None = None) -> float:
    samples, sample_rate = read_wav(path)
    return wada_snr(samples, sample_rate, table)
