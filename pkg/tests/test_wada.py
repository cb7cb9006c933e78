from __future__ import annotations

import numpy as np
import pytest
from scipy.io import wavfile

from speechaudit_hub.analysis.wada import (
    SNR_MAX_DB,
    SNR_MIN_DB,
    bundled_table_path,
    gaussian_noise,
    generate_wada_table,
    load_wada_table,
    read_wav,
    synth_mixture,
    wada_snr,
    wada_snr_file,
    write_wada_table,
)
from speechaudit_hub.core.exceptions import AudioError, ConfigError, UndefinedSnrError
from speechaudit_hub.core.usecases import cmd_gen_wada_table

RATE = 16_000


def test_table_covers_range_and_is_monotone():
    table = load_wada_table()
    assert table["snr_db"].iloc[0] == SNR_MIN_DB
    assert table["snr_db"].iloc[-1] == SNR_MAX_DB
    assert len(table) == 121
    assert np.all(np.diff(table["expected_g"].to_numpy()) >= 0)


def test_pure_noise_is_at_floor():
    noise = gaussian_noise(2 * RATE, np.random.default_rng(0))
    assert wada_snr(noise, RATE) <= -15.0


def test_clean_speech_is_high():
    assert wada_snr(synth_mixture(None, seconds=2.0, sample_rate=RATE, seed=1), RATE) >= 60.0


@pytest.mark.parametrize("snr_db", [0.0, 10.0, 20.0])
def test_recovers_planted_snr(snr_db):
    estimate = wada_snr(synth_mixture(snr_db, seconds=2.0, sample_rate=RATE, seed=2), RATE)
    assert estimate == pytest.approx(snr_db, abs=3.0)


def test_estimate_is_monotone_in_snr():
    estimates = [wada_snr(synth_mixture(s, seconds=2.0, sample_rate=RATE, seed=3), RATE) for s in (0.0, 10.0, 20.0)]
    assert estimates[0] < estimates[1] < estimates[2]


@pytest.mark.parametrize(
    "samples",
    [np.zeros(RATE), np.ones(100), np.full(RATE, np.nan)],
    ids=["silence", "too-short", "nan"],
)
def test_undefined_snr(samples):
    with pytest.raises(UndefinedSnrError):
        wada_snr(samples, RATE)


def test_read_wav_int16_and_stereo(tmp_path):
    mono = tmp_path / "mono.wav"
    wavfile.write(mono, 8000, np.array([0, 16384, -16384], dtype=np.int16))
    samples, rate = read_wav(mono)
    assert rate == 8000
    np.testing.assert_allclose(samples, [0.0, 0.5, -0.5])

    stereo = tmp_path / "stereo.wav"
    wavfile.write(stereo, 8000, np.array([[0.2, 0.4], [-0.2, 0.0]], dtype=np.float32))
    samples, _ = read_wav(stereo)
    np.testing.assert_allclose(samples, [0.3, -0.1], rtol=1e-6)


def test_bad_wav(tmp_path):
    path = tmp_path / "broken.wav"
    path.write_bytes(b"not a wav file")
    with pytest.raises(AudioError):
        read_wav(path)


def test_file_estimate_and_written_table(tmp_path):
    table = write_wada_table(tmp_path / "table.csv", n_quantiles=4096)
    assert (tmp_path / "table.csv").exists()
    wav = tmp_path / "mix.wav"
    wavfile.write(wav, RATE, synth_mixture(15.0, seconds=2.0, sample_rate=RATE, seed=5).astype(np.float32))
    assert wada_snr_file(wav, table) == pytest.approx(15.0, abs=3.0)


def test_clipped_signal_is_rejected():
    mix = synth_mixture(20.0, seconds=1.0, sample_rate=RATE, seed=6)
    limit = 0.2 * np.max(np.abs(mix))
    with pytest.raises(UndefinedSnrError, match="клиппинг"):
        wada_snr(np.clip(mix, -limit, limit), RATE)


def test_bundled_table_matches_integration():
    assert bundled_table_path().exists()
    bundled = load_wada_table()
    fresh = generate_wada_table(n_quantiles=4096)
    np.testing.assert_allclose(bundled["snr_db"], fresh["snr_db"])
    np.testing.assert_allclose(bundled["expected_g"], fresh["expected_g"], atol=2e-3)


def test_configured_table_is_used(settings, tmp_path):
    custom = tmp_path / "custom.csv"
    custom.write_text("snr_db,expected_g\n0,0.1\n10,0.2\n", encoding="utf-8")
    settings._cache["WADA_TABLE"] = str(custom)
    assert load_wada_table()["snr_db"].tolist() == [0.0, 10.0]

    settings._cache["WADA_TABLE"] = str(tmp_path / "absent.csv")
    with pytest.raises(ConfigError):
        load_wada_table()

    broken = tmp_path / "broken.csv"
    broken.write_text("snr_db,expected_g\n0,0.3\n10,0.2\n", encoding="utf-8")
    settings._cache["WADA_TABLE"] = str(broken)
    with pytest.raises(ConfigError, match="неубывающей"):
        load_wada_table()


def test_gen_wada_table_writes_outside_package(settings, tmp_path):
    result = cmd_gen_wada_table(n_quantiles=512)
    assert result["path"] == str(tmp_path / "runs" / "wada_table.csv")
    assert result["rows"] == 121
    assert (tmp_path / "runs" / "wada_table.csv").exists()
