from __future__ import annotations

from pathlib import Path

import pytest

from speechaudit_hub.analysis.config import AuditConfig, read_config_file
from speechaudit_hub.core.exceptions import ArtifactFormatError, ConfigError, MissingArtifactError
from speechaudit_hub.infra.run_store import RunStore
from speechaudit_hub.infra.settings import SettingsLoader
from speechaudit_hub.infra.storage import read_json, write_text


def test_settings_read_pyproject_section(tmp_path):
    pyproject = tmp_path / "pyproject.toml"
    pyproject.write_text('[tool.speechaudit]\nseed = 7\nOUTPUT_ROOT = "elsewhere"\n', encoding="utf-8")
    loader = SettingsLoader()
    try:
        loader.reload(pyproject)
        assert loader.get("SEED") == 7
        assert loader.get("OUTPUT_ROOT") == "elsewhere"
        assert loader.get("PERMUTATIONS") == 10_000
    finally:
        loader.reload()


def test_env_overrides_output_root(settings, tmp_path):
    config = AuditConfig(manifest="data/corpus.jsonl")
    assert Path(config.output_dir) == tmp_path / "runs" / "corpus"


def test_precedence_flags_over_file_over_settings(settings, tmp_path):
    path = tmp_path / "audit.conf"
    path.write_text("# локальные правки\nseed = 5\npermutations = 99\ndecile-scope = per-dataset\n", encoding="utf-8")
    config = AuditConfig.from_sources({"--seed": "7"}, config_file=path)
    assert config.seed == 7
    assert config.permutations == 99
    assert config.decile_scope == "per_dataset"
    assert config.ember_threshold == pytest.approx(0.4)


@pytest.mark.parametrize(
    "flags",
    [{"snr-source": "guess"}, {"permutations": "0"}, {"seed": "abc"}, {"stratify-metric": "bleu"}, {"colour": "red"}],
)
def test_invalid_values(settings, flags):
    with pytest.raises(ConfigError):
        AuditConfig.from_sources(flags)


def test_bool_flags_and_hash(settings):
    a = AuditConfig.from_sources({"build-missing": "true", "output-dir": "x"})
    b = AuditConfig.from_sources({"build-missing": "no", "output-dir": "y"})
    assert a.build_missing is True and b.build_missing is False
    assert a.config_hash() == b.config_hash()
    assert a.config_hash() != AuditConfig.from_sources({"seed": "1"}).config_hash()


def test_config_file_errors(tmp_path):
    bad = tmp_path / "bad.conf"
    bad.write_text("seed 5\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="строка 1"):
        read_config_file(bad)
    with pytest.raises(ConfigError):
        read_config_file(tmp_path / "missing.conf")


def test_require_paths(settings, tmp_path):
    with pytest.raises(ConfigError, match="--manifest"):
        AuditConfig().require_paths("manifest")
    with pytest.raises(ConfigError):
        AuditConfig(manifest=str(tmp_path / "nope.jsonl")).require_paths("manifest")


def test_run_store_requirements(settings, tmp_path):
    store = RunStore(tmp_path / "run")
    with pytest.raises(MissingArtifactError, match="run fit first"):
        store.require("fits.json")
    write_text(store.path("scores.csv"), "sample_id\n")
    assert store.missing_commands(["scores.csv", "features.csv", "sdi.csv", "fits.json"]) == ["features", "fit", "sdi"]


def test_record_run_hashes_outputs(settings, tmp_path):
    store = RunStore(tmp_path / "run")
    write_text(store.path("scores.csv"), "sample_id\n")
    manifest = tmp_path / "m.jsonl"
    write_text(manifest, "{}\n")
    config = AuditConfig(manifest=str(manifest), output_dir=str(store.root))
    store.record_run("score", config, {"manifest": str(manifest)}, ["scores.csv", "absent.csv"])

    data = read_json(store.path("run_manifest.json"), default={})
    entry = data["commands"]["score"]
    assert entry["config_hash"] == config.config_hash()
    assert entry["seed"] == config.seed
    assert list(entry["outputs"]) == ["scores.csv"]
    assert str(manifest) in entry["inputs"]
    assert data["toolkit_version"]


def test_run_store_rejects_broken_json(tmp_path):
    store = RunStore(tmp_path / "run")
    write_text(store.path("fits.json"), '{"metrics": [')
    with pytest.raises(ArtifactFormatError, match="fits.json"):
        store.load_json("fits.json")

    write_text(store.path("fits.json"), '{"metrics": []}\n')
    with pytest.raises(ArtifactFormatError, match="metrics"):
        store.load_json("fits.json", key="metrics")
    assert store.load_json("fits.json") == {"metrics": []}

    write_text(store.path("cartography_summary.json"), "[1, 2]\n")
    with pytest.raises(ArtifactFormatError):
        store.load_json("cartography_summary.json")
