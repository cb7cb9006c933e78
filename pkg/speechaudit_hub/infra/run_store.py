from __future__ import annotations

import json
from collections.abc import Iterable, Mapping
from datetime import datetime
from pathlib import Path
from typing import Any

from speechaudit_hub import __version__
from speechaudit_hub.core.exceptions import ArtifactFormatError, MissingArtifactError
from speechaudit_hub.infra.storage import read_json, sha256_file, write_json

MANIFEST_FILE = "run_manifest.json"

# артефакт -> команда, которая его создаёт
ARTIFACTS: dict[str, str] = {
    "scores.csv": "score",
    "score_flags.json": "score",
    "features.csv": "features",
    "standardization.json": "features",
    "dataset_profile.csv": "features",
    "fits.json": "fit",
    "coefficients.csv": "fit",
    "fit_summary.csv": "fit",
    "sdi.csv": "sdi",
    "cartography.csv": "cartography",
    "cartography_summary.json": "cartography",
    "pca_loadings.csv": "pca",
    "pca_variance.csv": "pca",
    "pca_loadings.svg": "pca",
    "pca_scores.svg": "pca",
    "diversity_tax.csv": "report",
    "dataset_metrics.csv": "report",
    "report.md": "report",
}
PIPELINE: tuple[str, ...] = ("score", "features", "fit", "sdi", "cartography", "pca", "report")


def _now_iso() -> str:
    return datetime.now().replace(microsecond=0).isoformat()


class RunStore:
    """Каталог одного запуска аудита: артефакты и run_manifest.json."""

    def __init__(self, root: str | Path) -> None:
        self.root = Path(root)

    def path(self, name: str) -> Path:
        return self.root / name

    def exists(self, name: str) -> bool:
        return self.path(name).exists()

    def require(self, name: str) -> Path:
        p = self.path(name)
        if not p.exists():
            raise MissingArtifactError(name, ARTIFACTS.get(name, "?"))
        return p

    def load_json(self, name: str, key: str | None = None) -> dict[str, Any]:
        """Обязательный JSON-артефакт; при битом содержимом ArtifactFormatError."""
        p = self.require(name)
        try:
            data = json.loads(p.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ArtifactFormatError(name, f"некорректный JSON (строка {e.lineno})") from e
        if not isinstance(data, dict):
            raise ArtifactFormatError(name, "ожидается JSON-объект")
        if key is not None and not data.get(key):
            raise ArtifactFormatError(name, f"нет данных в '{key}'")
        return data

    def missing_commands(self, names: Iterable[str]) -> list[str]:
        needed = {ARTIFACTS[n] for n in names if not self.exists(n)}
        return [c for c in PIPELINE if c in needed]

    def read_manifest(self) -> dict[str, Any]:
        data = read_json(self.path(MANIFEST_FILE), default={})
        if not isinstance(data, dict):
            data = {}
        data.setdefault("commands", {})
        return data

    def record_run(
        self,
        command: str,
        config: Any,
        inputs: Mapping[str, str | Path],
        outputs: Iterable[str],
    ) -> None:
        manifest = self.read_manifest()
        manifest["toolkit_version"] = __version__
        manifest["commands"][command] = {
            "config_hash": config.config_hash(),
            "seed": config.seed,
            "inputs": {str(p): sha256_file(p) for p in (Path(v) for v in inputs.values()) if p.is_file()},
            "outputs": {name: sha256_file(self.path(name)) for name in outputs if self.exists(name)},
            "finished_at": _now_iso(),
        }
        write_json(self.path(MANIFEST_FILE), manifest)
