from __future__ import annotations

import dataclasses
import json
from collections.abc import Mapping
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from speechaudit_hub.analysis.sdi import parse_scope
from speechaudit_hub.core.exceptions import ConfigError
from speechaudit_hub.core.models import METRICS
from speechaudit_hub.infra.settings import SettingsLoader
from speechaudit_hub.infra.storage import sha256_text

SNR_SOURCES = ("manifest", "wada", "manifest_then_wada")
MANIFEST_FORMATS = ("", "jsonl", "csv")

# в хеш не входят каталог вывода и режим досборки
_NOT_HASHED = {"output_dir", "build_missing"}


@dataclass(frozen=True)
class AuditConfig:
    manifest: str = ""
    manifest_format: str = ""
    embeddings: str = ""
    sentence_vectors: str = ""
    output_dir: str = ""
    age_bins: str = ""
    ember_threshold: float = 0.4
    ember_sub_weight: float = 0.1
    snr_source: str = "manifest_then_wada"
    decile_scope: str = "pooled"
    seed: int = 20240917
    permutations: int = 10_000
    stratify_metric: str = "ember"
    build_missing: bool = False
    report_percent: bool = False

    def __post_init__(self) -> None:
        if self.snr_source not in SNR_SOURCES:
            raise ConfigError(f"snr_source должен быть одним из {SNR_SOURCES}, получено '{self.snr_source}'")
        if self.manifest_format not in MANIFEST_FORMATS:
            raise ConfigError(f"manifest_format должен быть jsonl или csv, получено '{self.manifest_format}'")
        if self.stratify_metric not in METRICS:
            raise ConfigError(f"stratify_metric должен быть одной из метрик {METRICS}")
        if self.permutations < 1:
            raise ConfigError("permutations должно быть положительным")
        object.__setattr__(self, "decile_scope", parse_scope(self.decile_scope))
        if not self.output_dir:
            root = SettingsLoader().get("OUTPUT_ROOT", "runs")
            name = Path(self.manifest).stem if self.manifest else "audit"
            object.__setattr__(self, "output_dir", str(Path(str(root)) / name))

    @classmethod
    def defaults(cls) -> dict[str, Any]:
        settings = SettingsLoader()
        return {
            "ember_threshold": settings.get("EMBER_THRESHOLD", 0.4),
            "ember_sub_weight": settings.get("EMBER_SUB_WEIGHT", 0.1),
            "snr_source": settings.get("SNR_SOURCE", "manifest_then_wada"),
            "decile_scope": settings.get("DECILE_SCOPE", "pooled"),
            "seed": settings.get("SEED", 20240917),
            "permutations": settings.get("PERMUTATIONS", 10_000),
            "stratify_metric": settings.get("STRATIFY_METRIC", "ember"),
        }

    @classmethod
    def from_sources(
        cls,
        flags: Mapping[str, Any] | None = None,
        config_file: str | Path | None = None,
    ) -> "AuditConfig":
        """Приоритет: настройки pyproject < файл конфигурации < флаги."""
        merged: dict[str, Any] = cls.defaults()
        if config_file:
            merged.update(read_config_file(config_file))
        for key, value in (flags or {}).items():
            merged[_normalize_key(key)] = value
        return cls.from_mapping(merged)

    @classmethod
    def from_mapping(cls, values: Mapping[str, Any]) -> "AuditConfig":
        known = {f.name: f for f in dataclasses.fields(cls)}
        kwargs: dict[str, Any] = {}
        for key, value in values.items():
            name = _normalize_key(key)
            if name not in known:
                raise ConfigError(f"Неизвестный параметр конфигурации '{key}'")
            kwargs[name] = _coerce(name, known[name].type, value)
        return cls(**kwargs)

    def as_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def config_hash(self) -> str:
        payload = {k: v for k, v in self.as_dict().items() if k not in _NOT_HASHED}
        return sha256_text(json.dumps(payload, sort_keys=True, ensure_ascii=False))

    def require_paths(self, *names: str) -> None:
        for name in names:
            value = getattr(self, name)
            if not value:
                raise ConfigError(f"Не задан параметр '{name}' (флаг --{name.replace('_', '-')})")
            if not Path(value).exists():
                raise ConfigError(f"Файл для '{name}' не найден: {value}")


def _normalize_key(key: str) -> str:
    return str(key).strip().lstrip("-").replace("-", "_").lower()


def _coerce(name: str, annotation: Any, value: Any) -> Any:
    kind = annotation if isinstance(annotation, str) else getattr(annotation, "__name__", str(annotation))
    try:
        if kind == "bool":
            if isinstance(value, bool):
                return value
            text = str(value).strip().lower()
            if text in {"1", "true", "yes", "on"}:
                return True
            if text in {"0", "false", "no", "off", ""}:
                return False
            raise ValueError(text)
        if kind == "int":
            return int(value)
        if kind == "float":
            return float(value)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"Некорректное значение параметра '{name}': {value!r}") from e
    return "" if value is None else str(value)


def read_config_file(path: str | Path) -> dict[str, str]:
    """Плоский формат "key = value"; строки с # игнорируются."""
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"Файл конфигурации не найден: {p}")
    values: dict[str, str] = {}
    for line_no, raw in enumerate(p.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{p}, строка {line_no}: ожидается 'key = value'")
        key, value = line.split("=", 1)
        values[_normalize_key(key)] = value.strip().strip('"').strip("'")
    return values
