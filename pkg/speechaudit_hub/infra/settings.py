from __future__ import annotations

import os
from pathlib import Path
from typing import Any

try:
    import tomllib
except Exception:
    tomllib = None

OUTPUT_ROOT_ENV = "SPEECHAUDIT_OUTPUT_ROOT"

_DEFAULTS: dict[str, Any] = {
    "OUTPUT_ROOT": "runs",
    "LOG_PATH": "logs/audit.log",
    "LOG_LEVEL": "INFO",
    "EMBER_THRESHOLD": 0.4,
    "EMBER_SUB_WEIGHT": 0.1,
    "SNR_SOURCE": "manifest_then_wada",
    "DECILE_SCOPE": "pooled",
    "SEED": 20240917,
    "PERMUTATIONS": 10_000,
    "STRATIFY_METRIC": "ember",
    # пусто: таблица WADA-SNR из пакета
    "WADA_TABLE": "",
}


class SettingsLoader:
    _instance: "SettingsLoader | None" = None

    def __new__(cls) -> "SettingsLoader":
        if cls._instance is None:
            cls._instance = super().__new__(cls)
            cls._instance._cache = {}
            cls._instance.reload()
        return cls._instance

    def reload(self, pyproject: str | Path = "pyproject.toml") -> None:
        self._cache = dict(_DEFAULTS)

        path = Path(pyproject)
        if path.exists() and tomllib is not None:
            data = tomllib.loads(path.read_text(encoding="utf-8"))
            section = ((data.get("tool") or {}).get("speechaudit")) or {}
            for k, v in section.items():
                self._cache[str(k).upper()] = v

        # корень для каталогов запусков можно переопределить из окружения
        env_root = os.getenv(OUTPUT_ROOT_ENV)
        if env_root:
            self._cache["OUTPUT_ROOT"] = env_root

    def get(self, key: str, default: Any = None) -> Any:
        return self._cache.get(key, default)
