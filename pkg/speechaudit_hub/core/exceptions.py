from __future__ import annotations

from collections.abc import Iterable


def _preview(items: Iterable[str], limit: int = 10) -> str:
    items = list(items)
    head = ", ".join(items[:limit])
    if len(items) > limit:
        head += f", ... (+{len(items) - limit})"
    return head


class AuditInputError(ValueError):
    """Ошибка во входных данных или конфигурации (код выхода 1)."""


class NumericalError(ArithmeticError):
    """Численная проблема при расчёте (код выхода 2)."""


class ConfigError(AuditInputError):
    """Некорректная конфигурация запуска."""


class ManifestError(AuditInputError):
    def __init__(self, line: int, reason: str) -> None:
        super().__init__(f"Манифест, строка {line}: {reason}")
        self.line = line
        self.reason = reason


class DuplicateSampleError(AuditInputError):
    def __init__(self, sample_id: str, line: int) -> None:
        super().__init__(f"Повторяющийся sample_id '{sample_id}' (строка {line})")
        self.sample_id = sample_id
        self.line = line


class ModelSetMismatchError(AuditInputError):
    def __init__(self, line: int, expected: Iterable[str], got: Iterable[str]) -> None:
        self.expected = sorted(expected)
        self.got = sorted(got)
        super().__init__(
            f"Строка {line}: набор моделей {self.got} не совпадает с ожидаемым {self.expected}"
        )
        self.line = line


class EmbeddingFormatError(AuditInputError):
    def __init__(self, line: int, reason: str) -> None:
        super().__init__(f"Файл эмбеддингов, строка {line}: {reason}")
        self.line = line
        self.reason = reason


class ScoreSchemaError(AuditInputError):
    def __init__(self, column: str, reason: str = "колонка отсутствует") -> None:
        super().__init__(f"Таблица оценок: '{column}': {reason}")
        self.column = column


class SidecarKeyError(AuditInputError):
    def __init__(self, key: str) -> None:
        super().__init__(f"В файле векторов предложений нет ключа '{key}'")
        self.key = key


class AudioError(AuditInputError):
    def __init__(self, path: str, reason: str) -> None:
        super().__init__(f"Аудио '{path}': {reason}")
        self.path = path


class MissingMetadataError(AuditInputError):
    def __init__(self, field: str, sample_ids: Iterable[str]) -> None:
        self.sample_ids = list(sample_ids)
        super().__init__(
            f"Нет значения '{field}' для {len(self.sample_ids)} записей: {_preview(self.sample_ids)}"
        )
        self.field = field


class JoinError(AuditInputError):
    def __init__(self, what: str, sample_ids: Iterable[str]) -> None:
        self.sample_ids = list(sample_ids)
        super().__init__(f"Не удалось сопоставить {what}: {_preview(self.sample_ids)}")


class MissingArtifactError(AuditInputError):
    def __init__(self, artifact: str, command: str) -> None:
        super().__init__(f"Артефакт '{artifact}' не найден. Выполните '{command}' (run {command} first)")
        self.artifact = artifact
        self.command = command


class ArtifactFormatError(AuditInputError):
    def __init__(self, artifact: str, reason: str) -> None:
        super().__init__(f"Артефакт '{artifact}' повреждён: {reason}")
        self.artifact = artifact
        self.reason = reason


class UndefinedSnrError(NumericalError):
    def __init__(self, reason: str) -> None:
        super().__init__(f"SNR не определён: {reason}")
        self.reason = reason


class ConstantColumnError(NumericalError):
    def __init__(self, column: str) -> None:
        super().__init__(f"Колонка '{column}' постоянна (нулевая дисперсия), стандартизация невозможна")
        self.column = column


class RankDeficiencyError(NumericalError):
    def __init__(self, columns: Iterable[str]) -> None:
        self.columns = list(columns)
        super().__init__(f"Матрица плана вырождена, линейно зависимые колонки: {_preview(self.columns)}")


class InsufficientDataError(NumericalError):
    """Слишком мало наблюдений/кластеров для оценки."""


class StaleFitError(NumericalError):
    def __init__(self, factor: str, level: str) -> None:
        super().__init__(
            f"Уровень '{level}' фактора '{factor}' отсутствует в модели, результат fit устарел, выполните 'fit' заново"
        )
        self.factor = factor
        self.level = level
