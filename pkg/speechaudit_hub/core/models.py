from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from speechaudit_hub.core.exceptions import AuditInputError

# порядок метрик во всех артефактах
METRICS: tuple[str, ...] = ("wer", "cer", "mer", "wil", "ember", "semdist")

SEX_LEVELS: tuple[str, ...] = ("female", "male", "unknown")
L1_LEVELS: tuple[str, ...] = ("native", "nonnative", "unknown")
TYPICALITY_LEVELS: tuple[str, ...] = ("typical", "atypical", "unknown")

OpName = Literal["hit", "sub", "del", "ins"]
CaseMode = Literal["as-is", "lowercase"]


@dataclass(frozen=True)
class UtteranceRecord:
    sample_id: str
    speaker_id: str
    dataset_id: str
    reference: str
    hypotheses: dict[str, str]
    duration_s: float | None = None
    audio_path: str | None = None
    age_raw: str | None = None
    sex: str = "unknown"
    l1: str = "unknown"
    typicality: str = "unknown"
    snr_db: float | None = None

    def __post_init__(self) -> None:
        for name in ("sample_id", "speaker_id", "dataset_id"):
            value = getattr(self, name)
            if not isinstance(value, str) or not value.strip():
                raise AuditInputError(f"Поле '{name}' должно быть непустой строкой")
        if not self.hypotheses:
            raise AuditInputError(f"Запись '{self.sample_id}': нужна хотя бы одна гипотеза")
        if self.duration_s is not None and (not math.isfinite(self.duration_s) or self.duration_s <= 0):
            raise AuditInputError(f"Запись '{self.sample_id}': duration_s должна быть конечной и > 0")
        if self.snr_db is not None and not math.isfinite(self.snr_db):
            raise AuditInputError(f"Запись '{self.sample_id}': snr_db должен быть конечным")
        if self.sex not in SEX_LEVELS:
            raise AuditInputError(f"Запись '{self.sample_id}': неизвестный sex '{self.sex}'")
        if self.l1 not in L1_LEVELS:
            raise AuditInputError(f"Запись '{self.sample_id}': неизвестный l1 '{self.l1}'")
        if self.typicality not in TYPICALITY_LEVELS:
            raise AuditInputError(f"Запись '{self.sample_id}': неизвестный typicality '{self.typicality}'")

    @property
    def model_ids(self) -> list[str]:
        return sorted(self.hypotheses)


@dataclass(frozen=True)
class EmbeddingTable:
    dim: int
    vectors: dict[str, np.ndarray]
    case_mode: CaseMode = "lowercase"
    duplicates: int = 0

    def key(self, token: str) -> str:
        return token.lower() if self.case_mode == "lowercase" else token

    def get(self, token: str) -> np.ndarray | None:
        return self.vectors.get(self.key(token))

    def __contains__(self, token: object) -> bool:
        return isinstance(token, str) and self.key(token) in self.vectors

    def __len__(self) -> int:
        return len(self.vectors)

    @classmethod
    def empty(cls, dim: int = 1) -> "EmbeddingTable":
        return cls(dim=dim, vectors={})


@dataclass(frozen=True)
class AlignOp:
    op: OpName
    ref: str | None = None
    hyp: str | None = None


@dataclass(frozen=True)
class AlignmentResult:
    level: Literal["word", "char"]
    hits: int
    subs: int
    dels: int
    ins: int
    ops: tuple[AlignOp, ...] = ()

    @property
    def n_ref(self) -> int:
        return self.hits + self.subs + self.dels

    @property
    def n_hyp(self) -> int:
        return self.hits + self.subs + self.ins

    @property
    def errors(self) -> int:
        return self.subs + self.dels + self.ins

    def replay(self) -> list[str]:
        """Восстанавливает гипотезу, проигрывая операции поверх эталона."""
        out: list[str] = []
        for op in self.ops:
            if op.op == "hit":
                out.append(op.ref or "")
            elif op.op in ("sub", "ins"):
                out.append(op.hyp or "")
        return out


@dataclass(frozen=True)
class EmbERConfig:
    similarity_threshold: float = 0.4
    similar_sub_weight: float = 0.1

    def __post_init__(self) -> None:
        if not -1.0 <= self.similarity_threshold <= 1.0:
            raise AuditInputError("Порог сходства EmbER должен лежать в [-1, 1]")
        if not 0.0 <= self.similar_sub_weight <= 1.0:
            raise AuditInputError("Вес похожей замены EmbER должен лежать в [0, 1]")


@dataclass
class MetricVector:
    wer: float
    cer: float
    mer: float
    wil: float
    ember: float
    semdist: float
    flags: set[str] = field(default_factory=set)

    def as_dict(self) -> dict[str, float]:
        return {m: float(getattr(self, m)) for m in METRICS}
