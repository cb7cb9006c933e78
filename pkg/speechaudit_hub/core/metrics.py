from __future__ import annotations

import logging
from collections.abc import Mapping, Sequence

import numpy as np
import pandas as pd

from speechaudit_hub.core.align import align, align_chars, normalize
from speechaudit_hub.core.exceptions import SidecarKeyError
from speechaudit_hub.core.models import (
    METRICS,
    AlignmentResult,
    EmbERConfig,
    EmbeddingTable,
    MetricVector,
    UtteranceRecord,
)

logger = logging.getLogger(__name__)

EMPTY_REF = "empty_ref"
OOV_SENTENCE = "oov_sentence"


def _rate(errors: float, a: AlignmentResult, flags: set[str] | None) -> float:
    if a.n_ref > 0:
        return errors / a.n_ref
    if a.n_hyp == 0:
        return 0.0
    if flags is not None:
        flags.add(EMPTY_REF)
    # пустой эталон: знаменатель принимаем равным 1
    return errors / 1


def wer(a: AlignmentResult, flags: set[str] | None = None) -> float:
    return _rate(a.errors, a, flags)


def cer(a: AlignmentResult, flags: set[str] | None = None) -> float:
    return _rate(a.errors, a, flags)


def mer(a: AlignmentResult) -> float:
    total = a.hits + a.errors
    if total == 0:
        return 0.0
    return a.errors / total


def wil(a: AlignmentResult) -> float:
    if a.n_ref == 0 and a.n_hyp == 0:
        return 0.0
    if a.n_ref == 0 or a.n_hyp == 0:
        return 1.0
    return 1.0 - (a.hits * a.hits) / (a.n_ref * a.n_hyp)


def _cosine(u: np.ndarray, v: np.ndarray) -> float | None:
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        return None
    return float(np.dot(u, v)) / (nu * nv)


def substitution_cost(ref_token: str, hyp_token: str, emb: EmbeddingTable, cfg: EmbERConfig) -> float:
    u = emb.get(ref_token)
    v = emb.get(hyp_token)
    if u is None or v is None:
        return 1.0
    cos = _cosine(u, v)
    if cos is None or cos < cfg.similarity_threshold:
        return 1.0
    return cfg.similar_sub_weight


def ember(a: AlignmentResult, emb: EmbeddingTable, cfg: EmbERConfig, flags: set[str] | None = None) -> float:
    cost = 0.0
    for op in a.ops:
        if op.op == "hit":
            continue
        if op.op == "sub":
            cost += substitution_cost(op.ref or "", op.hyp or "", emb, cfg)
        else:
            cost += 1.0
    return _rate(cost, a, flags)


def sentence_embedding(tokens: Sequence[str], emb: EmbeddingTable) -> np.ndarray:
    found = [v for v in (emb.get(t) for t in tokens) if v is not None]
    if not found:
        return np.zeros(emb.dim, dtype=np.float64)
    return np.mean(np.vstack(found), axis=0)


def semdist_vectors(e_ref: np.ndarray, e_hyp: np.ndarray, flags: set[str] | None = None) -> float:
    cos = _cosine(e_ref, e_hyp)
    if cos is None:
        if flags is not None:
            flags.add(OOV_SENTENCE)
        return 1.0
    return float(np.clip(1.0 - cos, 0.0, 2.0))


class SentenceVectors:
    """Провайдер векторов предложений для SemDist: mean_pool по словам или готовые векторы из файла."""

    def __init__(self, emb: EmbeddingTable, precomputed: Mapping[str, np.ndarray] | None = None) -> None:
        self.emb = emb
        self.precomputed = precomputed

    @property
    def name(self) -> str:
        return "precomputed" if self.precomputed is not None else "mean_pool"

    def _lookup(self, key: str) -> np.ndarray:
        assert self.precomputed is not None
        vec = self.precomputed.get(key)
        if vec is None:
            raise SidecarKeyError(key)
        return vec

    def reference(self, sample_id: str, tokens: Sequence[str]) -> np.ndarray:
        if self.precomputed is not None:
            return self._lookup(f"{sample_id}|ref")
        return sentence_embedding(tokens, self.emb)

    def hypothesis(self, sample_id: str, model_id: str, tokens: Sequence[str]) -> np.ndarray:
        if self.precomputed is not None:
            return self._lookup(f"{sample_id}|{model_id}")
        return sentence_embedding(tokens, self.emb)


def semdist(
    ref_tokens: Sequence[str],
    hyp_tokens: Sequence[str],
    emb: EmbeddingTable,
    provider: SentenceVectors | None = None,
    flags: set[str] | None = None,
    sample_id: str = "",
    model_id: str = "",
) -> float:
    provider = provider or SentenceVectors(emb)
    # совпадающие последовательности: расстояние 0 даже при полном OOV
    if provider.precomputed is None and list(ref_tokens) == list(hyp_tokens):
        return 0.0
    e_ref = provider.reference(sample_id, ref_tokens)
    e_hyp = provider.hypothesis(sample_id, model_id, hyp_tokens)
    return semdist_vectors(e_ref, e_hyp, flags)


def score_pair(
    reference: str,
    hypothesis: str,
    emb: EmbeddingTable,
    cfg: EmbERConfig,
    provider: SentenceVectors | None = None,
    sample_id: str = "",
    model_id: str = "",
) -> MetricVector:
    flags: set[str] = set()
    ref_tokens = normalize(reference)
    hyp_tokens = normalize(hypothesis)
    words = align(ref_tokens, hyp_tokens)
    chars = align_chars(reference, hypothesis)
    return MetricVector(
        wer=wer(words, flags),
        cer=cer(chars, flags),
        mer=mer(words),
        wil=wil(words),
        ember=ember(words, emb, cfg),
        semdist=semdist(ref_tokens, hyp_tokens, emb, provider, flags, sample_id, model_id),
        flags=flags,
    )


def score_all(
    records: Sequence[UtteranceRecord],
    emb: EmbeddingTable,
    cfg: EmbERConfig,
    provider: SentenceVectors | None = None,
) -> pd.DataFrame:
    """Одна строка на пару (utterance, model) в порядке манифеста и отсортированных model_id."""
    provider = provider or SentenceVectors(emb)
    rows: list[dict[str, object]] = []
    for record in records:
        for model_id in record.model_ids:
            vec = score_pair(
                record.reference,
                record.hypotheses[model_id],
                emb,
                cfg,
                provider,
                record.sample_id,
                model_id,
            )
            row: dict[str, object] = {"sample_id": record.sample_id, "model_id": model_id}
            row.update(vec.as_dict())
            row["flags"] = ";".join(sorted(vec.flags))
            rows.append(row)

    frame = pd.DataFrame(rows, columns=["sample_id", "model_id", *METRICS, "flags"])
    logger.info("Scored %d (utterance, model) pairs with provider=%s", len(frame), provider.name)
    return frame


def flag_summary(scores: pd.DataFrame) -> dict[str, object]:
    if "flags" not in scores.columns:
        return {"rows": len(scores), EMPTY_REF: 0, OOV_SENTENCE: 0, "flagged": []}
    flagged = scores[scores["flags"].astype(str) != ""]
    counts = {
        name: int(scores["flags"].astype(str).str.contains(name, regex=False).sum())
        for name in (EMPTY_REF, OOV_SENTENCE)
    }
    return {
        "rows": len(scores),
        **counts,
        "flagged": [
            {"sample_id": r.sample_id, "model_id": r.model_id, "flags": r.flags.split(";")}
            for r in flagged.itertuples(index=False)
        ],
    }
