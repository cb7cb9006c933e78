from __future__ import annotations

import unicodedata
from collections.abc import Sequence

import numpy as np

from speechaudit_hub.core.models import AlignmentResult, AlignOp

# внутри слова сохраняем апострофы и дефисы: it's, well-known
_INTRA_WORD = frozenset("'’-‐‑")


def _strip_punctuation(token: str) -> str:
    out: list[str] = []
    last = len(token) - 1
    for k, ch in enumerate(token):
        if not unicodedata.category(ch).startswith("P"):
            out.append(ch)
            continue
        if ch in _INTRA_WORD and 0 < k < last and token[k - 1].isalnum() and token[k + 1].isalnum():
            out.append(ch)
    return "".join(out)


def normalize(text: str | None) -> list[str]:
    if not text:
        return []
    text = unicodedata.normalize("NFC", text).lower()
    tokens = (_strip_punctuation(t) for t in text.split())
    return [t for t in tokens if t]


def _cost_matrix(ref_ids: np.ndarray, hyp_ids: np.ndarray) -> np.ndarray:
    n, m = len(ref_ids), len(hyp_ids)
    cols = np.arange(m + 1, dtype=np.int64)
    d = np.empty((n + 1, m + 1), dtype=np.int64)
    d[0] = cols
    for i in range(1, n + 1):
        prev = d[i - 1]
        t = np.empty(m + 1, dtype=np.int64)
        t[0] = i
        if m:
            sub = prev[:-1] + (hyp_ids != ref_ids[i - 1])
            t[1:] = np.minimum(prev[1:] + 1, sub)
        # вставки внутри строки: d[i, j] = min_k (t[k] + j - k)
        d[i] = np.minimum.accumulate(t - cols) + cols
    return d


def _encode(ref: Sequence[str], hyp: Sequence[str]) -> tuple[np.ndarray, np.ndarray]:
    vocab: dict[str, int] = {}
    ref_ids = np.fromiter((vocab.setdefault(t, len(vocab)) for t in ref), dtype=np.int64, count=len(ref))
    hyp_ids = np.fromiter((vocab.setdefault(t, len(vocab)) for t in hyp), dtype=np.int64, count=len(hyp))
    return ref_ids, hyp_ids


def _align(ref: Sequence[str], hyp: Sequence[str], level: str) -> AlignmentResult:
    ref_ids, hyp_ids = _encode(ref, hyp)
    d = _cost_matrix(ref_ids, hyp_ids)

    ops: list[AlignOp] = []
    counts = {"hit": 0, "sub": 0, "del": 0, "ins": 0}
    i, j = len(ref), len(hyp)
    # обратный проход: при равенстве стоимостей диагональ > удаление > вставка
    while i > 0 or j > 0:
        if i > 0 and j > 0:
            mismatch = int(ref_ids[i - 1] != hyp_ids[j - 1])
            if d[i, j] == d[i - 1, j - 1] + mismatch:
                name = "sub" if mismatch else "hit"
                ops.append(AlignOp(name, ref[i - 1], hyp[j - 1]))
                counts[name] += 1
                i, j = i - 1, j - 1
                continue
        if i > 0 and d[i, j] == d[i - 1, j] + 1:
            ops.append(AlignOp("del", ref[i - 1], None))
            counts["del"] += 1
            i -= 1
            continue
        ops.append(AlignOp("ins", None, hyp[j - 1]))
        counts["ins"] += 1
        j -= 1

    ops.reverse()
    return AlignmentResult(
        level=level,  # type: ignore[arg-type]
        hits=counts["hit"],
        subs=counts["sub"],
        dels=counts["del"],
        ins=counts["ins"],
        ops=tuple(ops),
    )


def align(ref_tokens: Sequence[str], hyp_tokens: Sequence[str]) -> AlignmentResult:
    return _align(list(ref_tokens), list(hyp_tokens), "word")


def align_chars(ref: str, hyp: str) -> AlignmentResult:
    """Посимвольное выравнивание нормализованного текста; пробелы между словами тоже символы."""
    ref_chars = list(" ".join(normalize(ref)))
    hyp_chars = list(" ".join(normalize(hyp)))
    return _align(ref_chars, hyp_chars, "char")
