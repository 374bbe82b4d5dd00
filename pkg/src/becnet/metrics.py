"""Token accuracy and smoothed sentence-level BLEU (0-100 scale)."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import asdict, dataclass, field

import numpy as np

BLEU_EPSILON = 1e-9


@dataclass
class EvalReport:
    token_accuracy: float
    bleu_avg: float
    n_sentences: int
    loss: float = float("nan")
    per_sentence_bleu: list = field(default_factory=list)

    def to_dict(self, include_sentences: bool = False) -> dict:
        d = asdict(self)
        if not include_sentences:
            d.pop("per_sentence_bleu")
        return d


def token_accuracy(hyp_ids, ref_ids, pad_id: int = 0) -> float:
    """Share of non-PAD reference positions where the hypothesis id matches."""
    hyp = np.asarray(hyp_ids)
    ref = np.asarray(ref_ids)
    if hyp.shape != ref.shape:
        raise ValueError(f"length mismatch: {hyp.shape} vs {ref.shape}")
    keep = ref != pad_id
    n = int(keep.sum())
    if n == 0:
        return float("nan")
    return int(((hyp == ref) & keep).sum()) / n


def _ngrams(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def sentence_bleu(hyp, ref, max_n: int = 4) -> float:
    """Smoothed BLEU of one hypothesis against one reference.

    Orders above the hypothesis length are left out of the geometric mean.
    A zero clipped match count is replaced by ``BLEU_EPSILON``.
    """
    hyp = list(hyp)
    ref = list(ref)
    if not hyp:
        return 0.0
    orders = min(max_n, len(hyp))
    log_p = 0.0
    for n in range(1, orders + 1):
        h = _ngrams(hyp, n)
        r = _ngrams(ref, n)
        match = sum(min(c, r[g]) for g, c in h.items())
        total = len(hyp) - n + 1
        log_p += math.log((match if match > 0 else BLEU_EPSILON) / total)
    bp = math.exp(min(0.0, 1.0 - len(ref) / len(hyp)))
    return 100.0 * bp * math.exp(log_p / orders)


def average_bleu(hyps, refs, max_n: int = 4) -> tuple[float, list[float]]:
    scores = [sentence_bleu(h, r, max_n) for h, r in zip(hyps, refs)]
    return (math.fsum(scores) / len(scores) if scores else float("nan")), scores
