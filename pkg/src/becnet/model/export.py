"""Cross-attention heatmaps for one translated sentence."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..corpus import END, Vocab, frame_source, normalize
from .transformer import Seq2SeqTransformer

log = logging.getLogger(__name__)


@dataclass
class AttentionMaps:
    src_tokens: list[str]
    hyp_tokens: list[str]
    weights: list[np.ndarray]  # per layer, (heads, len(hyp_tokens), len(src_tokens))


def attention_maps(model: Seq2SeqTransformer, sentence: str, src_vocab: Vocab, tgt_vocab: Vocab) -> AttentionMaps:
    """Greedy-translate ``sentence`` and keep every decoder layer's cross-attention.

    Rows are decoder steps labelled by the token each step emitted (the final
    row is ``<end>`` when the model stops on its own); columns are the framed
    source tokens, ending in ``<end>``.
    """
    tokens = normalize(sentence)
    unknown = [t for t in tokens if t not in src_vocab]
    if unknown:
        log.warning("mapping %d unknown source token(s) to <unk>: %s", len(unknown), " ".join(unknown))
    ids = frame_source(src_vocab.encode(tokens), model.cfg.max_len)
    src = np.asarray([ids], dtype=np.int64)
    hyps, weights = model.translate_ids(src, np.asarray([len(ids)]), retain=True)
    hyp_ids = hyps[0]
    steps = weights[0].shape[2]
    rows = min(steps, len(hyp_ids) + 1)
    hyp_tokens = tgt_vocab.decode(hyp_ids)[:rows]
    if rows > len(hyp_ids):
        hyp_tokens.append(tgt_vocab.itos[END])
    return AttentionMaps(src_vocab.decode(ids), hyp_tokens, [w[0, :, :rows, :] for w in weights])


def heatmap_csv(src_tokens, hyp_tokens, matrix: np.ndarray) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["", *src_tokens])
    for tok, row in zip(hyp_tokens, matrix):
        w.writerow([tok, *(f"{x:.8f}" for x in row)])
    return buf.getvalue()


def export_attention(maps: AttentionMaps, out_dir) -> list[Path]:
    """One CSV per (layer, head): header row of source tokens, first column hypothesis tokens."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for layer, w in enumerate(maps.weights):
        for head in range(w.shape[0]):
            path = out / f"attention_layer{layer}_head{head}.csv"
            path.write_text(heatmap_csv(maps.src_tokens, maps.hyp_tokens, w[head]), encoding="utf-8")
            paths.append(path)
    return paths
