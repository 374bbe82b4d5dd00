"""Sentence-pair corpus: reading, normalization, vocabularies and batching.

The input file holds one ``ENGLISH<TAB>FRENCH`` pair per line. Pairs are
oriented by ``direction``; the default ``fr-en`` makes French the source.
"""

from __future__ import annotations

import logging
import re
import unicodedata
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .numerics.rng import RngStream

log = logging.getLogger(__name__)

PAD, START, END, UNK = 0, 1, 2, 3
RESERVED = ("<pad>", "<start>", "<end>", "<unk>")
MAX_LEN = 50
DIRECTIONS = ("fr-en", "en-fr")


@dataclass(frozen=True)
class SentencePair:
    src: tuple
    tgt: tuple
    raw_line_no: int


_SEP_PUNCT = re.compile(r"([.!?])")
_NON_ALPHA = re.compile(r"[^a-z.!?]+")


def normalize(s: str) -> list[str]:
    """Strip accents, lowercase, split off ``.!?`` and drop other symbols."""
    s = "".join(c for c in unicodedata.normalize("NFD", s) if unicodedata.category(c) != "Mn")
    s = s.lower().strip()
    s = _SEP_PUNCT.sub(r" \1 ", s)
    s = _NON_ALPHA.sub(" ", s)
    return s.split()


def load_pairs(path, direction: str = "fr-en", max_tokens: int | None = None,
               prefixes: tuple | None = None, counters: Counter | None = None) -> list[SentencePair]:
    """Read, normalize and filter the pair file.

    Lines with fewer than two tab-separated fields are skipped and counted
    under ``counters["malformed"]``; pairs dropped by the filters are counted
    under ``counters["filtered"]``. Fields past the second are ignored. ``prefixes`` restricts pairs to English
    sides starting with one of the given normalized prefixes.
    """
    if direction not in DIRECTIONS:
        raise ValueError(f"direction must be one of {DIRECTIONS}, got {direction!r}")
    text = Path(path).read_text(encoding="utf-8")
    if not text.strip():
        raise ValueError(f"corpus {path} is empty")
    counters = Counter() if counters is None else counters
    pairs = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        line = line.rstrip("\r")
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) < 2:
            counters["malformed"] += 1
            continue
        en, fr = normalize(fields[0]), normalize(fields[1])
        if not en or not fr:
            counters["filtered"] += 1
            continue
        if max_tokens is not None and (len(en) > max_tokens or len(fr) > max_tokens):
            counters["filtered"] += 1
            continue
        if prefixes and not " ".join(en).startswith(tuple(prefixes)):
            counters["filtered"] += 1
            continue
        src, tgt = (fr, en) if direction == "fr-en" else (en, fr)
        pairs.append(SentencePair(tuple(src), tuple(tgt), line_no))
    if counters["malformed"]:
        log.warning("skipped %d malformed lines in %s", counters["malformed"], path)
    if not pairs:
        raise ValueError(f"no usable sentence pairs in {path}")
    return pairs


class Vocab:
    def __init__(self, tokens):
        tokens = list(tokens)
        if tuple(tokens[:4]) != RESERVED:
            raise ValueError("vocabulary must start with the reserved tokens")
        self.itos = tokens
        self.stoi = {t: i for i, t in enumerate(tokens)}
        if len(self.stoi) != len(tokens):
            raise ValueError("duplicate tokens in vocabulary")

    def __len__(self):
        return len(self.itos)

    def __contains__(self, tok):
        return tok in self.stoi

    def encode(self, tokens) -> list[int]:
        return [self.stoi.get(t, UNK) for t in tokens]

    def decode(self, ids) -> list[str]:
        return [self.itos[i] for i in ids]

    def save(self, path) -> None:
        Path(path).write_text("\n".join(self.itos) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocab":
        return cls(Path(path).read_text(encoding="utf-8").splitlines())


def _ranked(sentences, cap: int) -> Vocab:
    counts = Counter()
    first = {}
    for sent in sentences:
        for tok in sent:
            counts[tok] += 1
            first.setdefault(tok, len(first))
    ranked = sorted(counts, key=lambda t: (-counts[t], first[t]))
    return Vocab(list(RESERVED) + ranked[: max(cap - len(RESERVED), 0)])


def build_vocab(pairs, cap: int = 8000) -> tuple[Vocab, Vocab]:
    if not pairs:
        raise ValueError("cannot build a vocabulary from no pairs")
    return _ranked((p.src for p in pairs), cap), _ranked((p.tgt for p in pairs), cap)


@dataclass
class Batch:
    src_ids: np.ndarray
    tgt_ids: np.ndarray
    src_lengths: np.ndarray
    tgt_lengths: np.ndarray
    index: np.ndarray

    def __len__(self):
        return self.src_ids.shape[0]


def frame_source(ids, max_len: int = MAX_LEN) -> list[int]:
    return list(ids[: max_len - 1]) + [END]


def frame_target(ids, max_len: int = MAX_LEN) -> list[int]:
    return [START] + list(ids[: max_len - 2]) + [END]


def encode_pairs(pairs, src_vocab: Vocab, tgt_vocab: Vocab, max_len: int = MAX_LEN):
    """Padded id matrices for every pair, in input order."""
    n = len(pairs)
    src = np.full((n, max_len), PAD, dtype=np.int64)
    tgt = np.full((n, max_len), PAD, dtype=np.int64)
    sl = np.zeros(n, dtype=np.int64)
    tl = np.zeros(n, dtype=np.int64)
    for i, p in enumerate(pairs):
        s = frame_source(src_vocab.encode(p.src), max_len)
        t = frame_target(tgt_vocab.encode(p.tgt), max_len)
        src[i, : len(s)] = s
        tgt[i, : len(t)] = t
        sl[i], tl[i] = len(s), len(t)
    return src, tgt, sl, tl


def make_batches(pairs, src_vocab: Vocab, tgt_vocab: Vocab, batch_size: int,
                 max_len: int = MAX_LEN, rng: RngStream | None = None,
                 encoded=None) -> list[Batch]:
    """Split into batches after an optional seeded shuffle.

    Source rows are ``tokens[:max_len-1] + END``; target rows are
    ``START + tokens[:max_len-2] + END``. Both are PAD-filled to ``max_len``.
    """
    src, tgt, sl, tl = encoded if encoded is not None else encode_pairs(pairs, src_vocab, tgt_vocab, max_len)
    n = src.shape[0]
    order = rng.generator().permutation(n) if rng is not None else np.arange(n)
    batches = []
    for start in range(0, n, batch_size):
        idx = order[start:start + batch_size]
        batches.append(Batch(src[idx], tgt[idx], sl[idx], tl[idx], idx))
    return batches


def split_train_val(pairs, val_fraction: float, rng: RngStream):
    if not 0.0 < val_fraction < 1.0:
        raise ValueError(f"val_fraction must lie in (0, 1), got {val_fraction}")
    n = len(pairs)
    n_val = int(round(n * val_fraction))
    perm = rng.generator().permutation(n)
    val_idx = np.sort(perm[:n_val])
    train_idx = np.sort(perm[n_val:])
    return [pairs[i] for i in train_idx], [pairs[i] for i in val_idx]
