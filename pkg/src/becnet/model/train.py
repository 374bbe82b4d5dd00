"""Teacher-forced training with Adam under the inverse-square-root warmup schedule."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from ..corpus import PAD, Batch, Vocab, make_batches
from ..metrics import EvalReport, average_bleu
from ..numerics.rng import RngStream
from ..numerics.tape import Tape, cross_entropy
from .transformer import Seq2SeqTransformer, _value, batch_inputs, token_stats

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 80
    batch_size: int = 64
    teacher_forcing_ratio: float = 0.5
    adam_beta1: float = 0.9
    adam_beta2: float = 0.98
    adam_eps: float = 1e-9
    warmup_steps: int = 400
    lr_factor: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.teacher_forcing_ratio <= 1.0:
            raise ValueError("teacher_forcing_ratio must lie in [0, 1]")
        if self.batch_size < 1 or self.epochs < 0 or self.warmup_steps < 1:
            raise ValueError("batch_size and warmup_steps must be positive, epochs non-negative")


def lr_schedule(step: int, d_model: int, warmup_steps: int, factor: float = 1.0) -> float:
    if step < 1:
        raise ValueError("learning-rate schedule starts at step 1")
    return factor * d_model ** -0.5 * min(step ** -0.5, step * warmup_steps ** -1.5)


class Adam:
    def __init__(self, params: dict[str, np.ndarray], beta1=0.9, beta2=0.98, eps=1e-9):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def update(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray], lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1 - b1 ** self.t
        c2 = 1 - b2 ** self.t
        for k, p in params.items():
            g = grads.get(k)
            if g is None:
                g = np.zeros_like(p)
            m, v = self.m[k], self.v[k]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * (g * g)
            step = (lr / c1) * m / (np.sqrt(v / c2) + self.eps)
            p -= step.astype(p.dtype, copy=False)


@dataclass
class EpochMetrics:
    loss: float
    accuracy: float
    tokens: int


class Trainer:
    """Owns the optimizer state and the global step counter.

    Randomness for step ``n`` (noise, erasure masks, teacher-forcing coins)
    comes from ``RngStream(seed).named("train").child(n)``, so resuming from a
    checkpoint replays exactly the draws of an uninterrupted run.
    """

    def __init__(self, model: Seq2SeqTransformer, cfg: TrainConfig):
        self.model = model
        self.cfg = cfg
        self.opt = Adam(model.params, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
        self.step = 0
        self.root = RngStream(cfg.seed)

    def lr(self, step: int) -> float:
        return lr_schedule(step, self.model.cfg.d_model, self.cfg.warmup_steps, self.cfg.lr_factor)

    def decoder_inputs(self, mem, src_lengths, dec_in, rng: RngStream) -> np.ndarray:
        """Replace gold prefixes by the model's own greedy prefixes on non-forced rows."""
        B, width = dec_in.shape
        forced = rng.named("tf").generator().random(B) < self.cfg.teacher_forcing_ratio
        if forced.all() or width < 2:
            return dec_in
        rows = np.flatnonzero(~forced)
        gen, _ = self.model.greedy_ids(_value(mem)[rows], src_lengths[rows], width - 1, stop_at_end=False)
        out = dec_in.copy()
        out[rows, 1:] = gen[:, : width - 1]
        return out

    def train_step(self, batch: Batch) -> tuple[float, int, int]:
        model = self.model
        src, dec_in, labels = batch_inputs(batch)
        rng = self.root.named("train").child(self.step)
        tape = Tape()
        P = {k: tape.leaf(v) for k, v in model.params.items()}
        mem = model.memory(P, src, batch.src_lengths, train=True, rng=rng)
        dec_in = self.decoder_inputs(mem, batch.src_lengths, dec_in, rng)
        logits = model.decode(P, mem, batch.src_lengths, dec_in)
        loss = cross_entropy(logits, labels, ignore_index=PAD)
        value = float(loss.value)
        if not math.isfinite(value):
            raise TrainingDiverged(
                f"non-finite loss {value} at step {self.step + 1} "
                f"(lr={self.lr(self.step + 1):.3g}, batch rows={len(batch)})"
            )
        tape.backward(loss)
        grads = {k: v.grad for k, v in P.items()}
        self.step += 1
        self.opt.update(model.params, grads, self.lr(self.step))
        correct, total = token_stats(logits.value, labels)
        return value, correct, total

    def train_epoch(self, batches: list[Batch]) -> EpochMetrics:
        loss_sum = []
        correct = total = 0
        for batch in batches:
            loss, c, n = self.train_step(batch)
            loss_sum.append(loss * n)
            correct += c
            total += n
        return EpochMetrics(math.fsum(loss_sum) / max(total, 1), correct / max(total, 1), total)


def evaluate_teacher_forced(model: Seq2SeqTransformer, batches: list[Batch]) -> EpochMetrics:
    """Loss and positional token accuracy with gold prefixes, channel active."""
    loss_sum = []
    correct = total = 0
    for i, batch in enumerate(batches):
        src, dec_in, labels = batch_inputs(batch)
        mem = model.memory(model.params, src, batch.src_lengths, train=False, rng=model.eval_rng(i))
        logits = model.decode(model.params, mem, batch.src_lengths, dec_in)
        c, n = token_stats(logits, labels)
        loss_sum.append(float(cross_entropy(logits, labels, ignore_index=PAD)) * n)
        correct += c
        total += n
    return EpochMetrics(math.fsum(loss_sum) / max(total, 1), correct / max(total, 1), total)


def translate_pairs(model: Seq2SeqTransformer, pairs, src_vocab: Vocab, tgt_vocab: Vocab,
                    batch_size: int = 128) -> list[list[str]]:
    batches = make_batches(pairs, src_vocab, tgt_vocab, batch_size, model.cfg.max_len)
    hyps: list[list[str]] = []
    for i, batch in enumerate(batches):
        ids = model.translate_ids(batch.src_ids, batch.src_lengths, rng=model.eval_rng(10_000_000 + i))
        hyps.extend(tgt_vocab.decode(h) for h in ids)
    return hyps


def corpus_eval(model: Seq2SeqTransformer, pairs, src_vocab: Vocab, tgt_vocab: Vocab,
                batch_size: int = 128, with_bleu: bool = True) -> EvalReport:
    if not pairs:
        raise ValueError("validation set is empty")
    batches = make_batches(pairs, src_vocab, tgt_vocab, batch_size, model.cfg.max_len)
    tf = evaluate_teacher_forced(model, batches)
    if not with_bleu:
        return EvalReport(tf.accuracy, float("nan"), len(pairs), loss=tf.loss)
    hyps = translate_pairs(model, pairs, src_vocab, tgt_vocab, batch_size)
    bleu, per = average_bleu(hyps, [list(p.tgt) for p in pairs])
    return EvalReport(tf.accuracy, bleu, len(pairs), loss=tf.loss, per_sentence_bleu=per)
