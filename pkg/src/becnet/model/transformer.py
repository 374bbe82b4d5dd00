"""Pre-LN encoder-decoder Transformer with an erasure channel between the stacks.

Parameters live in a flat ``dict[str, np.ndarray]``. The same forward code
runs on tape variables during training and on plain arrays for evaluation.
Greedy decoding uses a separate cached path (:class:`DecodeState`) that
recomputes nothing for earlier positions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..channels import AwgnConfig, ChannelConfig, add_awgn, channel_forward
from ..corpus import END, MAX_LEN, PAD, START
from ..numerics.rng import RngStream
from ..numerics.tape import (
    Var,
    add,
    embedding,
    layer_norm,
    matmul,
    relu,
    reshape,
    scale,
    softmax,
    transpose,
)

NEG_INF = -1e9


@dataclass
class ModelConfig:
    src_vocab: int
    tgt_vocab: int
    d_model: int = 128
    n_heads: int = 4
    n_layers: int = 2
    d_ffn: int = 512
    max_len: int = MAX_LEN
    channel: ChannelConfig | None = field(default_factory=ChannelConfig)
    awgn: AwgnConfig | None = None

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads


def sinusoidal_positions(length: int, d_model: int) -> np.ndarray:
    pos = np.arange(length, dtype=np.float64)[:, None]
    i = np.arange(0, d_model, 2, dtype=np.float64)
    angle = pos / np.power(10000.0, i / d_model)
    pe = np.zeros((length, d_model))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle[:, : d_model // 2])
    return pe


def init_params(cfg: ModelConfig, rng: RngStream, dtype=np.float32) -> dict[str, np.ndarray]:
    gen = rng.generator()
    D, F = cfg.d_model, cfg.d_ffn
    p: dict[str, np.ndarray] = {}

    def dense(name, fan_in, fan_out):
        lim = math.sqrt(6.0 / (fan_in + fan_out))
        p[name] = gen.uniform(-lim, lim, size=(fan_in, fan_out))

    def norm(name):
        p[name + ".g"] = np.ones(D)
        p[name + ".b"] = np.zeros(D)

    def attn(prefix):
        for w in ("wq", "wk", "wv", "wo"):
            dense(f"{prefix}.{w}", D, D)

    def ffn(prefix):
        dense(prefix + ".w1", D, F)
        p[prefix + ".b1"] = np.zeros(F)
        dense(prefix + ".w2", F, D)
        p[prefix + ".b2"] = np.zeros(D)

    p["src_emb"] = gen.standard_normal((cfg.src_vocab, D)) / math.sqrt(D)
    p["tgt_emb"] = gen.standard_normal((cfg.tgt_vocab, D)) / math.sqrt(D)
    for layer in range(cfg.n_layers):
        e = f"enc.{layer}"
        norm(e + ".ln1")
        attn(e + ".attn")
        norm(e + ".ln2")
        ffn(e + ".ffn")
    norm("enc.ln_f")
    for layer in range(cfg.n_layers):
        d = f"dec.{layer}"
        norm(d + ".ln1")
        attn(d + ".self")
        norm(d + ".ln2")
        attn(d + ".cross")
        norm(d + ".ln3")
        ffn(d + ".ffn")
    norm("dec.ln_f")
    dense("out.w", D, cfg.tgt_vocab)
    p["out.b"] = np.zeros(cfg.tgt_vocab)
    return {k: v.astype(dtype) for k, v in p.items()}


def _split_heads(x, n_heads):
    B, T, D = x.shape
    return transpose(reshape(x, (B, T, n_heads, D // n_heads)), (0, 2, 1, 3))


def _merge_heads(x):
    B, H, T, dk = x.shape
    return reshape(transpose(x, (0, 2, 1, 3)), (B, T, H * dk))


def attention(Q, K, V, bias=None):
    """softmax(Q K^T / sqrt(d_k) + bias) V over the last two axes.

    Returns ``(output, weights)``; ``bias`` is a constant additive mask.
    """
    dk = Q.shape[-1]
    if K.shape[-1] != dk or K.shape[-2] != V.shape[-2]:
        raise ValueError(f"incompatible attention shapes Q{Q.shape} K{K.shape} V{V.shape}")
    logits = scale(matmul(Q, transpose(K, _swap_last(K.ndim))), 1.0 / math.sqrt(dk))
    w = softmax(logits, bias=bias)
    return matmul(w, V), w


def _swap_last(ndim):
    axes = list(range(ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return tuple(axes)


def _value(x):
    return x.value if isinstance(x, Var) else x


class Seq2SeqTransformer:
    def __init__(self, cfg: ModelConfig, params: dict[str, np.ndarray], eval_seed: int = 0):
        self.cfg = cfg
        self.params = params
        self.eval_seed = eval_seed
        self.dtype = next(iter(params.values())).dtype
        self._pe = sinusoidal_positions(cfg.max_len, cfg.d_model).astype(self.dtype)
        self.retained_attention: list[np.ndarray] | None = None
        self.degenerate_rows = 0

    @classmethod
    def initialize(cls, cfg: ModelConfig, seed: int, dtype=np.float32, eval_seed: int | None = None):
        params = init_params(cfg, RngStream(seed).named("init"), dtype=dtype)
        return cls(cfg, params, eval_seed=seed if eval_seed is None else eval_seed)

    # --- building blocks --------------------------------------------------

    def _ln(self, P, name, x):
        return layer_norm(x, P[name + ".g"], P[name + ".b"])

    def _ffn(self, P, name, x):
        h = relu(add(matmul(x, P[name + ".w1"]), P[name + ".b1"]))
        return add(matmul(h, P[name + ".w2"]), P[name + ".b2"])

    def _mha(self, P, name, x, mem, bias, keep=None):
        H = self.cfg.n_heads
        q = _split_heads(matmul(x, P[name + ".wq"]), H)
        k = _split_heads(matmul(mem, P[name + ".wk"]), H)
        v = _split_heads(matmul(mem, P[name + ".wv"]), H)
        out, w = attention(q, k, v, bias)
        if keep is not None:
            keep.append(np.array(_value(w)))
        return matmul(_merge_heads(out), P[name + ".wo"])

    def _embed(self, P, table, ids):
        if ids.shape[1] > self.cfg.max_len:
            raise ValueError(f"sequence length {ids.shape[1]} exceeds max_len={self.cfg.max_len}")
        vocab = self.params[table].shape[0]
        if ids.size and (ids.min() < 0 or ids.max() >= vocab):
            raise ValueError(f"token id out of range for vocabulary of size {vocab}")
        x = scale(embedding(P[table], ids), math.sqrt(self.cfg.d_model))
        return add(x, self._pe[: ids.shape[1]])

    def key_bias(self, lengths, width: int) -> np.ndarray:
        valid = np.arange(width)[None, :] < np.asarray(lengths)[:, None]
        return np.where(valid, 0.0, NEG_INF).astype(self.dtype)[:, None, None, :]

    def causal_bias(self, width: int) -> np.ndarray:
        tri = np.tril(np.ones((width, width), dtype=bool))
        return np.where(tri, 0.0, NEG_INF).astype(self.dtype)[None, None]

    # --- forward passes ---------------------------------------------------

    def encode(self, P, src_ids, src_lengths, train: bool = False, rng: RngStream | None = None):
        """Encoder output (B, S, D) before the channel."""
        x = self._embed(P, "src_emb", src_ids)
        if train and self.cfg.awgn is not None:
            x = add_awgn(x, self.cfg.awgn, None if rng is None else rng.named("awgn"))
        bias = self.key_bias(src_lengths, src_ids.shape[1])
        for layer in range(self.cfg.n_layers):
            e = f"enc.{layer}"
            h = self._ln(P, e + ".ln1", x)
            x = add(x, self._mha(P, e + ".attn", h, h, bias))
            x = add(x, self._ffn(P, e + ".ffn", self._ln(P, e + ".ln2", x)))
        return self._ln(P, "enc.ln_f", x)

    def interface_channel(self, enc_out, rng: RngStream | None):
        """Erasure channel on every (batch, position) row of the encoder output.

        An identity configuration bypasses the channel entirely, including the
        renormalization, so the model reduces to the plain Transformer.
        """
        cfg = self.cfg.channel
        if cfg is None or cfg.is_identity:
            return enc_out
        out, n_deg = channel_forward(enc_out, cfg, None if rng is None else rng.named("chan"))
        self.degenerate_rows += n_deg
        return out

    def decode(self, P, mem, src_lengths, dec_in, retain: bool = False):
        """Logits (B, T, V) for the decoder inputs ``dec_in`` given channelled memory."""
        y = self._embed(P, "tgt_emb", dec_in)
        T = dec_in.shape[1]
        self_bias = self.causal_bias(T)
        cross_bias = self.key_bias(src_lengths, _value(mem).shape[1])
        keep = [] if retain else None
        for layer in range(self.cfg.n_layers):
            d = f"dec.{layer}"
            h = self._ln(P, d + ".ln1", y)
            y = add(y, self._mha(P, d + ".self", h, h, self_bias))
            y = add(y, self._mha(P, d + ".cross", self._ln(P, d + ".ln2", y), mem, cross_bias, keep))
            y = add(y, self._ffn(P, d + ".ffn", self._ln(P, d + ".ln3", y)))
        y = self._ln(P, "dec.ln_f", y)
        if retain:
            self.retained_attention = keep
        return add(matmul(y, P["out.w"]), P["out.b"])

    def memory(self, P, src_ids, src_lengths, train: bool, rng: RngStream | None):
        enc = self.encode(P, src_ids, src_lengths, train=train, rng=rng)
        return self.interface_channel(enc, rng)

    def eval_rng(self, index: int = 0) -> RngStream:
        return RngStream(self.eval_seed).named("eval").child(index)

    # --- cached greedy decoding -------------------------------------------

    def start_decoding(self, mem: np.ndarray, src_lengths) -> "DecodeState":
        P = self.params
        H = self.cfg.n_heads
        cross = []
        for layer in range(self.cfg.n_layers):
            d = f"dec.{layer}.cross"
            cross.append((_split_heads(mem @ P[d + ".wk"], H), _split_heads(mem @ P[d + ".wv"], H)))
        return DecodeState(
            cross_kv=cross,
            self_k=[None] * self.cfg.n_layers,
            self_v=[None] * self.cfg.n_layers,
            cross_bias=self.key_bias(src_lengths, mem.shape[1]),
            pos=0,
        )

    def decode_step(self, state: "DecodeState", tokens: np.ndarray, retain: bool = False) -> np.ndarray:
        """Feed one token per row and return next-token logits (B, V)."""
        P = self.params
        H = self.cfg.n_heads
        if state.pos >= self.cfg.max_len:
            raise ValueError(f"decoder prefix exceeds max_len={self.cfg.max_len}")
        y = P["tgt_emb"][tokens][:, None, :] * self.dtype.type(math.sqrt(self.cfg.d_model))
        y = y + self._pe[state.pos: state.pos + 1]
        for layer in range(self.cfg.n_layers):
            d = f"dec.{layer}"
            h = layer_norm(y, P[d + ".ln1.g"], P[d + ".ln1.b"])
            q = _split_heads(h @ P[d + ".self.wq"], H)
            k = _split_heads(h @ P[d + ".self.wk"], H)
            v = _split_heads(h @ P[d + ".self.wv"], H)
            if state.self_k[layer] is not None:
                k = np.concatenate([state.self_k[layer], k], axis=2)
                v = np.concatenate([state.self_v[layer], v], axis=2)
            state.self_k[layer], state.self_v[layer] = k, v
            out, _ = attention(q, k, v)
            y = y + _merge_heads(out) @ P[d + ".self.wo"]
            h = layer_norm(y, P[d + ".ln2.g"], P[d + ".ln2.b"])
            q = _split_heads(h @ P[d + ".cross.wq"], H)
            ck, cv = state.cross_kv[layer]
            out, w = attention(q, ck, cv, state.cross_bias)
            if retain:
                state.cross_weights[layer].append(w[:, :, 0, :])
            y = y + _merge_heads(out) @ P[d + ".cross.wo"]
            h = layer_norm(y, P[d + ".ln3.g"], P[d + ".ln3.b"])
            y = y + (np.maximum(h @ P[d + ".ffn.w1"] + P[d + ".ffn.b1"], 0) @ P[d + ".ffn.w2"] + P[d + ".ffn.b2"])
        y = layer_norm(y, P["dec.ln_f.g"], P["dec.ln_f.b"])
        state.pos += 1
        return (y @ P["out.w"] + P["out.b"])[:, 0, :]

    def greedy_ids(self, mem: np.ndarray, src_lengths, steps: int, retain: bool = False,
                   stop_at_end: bool = True):
        """Greedy continuation of START for up to ``steps`` tokens, rows in lockstep.

        Returns ``(ids, state)``. Rows are not cut at END; with ``stop_at_end``
        decoding stops early once every row has produced END.
        """
        B = mem.shape[0]
        state = self.start_decoding(mem, src_lengths)
        if retain:
            state.cross_weights = [[] for _ in range(self.cfg.n_layers)]
        tok = np.full(B, START, dtype=np.int64)
        out = np.zeros((B, steps), dtype=np.int64)
        done = np.zeros(B, dtype=bool)
        for t in range(steps):
            logits = self.decode_step(state, tok, retain=retain)
            tok = np.argmax(logits, axis=-1)
            out[:, t] = tok
            done |= tok == END
            if stop_at_end and done.all():
                out = out[:, : t + 1]
                break
        return out, state

    def translate_ids(self, src_ids: np.ndarray, src_lengths, rng: RngStream | None = None,
                      retain: bool = False):
        """Greedy translation of a batch of framed source rows.

        Returns a list of token-id lists (without START/END) and, with
        ``retain``, per-layer cross-attention weights of shape
        (B, heads, steps, src_len).
        """
        S = int(np.max(src_lengths))
        src = src_ids[:, :S]
        mem = self.memory(self.params, src, src_lengths, train=False, rng=rng if rng is not None else self.eval_rng())
        ids, state = self.greedy_ids(mem, src_lengths, self.cfg.max_len - 1, retain=retain)
        hyps = []
        for row in ids:
            toks = []
            for t in row:
                if t == END:
                    break
                toks.append(int(t))
            hyps.append(toks)
        if retain:
            weights = [np.stack(ws, axis=2) for ws in state.cross_weights]
            return hyps, weights
        return hyps


@dataclass
class DecodeState:
    cross_kv: list
    self_k: list
    self_v: list
    cross_bias: np.ndarray
    pos: int
    cross_weights: list = field(default_factory=list)


def batch_inputs(batch, teacher: bool = True):
    """Trim a padded batch to its longest row and split decoder inputs/labels."""
    S = int(batch.src_lengths.max())
    T = int(batch.tgt_lengths.max())
    src = batch.src_ids[:, :S]
    tgt = batch.tgt_ids[:, :T]
    return src, tgt[:, :-1], tgt[:, 1:]


def token_stats(logits: np.ndarray, labels: np.ndarray, pad_id: int = PAD):
    keep = labels != pad_id
    pred = np.argmax(logits, axis=-1)
    return int(((pred == labels) & keep).sum()), int(keep.sum())
