import math

import numpy as np
import pytest

from becnet.channels import AwgnConfig, ChannelConfig
from becnet.corpus import END, PAD, SentencePair, build_vocab, make_batches
from becnet.model.checkpoint import load_checkpoint, read_checkpoint, save_checkpoint
from becnet.model.export import attention_maps, export_attention
from becnet.model.train import TrainConfig, Trainer, lr_schedule
from becnet.model.transformer import ModelConfig, Seq2SeqTransformer, attention, batch_inputs
from becnet.numerics.rng import RngStream
from becnet.numerics.tape import Tape, cross_entropy, finite_difference


def P(src, tgt):
    return SentencePair(tuple(src.split()), tuple(tgt.split()), 0)


PAIRS = [P("le chat dort .", "the cat sleeps ."), P("il mange .", "he eats ."),
         P("elle voit le chien .", "she sees the dog ."), P("je suis la .", "i am here .")]
SV, TV = build_vocab(PAIRS)


def tiny(channel=None, awgn=None, dtype=np.float32, d=16, seed=0, **kw):
    cfg = ModelConfig(len(SV), len(TV), d_model=d, n_heads=2, n_layers=kw.pop("layers", 2), d_ffn=2 * d,
                      max_len=12, channel=channel, awgn=awgn, **kw)
    return Seq2SeqTransformer.initialize(cfg, seed, dtype=dtype)


def batch(pairs=PAIRS, bs=4):
    return make_batches(pairs, SV, TV, bs, max_len=12)[0]


# --- attention -----------------------------------------------------------------

def test_attention_single_position():
    g = np.random.default_rng(0)
    Q, K, V = g.standard_normal((1, 1, 4)), g.standard_normal((1, 1, 4)), g.standard_normal((1, 1, 4))
    out, w = attention(Q, K, V)
    np.testing.assert_array_equal(out, V)
    np.testing.assert_array_equal(w, [[[1.0]]])


def test_attention_identical_keys():
    K = np.ones((1, 2, 3))
    _, w = attention(np.ones((1, 1, 3)), K, np.arange(6.0).reshape(1, 2, 3))
    np.testing.assert_allclose(w, [[[0.5, 0.5]]], atol=1e-15)


def test_attention_dense_oracle():
    g = np.random.default_rng(1)
    Q, K, V = (g.standard_normal((3, 5)) for _ in range(3))
    out, _ = attention(Q[None], K[None], V[None])
    ref = np.zeros((3, 5))
    for i in range(3):
        logits = [sum(Q[i, k] * K[j, k] for k in range(5)) / math.sqrt(5) for j in range(3)]
        m = max(logits)
        e = [math.exp(x - m) for x in logits]
        z = sum(e)
        for j in range(3):
            ref[i] += e[j] / z * V[j]
    np.testing.assert_allclose(out[0], ref, rtol=0, atol=1e-10)


# --- forward contracts -------------------------------------------------------------

def test_encode_shape():
    m = tiny()
    src = np.array([[4, 5, 6, 7, 8, 9, END]])
    assert m.encode(m.params, src, [7]).shape == (1, 7, 16)


def test_awgn_zero_equals_absent():
    b = batch()
    src, _, _ = batch_inputs(b)
    a = tiny(awgn=None)
    z = tiny(awgn=AwgnConfig(0.0, 0.0))
    ea = a.encode(a.params, src, b.src_lengths, train=True, rng=RngStream(1))
    ez = z.encode(z.params, src, b.src_lengths, train=True, rng=RngStream(1))
    assert ea.tobytes() == ez.tobytes()


@pytest.mark.parametrize("channel", [ChannelConfig("random", 1.0), ChannelConfig("threshold", 0.0)])
def test_identity_channel_matches_plain_model(channel):
    b = batch()
    src, dec_in, _ = batch_inputs(b)
    plain, chan = tiny(channel=None), tiny(channel=channel)
    outs = []
    for m in (plain, chan):
        mem = m.memory(m.params, src, b.src_lengths, train=True, rng=RngStream(2))
        outs.append(m.decode(m.params, mem, b.src_lengths, dec_in))
    assert outs[0].tobytes() == outs[1].tobytes()


def test_channel_renormalizes_memory_rows():
    m = tiny(channel=ChannelConfig("random", 0.6))
    b = batch()
    src, _, _ = batch_inputs(b)
    mem = m.memory(m.params, src, b.src_lengths, train=False, rng=RngStream(3))
    norms = np.linalg.norm(mem.astype(np.float64), axis=-1)
    assert np.all((np.abs(norms - 1) < 1e-5) | (norms == 0))


def test_decoder_is_causal():
    m = tiny()
    b = batch()
    src, dec_in, _ = batch_inputs(b)
    mem = m.memory(m.params, src, b.src_lengths, False, None)
    base = m.decode(m.params, mem, b.src_lengths, dec_in)
    poked = dec_in.copy()
    poked[:, -1] = 5
    out = m.decode(m.params, mem, b.src_lengths, poked)
    np.testing.assert_array_equal(out[:, :-1], base[:, :-1])


def test_source_padding_is_ignored():
    m = tiny()
    b = batch()
    src, dec_in, _ = batch_inputs(b)
    short = int(np.argmin(b.src_lengths))
    assert b.src_lengths[short] < src.shape[1]
    noisy = src.copy()
    noisy[short, b.src_lengths[short]:] = 7
    outs = []
    for s in (src, noisy):
        mem = m.memory(m.params, s, b.src_lengths, False, None)
        outs.append(m.decode(m.params, mem, b.src_lengths, dec_in)[short])
    np.testing.assert_allclose(outs[0], outs[1], rtol=0, atol=1e-6)


def test_cached_decoding_matches_full_pass():
    m = tiny(dtype=np.float64)
    b = batch()
    src, dec_in, _ = batch_inputs(b)
    mem = m.memory(m.params, src, b.src_lengths, False, None)
    full = m.decode(m.params, mem, b.src_lengths, dec_in)
    state = m.start_decoding(mem, b.src_lengths)
    for t in range(dec_in.shape[1]):
        step = m.decode_step(state, dec_in[:, t])
        np.testing.assert_allclose(step, full[:, t], rtol=0, atol=1e-10)


def test_embed_guards():
    m = tiny()
    with pytest.raises(ValueError, match="max_len"):
        m.encode(m.params, np.full((1, 13), 4), [13])
    with pytest.raises(ValueError, match="out of range"):
        m.encode(m.params, np.array([[len(SV)]]), [1])


def test_untrained_translation_terminates():
    m = tiny()
    b = batch()
    hyps = m.translate_ids(b.src_ids, b.src_lengths)
    assert len(hyps) == 4 and all(len(h) <= m.cfg.max_len - 1 for h in hyps)
    again = m.translate_ids(b.src_ids, b.src_lengths)
    assert hyps == again


# --- gradients ----------------------------------------------------------------------

def test_full_loss_gradient_two_sentences():
    # every parameter of a float64 model, with erasure, renormalization and input noise active
    model = tiny(channel=ChannelConfig("random", 0.7), awgn=AwgnConfig(0.0, 0.1), dtype=np.float64, d=8,
                 layers=1)
    b = batch(PAIRS[:2], bs=2)
    src, dec_in, labels = batch_inputs(b)

    def loss_of(params):
        mem = model.memory(params, src, b.src_lengths, train=True, rng=RngStream(11))
        return cross_entropy(model.decode(params, mem, b.src_lengths, dec_in), labels, ignore_index=PAD)

    tape = Tape()
    leaves = {k: tape.leaf(v) for k, v in model.params.items()}
    loss = loss_of(leaves)
    tape.backward(loss)
    worst = 0.0
    for name, value in model.params.items():
        def f(x, name=name):
            return float(loss_of({**model.params, name: x}))

        num = finite_difference(f, value, step=1e-6)
        ana = leaves[name].grad if leaves[name].grad is not None else np.zeros_like(value)
        scale = max(np.max(np.abs(num)), 1e-8)
        worst = max(worst, float(np.max(np.abs(ana - num)) / scale))
    assert worst <= 1e-4


# --- training ---------------------------------------------------------------------------

def test_lr_schedule():
    assert lr_schedule(4000, 512, 4000) == pytest.approx(6.988e-4, rel=1e-3)
    peak = lr_schedule(100, 64, 100)
    assert peak == pytest.approx(64 ** -0.5 * 100 ** -0.5)
    assert lr_schedule(99, 64, 100) < peak and lr_schedule(101, 64, 100) < peak
    with pytest.raises(ValueError):
        lr_schedule(0, 64, 100)


def test_full_teacher_forcing_is_reference_loss():
    m = tiny()
    tr = Trainer(m, TrainConfig(teacher_forcing_ratio=1.0))
    b = batch()
    src, dec_in, labels = batch_inputs(b)
    ref = float(cross_entropy(m.decode(m.params, m.memory(m.params, src, b.src_lengths, True, None),
                                       b.src_lengths, dec_in), labels, ignore_index=PAD))
    loss, _, _ = tr.train_step(b)
    assert loss == ref


def test_overfit_single_pair():
    m = tiny(d=32)
    tr = Trainer(m, TrainConfig(warmup_steps=20, lr_factor=1.0))
    b = batch(PAIRS[:1], bs=1)
    for _ in range(200):
        loss, c, n = tr.train_step(b)
    assert loss < 0.1 and c == n
    assert m.translate_ids(b.src_ids, b.src_lengths) == [TV.encode(PAIRS[0].tgt)]


def test_checkpoint_resume_is_bitwise(tmp_path):
    cfg = TrainConfig(warmup_steps=10, seed=3)
    b = batch()
    m = tiny(channel=ChannelConfig("random", 0.8), awgn=AwgnConfig(0.0, 0.1))
    tr = Trainer(m, cfg)
    for _ in range(3):
        tr.train_step(b)
    path = save_checkpoint(tmp_path / "m.ckpt", m, tr)
    m2, tr2 = load_checkpoint(path)
    assert m2.cfg == m.cfg and tr2.cfg == cfg and tr2.step == 3
    tr.train_step(b)
    tr2.train_step(b)
    for k in m.params:
        assert m.params[k].tobytes() == m2.params[k].tobytes()
    header, _ = read_checkpoint(path)
    assert header["model.channel.mode"] == "random"


def test_checkpoint_rejects_garbage(tmp_path):
    bad = tmp_path / "x.ckpt"
    bad.write_bytes(b"hello\n\n")
    with pytest.raises(ValueError):
        read_checkpoint(bad)


# --- attention export -----------------------------------------------------------------

def test_export_attention(tmp_path):
    m = tiny()
    maps = attention_maps(m, "le chat dort .", SV, TV)
    paths = export_attention(maps, tmp_path)
    assert len(paths) == m.cfg.n_layers * m.cfg.n_heads
    for w in maps.weights:
        assert w.shape[1:] == (len(maps.hyp_tokens), len(maps.src_tokens))
        np.testing.assert_allclose(w.sum(axis=-1), 1.0, atol=1e-5)
    first = paths[0].read_text().splitlines()
    assert first[0].split(",")[1:] == maps.src_tokens
    again = export_attention(attention_maps(m, "le chat dort .", SV, TV), tmp_path / "b")
    assert [p.read_bytes() for p in paths] == [p.read_bytes() for p in again]


def test_export_single_token_source(tmp_path):
    maps = attention_maps(tiny(), "", SV, TV)
    assert maps.src_tokens == ["<end>"]
    for w in maps.weights:
        np.testing.assert_array_equal(w, np.ones_like(w))


def test_export_unknown_tokens_warn(caplog):
    maps = attention_maps(tiny(), "le zebre dort", SV, TV)
    assert "<unk>" in maps.src_tokens
    assert "unknown" in caplog.text
