"""Training runs and erasure-probability sweeps with on-disk artifacts."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import platform
import time
from dataclasses import asdict, dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .channels import AwgnConfig, ChannelConfig, ChannelMode
from .corpus import MAX_LEN, build_vocab, encode_pairs, load_pairs, make_batches, split_train_val
from .model.checkpoint import save_checkpoint
from .model.train import TrainConfig, Trainer, corpus_eval, evaluate_teacher_forced
from .model.transformer import ModelConfig, Seq2SeqTransformer
from .numerics.rng import RngStream

log = logging.getLogger(__name__)

METRIC_FIELDS = ("epoch", "split", "loss", "accuracy", "bleu")
SWEEP_FIELDS = ("p_erase", "p_keep", "awgn", "status", "val_accuracy", "bleu",
                "pct_drop_acc", "pct_drop_bleu", "wall_time_s")


def p_keep_from_erase(p_erase: float) -> float:
    """The only place erasure probability becomes keep probability."""
    if not 0.0 <= p_erase <= 1.0:
        raise ValueError(f"erasure probability must lie in [0, 1], got {p_erase}")
    return 1.0 - p_erase


@dataclass
class RunSpec:
    data: str
    direction: str = "fr-en"
    max_tokens: int | None = None
    val_fraction: float = 0.1
    vocab_cap: int = 8000
    channel_mode: str = "threshold"
    p_erase: float = 0.0
    cutoff: float = 0.0
    renormalize: bool = True
    abs_compare: bool = True
    channel_enabled: bool = True
    awgn_std: float = 0.0
    awgn_mean: float = 0.0
    d_model: int = 128
    n_heads: int = 4
    n_layers: int = 2
    d_ffn: int = 512
    max_len: int = MAX_LEN
    train: TrainConfig = field(default_factory=TrainConfig)
    bleu_every: int = 0
    eval_batch_size: int = 128

    def channel_config(self) -> ChannelConfig | None:
        if not self.channel_enabled:
            return None
        mode = ChannelMode(self.channel_mode)
        if mode is ChannelMode.RANDOM_ERASURE:
            if self.cutoff:
                raise ValueError("cutoff applies to threshold mode; random erasure takes p_erase")
            param = p_keep_from_erase(self.p_erase)
        else:
            if self.p_erase:
                raise ValueError("p_erase applies to random mode; threshold mode takes cutoff")
            param = self.cutoff
        return ChannelConfig(mode, param, self.renormalize, self.abs_compare)

    def awgn_config(self) -> AwgnConfig | None:
        cfg = AwgnConfig(self.awgn_mean, self.awgn_std)
        return None if cfg.is_identity else cfg

    def echo(self) -> dict:
        d = asdict(self)
        chan = self.channel_config()
        d["channel"] = None if chan is None else chan.describe()
        d["p_keep"] = p_keep_from_erase(self.p_erase)
        return d


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(out_dir: Path, config: dict, seed: int, started: float, files: list[Path],
                   name: str = "manifest.json") -> Path:
    manifest = {
        "software_version": __version__,
        "python": platform.python_version(),
        "seed": seed,
        "config": config,
        "started_utc": datetime.fromtimestamp(started, timezone.utc).isoformat(),
        "finished_utc": datetime.now(timezone.utc).isoformat(),
        "outputs": {p.name: file_digest(p) for p in files},
    }
    path = Path(out_dir) / name
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _fmt(x) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    if isinstance(x, float):
        return f"{x:.6f}"
    return str(x)


def csv_text(fields, rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: _fmt(row.get(k)) for k in fields})
    return buf.getvalue()


@dataclass
class RunResult:
    history: list[dict]
    val_accuracy: float
    bleu: float
    wall_time_s: float
    out_dir: Path | None


def prepare_data(spec: RunSpec):
    pairs = load_pairs(spec.data, direction=spec.direction, max_tokens=spec.max_tokens)
    train, val = split_train_val(pairs, spec.val_fraction, RngStream(spec.train.seed).named("split"))
    src_vocab, tgt_vocab = build_vocab(train, spec.vocab_cap)
    return train, val, src_vocab, tgt_vocab


def train_run(spec: RunSpec, out_dir=None, data=None) -> RunResult:
    """Train one model and evaluate it; write artifacts when ``out_dir`` is given."""
    started = time.time()
    train, val, src_vocab, tgt_vocab = data if data is not None else prepare_data(spec)
    model_cfg = ModelConfig(
        src_vocab=len(src_vocab), tgt_vocab=len(tgt_vocab), d_model=spec.d_model, n_heads=spec.n_heads,
        n_layers=spec.n_layers, d_ffn=spec.d_ffn, max_len=spec.max_len,
        channel=spec.channel_config(), awgn=spec.awgn_config(),
    )
    model = Seq2SeqTransformer.initialize(model_cfg, spec.train.seed)
    trainer = Trainer(model, spec.train)
    encoded = encode_pairs(train, src_vocab, tgt_vocab, spec.max_len)
    val_batches = make_batches(val, src_vocab, tgt_vocab, spec.eval_batch_size, spec.max_len)
    shuffle = RngStream(spec.train.seed).named("shuffle")
    history = []
    val_acc = bleu = float("nan")
    for epoch in range(1, spec.train.epochs + 1):
        model.degenerate_rows = 0
        batches = make_batches(train, src_vocab, tgt_vocab, spec.train.batch_size, spec.max_len,
                               rng=shuffle.child(epoch), encoded=encoded)
        tr = trainer.train_epoch(batches)
        if model.degenerate_rows:
            log.warning("epoch %d: %d encoder rows fully erased", epoch, model.degenerate_rows)
        last = epoch == spec.train.epochs
        want_bleu = last or (spec.bleu_every and epoch % spec.bleu_every == 0)
        if want_bleu:
            report = corpus_eval(model, val, src_vocab, tgt_vocab, spec.eval_batch_size)
            va_loss, val_acc, bleu = report.loss, report.token_accuracy, report.bleu_avg
        else:
            va = evaluate_teacher_forced(model, val_batches)
            va_loss, val_acc, bleu = va.loss, va.accuracy, float("nan")
        history.append({"epoch": epoch, "split": "train", "loss": tr.loss, "accuracy": tr.accuracy, "bleu": None})
        history.append({"epoch": epoch, "split": "val", "loss": va_loss, "accuracy": val_acc, "bleu": bleu})
        log.info("epoch %d train loss %.4f acc %.4f | val loss %.4f acc %.4f%s", epoch, tr.loss, tr.accuracy,
                 va_loss, val_acc, "" if math.isnan(bleu) else f" bleu {bleu:.2f}")
    wall = time.time() - started
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        files = [out / "metrics.csv", out / "src_vocab.txt", out / "tgt_vocab.txt", out / "model.ckpt"]
        files[0].write_text(csv_text(METRIC_FIELDS, history), encoding="utf-8")
        src_vocab.save(files[1])
        tgt_vocab.save(files[2])
        save_checkpoint(files[3], model, trainer)
        write_manifest(out, {**spec.echo(), "wall_time_s": round(wall, 3)}, spec.train.seed, started, files)
    return RunResult(history, val_acc, bleu, wall, Path(out_dir) if out_dir else None)


def pct_drop(baseline: float, value: float) -> float:
    if baseline is None or math.isnan(baseline) or baseline == 0:
        return float("nan")
    return 100.0 * (baseline - value) / baseline


def sweep(base: RunSpec, p_list: list[float], awgn_modes: list[bool], awgn_std: float,
          out_dir=None, parallel_cells: int = 1) -> tuple[list[dict], bool]:
    """Train and evaluate one model per (p_erase, awgn) cell.

    Returns the sweep rows and whether every cell succeeded. Drops are taken
    relative to the noise-free p_erase=0 cell when it is part of the sweep.
    """
    data = prepare_data(base)
    cells = [(p, a) for p in p_list for a in awgn_modes]
    out = Path(out_dir) if out_dir is not None else None

    if parallel_cells > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=parallel_cells) as pool:
            rows = list(pool.map(_run_cell, [(base, data, c, awgn_std, out) for c in cells]))
    else:
        rows = [_run_cell((base, data, c, awgn_std, out)) for c in cells]
    base_row = next((r for r in rows if r["p_erase"] == 0.0 and not r["awgn"] and r["status"] == "ok"), None)
    for r in rows:
        r["pct_drop_acc"] = pct_drop(base_row["val_accuracy"], r["val_accuracy"]) if base_row else float("nan")
        r["pct_drop_bleu"] = pct_drop(base_row["bleu"], r["bleu"]) if base_row else float("nan")
    ok = all(r["status"] == "ok" for r in rows)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        csv_path = out / "sweep.csv"
        csv_path.write_text(csv_text(SWEEP_FIELDS, _deterministic(rows)), encoding="utf-8")
        from .plots import sweep_svg

        svgs = []
        for metric in ("val_accuracy", "bleu"):
            path = out / f"sweep_{metric}.svg"
            path.write_text(sweep_svg(rows, metric), encoding="utf-8")
            svgs.append(path)
        timing = out / "timing.csv"
        timing.write_text(csv_text(("p_erase", "awgn", "wall_time_s"), rows), encoding="utf-8")
        echo = {**base.echo(), "p_list": p_list, "awgn_modes": awgn_modes, "awgn_std_when_on": awgn_std}
        write_manifest(out, echo, base.train.seed, time.time(), [csv_path, *svgs, timing])
    return rows, ok


def _deterministic(rows: list[dict]) -> list[dict]:
    # wall time is hardware dependent; it lives in timing.csv instead
    return [{k: v for k, v in r.items() if k != "wall_time_s"} for r in rows]


def _run_cell(args):
    base, data, (p, a), awgn_std, out = args
    spec = replace(base, p_erase=p, awgn_std=awgn_std if a else 0.0, awgn_mean=base.awgn_mean if a else 0.0)
    cell_dir = None if out is None else out / f"p{p:.2f}_{'awgn' if a else 'clean'}"
    try:
        res = train_run(spec, cell_dir, data=data)
        return {"p_erase": p, "p_keep": p_keep_from_erase(p), "awgn": a, "status": "ok",
                "val_accuracy": res.val_accuracy, "bleu": res.bleu, "wall_time_s": res.wall_time_s}
    except Exception as exc:  # a failed cell must not abort the sweep
        log.error("sweep cell p=%s awgn=%s failed: %s", p, a, exc)
        return {"p_erase": p, "p_keep": p_keep_from_erase(p), "awgn": a, "status": f"failed: {exc}",
                "val_accuracy": float("nan"), "bleu": float("nan"), "wall_time_s": float("nan")}
