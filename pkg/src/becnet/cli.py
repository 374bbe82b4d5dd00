"""``becnet`` command line: theorem checks, calibration, training, sweeps, exports.

Exit codes: 0 success, 1 completed with failures, 2 usage error.
"""

from __future__ import annotations

import json
import logging
import sys
import time
from dataclasses import replace
from importlib import resources
from pathlib import Path

import click

from . import __version__
from . import geometry as geo
from .experiment import RunSpec, file_digest, p_keep_from_erase, sweep, train_run, write_manifest
from .numerics.rng import RngStream

log = logging.getLogger("becnet")


def _setup_logging(verbose: int) -> None:
    level = logging.WARNING if verbose == 0 else logging.INFO if verbose == 1 else logging.DEBUG
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def shipped_constants() -> dict:
    text = resources.files("becnet").joinpath("data/theorem_constants.json").read_text(encoding="utf-8")
    return json.loads(text)


def _dump_json(doc: dict) -> str:
    return json.dumps(doc, indent=2, sort_keys=True, allow_nan=True) + "\n"


def _sidecar_manifest(out: Path, config: dict, seed: int, started: float) -> None:
    write_manifest(out.parent, config, seed, started, [out], name=f"{out.stem}.manifest.json")


def _read_config_file(ctx: click.Context, _param, value):
    """``key=value`` lines used as defaults for the command's options."""
    if value is None:
        return None
    defaults = {}
    for n, line in enumerate(Path(value).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, val = line.partition("=")
        if not sep:
            raise click.BadParameter(f"line {n}: expected key=value, got {line!r}", param_hint="--config")
        key = key.strip().replace("-", "_")
        val = val.strip()
        if val.lower() in ("true", "false"):
            val = val.lower() == "true"
        defaults[key] = val
    known = {p.name for p in ctx.command.params}
    unknown = sorted(set(defaults) - known)
    if unknown:
        raise click.BadParameter(f"unknown keys {unknown}", param_hint="--config")
    ctx.default_map = {**(ctx.default_map or {}), **defaults}
    return value


config_option = click.option(
    "--config", type=click.Path(exists=True, dir_okay=False), callback=_read_config_file,
    is_eager=True, expose_value=False, help="key=value file supplying option defaults.",
)

unit = click.FloatRange(0.0, 1.0)


@click.group()
@click.option("-v", "--verbose", count=True, help="-v for progress, -vv for debug output.")
@click.version_option(version=__version__, prog_name="becnet")
def main(verbose: int) -> None:
    """Erasure-channel robustness of inner-product scores and seq2seq Transformers."""
    _setup_logging(verbose)


# --- theorem ---------------------------------------------------------------

@main.command()
@click.option("--d", "d", type=click.IntRange(1), default=256, show_default=True, help="Query dimension.")
@click.option("--M", "M", type=click.IntRange(2), default=16, show_default=True, help="Number of embeddings.")
@click.option("--p-keep", type=click.FloatRange(0.0, 1.0, min_open=True), default=0.8, show_default=True)
@click.option("--delta", type=click.FloatRange(0.0, 1.0, min_open=True, max_open=True), default=0.05,
              show_default=True)
@click.option("--C", "C", type=click.FloatRange(0.0, min_open=True), default=None,
              help="Bound constant; defaults to the shipped calibrated value.")
@click.option("--trials", type=click.IntRange(1), default=10_000, show_default=True)
@click.option("--q-dist", type=click.Choice(geo.Q_DISTS), default="uniform", show_default=True)
@click.option("--v-dist", type=click.Choice(geo.V_DISTS), default="random", show_default=True)
@click.option("--cosine", type=click.FloatRange(-1.0, 1.0), default=0.8, show_default=True,
              help="Cosine of the planted embedding (planted V only).")
@click.option("--alpha", type=float, default=1.0, show_default=True, help="Power-law exponent.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--exact", is_flag=True, help="Also enumerate all masks (d <= 20).")
@click.option("--workers", type=click.IntRange(1), default=1, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="Write the JSON report here.")
def verify(d, M, p_keep, delta, C, trials, q_dist, v_dist, cosine, alpha, seed, exact, workers, out):
    """Monte Carlo check of top-1 preservation on one random setup."""
    if exact and d > geo.MAX_ENUM_DIM:
        raise click.UsageError(f"--exact needs d <= {geo.MAX_ENUM_DIM}")
    started = time.time()
    if C is None:
        C = shipped_constants()["C"]
    root = RngStream(seed)
    cell = geo.GridCell(d=d, M=M, p_keep=p_keep, q_dist=q_dist, v_dist=v_dist, alpha=alpha, cosine=cosine)
    setup = geo.make_setup(cell, root.named("setup"))
    params = geo.TheoremParams(p_keep=p_keep, delta=delta, C=C)
    try:
        report = geo.margin_report(setup, params)
    except geo.ZeroMarginError as exc:
        raise click.UsageError(str(exc))
    mc = geo.verify_top1(setup, params, trials, root.named("masks"), workers=workers)
    ex = geo.enumerate_masks(setup, p_keep) if exact else None
    doc = geo.report_document(report, mc, seed, root.named("masks").stream_id, ex)
    doc.update({"q_dist": q_dist, "v_dist": v_dist})
    ok = (not report.guaranteed) or mc.effective_trials == 0 or mc.flip_rate <= delta + 3 * mc.standard_error
    doc["pass"] = bool(ok)
    text = _dump_json(doc)
    click.echo(text, nl=False)
    if out:
        path = Path(out)
        path.write_text(text, encoding="utf-8")
        _sidecar_manifest(path, {"command": "verify", **cell.__dict__, "delta": delta, "C": C,
                                 "trials": trials, "exact": exact}, seed, started)
    sys.exit(0 if ok else 1)


@main.command()
@click.option("--grid", default=geo.CALIBRATION_GRID, show_default=True,
              help="Grid as key=v1,v2;... with keys d, M, p, q, v, alpha, cosine.")
@click.option("--trials", type=click.IntRange(1), default=10_000, show_default=True)
@click.option("--delta", type=click.FloatRange(0.0, 1.0, min_open=True, max_open=True), default=0.05,
              show_default=True)
@click.option("--quantile", type=click.FloatRange(0.0, 1.0, min_open=True, max_open=True), default=None,
              help="Deviation quantile the bound must cover; default 1 - delta.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--workers", type=click.IntRange(1), default=1, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True, help="Constants JSON file.")
def calibrate(grid, trials, delta, quantile, seed, workers, out):
    """Fit the bound constant C on a grid of random setups."""
    started = time.time()
    try:
        cells = geo.parse_grid(grid)
    except ValueError as exc:
        raise click.BadParameter(str(exc), param_hint="--grid")
    cal = geo.calibrate_C(cells, trials, RngStream(seed).named("calibrate"), delta=delta,
                          target_quantile=quantile, workers=workers)
    doc = {"software_version": __version__, "seed": seed, "grid": grid, **cal.to_dict()}
    path = Path(out)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(_dump_json(doc), encoding="utf-8")
    _sidecar_manifest(path, {"command": "calibrate", "grid": grid, "trials": trials, "delta": delta,
                             "quantile": cal.target_quantile}, seed, started)
    click.echo(f"C = {cal.C:.6g} over {len(cells)} cells -> {path}")


# --- training ----------------------------------------------------------------

def train_options(awgn_std_default: float):
    return lambda fn: _with_train_options(fn, awgn_std_default)


def _with_train_options(fn, awgn_std_default: float):
    opts = [
        config_option,
        click.option("--data", type=click.Path(exists=True, dir_okay=False), required=True,
                     help="Corpus with one ENGLISH<TAB>FRENCH pair per line."),
        click.option("--direction", type=click.Choice(["fr-en", "en-fr"]), default="fr-en", show_default=True),
        click.option("--max-tokens", type=click.IntRange(1), default=None, help="Drop longer sentence pairs."),
        click.option("--val-fraction", type=click.FloatRange(0.0, 1.0, min_open=True, max_open=True),
                     default=0.1, show_default=True),
        click.option("--vocab-cap", type=click.IntRange(4), default=8000, show_default=True),
        click.option("--awgn-std", type=click.FloatRange(0.0), default=awgn_std_default, show_default=True,
                     help="Std of training-time input noise (sweep: used by the AWGN-on cells)."),
        click.option("--awgn-mean", type=float, default=0.0, show_default=True),
        click.option("--no-renormalize", is_flag=True, help="Skip L2 renormalization after erasure."),
        click.option("--epochs", type=click.IntRange(0), default=80, show_default=True),
        click.option("--batch-size", type=click.IntRange(1), default=64, show_default=True),
        click.option("--d-model", type=click.IntRange(2), default=128, show_default=True),
        click.option("--heads", type=click.IntRange(1), default=4, show_default=True),
        click.option("--layers", type=click.IntRange(1), default=2, show_default=True),
        click.option("--ffn", type=click.IntRange(1), default=512, show_default=True),
        click.option("--max-len", type=click.IntRange(3), default=50, show_default=True),
        click.option("--warmup", type=click.IntRange(1), default=400, show_default=True),
        click.option("--lr-factor", type=click.FloatRange(0.0, min_open=True), default=1.0, show_default=True),
        click.option("--teacher-forcing", type=unit, default=0.5, show_default=True),
        click.option("--bleu-every", type=click.IntRange(0), default=0, show_default=True,
                     help="Also compute BLEU every N epochs (always at the last epoch)."),
        click.option("--seed", type=int, default=0, show_default=True),
        click.option("--out-dir", type=click.Path(file_okay=False), required=True),
    ]
    for opt in reversed(opts):
        fn = opt(fn)
    return fn


def _spec(kw: dict, **extra) -> RunSpec:
    from .model.train import TrainConfig

    tc = TrainConfig(epochs=kw["epochs"], batch_size=kw["batch_size"], teacher_forcing_ratio=kw["teacher_forcing"],
                     warmup_steps=kw["warmup"], lr_factor=kw["lr_factor"], seed=kw["seed"])
    return RunSpec(
        data=kw["data"], direction=kw["direction"], max_tokens=kw["max_tokens"], val_fraction=kw["val_fraction"],
        vocab_cap=kw["vocab_cap"], awgn_std=kw["awgn_std"], awgn_mean=kw["awgn_mean"],
        renormalize=not kw["no_renormalize"], d_model=kw["d_model"], n_heads=kw["heads"], n_layers=kw["layers"],
        d_ffn=kw["ffn"], max_len=kw["max_len"], train=tc, bleu_every=kw["bleu_every"], **extra,
    )


@main.command()
@train_options(0.0)
@click.option("--channel-mode", type=click.Choice(["threshold", "random"]), default="threshold", show_default=True)
@click.option("--p-erase", type=unit, default=0.0, show_default=True,
              help="Erasure probability (random mode); keep probability is 1 - p.")
@click.option("--cutoff", type=unit, default=0.0, show_default=True, help="Magnitude cutoff (threshold mode).")
@click.option("--raw-threshold", is_flag=True, help="Compare signed values, not magnitudes, to the cutoff.")
@click.option("--no-channel", is_flag=True, help="Build the model without the erasure layer.")
def train(channel_mode, p_erase, cutoff, raw_threshold, no_channel, **kw):
    """Train one model and write metrics CSV, checkpoint, vocabularies and manifest."""
    if channel_mode == "threshold" and p_erase:
        raise click.UsageError("--p-erase needs --channel-mode random (threshold mode takes --cutoff)")
    if channel_mode == "random" and cutoff:
        raise click.UsageError("--cutoff needs --channel-mode threshold")
    p_keep = p_keep_from_erase(p_erase)
    log.info("channel %s: p_erase=%g -> p_keep=%g, cutoff=%g", channel_mode, p_erase, p_keep, cutoff)
    spec = _spec(kw, channel_mode=channel_mode, p_erase=p_erase, cutoff=cutoff,
                 abs_compare=not raw_threshold, channel_enabled=not no_channel)
    res = train_run(spec, kw["out_dir"])
    click.echo(f"val accuracy {res.val_accuracy:.4f}  BLEU {res.bleu:.2f}  ({res.wall_time_s:.1f}s)")


def _parse_p_list(ctx, param, value: str) -> list[float]:
    try:
        vals = [float(v) for v in value.split(",") if v.strip()]
    except ValueError:
        raise click.BadParameter(f"expected comma-separated numbers, got {value!r}")
    if not vals or any(not 0.0 <= v <= 1.0 for v in vals):
        raise click.BadParameter("values must lie in [0, 1]")
    return vals


@main.command("sweep")
@train_options(0.1)
@click.option("--p-list", default="0.0,0.2,0.5,0.8", show_default=True, callback=_parse_p_list,
              help="Erasure probabilities (random erasure).")
@click.option("--awgn", type=click.Choice(["off", "on", "both"]), default="both", show_default=True)
@click.option("--parallel-cells", type=click.IntRange(1), default=1, show_default=True)
def sweep_cmd(p_list, awgn, parallel_cells, **kw):
    """Train and evaluate one model per (erasure probability, AWGN) cell."""
    awgn_std = kw["awgn_std"]
    modes = {"off": [False], "on": [True], "both": [False, True]}[awgn]
    base = _spec({**kw, "awgn_std": 0.0}, channel_mode="random")
    base = replace(base, awgn_mean=kw["awgn_mean"])
    rows, ok = sweep(base, p_list, modes, awgn_std, kw["out_dir"], parallel_cells=parallel_cells)
    for r in rows:
        click.echo(f"p={r['p_erase']:.2f} awgn={'on ' if r['awgn'] else 'off'} {r['status']:>6}  "
                   f"acc {r['val_accuracy']:.4f} ({r['pct_drop_acc']:+.1f}%)  "
                   f"BLEU {r['bleu']:.2f} ({r['pct_drop_bleu']:+.1f}%)")
    sys.exit(0 if ok else 1)


# --- exports -----------------------------------------------------------------

@main.command("export-attention")
@click.option("--checkpoint", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--sentence", required=True, help="Source sentence to translate.")
@click.option("--src-vocab", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Defaults to src_vocab.txt beside the checkpoint.")
@click.option("--tgt-vocab", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Defaults to tgt_vocab.txt beside the checkpoint.")
@click.option("--out-dir", type=click.Path(file_okay=False), required=True)
def export_attention_cmd(checkpoint, sentence, src_vocab, tgt_vocab, out_dir):
    """Write one cross-attention CSV per decoder layer and head."""
    from .corpus import Vocab
    from .model.checkpoint import load_checkpoint
    from .model.export import attention_maps, export_attention

    started = time.time()
    ckpt = Path(checkpoint)
    sv = Vocab.load(src_vocab or ckpt.parent / "src_vocab.txt")
    tv = Vocab.load(tgt_vocab or ckpt.parent / "tgt_vocab.txt")
    model, _ = load_checkpoint(ckpt)
    maps = attention_maps(model, sentence, sv, tv)
    paths = export_attention(maps, out_dir)
    write_manifest(Path(out_dir), {"command": "export-attention", "checkpoint": str(ckpt), "sentence": sentence,
                                   "checkpoint_sha256": file_digest(ckpt)},
                   model.eval_seed, started, paths)
    click.echo(f"{' '.join(maps.hyp_tokens)}\n{len(paths)} files in {out_dir}")


@main.command("make-corpus")
@click.option("--pairs", type=click.IntRange(1), default=10_000, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
def make_corpus(pairs, seed, out):
    """Write a synthetic French-English corpus in the ENGLISH<TAB>FRENCH format."""
    from .synth import write_corpus

    started = time.time()
    path = write_corpus(out, pairs, seed)
    _sidecar_manifest(path, {"command": "make-corpus", "pairs": pairs}, seed, started)
    click.echo(f"wrote {pairs} pairs to {path}")


if __name__ == "__main__":
    main()
