"""Self-describing checkpoint container.

Layout::

    BECNET-CHECKPOINT
    key=value lines (format version, model/train config, step, seeds)
    <blank line>
    tensor records: u32 name length, UTF-8 name, u32 rank, u32 dims...,
                    little-endian float32 data

Parameters are stored as ``param/<name>``, Adam moments as ``adam.m/<name>``
and ``adam.v/<name>``.
"""

from __future__ import annotations

import dataclasses
import struct
from pathlib import Path

import numpy as np

from ..channels import AwgnConfig, ChannelConfig
from .train import Trainer, TrainConfig
from .transformer import ModelConfig, Seq2SeqTransformer

MAGIC = "BECNET-CHECKPOINT"
FORMAT_VERSION = 1


def config_lines(model_cfg: ModelConfig, train_cfg: TrainConfig | None) -> list[str]:
    lines = []
    for f in dataclasses.fields(model_cfg):
        v = getattr(model_cfg, f.name)
        if f.name == "channel":
            if v is None:
                lines.append("model.channel=none")
            else:
                lines += [f"model.channel.{k}={val}" for k, val in (
                    ("mode", v.mode.value), ("param", repr(v.param)),
                    ("renormalize_after", v.renormalize_after), ("abs_compare", v.abs_compare))]
        elif f.name == "awgn":
            if v is None:
                lines.append("model.awgn=none")
            else:
                lines += [f"model.awgn.mean={v.mean!r}", f"model.awgn.std={v.std!r}"]
        else:
            lines.append(f"model.{f.name}={v!r}")
    if train_cfg is not None:
        lines += [f"train.{f.name}={getattr(train_cfg, f.name)!r}" for f in dataclasses.fields(train_cfg)]
    return lines


def _parse_bool(s: str) -> bool:
    if s not in ("True", "False"):
        raise ValueError(f"bad boolean {s!r}")
    return s == "True"


def parse_configs(header: dict[str, str]) -> tuple[ModelConfig, TrainConfig | None]:
    m = {k[6:]: v for k, v in header.items() if k.startswith("model.")}
    channel = None
    if m.get("channel") != "none":
        channel = ChannelConfig(m["channel.mode"], float(m["channel.param"]),
                                _parse_bool(m["channel.renormalize_after"]), _parse_bool(m["channel.abs_compare"]))
    awgn = None if m.get("awgn") == "none" else AwgnConfig(float(m["awgn.mean"]), float(m["awgn.std"]))
    model_cfg = ModelConfig(
        src_vocab=int(m["src_vocab"]), tgt_vocab=int(m["tgt_vocab"]), d_model=int(m["d_model"]),
        n_heads=int(m["n_heads"]), n_layers=int(m["n_layers"]), d_ffn=int(m["d_ffn"]),
        max_len=int(m["max_len"]), channel=channel, awgn=awgn,
    )
    t = {k[6:]: v for k, v in header.items() if k.startswith("train.")}
    train_cfg = None
    if t:
        kw = {}
        for f in dataclasses.fields(TrainConfig):
            kw[f.name] = (int if f.type in ("int", int) else float)(t[f.name])
        train_cfg = TrainConfig(**kw)
    return model_cfg, train_cfg


def _write_tensor(fh, name: str, arr: np.ndarray) -> None:
    raw = name.encode("utf-8")
    fh.write(struct.pack("<I", len(raw)))
    fh.write(raw)
    fh.write(struct.pack("<I", arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def save_checkpoint(path, model: Seq2SeqTransformer, trainer: Trainer | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tensors = [(f"param/{k}", v) for k, v in model.params.items()]
    if trainer is not None:
        tensors += [(f"adam.m/{k}", v) for k, v in trainer.opt.m.items()]
        tensors += [(f"adam.v/{k}", v) for k, v in trainer.opt.v.items()]
    header = [MAGIC, f"format_version={FORMAT_VERSION}"]
    header += config_lines(model.cfg, trainer.cfg if trainer else None)
    header += [f"step={trainer.step if trainer else 0}", f"eval_seed={model.eval_seed}", f"tensors={len(tensors)}"]
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n\n").encode("utf-8"))
        for name, arr in tensors:
            _write_tensor(fh, name, arr)
    return path


def read_checkpoint(path) -> tuple[dict[str, str], dict[str, np.ndarray]]:
    data = Path(path).read_bytes()
    end = data.find(b"\n\n")
    if end < 0:
        raise ValueError(f"{path}: missing header terminator")
    lines = data[:end].decode("utf-8").split("\n")
    if lines[0] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    header = dict(line.split("=", 1) for line in lines[1:])
    if int(header["format_version"]) != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported format version {header['format_version']}")
    pos = end + 2
    tensors = {}
    for _ in range(int(header["tensors"])):
        (n,) = struct.unpack_from("<I", data, pos)
        pos += 4
        name = data[pos:pos + n].decode("utf-8")
        pos += n
        (rank,) = struct.unpack_from("<I", data, pos)
        pos += 4
        dims = struct.unpack_from(f"<{rank}I", data, pos)
        pos += 4 * rank
        count = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=pos).reshape(dims)
        pos += 4 * count
        tensors[name] = arr.astype(np.float32)
    return header, tensors


def load_checkpoint(path) -> tuple[Seq2SeqTransformer, Trainer | None]:
    header, tensors = read_checkpoint(path)
    model_cfg, train_cfg = parse_configs(header)
    params = {k[len("param/"):]: v for k, v in tensors.items() if k.startswith("param/")}
    model = Seq2SeqTransformer(model_cfg, params, eval_seed=int(header["eval_seed"]))
    trainer = None
    if train_cfg is not None:
        trainer = Trainer(model, train_cfg)
        for k in params:
            if f"adam.m/{k}" in tensors:
                trainer.opt.m[k] = tensors[f"adam.m/{k}"]
                trainer.opt.v[k] = tensors[f"adam.v/{k}"]
        trainer.step = int(header["step"])
        trainer.opt.t = trainer.step
    return model, trainer
