"""Erasure channels and additive Gaussian noise for embedding vectors.

Two erasure mechanisms are supported and never conflated:

* ``random``: every coordinate survives independently with probability
  ``param`` (a *keep* probability).
* ``threshold``: a coordinate survives iff its value (or magnitude, with
  ``abs_compare``) is at least ``param``.

All functions accept plain arrays or tape variables; masks are constants, so
erased coordinates receive zero gradient and kept ones pass it unchanged.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .numerics.rng import RngStream
from .numerics.tape import Var, add, apply_mask, l2_normalize_rows


class ChannelMode(str, enum.Enum):
    RANDOM_ERASURE = "random"
    MAGNITUDE_THRESHOLD = "threshold"


@dataclass(frozen=True)
class ChannelConfig:
    mode: ChannelMode = ChannelMode.MAGNITUDE_THRESHOLD
    param: float = 0.0
    renormalize_after: bool = True
    abs_compare: bool = True

    def __post_init__(self):
        object.__setattr__(self, "mode", ChannelMode(self.mode))
        if not 0.0 <= self.param <= 1.0:
            raise ValueError(f"channel parameter must lie in [0, 1], got {self.param}")

    @property
    def is_identity(self) -> bool:
        """True when no coordinate can ever be erased."""
        if self.mode is ChannelMode.RANDOM_ERASURE:
            return self.param == 1.0
        return self.param == 0.0 and self.abs_compare

    def describe(self) -> dict:
        meaning = "p_keep" if self.mode is ChannelMode.RANDOM_ERASURE else "cutoff"
        return {
            "mode": self.mode.value,
            "param": self.param,
            "param_meaning": meaning,
            "renormalize_after": self.renormalize_after,
            "abs_compare": self.abs_compare,
        }


@dataclass(frozen=True)
class AwgnConfig:
    mean: float = 0.0
    std: float = 0.0

    def __post_init__(self):
        if self.std < 0:
            raise ValueError(f"noise std must be >= 0, got {self.std}")

    @property
    def is_identity(self) -> bool:
        return self.mean == 0.0 and self.std == 0.0


@dataclass(frozen=True)
class MaskVector:
    bits: np.ndarray

    @property
    def keep_count(self) -> int:
        return int(self.bits.sum())

    def __len__(self):
        return self.bits.shape[-1]


def sample_mask(d: int, p_keep: float, rng: RngStream) -> MaskVector:
    if d < 1:
        raise ValueError("mask length must be positive")
    u = rng.generator().random(d)
    return MaskVector((u < p_keep).astype(np.uint8))


def sample_masks(shape: tuple, p_keep: float, rng: RngStream) -> np.ndarray:
    """Independent Bernoulli(p_keep) bits of the given shape, as uint8."""
    return (rng.generator().random(shape) < p_keep).astype(np.uint8)


def apply_mask_vector(x, m: MaskVector):
    bits = m.bits if isinstance(m, MaskVector) else np.asarray(m)
    if np.shape(x)[-1] != bits.shape[-1]:
        raise ValueError(f"length mismatch: vector {np.shape(x)[-1]} vs mask {bits.shape[-1]}")
    dtype = x.dtype if isinstance(x, (Var, np.ndarray)) else np.float64
    return apply_mask(x if isinstance(x, Var) else np.asarray(x, dtype=dtype), bits.astype(dtype))


def threshold_bits(x: np.ndarray, cutoff: float, abs_compare: bool = True) -> np.ndarray:
    v = np.abs(x) if abs_compare else x
    return (v >= cutoff).astype(np.uint8)


def bec_threshold(x, cutoff: float, abs_compare: bool = False):
    """Keep coordinates whose value is >= cutoff, zero the rest.

    With the default ``abs_compare=False`` the raw value is compared, so
    negative entries are erased for any positive cutoff.
    """
    raw = x.value if isinstance(x, Var) else np.asarray(x, dtype=np.float64)
    bits = threshold_bits(raw, cutoff, abs_compare)
    return apply_mask(x if isinstance(x, Var) else raw, bits.astype(raw.dtype))


def channel_forward(X, cfg: ChannelConfig, rng: RngStream | None = None):
    """Push every row (last axis) of ``X`` through the erasure channel.

    Returns ``(out, n_degenerate)`` where ``n_degenerate`` counts rows whose
    coordinates were all erased; those rows are passed on as zeros.
    """
    raw = X.value if isinstance(X, Var) else np.asarray(X)
    if cfg.mode is ChannelMode.RANDOM_ERASURE:
        if rng is None:
            raise ValueError("random erasure needs an RngStream")
        bits = sample_masks(raw.shape, cfg.param, rng)
    else:
        bits = threshold_bits(raw, cfg.param, cfg.abs_compare)
    out = apply_mask(X, bits.astype(raw.dtype))
    kept = out.value if isinstance(out, Var) else out
    n_degenerate = int(np.count_nonzero(~kept.any(axis=-1)))
    if cfg.renormalize_after:
        out = l2_normalize_rows(out)
    return out, n_degenerate


def add_awgn(X, cfg: AwgnConfig, rng: RngStream | None = None):
    if cfg.is_identity:
        return X
    raw = X.value if isinstance(X, Var) else np.asarray(X)
    if cfg.std == 0.0:
        noise = np.full(raw.shape, cfg.mean, dtype=raw.dtype)
    else:
        if rng is None:
            raise ValueError("Gaussian noise needs an RngStream")
        dtype = raw.dtype if raw.dtype in (np.float32, np.float64) else np.dtype(np.float64)
        noise = rng.generator().standard_normal(raw.shape, dtype=dtype)
        noise = noise * dtype.type(cfg.std) + dtype.type(cfg.mean)
    return add(X, noise)
