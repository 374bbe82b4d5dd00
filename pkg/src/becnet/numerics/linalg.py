"""Dense vector and matrix helpers used by the geometry code.

Inputs are coerced to float64 numpy arrays. The reductions are written as
explicit left-to-right loops over numpy slices where the summation order
matters for reproducibility.
"""

from __future__ import annotations

import numpy as np


class DegenerateMaskError(ValueError):
    """Raised when a vector that must be normalized has zero L2 norm."""


def as_vector(a) -> np.ndarray:
    v = np.asarray(a, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise ValueError(f"expected a non-empty 1-d vector, got shape {v.shape}")
    return v


def as_matrix(a) -> np.ndarray:
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2 or m.size == 0:
        raise ValueError(f"expected a non-empty 2-d matrix, got shape {m.shape}")
    return m


def dot(a, b) -> float:
    a = as_vector(a)
    b = as_vector(b)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape[0]} vs {b.shape[0]}")
    return float(np.dot(a, b))


def lp_norm(a, p) -> float:
    """L2, L4 or L-infinity norm of a vector."""
    a = np.abs(as_vector(a))
    if p == np.inf or p == "inf":
        return float(a.max())
    if p not in (2, 4):
        raise ValueError(f"unsupported norm order {p!r}; expected 2, 4 or inf")
    top = float(a.max())
    if top != 0.0 and not 1e-60 < top < 1e60:
        # powers would under/overflow; factor out the largest entry
        return top * lp_norm(a / top, p)
    if p == 2:
        return float(np.sqrt(np.dot(a, a)))
    if p == 4:
        sq = a * a
        return float(np.dot(sq, sq) ** 0.25)


def normalize(a) -> np.ndarray:
    a = as_vector(a)
    n = np.sqrt(np.dot(a, a))
    if n == 0.0:
        raise DegenerateMaskError("degenerate mask: all coordinates erased")
    if n == 1.0:
        return a.copy()
    return a / n


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"shape mismatch: {a.shape} @ {b.shape}")
    return a @ b
