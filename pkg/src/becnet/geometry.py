"""Top-1 preservation of inner-product scores under coordinate dropout.

A query ``q`` is masked coordinate-wise with i.i.d. Bernoulli(p_keep) bits,
renormalized, and scored against fixed unit embeddings ``V``. This module
computes the pre-mask margin and effective sparsity, evaluates the deviation
bound and its intermediate concentration bounds, and checks all of it against
Monte Carlo simulation and exhaustive mask enumeration.

Scores are always accumulated left to right over coordinates so that the
all-ones mask reproduces the unmasked scores bit for bit, whatever the number
of masks evaluated together.
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__
from .channels import MaskVector
from .numerics.linalg import as_matrix, as_vector, lp_norm
from .numerics.rng import RngStream

UNIT_TOL = 1e-9
CHUNK_TRIALS = 2048


class ZeroMarginError(ValueError):
    """The top score is tied, so the margin is zero and the bound says nothing."""


@dataclass(frozen=True)
class GeometrySetup:
    q: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        q = as_vector(self.q)
        V = as_matrix(self.V)
        if V.shape[1] != q.shape[0]:
            raise ValueError(f"embedding dimension {V.shape[1]} does not match query dimension {q.shape[0]}")
        if V.shape[0] < 2:
            raise ValueError("need at least two output embeddings to define a margin")
        qn = math.sqrt(float(np.dot(q, q)))
        if abs(qn - 1.0) > UNIT_TOL:
            raise ValueError(f"query must have unit norm, got {qn!r}")
        vn = np.sqrt(np.einsum("ij,ij->i", V, V))
        bad = np.flatnonzero(np.abs(vn - 1.0) > UNIT_TOL)
        if bad.size:
            raise ValueError(f"embedding rows {bad.tolist()[:5]} are not unit norm")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "V", V)

    @property
    def d(self) -> int:
        return self.q.shape[0]

    @property
    def M(self) -> int:
        return self.V.shape[0]


@dataclass(frozen=True)
class TheoremParams:
    p_keep: float
    delta: float = 0.05
    C: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.p_keep <= 1.0:
            raise ValueError(f"p_keep must lie in (0, 1], got {self.p_keep}")
        if not 0.0 < self.delta < 1.0:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")
        if not self.C > 0:
            raise ValueError(f"C must be positive, got {self.C}")


@dataclass
class MarginReport:
    j_star: int
    gamma: float
    s_eff: float
    epsilon: float
    guaranteed: bool
    scores_pre: list
    p_keep: float
    delta: float
    C: float
    d: int
    M: int

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class McResult:
    trials: int
    flip_count: int
    flip_rate: float
    max_dev_mean: float
    max_dev_median: float
    max_dev_q99: float
    zero_mask_count: int
    epsilon: float | None = None
    bound_exceed_rate: float | None = None

    @property
    def effective_trials(self) -> int:
        return self.trials - self.zero_mask_count

    @property
    def standard_error(self) -> float:
        n = self.effective_trials
        if n <= 0:
            return float("nan")
        r = self.flip_rate
        return math.sqrt(r * (1 - r) / n)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ExactFlip:
    """Exact mask-enumeration probabilities.

    ``flip_prob`` is the unconditional probability of a non-degenerate mask
    that changes the argmax; ``conditional_flip_rate`` conditions on a
    nonzero masked query, matching :attr:`McResult.flip_rate`.
    """

    flip_prob: float
    degenerate_prob: float

    @property
    def flip_or_degenerate(self) -> float:
        return self.flip_prob + self.degenerate_prob

    @property
    def conditional_flip_rate(self) -> float:
        live = 1.0 - self.degenerate_prob
        return self.flip_prob / live if live > 0 else float("nan")


def effective_sparsity(q) -> float:
    q = as_vector(q)
    l2 = lp_norm(q, 2)
    if l2 == 0.0:
        raise ValueError("effective sparsity of the zero vector is undefined")
    sq = q * q
    # ||q||_2^4 / ||q||_4^4 evaluated from the same squared entries
    num = float(np.sum(sq)) ** 2
    den = float(np.dot(sq, sq))
    return num / den


def batch_scores(masked_q: np.ndarray, V: np.ndarray):
    """Scores and norms for a stack of masked queries.

    ``masked_q`` has shape (n, d). Returns ``(S, R)`` with ``S[i, j] =
    <masked_q[i], V[j]>`` and ``R[i] = ||masked_q[i]||``, both accumulated in
    coordinate order.
    """
    n, d = masked_q.shape
    cols = np.ascontiguousarray(masked_q.T)
    Vt = np.ascontiguousarray(V.T)
    S = np.zeros((n, V.shape[0]))
    R2 = np.zeros(n)
    for k in range(d):
        c = cols[k]
        S += c[:, None] * Vt[k]
        R2 += c * c
    return S, np.sqrt(R2)


def scores(setup: GeometrySetup) -> np.ndarray:
    S, R = batch_scores(setup.q[None, :], setup.V)
    return S[0] / R[0]


def margin(setup: GeometrySetup):
    """Return ``(j_star, gamma, scores_pre)``; ties at the top are rejected."""
    s = scores(setup)
    j_star = int(np.argmax(s))
    rest = np.delete(s, j_star)
    gamma = float(s[j_star] - rest.max())
    if gamma <= 0.0:
        raise ZeroMarginError("zero margin: theorem inapplicable")
    return j_star, gamma, s


def deviation_bound(params: TheoremParams, s_eff: float, M: int) -> float:
    return params.C * math.sqrt(math.log(M / params.delta) / (params.p_keep * s_eff))


def numerator_bound(params: TheoremParams, q, M: int) -> float:
    """Uniform bound on |S_j - p <q, v_j>| over all M embeddings."""
    l4 = lp_norm(q, 4)
    return params.C * math.sqrt(params.p_keep * l4 * l4 * math.log(M / params.delta))


def denominator_bound(params: TheoremParams, s_eff: float) -> float:
    """Bound on |R - sqrt(p)| for the masked query norm R."""
    return params.C * math.sqrt(math.log(2 / params.delta) / (params.p_keep * s_eff))


@dataclass
class MaskedScores:
    S: np.ndarray
    R: float
    scores_post: np.ndarray | None

    @property
    def degenerate(self) -> bool:
        return self.scores_post is None


def masked_scores(setup: GeometrySetup, m: MaskVector) -> MaskedScores:
    bits = np.asarray(m.bits if isinstance(m, MaskVector) else m)
    if bits.shape != (setup.d,):
        raise ValueError(f"mask length {bits.shape} does not match dimension {setup.d}")
    S, R = batch_scores((bits * setup.q)[None, :], setup.V)
    r = float(R[0])
    post = S[0] / r if r > 0 else None
    return MaskedScores(S[0], r, post)


def margin_report(setup: GeometrySetup, params: TheoremParams) -> MarginReport:
    j_star, gamma, s = margin(setup)
    s_eff = effective_sparsity(setup.q)
    eps = deviation_bound(params, s_eff, setup.M)
    return MarginReport(
        j_star=j_star,
        gamma=gamma,
        s_eff=s_eff,
        epsilon=eps,
        guaranteed=bool(gamma > 2 * eps),
        scores_pre=[float(x) for x in s],
        p_keep=params.p_keep,
        delta=params.delta,
        C=params.C,
        d=setup.d,
        M=setup.M,
    )


@dataclass
class _Chunk:
    dev: np.ndarray  # max_j |s'_j - s_j|, NaN for degenerate masks
    flip: np.ndarray
    degenerate: np.ndarray


def _evaluate_masks(setup: GeometrySetup, bits: np.ndarray, s_pre: np.ndarray, j_star: int) -> _Chunk:
    S, R = batch_scores(bits * setup.q, setup.V)
    degenerate = R == 0.0
    with np.errstate(invalid="ignore", divide="ignore"):
        post = S / R[:, None]
    dev = np.abs(post - s_pre).max(axis=1)
    flip = (np.argmax(np.where(degenerate[:, None], 0.0, post), axis=1) != j_star) & ~degenerate
    dev[degenerate] = np.nan
    return _Chunk(dev, flip, degenerate)


def simulate(setup: GeometrySetup, p_keep: float, trials: int, rng: RngStream,
             workers: int = 1, j_star: int | None = None) -> _Chunk:
    """Run ``trials`` independent masks; chunk ``i`` always draws from ``rng.child(i)``."""
    s_pre = scores(setup)
    if j_star is None:
        j_star = int(np.argmax(s_pre))
    sizes = [min(CHUNK_TRIALS, trials - start) for start in range(0, trials, CHUNK_TRIALS)]

    def run(i):
        u = rng.child(i).generator().random((sizes[i], setup.d))
        return _evaluate_masks(setup, (u < p_keep).astype(np.float64), s_pre, j_star)

    if workers > 1 and len(sizes) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, range(len(sizes))))
    else:
        parts = [run(i) for i in range(len(sizes))]
    if not parts:
        return _Chunk(np.empty(0), np.empty(0, bool), np.empty(0, bool))
    return _Chunk(
        np.concatenate([c.dev for c in parts]),
        np.concatenate([c.flip for c in parts]),
        np.concatenate([c.degenerate for c in parts]),
    )


def verify_top1(setup: GeometrySetup, params: TheoremParams, trials: int, rng: RngStream,
                workers: int = 1) -> McResult:
    j_star, gamma, s = margin(setup)
    sim = simulate(setup, params.p_keep, trials, rng, workers=workers, j_star=j_star)
    zero = int(sim.degenerate.sum())
    live = trials - zero
    devs = sim.dev[~sim.degenerate]
    eps = deviation_bound(params, effective_sparsity(setup.q), setup.M)
    flips = int(sim.flip.sum())
    if live > 0:
        mean = float(np.mean(devs))
        med = float(np.quantile(devs, 0.5))
        q99 = float(np.quantile(devs, 0.99))
        exceed = float(np.count_nonzero(devs > eps) / live)
        rate = flips / live
    else:
        mean = med = q99 = exceed = rate = float("nan")
    return McResult(trials=trials, flip_count=flips, flip_rate=rate, max_dev_mean=mean,
                    max_dev_median=med, max_dev_q99=q99, zero_mask_count=zero,
                    epsilon=eps, bound_exceed_rate=exceed)


MAX_ENUM_DIM = 20


def all_masks(d: int) -> np.ndarray:
    """Every mask in {0,1}^d as rows of a (2^d, d) float array."""
    idx = np.arange(1 << d, dtype=np.int64)
    return ((idx[:, None] >> np.arange(d)) & 1).astype(np.float64)


def enumerate_masks(setup: GeometrySetup, p_keep: float) -> ExactFlip:
    if setup.d > MAX_ENUM_DIM:
        raise ValueError(f"exhaustive enumeration supports d <= {MAX_ENUM_DIM}, got {setup.d}")
    j_star, _gamma, s = margin(setup)
    bits = all_masks(setup.d)
    res = _evaluate_masks(setup, bits, s, j_star)
    k = bits.sum(axis=1).astype(np.int64)
    # P(mask) = p^k (1-p)^(d-k); 0**0 == 1 handles p in {0, 1}
    w = np.array([p_keep ** i * (1 - p_keep) ** (setup.d - i) for i in range(setup.d + 1)])[k]
    return ExactFlip(
        flip_prob=math.fsum(w[res.flip]),
        degenerate_prob=math.fsum(w[res.degenerate]),
    )


# --- random setups -------------------------------------------------------

Q_DISTS = ("uniform", "onehot", "powerlaw", "gaussian")
V_DISTS = ("random", "planted")


def make_query(d: int, dist: str, gen: np.random.Generator, alpha: float = 1.0) -> np.ndarray:
    if dist == "uniform":
        q = gen.choice([-1.0, 1.0], size=d) / math.sqrt(d)
    elif dist == "onehot":
        q = np.zeros(d)
        q[0] = 1.0
        return q
    elif dist == "powerlaw":
        q = np.arange(1, d + 1, dtype=np.float64) ** (-alpha) * gen.choice([-1.0, 1.0], size=d)
    elif dist == "gaussian":
        q = gen.standard_normal(d)
    else:
        raise ValueError(f"unknown query distribution {dist!r}; choose from {Q_DISTS}")
    return q / np.sqrt(np.dot(q, q))


def make_embeddings(M: int, q: np.ndarray, dist: str, gen: np.random.Generator,
                    cosine: float = 0.8) -> np.ndarray:
    """Unit rows; ``planted`` sets row 0 at the given cosine to ``q``."""
    d = q.shape[0]
    V = gen.standard_normal((M, d))
    if dist == "planted":
        g = V[0] - np.dot(V[0], q) * q
        g /= np.sqrt(np.dot(g, g))
        V[0] = cosine * q + math.sqrt(1 - cosine * cosine) * g
    elif dist != "random":
        raise ValueError(f"unknown embedding distribution {dist!r}; choose from {V_DISTS}")
    return V / np.sqrt(np.einsum("ij,ij->i", V, V))[:, None]


@dataclass(frozen=True)
class GridCell:
    d: int
    M: int
    p_keep: float
    q_dist: str = "uniform"
    v_dist: str = "random"
    alpha: float = 1.0
    cosine: float = 0.8

    def label(self) -> str:
        return f"d={self.d},M={self.M},p={self.p_keep},q={self.q_dist},v={self.v_dist}"


def make_setup(cell: GridCell, rng: RngStream) -> GeometrySetup:
    gen = rng.generator()
    q = make_query(cell.d, cell.q_dist, gen, alpha=cell.alpha)
    V = make_embeddings(cell.M, q, cell.v_dist, gen, cosine=cell.cosine)
    return GeometrySetup(q, V)


@dataclass
class Calibration:
    C: float
    delta: float
    target_quantile: float
    trials: int
    worst_cell: dict
    cells: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def calibrate_C(cells: list[GridCell], trials: int, rng: RngStream, delta: float = 0.05,
                target_quantile: float | None = None, workers: int = 1) -> Calibration:
    """Smallest C whose deviation bound covers the empirical quantile in every cell.

    Cell ``i`` builds its setup from ``rng.child(i, 0)`` and draws masks from
    ``rng.child(i, 1)``.
    """
    if not cells:
        raise ValueError("calibration grid is empty")
    tq = 1.0 - delta if target_quantile is None else target_quantile
    rows = []
    for i, cell in enumerate(cells):
        setup = make_setup(cell, rng.child(i, 0))
        sim = simulate(setup, cell.p_keep, trials, rng.child(i, 1), workers=workers)
        devs = sim.dev[~sim.degenerate]
        s_eff = effective_sparsity(setup.q)
        rate = math.sqrt(math.log(cell.M / delta) / (cell.p_keep * s_eff))
        qv = float(np.quantile(devs, tq)) if devs.size else 0.0
        rows.append({**asdict(cell), "s_eff": s_eff, "quantile_dev": qv, "required_C": qv / rate})
    worst = max(rows, key=lambda r: r["required_C"])
    return Calibration(C=worst["required_C"], delta=delta, target_quantile=tq, trials=trials,
                       worst_cell=worst, cells=rows)


def report_document(report: MarginReport | None, mc: McResult | None, seed: int, stream_id: int,
                    exact: ExactFlip | None = None) -> dict:
    """Flat key/value document for one verification run."""
    doc: dict = {"software_version": __version__, "seed": seed, "stream_id": stream_id}
    if report is not None:
        doc.update(report.to_dict())
    if mc is not None:
        doc.update({f"mc_{k}": v for k, v in mc.to_dict().items()})
        doc["mc_standard_error"] = mc.standard_error
    if exact is not None:
        doc["exact_flip_prob"] = exact.flip_prob
        doc["exact_degenerate_prob"] = exact.degenerate_prob
        doc["exact_conditional_flip_rate"] = exact.conditional_flip_rate
    return doc


# --- grids ---------------------------------------------------------------

CALIBRATION_GRID = "d=64,256,1024;M=8,32;p=0.3,0.6,0.9;q=uniform,powerlaw;v=random"
HOLDOUT_GRID = "d=128,512,2048;M=4,16;p=0.5,0.8,0.95;q=uniform,powerlaw;v=planted;cosine=0.9"

_GRID_KEYS = {"d": int, "M": int, "p": float, "q": str, "v": str, "alpha": float, "cosine": float}


def parse_grid(text: str) -> list[GridCell]:
    """Cartesian grid from ``key=v1,v2;key=...`` with keys d, M, p, q, v, alpha, cosine.

    Cells are ordered with ``d`` varying slowest, in the key order above.
    """
    axes: dict[str, list] = {}
    for part in filter(None, (s.strip() for s in text.split(";"))):
        key, sep, vals = part.partition("=")
        key = key.strip()
        if not sep or key not in _GRID_KEYS:
            raise ValueError(f"bad grid term {part!r}; expected one of {sorted(_GRID_KEYS)} as key=v1,v2")
        if key in axes:
            raise ValueError(f"grid key {key!r} given twice")
        axes[key] = [_GRID_KEYS[key](v.strip()) for v in vals.split(",") if v.strip()]
        if not axes[key]:
            raise ValueError(f"grid key {key!r} has no values")
    for key in ("d", "M", "p"):
        if key not in axes:
            raise ValueError(f"grid needs a {key!r} axis")
    for q in axes.get("q", []):
        if q not in Q_DISTS:
            raise ValueError(f"unknown query distribution {q!r}")
    for v in axes.get("v", []):
        if v not in V_DISTS:
            raise ValueError(f"unknown embedding distribution {v!r}")
    names = {"p": "p_keep", "q": "q_dist", "v": "v_dist"}
    keys = [k for k in _GRID_KEYS if k in axes]
    return [GridCell(**{names.get(k, k): val for k, val in zip(keys, combo)})
            for combo in itertools.product(*(axes[k] for k in keys))]
