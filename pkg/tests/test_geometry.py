import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from becnet import geometry as geo
from becnet.channels import MaskVector
from becnet.numerics.rng import RngStream


def unit(v):
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v)


def E(d, i):
    e = np.zeros(d)
    e[i] = 1.0
    return e


# --- effective sparsity and margin -------------------------------------------

def test_effective_sparsity_examples():
    assert geo.effective_sparsity(np.full(4, 0.5)) == 4
    assert geo.effective_sparsity(E(9, 3)) == 1
    q = np.array([math.sqrt(0.8), math.sqrt(0.2)])
    assert geo.effective_sparsity(q) == pytest.approx(1 / 0.68, abs=1e-12)  # 1.4706


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-10, 10).filter(lambda x: abs(x) > 1e-3), min_size=1, max_size=40))
def test_effective_sparsity_range(xs):
    s = geo.effective_sparsity(np.array(xs))
    assert 1 - 1e-9 <= s <= len(xs) + 1e-9


def test_margin_examples():
    j, g, _ = geo.margin(geo.GeometrySetup(E(2, 0), np.eye(2)))
    assert (j, g) == (0, 1.0)
    V = np.stack([E(2, 0), unit([1, 1])])
    _, g, _ = geo.margin(geo.GeometrySetup(E(2, 0), V))
    assert g == pytest.approx(1 - 1 / math.sqrt(2), abs=1e-12)
    with pytest.raises(geo.ZeroMarginError):
        geo.margin(geo.GeometrySetup(E(2, 0), np.stack([E(2, 0), E(2, 0)])))


def test_setup_validation():
    with pytest.raises(ValueError, match="unit norm"):
        geo.GeometrySetup(np.array([1.0, 1.0]), np.eye(2))
    with pytest.raises(ValueError, match="not unit norm"):
        geo.GeometrySetup(E(2, 0), np.array([[1.0, 0.0], [2.0, 0.0]]))
    with pytest.raises(ValueError, match="at least two"):
        geo.GeometrySetup(E(2, 0), np.array([[1.0, 0.0]]))
    with pytest.raises(ValueError, match="does not match"):
        geo.GeometrySetup(E(3, 0), np.eye(2))


# --- bounds ---------------------------------------------------------------------

def test_deviation_bound_example():
    p = geo.TheoremParams(p_keep=0.5, delta=0.1, C=1.0)
    assert geo.deviation_bound(p, 100, 10) == pytest.approx(math.sqrt(math.log(100) / 50), abs=1e-12)
    assert geo.deviation_bound(p, 100, 10) == pytest.approx(0.30348, abs=1e-5)


def test_deviation_bound_decreases_in_s_eff():
    p = geo.TheoremParams(p_keep=0.5)
    vals = [geo.deviation_bound(p, s, 16) for s in (1, 10, 100, 1e4, 1e8)]
    assert all(a > b for a, b in zip(vals, vals[1:]))
    assert vals[-1] < 1e-3


def test_numerator_bound_examples():
    q = E(3, 0)  # ||q||_4^2 = 1
    delta = 2 / math.e
    assert geo.numerator_bound(geo.TheoremParams(1.0, delta), q, 2) == pytest.approx(1.0, abs=1e-12)
    assert geo.numerator_bound(geo.TheoremParams(1e-12, 0.05), q, 8) < 1e-5


def test_denominator_bound_examples():
    assert geo.denominator_bound(geo.TheoremParams(1.0, 2 / math.e), 1.0) == pytest.approx(1.0, abs=1e-12)
    p = geo.TheoremParams(0.5)
    assert geo.denominator_bound(p, 1e8) < geo.denominator_bound(p, 1e4) < geo.denominator_bound(p, 1e2)


def test_theorem_params_validation():
    for kw in ({"p_keep": 0.0}, {"p_keep": 1.2}, {"p_keep": 0.5, "delta": 0.0}, {"p_keep": 0.5, "C": 0.0}):
        with pytest.raises(ValueError):
            geo.TheoremParams(**kw)


@pytest.mark.parametrize("q_dist", ["uniform", "powerlaw", "gaussian"])
@pytest.mark.parametrize("p", [0.3, 0.9])
def test_intermediate_bounds_hold_with_unit_constant(q_dist, p):
    # with C = 1 the numerator and denominator events fail at most delta of the time
    setup = geo.make_setup(geo.GridCell(d=256, M=16, p_keep=p, q_dist=q_dist), RngStream(1))
    params = geo.TheoremParams(p, 0.05, 1.0)
    bits = (RngStream(2).generator().random((5000, 256)) < p).astype(np.float64)
    S, R = geo.batch_scores(bits * setup.q, setup.V)
    pre = geo.scores(setup)
    num = np.abs(S - p * pre).max(axis=1) > geo.numerator_bound(params, setup.q, setup.M)
    den = np.abs(R - math.sqrt(p)) > geo.denominator_bound(params, geo.effective_sparsity(setup.q))
    assert num.mean() <= 0.05 and den.mean() <= 0.05


# --- masked scores and simulation -----------------------------------------

def test_masked_scores_examples():
    setup = geo.make_setup(geo.GridCell(d=12, M=5, p_keep=0.5, q_dist="gaussian"), RngStream(4))
    full = geo.masked_scores(setup, MaskVector(np.ones(12)))
    assert full.scores_post.tobytes() == geo.scores(setup).tobytes()
    assert geo.masked_scores(setup, MaskVector(np.zeros(12))).degenerate
    s2 = geo.GeometrySetup(unit([1, 1]), np.eye(2))
    np.testing.assert_allclose(geo.masked_scores(s2, np.array([1, 0])).scores_post, [1, 0], atol=1e-15)


def test_masked_scores_length_check():
    s2 = geo.GeometrySetup(unit([1, 1]), np.eye(2))
    with pytest.raises(ValueError):
        geo.masked_scores(s2, np.ones(3))


def test_verify_identity_channel():
    setup = geo.make_setup(geo.GridCell(d=64, M=8, p_keep=1.0), RngStream(0))
    mc = geo.verify_top1(setup, geo.TheoremParams(1.0), 3000, RngStream(1))
    assert mc.flip_rate == 0 and mc.max_dev_mean == 0 and mc.max_dev_q99 == 0 and mc.zero_mask_count == 0


def test_verify_large_margin_rarely_flips():
    setup = geo.make_setup(geo.GridCell(d=1000, M=32, p_keep=0.9, v_dist="planted", cosine=0.5), RngStream(3))
    _, gamma, _ = geo.margin(setup)
    assert gamma >= 0.3
    mc = geo.verify_top1(setup, geo.TheoremParams(0.9), 10_000, RngStream(5))
    assert mc.flip_rate <= 0.01


def test_simulation_independent_of_worker_count():
    setup = geo.make_setup(geo.GridCell(d=40, M=6, p_keep=0.6, q_dist="powerlaw"), RngStream(2))
    params = geo.TheoremParams(0.6)
    a = geo.verify_top1(setup, params, 7000, RngStream(8), workers=1)
    b = geo.verify_top1(setup, params, 7000, RngStream(8), workers=4)
    assert a.to_dict() == b.to_dict()


def test_enumerate_identity_and_hand_case():
    setup = geo.make_setup(geo.GridCell(d=6, M=4, p_keep=1.0, q_dist="gaussian"), RngStream(0))
    assert geo.enumerate_masks(setup, 1.0).flip_prob == 0
    # q = e1, V = {e1, e2}: any mask erasing coordinate 1 is degenerate (the masked q is zero)
    ex = geo.enumerate_masks(geo.GeometrySetup(E(2, 0), np.eye(2)), 0.5)
    assert ex.flip_or_degenerate == 0.5
    assert ex.degenerate_prob == 0.5 and ex.flip_prob == 0


def test_enumerate_size_limit():
    setup = geo.make_setup(geo.GridCell(d=21, M=2, p_keep=0.5), RngStream(0))
    with pytest.raises(ValueError):
        geo.enumerate_masks(setup, 0.5)


@pytest.mark.parametrize("seed", range(4))
def test_mc_matches_enumeration(seed):
    d = 8 if seed % 2 else 10
    setup = geo.make_setup(geo.GridCell(d=d, M=5, p_keep=0.6, q_dist="gaussian"), RngStream(seed))
    exact = geo.enumerate_masks(setup, 0.6).conditional_flip_rate
    mc = geo.verify_top1(setup, geo.TheoremParams(0.6), 40_000, RngStream(100 + seed))
    se = math.sqrt(exact * (1 - exact) / mc.effective_trials)
    assert abs(mc.flip_rate - exact) <= 3 * se + 1e-12


# --- grids and calibration ---------------------------------------------------

def test_parse_grid():
    cells = geo.parse_grid("d=4,8;M=2;p=0.5,0.9;q=uniform")
    assert [(c.d, c.p_keep) for c in cells] == [(4, 0.5), (4, 0.9), (8, 0.5), (8, 0.9)]
    for bad in ("d=4;M=2", "d=4;M=2;p=0.5;z=1", "d=4;d=8;M=2;p=0.5", "d=4;M=2;p=0.5;q=cauchy"):
        with pytest.raises(ValueError):
            geo.parse_grid(bad)


def test_calibration_deterministic_and_monotone_in_quantile():
    cells = geo.parse_grid("d=32,128;M=4;p=0.5;q=uniform,powerlaw")
    a = geo.calibrate_C(cells, 2000, RngStream(0), target_quantile=0.95)
    b = geo.calibrate_C(cells, 2000, RngStream(0), target_quantile=0.95)
    c = geo.calibrate_C(cells, 2000, RngStream(0), target_quantile=0.99)
    assert a.to_dict() == b.to_dict()
    assert a.C <= c.C
    assert a.C == max(r["required_C"] for r in a.cells)


def test_margin_report_guarantee_flag():
    setup = geo.make_setup(geo.GridCell(d=2048, M=4, p_keep=0.95, v_dist="planted", cosine=0.9), RngStream(0))
    rep = geo.margin_report(setup, geo.TheoremParams(0.95, 0.05, 0.5))
    assert rep.guaranteed == (rep.gamma > 2 * rep.epsilon)
    assert rep.s_eff == pytest.approx(2048)
