import math
from fractions import Fraction

import numpy as np
import pytest
from scipy.special import expit

from otgmm.exceptions import InvalidInputError
from otgmm.identified_set import ParamGrid
from otgmm.mc_harness import LogitDGPConfig, complete_pairs, simulate_panel_logit
from otgmm.models import PanelLogitScoreModel
from otgmm.ot_core import sinkhorn
from otgmm.panel_logit import (
    DiscretePMF,
    PanelData,
    PartitionedPanelModel,
    ame_bounds_attrition,
    ame_bounds_no_attrition,
    ame_p_a,
    attriter_ot_bounds,
    chebyshev_coeffs,
    elementary_C,
    estimate_marginals,
    lambda_coeffs,
    merge_intervals,
    panel_resampler,
    partitioned_problem,
    read_panel_csv,
    recover_attriter_marginal,
    slope_bounds,
    slope_identified_set,
    thin_points,
    write_ame_csv,
    write_panel_csv,
    write_slope_csv,
)

SMALL = LogitDGPConfig(n_org=600, n_ref=600, seed=5)


@pytest.fixture(scope="module")
def panel():
    return simulate_panel_logit(SMALL, 0)


# ---------------------------------------------------------------- data ----

def test_csv_round_trip(tmp_path, panel):
    write_panel_csv(panel, tmp_path)
    back = read_panel_csv(tmp_path)
    for name in ("unit_ids", "y1", "x1", "ret_ids", "y2", "x2", "y_ref", "x_ref"):
        assert np.array_equal(getattr(back, name), getattr(panel, name))


def test_panel_validation():
    with pytest.raises(InvalidInputError, match="not 0/1"):
        PanelData.from_arrays([0, 2], [[0.1], [0.2]], [True, False], [1], [[0.1]], [0], [[0.1]])
    with pytest.raises(InvalidInputError, match="not present"):
        PanelData([0, 1], [0, 1], [[0.1], [0.2]], [7], [1], [[0.1]], [0], [[0.1]])


def test_resample_keeps_sizes(panel):
    b = panel.resample(np.random.default_rng(0))
    assert b.n_org == panel.n_org and b.n_ref == panel.n_ref
    assert 0 < b.p_hat < 1


# ----------------------------------------------------------- marginals ----

def test_pmf_counts():
    f = DiscretePMF.from_rows([[0, 1.0], [0, 1.0], [0, 1.0], [1, 1.0]])
    assert np.allclose(f.probs, [0.75, 0.25])


def test_full_retention_rejected():
    d = PanelData.from_arrays([0, 1], [[0.1], [0.2]], [True, True], [1, 0], [[0.1], [0.2]], [0],
                              [[0.1]])
    with pytest.raises(InvalidInputError, match="strictly"):
        estimate_marginals(d)


def test_kernel_estimator_not_available(panel):
    with pytest.raises(NotImplementedError):
        estimate_marginals(panel, f2_ret_method="kernel")


def _pmf(probs):
    return DiscretePMF(np.array([[0.0, 1.0], [1.0, 1.0]]), probs)


def test_recover_examples():
    f2, f2r = _pmf([0.5, 0.5]), _pmf([0.8, 0.2])
    assert np.allclose(recover_attriter_marginal(f2, f2r, 0.0).probs, f2.probs)
    assert np.allclose(recover_attriter_marginal(f2, f2, 0.7).probs, f2.probs)
    assert np.allclose(recover_attriter_marginal(f2, f2r, 0.5).probs, [0.2, 0.8])


def test_recover_clips_and_warns():
    with pytest.warns(RuntimeWarning, match="clipped"):
        out = recover_attriter_marginal(_pmf([0.5, 0.5]), _pmf([0.9, 0.1]), 0.8)
    assert out.clipped_mass == pytest.approx(1.1)  # (0.5 - 0.8 * 0.9) / 0.2
    assert out.probs.sum() == pytest.approx(1.0) and np.all(out.probs >= 0)


def test_mcar_attriter_marginal_close_to_retainers():
    data = simulate_panel_logit(LogitDGPConfig(n_org=20_000, n_ref=10, attrition_rate=0.3), 0)
    m = estimate_marginals(data)
    support = np.unique(np.vstack([m.f1_ret.support, m.f1_att.support]), axis=0)
    assert np.abs(m.f1_ret.prob_of(support) - m.f1_att.prob_of(support)).max() < 0.02


# ------------------------------------------------------- attriter bounds ----

def test_bounds_vanish_on_non_switcher_atom():
    f1 = DiscretePMF([[1.0, 0.5, 0.6]], [1.0])
    f2 = DiscretePMF([[1.0, 0.42, 0.72]], [1.0])
    lo, hi = attriter_ot_bounds(PanelLogitScoreModel(2), [1.0, 2.0], f1, f2, 0.1)
    assert np.allclose(lo, 0) and np.allclose(hi, 0)


def test_bounds_vanish_for_identical_single_cell_marginals():
    f = DiscretePMF([[0.0, 0.5, 0.6], [1.0, 0.5, 0.6]], [0.4, 0.6])
    lo, hi = attriter_ot_bounds(PanelLogitScoreModel(2), [1.0, 2.0], f, f, 1e-3)
    assert np.allclose(lo, 0, atol=1e-12) and np.allclose(hi, 0, atol=1e-12)


def test_two_atom_bounds_match_coupling_scan():
    f1 = DiscretePMF([[0.0, 0.42, 0.54], [1.0, 0.60, 0.72]], [0.3, 0.7])
    f2 = DiscretePMF([[0.0, 0.55, 0.65], [1.0, 0.42, 0.72]], [0.6, 0.4])
    theta = np.array([1.0, 2.0])
    model = PanelLogitScoreModel(2)
    phi = model.phi_tensor(f1.support, f2.support, theta)
    a1, b1 = 0.3, 0.6
    ts = np.linspace(max(0.0, a1 + b1 - 1), min(a1, b1), 20001)
    vals = []
    for t in ts:
        P = np.array([[t, a1 - t], [b1 - t, 1 - a1 - b1 + t]])
        vals.append(np.tensordot(P, phi, axes=([0, 1], [0, 1])))
    vals = np.array(vals)
    lo, hi = attriter_ot_bounds(model, theta, f1, f2, 1e-3)
    assert np.allclose(lo, vals.min(axis=0), atol=1e-3)
    assert np.allclose(hi, vals.max(axis=0), atol=1e-3)


def test_upper_not_below_lower(panel):
    m = estimate_marginals(panel)
    f2_att = recover_attriter_marginal(m.f2, m.f2_ret, m.p_hat)
    rng = np.random.default_rng(0)
    for _ in range(5):
        th = rng.uniform(-1, 4, size=2)
        lo, hi = attriter_ot_bounds(PanelLogitScoreModel(2), th, m.f1_att, f2_att, 0.05)
        assert np.all(hi >= lo)


def test_slope_bounds_combine_parts(panel):
    b = slope_bounds(panel, [1.0, 2.0], 0.05)
    p = panel.p_hat
    assert np.allclose(b.nu_lower, p * b.retainer_moment + (1 - p) * b.attriter_lower)
    assert np.allclose(b.nu_upper, p * b.retainer_moment + (1 - p) * b.attriter_upper)


def test_far_grid_is_empty(panel):
    grid = ParamGrid(((9.5, 12.5, 3), (10.5, 13.5, 3)))
    assert not slope_identified_set(panel, grid, 0.05).members.any()


def test_slope_set_and_csv(tmp_path):
    # entropic bounds shrink by up to eps * KL on each side, so eps must be small
    data = simulate_panel_logit(LogitDGPConfig(), 0)
    grid = ParamGrid(((0.0, 2.0, 3), (1.0, 3.0, 3)))
    res = slope_identified_set(data, grid, 0.01, sharp=True)
    assert res.members[4]  # theta0 = (1, 2) is the centre point
    assert res.d_values is not None and res.sharp_members.shape == res.members.shape
    path = tmp_path / "slope_bounds.csv"
    write_slope_csv(res, path)
    header = path.read_text().splitlines()[0].split(",")
    assert header[:2] == ["theta_1", "theta_2"] and header[-1] == "sharp_member"


def test_partitioned_model_product_moment(panel):
    prob = partitioned_problem(panel)
    th = np.array([1.0, 2.0])
    res = sinkhorn(_dense(prob, th), prob.mu, prob.nu, 0.1)
    base = PanelLogitScoreModel(2).phi_tensor(prob.mu.points, prob.nu.points, th)
    expected = (panel.p_hat * prob.model.retainer_moment(th)
                + (1 - panel.p_hat) * np.einsum("i,j,ijp->p", prob.mu.weights, prob.nu.weights, base))
    assert np.allclose(res.moment, expected, atol=1e-10)
    assert isinstance(prob.model, PartitionedPanelModel) and prob.n == panel.n_org


def _dense(prob, th):
    from otgmm.ot_core import CostTensor

    return CostTensor(prob.model.phi_tensor(prob.mu.points, prob.nu.points, th), [0.0, 0.0], th)


def test_resampler_is_deterministic(panel):
    draw = panel_resampler(panel)
    a = draw(np.random.default_rng(3))
    b = draw(np.random.default_rng(3))
    assert np.array_equal(a[1].points, b[1].points) and np.array_equal(a[2].weights, b[2].weights)


# ----------------------------------------------------------- Chebyshev ----

def test_chebyshev_t2_exact():
    b, err = chebyshev_coeffs(2, exact=True)
    assert b == [Fraction(1, 32), Fraction(-9, 16), Fraction(3, 2)] and err == Fraction(1, 32)


def test_chebyshev_t1():
    b, err = chebyshev_coeffs(1)
    assert b == pytest.approx([-1 / 8, 1.0]) and err == 1 / 8


@pytest.mark.parametrize("T", [1, 2, 3, 4])
def test_chebyshev_error(T):
    b, err = chebyshev_coeffs(T)
    u = np.linspace(0, 1, 100_001)
    approx = np.polynomial.polynomial.polyval(u, b)
    assert abs(np.abs(u ** (T + 1) - approx).max() - 1 / (2 * 4 ** T)) <= 1e-10
    assert err == pytest.approx(1 / (2 * 4 ** T))


def test_chebyshev_error_ratio():
    errs = [chebyshev_coeffs(T)[1] for T in range(1, 6)]
    assert np.allclose(np.array(errs[:-1]) / np.array(errs[1:]), 4.0)


def test_chebyshev_guard():
    with pytest.raises(InvalidInputError):
        chebyshev_coeffs(0)


# ------------------------------------------------------ lambda, C_s, p, a ----

X = np.array([[0.42, 0.65], [0.60, 0.54]])
TH = np.array([1.0, 2.0])


def test_lambda_t2():
    E = math.exp((X[1] - X[0]) @ TH)
    assert np.allclose(lambda_coeffs(X, TH), [0.0, 1.0, E - 2.0, 1.0 - E])


def test_lambda_equal_covariates():
    x = np.vstack([X[0], X[0]])
    assert np.allclose(lambda_coeffs(x, TH, j=2), [0.0, 2.0, -2.0, 0.0])


def test_lambda_polynomial_identity():
    rng = np.random.default_rng(0)
    x = rng.uniform(0.4, 0.7, size=(3, 2))
    lam = lambda_coeffs(x, TH, tau=2, j=1)
    idx = x @ TH
    for u in rng.random(20):
        rhs = TH[0] * u * (1 - u) * np.prod([1 + u * (math.exp(idx[t] - idx[1]) - 1)
                                             for t in (0, 2)])
        assert np.polynomial.polynomial.polyval(u, lam) == pytest.approx(rhs, abs=1e-12)
    assert lam.sum() == pytest.approx(0.0, abs=1e-12)


def test_elementary_c():
    e1, e2 = np.exp(X @ TH)
    assert elementary_C(X, TH, 0) == 1.0
    assert elementary_C(X, TH, 1) == pytest.approx(e1 + e2)
    assert elementary_C(X, TH, 2) == pytest.approx(e1 * e2)
    x3 = np.random.default_rng(1).normal(size=(4, 2))
    total = sum(elementary_C(x3, TH, s) for s in range(5))
    assert total == pytest.approx(np.prod(1 + np.exp(x3 @ TH)))


def test_p_a_t2_formulas():
    (b0, b1, b2), _ = chebyshev_coeffs(2)
    lam = lambda_coeffs(X, TH)
    e1, e2 = np.exp(X @ TH)
    c1, c2 = e1 + e2, e1 * e2
    p0, a0 = ame_p_a(X, 0, TH)
    assert p0 == pytest.approx(b0 * lam[3]) and a0 == pytest.approx(abs(lam[3]) / 32)
    p1, a1 = ame_p_a(X, 1, TH)
    assert p1 == pytest.approx((TH[0] + (2 * b0 + b1) * lam[3]) * e1 / c1)
    assert a1 == pytest.approx(abs(lam[3]) * e1 / (16 * c1))
    p2, _ = ame_p_a(X, 2, TH)
    assert p2 == pytest.approx((b0 + b1 + b2 - 1) * lam[3] * e1 ** 2 / c2)


# ------------------------------------------------------------------ AME ----

def test_ame_width_and_degenerate_case():
    y1, x1, y2, x2 = complete_pairs(SMALL, 2000, seed=1)
    lo, hi = ame_bounds_no_attrition(y1, x1, y2, x2, TH)
    from otgmm.panel_logit import _pa_on_pairs

    _, a = _pa_on_pairs(y1, x1, y2, x2, TH, 1, 1)
    assert hi - lo == pytest.approx(2 * a.mean(), abs=1e-14)
    lo2, hi2 = ame_bounds_no_attrition(y1, x1, y2, x1, TH)
    assert lo2 == pytest.approx(hi2, abs=1e-14)


def test_ame_contains_true_value():
    cfg = LogitDGPConfig()
    y1, x1, y2, x2 = complete_pairs(cfg, 20_000, seed=2)
    lo, hi = ame_bounds_no_attrition(y1, x1, y2, x2, np.array(cfg.theta0))
    rng = np.random.default_rng(99)
    x = np.column_stack([rng.choice(s, 1_000_000) for s in cfg.supports])
    z = expit(x @ np.array(cfg.theta0) + rng.standard_normal(1_000_000))
    delta = cfg.theta0[0] * float(np.mean(z * (1 - z)))
    assert lo <= delta <= hi


def test_merge_and_thin():
    assert merge_intervals([(0, 1), (0.5, 2), (3, 4)]) == [(0, 2), (3, 4)]
    pts = np.arange(10.0)[:, None]
    assert len(thin_points(pts, 4)) == 4 and len(thin_points(pts, None)) == 10


@pytest.fixture(scope="module")
def ame_panel():
    return simulate_panel_logit(LogitDGPConfig(n_org=800, n_ref=800, seed=2), 0)


def test_ame_singleton_slope_set(tmp_path, ame_panel):
    res = ame_bounds_attrition(ame_panel, np.array([[1.0, 2.0]]), 0.05)
    assert res.union == [res.intervals[0]]
    write_ame_csv(res, tmp_path / "ame.csv")
    assert (tmp_path / "ame.csv").read_text().startswith("theta_1,theta_2,lower,upper")


def test_ame_union_monotone(ame_panel):
    small = np.array([[1.0, 2.0]])
    big = np.array([[1.0, 2.0], [0.8, 2.2], [1.2, 1.8]])
    u_small = ame_bounds_attrition(ame_panel, small, 0.05).union
    u_big = ame_bounds_attrition(ame_panel, big, 0.05).union
    for lo, hi in u_small:
        assert any(a <= lo and hi <= b for a, b in u_big)


def test_ame_small_attrition_limit():
    data = simulate_panel_logit(LogitDGPConfig(n_org=1000, n_ref=1000, attrition_rate=0.01,
                                               seed=4), 0)
    res = ame_bounds_attrition(data, np.array([[1.0, 2.0]]), 0.05)
    y1, x1, y2, x2 = data.retainer_pairs()
    lo, hi = ame_bounds_no_attrition(y1, x1, y2, x2, TH)
    gap = 1 - data.p_hat
    # the attriter part carries weight 1 - p and its terms are bounded by |theta_j|
    assert abs(res.intervals[0][0] - lo) <= 2 * gap * (abs(TH[0]) + 1)
    assert abs(res.intervals[0][1] - hi) <= 2 * gap * (abs(TH[0]) + 1)
