import json
import math

import numpy as np
import pytest
from scipy.special import expit

from otgmm.identified_set import ParamGrid
from otgmm.mc_harness import (
    LogitDGPConfig,
    covariate_cells,
    heatmap_svg,
    population_joint,
    population_regularized_point,
    run_coverage_study,
    run_rct_demo,
    run_rejection_study,
    simulate_panel_logit,
    write_coverage_csv,
    write_distance_csv,
    write_rct_csv,
)
from otgmm.models import makarov_bounds

TINY = LogitDGPConfig(n_org=300, n_ref=300, n_sims=10, B=50, directions=12,
                      grid=((0.0, 2.0, 2), (1.0, 3.0, 2)), seed=3)


def test_config_validation_and_json(tmp_path):
    with pytest.raises(ValueError):
        LogitDGPConfig(attrition_rate=1.0)
    with pytest.raises(ValueError):
        LogitDGPConfig(supports=((), (0.5,)))
    path = tmp_path / "cfg.json"
    TINY.to_json(path)
    assert LogitDGPConfig.from_json(path) == TINY
    assert LogitDGPConfig.from_json(TINY.to_json()) == TINY
    with pytest.raises(TypeError):
        LogitDGPConfig.from_json(json.dumps({"bogus": 1}))


def test_no_attrition_keeps_everyone():
    d = simulate_panel_logit(LogitDGPConfig(attrition_rate=0.0, n_org=200, n_ref=50), 0)
    assert d.n_ret == d.n_org


def test_simulation_is_deterministic():
    a, b = simulate_panel_logit(TINY, 4), simulate_panel_logit(TINY, 4)
    for name in ("y1", "x1", "ret_ids", "y2", "x2", "y_ref", "x_ref"):
        assert getattr(a, name).tobytes() == getattr(b, name).tobytes()
    c = simulate_panel_logit(TINY, 5)
    assert not np.array_equal(a.y1, c.y1)


def test_outcome_probabilities_match_logistic_model():
    cfg = LogitDGPConfig(n_org=100_000, n_ref=10, attrition_rate=0.0)
    d = simulate_panel_logit(cfg, 0)
    # P(Y = 1 | x) integrates Lambda(x'theta + alpha) over the normal fixed effect
    z = np.random.default_rng(1).standard_normal(400_000)
    for x in covariate_cells(cfg):
        rows = np.all(d.x1 == x, axis=1)
        target = float(np.mean(expit(x @ np.array(cfg.theta0) + z)))
        assert abs(d.y1[rows].mean() - target) < 0.02


def test_population_joint_is_a_distribution():
    atoms, joint = population_joint(LogitDGPConfig())
    assert joint.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(joint, joint.T)  # the two periods are exchangeable


def test_regularized_point_is_near_truth():
    th = population_regularized_point(LogitDGPConfig())
    assert np.linalg.norm(th - [1.0, 2.0]) < 0.1


@pytest.fixture(scope="module")
def rct_rows():
    return run_rct_demo(4000, epsilon=0.01, theta_list=(0.5, 0.85), u_points=9)


def test_rct_curve_zero_at_origin(rct_rows):
    assert all(abs(c) < 1e-12 for _, u, c in rct_rows if u == 0.0)


def test_rct_curve_endpoint(rct_rows):
    lower = makarov_bounds(0, 2, 1)[0]
    for th in (0.5, 0.85):
        c1 = next(c for t, u, c in rct_rows if t == th and u == 1.0)
        assert c1 == pytest.approx(lower - th, abs=0.03)


def test_rct_curve_nearly_piecewise_linear(rct_rows):
    for th in (0.5, 0.85):
        curve = {u: c for t, u, c in rct_rows if t == th}
        for u, c in curve.items():
            end = curve[1.0] if u > 0 else curve[-1.0]
            assert abs(c - abs(u) * end) < 0.02


def test_rct_guard():
    with pytest.raises(ValueError):
        run_rct_demo(50)


def test_rct_csv(tmp_path, rct_rows):
    write_rct_csv(rct_rows, tmp_path / "curves.csv")
    lines = (tmp_path / "curves.csv").read_text().splitlines()
    assert lines[0] == "theta,u,c_value" and len(lines) == len(rct_rows) + 1


def test_rejection_study_threads_do_not_matter():
    pts = [[1.0, 2.0], [8.0, 10.0]]
    a = run_rejection_study(TINY, pts, reps=[0, 1])
    b = run_rejection_study(TINY, pts, reps=[0, 1], threads=2)
    assert np.array_equal(a.statistics, b.statistics)
    assert np.array_equal(a.critical_values, b.critical_values)
    assert a.reject[:, 1].all()


@pytest.fixture(scope="module")
def coverage():
    return run_coverage_study(TINY)


def test_coverage_report(coverage):
    assert coverage.n_sims == 10 and coverage.n_failed == 0
    assert coverage.coverage.shape == (4,) and np.all((0 <= coverage.coverage) & (coverage.coverage <= 1))
    assert np.all(coverage.mean_distance >= 0)


def test_coverage_monotone_in_alpha(coverage):
    s = coverage.study
    cov = [1 - s.reject_at(a).mean(axis=0) for a in (0.01, 0.05, 0.1, 0.3)]
    for loose, tight in zip(cov, cov[1:]):
        assert np.all(loose >= tight)


def test_coverage_outputs(tmp_path, coverage):
    write_coverage_csv(coverage, tmp_path / "coverage.csv")
    write_distance_csv(coverage, tmp_path / "distance.csv")
    assert (tmp_path / "coverage.csv").read_text().startswith("theta_1,theta_2,coverage,mean_distance")
    svg = heatmap_svg(coverage.grid, coverage.coverage, "coverage")
    assert svg.startswith("<svg") and svg.count("<rect") == 4


def test_heatmap_scale():
    svg = heatmap_svg(ParamGrid(((0, 1, 2), (0, 1, 1))), [0.0, 1.0])
    assert "rgb(255, 255, 255)" in svg and "rgb(8, 48, 107)" in svg


def test_coverage_needs_ten_sims():
    with pytest.raises(ValueError):
        run_coverage_study(LogitDGPConfig(n_sims=5))
