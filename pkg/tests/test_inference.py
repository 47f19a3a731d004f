import math

import numpy as np
import pytest

from otgmm.direction_search import DistanceOptions
from otgmm.exceptions import InvalidInputError
from otgmm.identified_set import ParamGrid
from otgmm.inference import (
    adjusted_bootstrap_test,
    bootstrap_test,
    confidence_region,
    mc_p_value,
    order_statistic_quantile,
)
from otgmm.mc_harness import rct_samples
from otgmm.measures import EmpiricalMeasure
from otgmm.models import BenefitShareModel, ZeroModel

OPTS = DistanceOptions(method="grid", resolution=21)


@pytest.fixture(scope="module")
def rct200():
    return rct_samples(200, 0.0, 2.0, 1.0, seed=3)


def test_order_statistic_quantile():
    draws = np.arange(1.0, 101.0)
    assert order_statistic_quantile(draws, 0.10) == 90.0
    assert order_statistic_quantile(draws[::-1], 0.05) == 95.0
    rng = np.random.default_rng(0)
    d = rng.normal(size=200)
    assert order_statistic_quantile(d, 0.1) == np.sort(d)[math.ceil(0.9 * 200) - 1]


def test_p_value_convention():
    assert mc_p_value(np.zeros(99), 1.0) == pytest.approx(0.01)
    assert mc_p_value(np.zeros(99), 0.0) == pytest.approx(1.0)


def test_degenerate_bootstrap_distribution():
    assert order_statistic_quantile(np.full(50, 0.7), 0.1) == 0.7


def test_zero_model_never_rejects():
    mu = EmpiricalMeasure.from_samples(np.random.default_rng(0).normal(size=60))
    res = bootstrap_test(ZeroModel(), [0.0], mu, mu, 0.1, B=50, opts=OPTS)
    assert res.statistic == 0.0 and not res.reject
    assert np.abs(res.draws).max() <= 1e-12


def test_guards(rct200):
    mu, nu = rct200
    with pytest.raises(InvalidInputError):
        bootstrap_test(BenefitShareModel(), [0.5], mu, nu, 0.1, B=10)
    other = EmpiricalMeasure.from_samples(np.zeros(50))
    with pytest.raises(InvalidInputError):
        bootstrap_test(BenefitShareModel(), [0.5], mu, other, 0.1, B=50)
    with pytest.raises(InvalidInputError):
        bootstrap_test(BenefitShareModel(), [0.5], mu, nu, 0.1, B=50, resampler=lambda r: None)


@pytest.fixture(scope="module")
def far_test(rct200):
    mu, nu = rct200
    return bootstrap_test(BenefitShareModel(), [0.3], mu, nu, 0.05, B=60, seed=7, opts=OPTS)


def test_determinism(rct200, far_test):
    mu, nu = rct200
    again = bootstrap_test(BenefitShareModel(), [0.3], mu, nu, 0.05, B=60, seed=7, opts=OPTS)
    assert np.array_equal(far_test.draws, again.draws)


def test_threads_do_not_change_draws(rct200, far_test):
    mu, nu = rct200
    par = bootstrap_test(BenefitShareModel(), [0.3], mu, nu, 0.05, B=60, seed=7, opts=OPTS,
                         threads=3)
    assert np.array_equal(far_test.draws, par.draws)


def test_critical_value_is_sort_quantile(far_test):
    d = np.sort(far_test.valid_draws)
    assert far_test.critical_value == d[math.ceil(0.9 * len(d)) - 1]


def test_statistic_invariant_to_B(rct200, far_test):
    mu, nu = rct200
    other = bootstrap_test(BenefitShareModel(), [0.3], mu, nu, 0.05, B=50, seed=7, opts=OPTS)
    assert other.statistic == far_test.statistic


def test_far_point_rejected(far_test):
    assert far_test.reject and far_test.p_value < 0.05
    assert far_test.n_failed == 0 and not far_test.unreliable


def test_at_alpha_monotone(far_test):
    crits = [far_test.at_alpha(a).critical_value for a in (0.01, 0.05, 0.1, 0.3)]
    assert all(np.diff(crits) <= 0)


def test_summary_is_json_ready(far_test):
    import json

    s = far_test.summary()
    json.dumps(s)
    assert s["B"] == 60 and s["reject"] is True


def test_adjusted_with_zero_epsilon_matches(rct200, far_test):
    mu, nu = rct200
    adj = adjusted_bootstrap_test(BenefitShareModel(), [0.3], mu, nu, 0.05, B=60, seed=7,
                                  opts=OPTS, adjust_epsilon=0.0)
    assert adj.statistic == far_test.statistic
    assert np.array_equal(adj.draws, far_test.draws)


def test_adjusted_not_above_unadjusted(rct200):
    mu, nu = rct200
    for th in (0.3, 0.8):
        plain = bootstrap_test(BenefitShareModel(), [th], mu, nu, 0.05, B=50, opts=OPTS)
        adj = adjusted_bootstrap_test(BenefitShareModel(), [th], mu, nu, 0.05, B=50, opts=OPTS)
        assert adj.statistic <= plain.statistic + 1e-12


def test_adjusted_needs_equal_sizes(rct200):
    mu, _ = rct200
    nu = EmpiricalMeasure.from_samples(np.zeros(50))
    with pytest.raises(InvalidInputError):
        adjusted_bootstrap_test(BenefitShareModel(), [0.3], mu, nu, 0.05, B=50)


def test_confidence_region(rct200):
    mu, nu = rct200
    # the regularized set is the point P_{mu x nu}(Y1 >= Y0), about 0.92 here
    grid = ParamGrid(((0.3, 0.9, 3),))
    reg = confidence_region(BenefitShareModel(), mu, nu, grid, 0.05, B=50, opts=OPTS)
    assert not reg.accepted[0] and reg.accepted[-1]
    loose, tight = reg.accepted_at(0.01), reg.accepted_at(0.5)
    assert np.all(loose >= tight)
    # alpha -> 0 gives the largest region; with finite B the critical value
    # is then the largest draw, not +infinity
    widest = reg.accepted_at(1e-9)
    assert np.all(widest >= loose)
    assert np.array_equal(widest, [r.statistic <= r.draws.max() for r in reg.per_point])
    narrowest = reg.accepted_at(1 - 1 / 51)
    assert np.all(narrowest <= tight)


def test_failed_draws_are_excluded_and_flagged(rct200):
    mu, nu = rct200
    # two Sinkhorn iterations leave large marginal errors in every draw
    opts = DistanceOptions(method="grid", resolution=5, max_iter=2)
    res = bootstrap_test(BenefitShareModel(), [0.3], mu, nu, 0.05, B=50, opts=opts)
    assert res.n_failed == 50 and res.unreliable
    assert np.isnan(res.draws).all() and any("failed" in w for w in res.warnings)
