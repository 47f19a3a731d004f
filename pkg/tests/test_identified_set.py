import math

import numpy as np
import pytest

from otgmm.exceptions import EmptySetError, InvalidInputError
from otgmm.identified_set import (
    ParamGrid,
    default_eta,
    estimate_identified_set,
    hausdorff_distance,
    refine_boundary,
    write_estimate_csv,
)
from otgmm.direction_search import DistanceOptions
from otgmm.measures import EmpiricalMeasure
from otgmm.models import BenefitShareModel, ZeroModel


def test_param_grid_points_row_major():
    g = ParamGrid(((0.0, 1.0, 2), (5.0, 6.0, 3)))
    assert g.shape == (2, 3) and len(g) == 6
    assert np.allclose(g.points[:3], [[0, 5], [0, 5.5], [0, 6]])


def test_param_grid_from_points():
    g = ParamGrid.from_points([0.1, 0.2, 0.3])
    assert g.k == 3 and len(g) == 1 and np.allclose(g.points, [[0.1, 0.2, 0.3]])


def test_default_eta():
    assert default_eta(math.e ** 2, 1.0) == pytest.approx(2 * math.exp(-1), abs=1e-12)
    n = 500
    assert default_eta(4 * n) / default_eta(n) == pytest.approx(math.log(4 * n) / (2 * math.log(n)))
    with pytest.raises(InvalidInputError):
        default_eta(100, 0.0)


def test_hausdorff():
    assert hausdorff_distance([[0.0], [1.0]], [[0.0], [1.0]]) == 0.0
    assert hausdorff_distance([[0.0]], [[1.0]]) == 1.0
    assert hausdorff_distance([[0.0], [1.0]], [[0.0]]) == 1.0
    with pytest.raises(EmptySetError):
        hausdorff_distance(np.zeros((0, 1)), [[0.0]])


def test_zero_model_all_members():
    mu = EmpiricalMeasure.from_samples(np.arange(4.0))
    est = estimate_identified_set(ZeroModel(), mu, mu, ParamGrid(((0.0, 1.0, 5),)), 0.1, 1e-9,
                                  DistanceOptions(method="grid", resolution=5))
    assert est.members.all()


def test_negative_eta(rct_small):
    mu, nu = rct_small
    with pytest.raises(InvalidInputError):
        estimate_identified_set(BenefitShareModel(), mu, nu, ParamGrid(((0.0, 1.0, 3),)), 0.1, -1.0)


def test_grid_dimension_mismatch(rct_small):
    mu, nu = rct_small
    with pytest.raises(InvalidInputError):
        estimate_identified_set(BenefitShareModel(), mu, nu, ParamGrid(((0, 1, 2), (0, 1, 2))),
                                0.1, 0.1)


@pytest.fixture(scope="module")
def rct_estimate(rct_small):
    mu, nu = rct_small
    return estimate_identified_set(BenefitShareModel(), mu, nu, ParamGrid(((0.0, 1.0, 21),)),
                                   0.02, default_eta(300), DistanceOptions(method="grid"))


def test_rct_set_shape(rct_estimate):
    pts = rct_estimate.member_points.ravel()
    assert pts.max() == pytest.approx(1.0)
    assert 0.55 <= pts.min() <= 0.8
    # members form an interval on the grid
    idx = np.flatnonzero(rct_estimate.members)
    assert np.all(np.diff(idx) == 1)


def test_eta_monotone(rct_estimate):
    for e1, e2 in [(0.01, 0.05), (0.05, 0.2)]:
        small, big = rct_estimate.with_eta(e1).members, rct_estimate.with_eta(e2).members
        assert np.all(big >= small)


def test_empty_set_is_reported(rct_small):
    mu, nu = rct_small
    with pytest.warns(RuntimeWarning):
        est = estimate_identified_set(BenefitShareModel(), mu, nu, ParamGrid(((-0.5, -0.3, 3),)),
                                      0.02, 0.01, DistanceOptions(method="grid"))
    assert est.is_empty


def test_refine_boundary(rct_small, rct_estimate):
    mu, nu = rct_small
    edges = refine_boundary(rct_estimate, BenefitShareModel(), mu, nu, 0.02,
                            DistanceOptions(method="grid"))
    lo = rct_estimate.member_points.min()
    assert len(edges) >= 1
    assert lo - 0.05 - 1e-9 <= edges[:, 0].min() <= lo + 1e-9


def test_csv(tmp_path, rct_estimate):
    path = tmp_path / "set.csv"
    write_estimate_csv(rct_estimate, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "theta_1,d_hat,member"
    assert len(lines) == 22
