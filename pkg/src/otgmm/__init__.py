"""Identified sets and bootstrap inference for moment models with unmatched marginals."""

__version__ = "0.1.0"

from .direction_search import DistanceOptions, distance_statistic, projected_gradient_ascent, sphere_grid_max
from .identified_set import ParamGrid, default_eta, estimate_identified_set, hausdorff_distance
from .inference import adjusted_bootstrap_test, bootstrap_test, confidence_region
from .measures import EmpiricalMeasure
from .models import BenefitShareModel, PanelLogitScoreModel, ZeroModel, get_model, makarov_bounds
from .ot_core import (
    CostTensor,
    build_cost_tensor,
    conservative_adjust,
    entropic_value,
    gradient_in_u,
    sinkhorn,
    unregularized_ot_oracle,
)

__all__ = [
    "BenefitShareModel", "CostTensor", "DistanceOptions", "EmpiricalMeasure", "ParamGrid",
    "PanelLogitScoreModel", "ZeroModel", "adjusted_bootstrap_test", "bootstrap_test",
    "build_cost_tensor", "confidence_region", "conservative_adjust", "default_eta",
    "distance_statistic", "entropic_value", "estimate_identified_set", "get_model",
    "gradient_in_u", "hausdorff_distance", "makarov_bounds", "projected_gradient_ascent",
    "sinkhorn", "sphere_grid_max", "unregularized_ot_oracle",
]
