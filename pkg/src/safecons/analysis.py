"""Glue between scenarios and the feasibility calculator."""

from __future__ import annotations

import math

import numpy as np

from .objectives import ObjectiveEnsemble
from .protocol import derive_constants, feasibility_report, plant_constants
from .regions import ConvexRegion
from .simulator import ScenarioConfig, centralized_oracle, time_varying_oracle

__all__ = ["gradient_bound", "envelope_speed", "initial_theta_norm", "scenario_feasibility"]


def gradient_bound(objectives: ObjectiveEnsemble, region: ConvexRegion, n_samples=5000,
                   seed=0) -> float:
    """``sup_{y in region} ||(1/N) sum_i grad f_i(y)||``.

    Exact for quadratics (the mean gradient is ``wbar (y - c)`` for a weighted
    centroid ``c``); otherwise sampled on the boundary and the interior.
    """
    if objectives.all_quadratic:
        w, E = objectives.linear_form()
        centroid = (w[:, None] * E).sum(axis=0) / w.sum()
        return float(w.mean() * region.max_distance_from(centroid))
    rng = np.random.default_rng(seed)
    pts = np.vstack([region.sample_boundary(n_samples, rng),
                     region.sample_interior(n_samples, rng)])
    return max(float(np.linalg.norm(objectives.mean_gradient(y))) for y in pts)


def envelope_speed(config: ScenarioConfig, n_grid=101) -> float:
    """``max_t ||dy*/dt|| e^{v t}`` over a grid on the scenario horizon."""
    sch = config.schedule
    best = 0.0
    for t in np.linspace(0.0, config.horizon, n_grid):
        _, dy = time_varying_oracle(config.objectives, sch, float(t))
        best = max(best, float(np.linalg.norm(dy)) * math.exp(sch.v * t))
    return best


def initial_theta_norm(config: ScenarioConfig) -> float:
    obj, a = config.objectives, config.params.alpha
    eta = config.initial_eta()
    z = obj.stacked_gradient(config.y0)
    reg = config.schedule.region_at(0.0) if config.schedule is not None else config.region
    ys = centralized_oracle(obj, reg).y
    eta_star = ys - a * obj.mean_gradient(ys)
    sq = (np.sum((z - z.mean(axis=0)) ** 2) + np.sum((eta - eta.mean(axis=0)) ** 2)
          + config.N * np.sum((eta.mean(axis=0) - eta_star) ** 2))
    return math.sqrt(sq)


def scenario_feasibility(config: ScenarioConfig, syntheses):
    """Evaluate every sufficient gain condition for a closed-loop scenario."""
    g = config.graph
    obj = config.objectives
    sch = config.schedule
    grad = config.grad_bound if config.grad_bound is not None else gradient_bound(obj, config.region)
    if config.M1 is not None:
        M1 = float(config.M1)
    else:
        M1 = sch.curvature_bound(config.horizon)
    gap0 = sch.distances(0.0)[0]
    derived = derive_constants(
        config.params, N=config.N, lambda2=g.lambda2, lambdaN=g.lambda_max,
        L_max=obj.L_max, sigma=obj.sigma, sigma1=obj.sigma1, grad_bound=grad, M1=M1,
        plant=plant_constants(syntheses), theta0_norm=initial_theta_norm(config),
        envelope_gap=gap0, envelope_speed=envelope_speed(config), xi=sch.xi,
    )
    return feasibility_report(derived, schedule_rate=sch.rate)
