"""Decision-making dynamics, control law, and the parameter-feasibility calculator.

The gradient-tracking variable is carried as ``zeta = z - grad f_i(y_i)``, which
removes the measured-gradient derivative from the right-hand side exactly and
makes ``z_i(0) = grad f_i(y_i(0))`` equivalent to ``zeta_i(0) = 0``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .errors import ConfigError
from .graph import CommGraph
from .plant import AgentSynthesis
from .regions import ConvexRegion

__all__ = [
    "ProtocolParams",
    "BetaFunctions",
    "PlantConstants",
    "DerivedConstants",
    "FeasibilityItem",
    "FeasibilityReport",
    "decision_rhs",
    "control_law",
    "compute_beta_functions",
    "plant_constants",
    "derive_constants",
    "feasibility_report",
    "standalone_optimizer_rhs",
]


@dataclass(frozen=True)
class ProtocolParams:
    alpha: float
    beta: float
    k1: float
    k2: float

    def __post_init__(self):
        for name in ("alpha", "beta", "k1", "k2"):
            if not math.isfinite(getattr(self, name)):
                raise ConfigError(f"{name} must be finite")

    def validate(self):
        """Hard requirements for running the protocol at all."""
        if not 0 < self.beta <= 1:
            raise ConfigError(f"beta must lie in (0,1], got {self.beta}")
        if not self.alpha > 0:
            raise ConfigError(f"alpha must be positive, got {self.alpha}")
        if not (self.k1 > 0 and self.k2 > 0):
            raise ConfigError("k1 and k2 must be positive")


def decision_rhs(z, eta, graph: CommGraph, params: ProtocolParams, region: ConvexRegion):
    """Right-hand side of the decision layer.

    Parameters
    ----------
    z, eta : (N, p) arrays
        Gradient-tracking and pre-projection decision variables; ``z`` is
        already reconstructed as ``zeta + grad f_i(y_i)``.
    region : ConvexRegion
        The constraint set at the current time.

    Returns
    -------
    dzeta, deta, s : (N, p) arrays
    """
    lap = graph.laplacian()
    z = np.asarray(z, dtype=float)
    eta = np.asarray(eta, dtype=float)
    s = region.project_rows(eta)
    dzeta = -(params.k2 / params.beta) * (lap @ z)
    deta = (-params.beta * params.k1 * (lap @ eta)
            + params.beta * (s - eta) - params.alpha * params.beta * z)
    return dzeta, deta, s


def standalone_optimizer_rhs(zeta, eta, graph: CommGraph, params: ProtocolParams,
                             region: ConvexRegion, objectives, disturbance=None):
    """Plant-free optimizer: gradients are taken at the projected decisions.

    ``disturbance`` is an optional (N, p) additive term on the decision rate.
    """
    s = region.project_rows(eta)
    z = zeta + objectives.stacked_gradient(s)
    dzeta, deta, _ = decision_rhs(z, eta, graph, params, region)
    if disturbance is not None:
        deta = deta + disturbance
    return dzeta, deta, s


def control_law(synth: AgentSynthesis, x, s) -> np.ndarray:
    return synth.K1 @ np.asarray(x, float) + synth.K2 @ np.asarray(s, float)


class BetaFunctions(NamedTuple):
    b1: float
    b2: float
    b3: float
    b4: float

    @property
    def feasible(self) -> bool:
        return self.b1 > 0


def compute_beta_functions(alpha, sigma, sigma1, L_max, N, M1, grad_bound) -> BetaFunctions:
    a, L = alpha, L_max
    b1 = min(
        sigma * a / 4 - a**2 * (L + grad_bound * M1) ** 2 - 3 * a**2 * L**2,
        1 / 6 - 2 * sigma * a,
        0.5 * (sigma1 - 2 * a**2 * L**2),
        0.25,
    )
    with np.errstate(divide="ignore"):
        inv_a2 = np.inf if a == 0 else 1.0 / (a**2 * L**2)
        inv_sa = np.inf if a == 0 else 1.0 / (sigma * a)
    b2 = max(
        (6 * a * L**2 + 3) / (N * sigma) + (2 + 4 * a**2 * L**2) / N,
        6 * inv_a2 / N**2 + 12 / N**2,
    )
    b3 = max(6 * a * L**2 / (sigma * N) + 4 * a**2 * L**2 / N, 12 / N**2)
    b4 = max(3 * inv_sa + 6, 6 * inv_a2 / N + 4)
    return BetaFunctions(float(b1), float(b2), float(b3), float(b4))


@dataclass(frozen=True)
class PlantConstants:
    c: float
    D_max: float
    C_max: float
    lambda_min_P: float
    P_max: float
    Pi_max: float
    CPi_max: float
    CAcl_max: float


def plant_constants(syntheses: Sequence[AgentSynthesis]) -> PlantConstants:
    norm = lambda m: float(np.linalg.norm(m, 2))  # noqa: E731
    return PlantConstants(
        c=min(s.c for s in syntheses),
        D_max=max(norm(s.P) * norm(s.Pi) ** 2 for s in syntheses),
        C_max=max(norm(s.agent.C) for s in syntheses),
        lambda_min_P=min(s.lambda_min_P for s in syntheses),
        P_max=max(norm(s.P) for s in syntheses),
        Pi_max=max(norm(s.Pi) for s in syntheses),
        CPi_max=max(norm(s.agent.C @ s.Pi) for s in syntheses),
        CAcl_max=max(norm(s.agent.C @ s.closed_loop) for s in syntheses),
    )


@dataclass
class DerivedConstants:
    params: ProtocolParams
    N: int
    lambda2: float
    lambdaN: float
    L_max: float
    sigma: float
    sigma1: float
    grad_bound: float
    M1: float
    plant: PlantConstants
    beta_fns: BetaFunctions
    gamma: dict
    v: float
    H1: float
    Mprime: float
    envelope_gap: float
    envelope_speed: float
    xi: float

    def to_dict(self):
        return {
            "N": self.N, "lambda2": self.lambda2, "lambdaN": self.lambdaN,
            "L_max": self.L_max, "sigma": self.sigma, "sigma1": self.sigma1,
            "grad_bound": self.grad_bound, "M1": self.M1,
            "plant": dict(self.plant.__dict__),
            "beta_fns": dict(self.beta_fns._asdict()),
            "gamma": dict(self.gamma), "v": self.v, "H1": self.H1,
            "Mprime": self.Mprime, "envelope_gap": self.envelope_gap,
            "envelope_speed": self.envelope_speed, "xi": self.xi,
        }


def _safe_div(a, b):
    if b == 0:
        return math.copysign(math.inf, a) if a != 0 else math.nan
    return a / b


def derive_constants(params: ProtocolParams, *, N, lambda2, lambdaN, L_max, sigma, sigma1,
                     grad_bound, M1, plant: PlantConstants, theta0_norm=0.0,
                     envelope_gap=1.0, envelope_speed=0.0, xi=1.0) -> DerivedConstants:
    """Evaluate the gain constants of the small-gain and CBF arguments.

    ``envelope_gap`` and ``envelope_speed`` are the constants of the two
    exponential envelopes on the set gap and on the optimum's speed.
    """
    a, b, k1, k2, L = params.alpha, params.beta, params.k1, params.k2, L_max
    pc = plant
    bf = compute_beta_functions(a, sigma, sigma1, L, N, M1, grad_bound)
    g = {}
    g["eta_edot"] = 4 * L**2 / k2
    g["theta_prime"] = max(
        4 * g["eta_edot"] * (lambdaN * k1 + 2 + L * a) * pc.CPi_max,
        2 * g["eta_edot"] * a * pc.CPi_max,
    )
    g["eta_star"] = N * bf.b4 / 2
    g["eta"] = min(_safe_div(a**2, k1 * lambda2), 0.5 * (k1 * lambda2 - 3), bf.b1 / 2)
    g["eta_e"] = N * bf.b3 / 2 + 36 * a**2 * L**4 / k2
    g["x"] = _safe_div(18 * pc.D_max * b**2 * a**2 * L**2 * pc.C_max**4,
                       pc.c * pc.lambda_min_P**2)
    g["x_etahat"] = 2 * pc.D_max / pc.c * (3 * lambdaN**2 * k1**2 + 12 + 9 * a**2 * L**2)
    g["x_ztilde"] = 18 * pc.D_max * a**2 / pc.c
    g["theta_xtilde"] = (g["eta_e"] * pc.C_max + g["eta_edot"] * pc.CAcl_max
                         + g["eta_edot"] * pc.CPi_max * pc.C_max * a * L)
    v = b * g["eta"] / 4
    H1 = theta0_norm**2 / 2 + _safe_div(4 * g["eta_star"] * (L + 1) * envelope_speed**2,
                                        g["eta"])
    Mprime = 4 / pc.c * pc.P_max * pc.Pi_max**2 * (
        (3 * lambdaN**2 * k1**2 + 12 + 9 * a**2 * L**2) + 9 * a**2)
    return DerivedConstants(
        params=params, N=N, lambda2=lambda2, lambdaN=lambdaN, L_max=L, sigma=sigma,
        sigma1=sigma1, grad_bound=grad_bound, M1=M1, plant=pc, beta_fns=bf, gamma=g,
        v=v, H1=H1, Mprime=Mprime, envelope_gap=envelope_gap,
        envelope_speed=envelope_speed, xi=xi,
    )


@dataclass
class FeasibilityItem:
    name: str
    lhs: float
    rhs: float
    relation: str
    passed: bool

    @property
    def margin(self) -> float:
        if self.relation in ("<", "<="):
            return self.rhs - self.lhs
        return self.lhs - self.rhs


def _check(name, lhs, relation, rhs) -> FeasibilityItem:
    lhs, rhs = float(lhs), float(rhs)
    if any(map(math.isnan, (lhs, rhs))):
        ok = False
    else:
        ok = {"<": lhs < rhs, "<=": lhs <= rhs, ">": lhs > rhs, ">=": lhs >= rhs}[relation]
    return FeasibilityItem(name, lhs, rhs, relation, bool(ok))


@dataclass
class FeasibilityReport:
    items: list
    derived: DerivedConstants
    info: dict = field(default_factory=dict)

    @property
    def certified(self) -> bool:
        return all(it.passed for it in self.items)

    def __getitem__(self, name) -> FeasibilityItem:
        for it in self.items:
            if it.name == name:
                return it
        raise KeyError(name)

    def to_dict(self):
        return {
            "certified": self.certified,
            "items": [
                {"name": it.name, "lhs": it.lhs, "relation": it.relation, "rhs": it.rhs,
                 "margin": it.margin, "passed": it.passed}
                for it in self.items
            ],
            "derived": self.derived.to_dict(),
            "info": dict(self.info),
        }


def _sqrt(x):
    return math.sqrt(x) if x >= 0 else math.nan


def feasibility_report(derived: DerivedConstants, schedule_rate=None) -> FeasibilityReport:
    """Check every sufficient condition on the gains; never raises.

    When ``schedule_rate`` is given, its comparison with the decay rate
    ``v = beta * gamma_eta / 4`` is reported under ``info`` (not certified).
    """
    d = derived
    p = d.params
    a, b, k1, k2, L, N = p.alpha, p.beta, p.k1, p.k2, d.L_max, d.N
    l2, lN = d.lambda2, d.lambdaN
    g, pc, bf = d.gamma, d.plant, d.beta_fns
    items = []

    items.append(_check("beta_range", b, "<=", 1.0))
    items.append(_check("beta_positive", b, ">", 0.0))
    items.append(_check("beta1_alpha_positive", bf.b1, ">", 0.0))
    items.append(_check("k1", k1 * l2 - 3, ">=", N * bf.b2 / 2))
    poly = 6 * lN**2 * k1**2 + 24 + 18 * a**2 * L**2
    items.append(_check("k2_a", k2 * l2 - _safe_div(72 * a**2 * L**2, k2), ">=",
                        _safe_div(2 * b * a**2, k1 * l2)))
    items.append(_check("k2_b", _safe_div(8 * L**2 * poly, k2), "<=", k1 * l2 - 3))
    items.append(_check("k2_c", _safe_div(8 * L**2 * N * poly, k2), "<=", bf.b1 / 2))

    gmax = max(g["x_ztilde"], 2 * g["x_etahat"])
    bound_t1 = min(
        1.0,
        _safe_div(g["eta"], 2 * g["theta_prime"]),
        _sqrt(_safe_div(pc.c, 4 * g["x"])) if g["x"] > 0 else math.inf,
        0.25 * _sqrt(_safe_div(pc.c * g["eta"], g["theta_xtilde"] * gmax)),
    )
    items.append(_check("interconnection_beta", b, "<", bound_t1))

    product = (2 * _sqrt(_safe_div(g["theta_xtilde"], g["eta"]))
               * 2 * b * _sqrt(gmax / pc.c))
    items.append(_check("small_gain", product, "<", 1.0))

    denom = 72 * b**2 * a**2 * L**2 * pc.P_max * pc.Pi_max**2 * pc.C_max**2
    bound_l6 = min(
        _safe_div(pc.c**2, denom) ** 0.25,
        _sqrt(_safe_div(pc.c * d.H1, 8 * d.envelope_gap * d.xi * d.Mprime)),
        _safe_div(pc.c, 8 * g["theta_xtilde"]),
        _safe_div(g["eta"], 8 * max(g["x_etahat"], 2 * g["x_ztilde"])),
        _safe_div(pc.c, 2 * g["eta"]),
    )
    items.append(_check("barrier_beta", b, "<", bound_l6))
    info = {"v": d.v, "small_gain_product": product,
            "interconnection_beta_bound": bound_t1, "barrier_beta_bound": bound_l6}
    if schedule_rate is not None:
        info["schedule_rate"] = float(schedule_rate)
        info["schedule_rate_within_v"] = bool(schedule_rate <= d.v)
    return FeasibilityReport(items, d, info)
