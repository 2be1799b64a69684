"""Runtime safety checks on traces: set membership, safety balls, state zones and the CBF."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .plant import AgentSynthesis
from .regions import ConvexRegion

__all__ = [
    "BOUNDARY_TOL",
    "cbf_value",
    "state_zone_check",
    "output_safety_check",
    "OutputSafety",
    "CBFCondition",
    "cbf_condition_check",
    "SafetyReport",
    "safety_report",
]

BOUNDARY_TOL = 1e-9


def cbf_value(states: Sequence[np.ndarray], decisions, syntheses: Sequence[AgentSynthesis],
              beta2_t: float) -> float:
    """``sum_i (beta2(t) - xt_i' P_i xt_i)`` with ``xt_i = x_i - Pi_i s_i``."""
    h = 0.0
    for x, s, syn in zip(states, decisions, syntheses):
        xt = np.asarray(x, float) - syn.Pi @ np.asarray(s, float)
        h += beta2_t - float(xt @ syn.P @ xt)
    return h


def state_zone_check(x, s, synthesis: AgentSynthesis, r_t: float, C_norm=None):
    """Return ``(inside, margin)`` for the P-weighted state zone around ``Pi s``."""
    if C_norm is None:
        C_norm = float(np.linalg.norm(synthesis.agent.C, 2))
    xt = np.asarray(x, float) - synthesis.Pi @ np.asarray(s, float)
    lhs = math.sqrt(max(float(xt @ synthesis.P @ xt), 0.0))
    rhs = math.sqrt(synthesis.lambda_min_P) * r_t / C_norm
    margin = rhs - lhs
    return margin >= -BOUNDARY_TOL and not (r_t == 0 and lhs > 0), margin


@dataclass
class OutputSafety:
    in_omega: bool
    in_ball: bool
    margin_omega: float
    margin_ball: float


def output_safety_check(y, s, region: ConvexRegion, r_t: float,
                        tol: float = BOUNDARY_TOL) -> OutputSafety:
    y = np.asarray(y, float)
    m_omega = float(region.signed_margin(y))
    m_ball = float(r_t - np.linalg.norm(y - np.asarray(s, float)))
    return OutputSafety(m_omega >= -tol, m_ball > -tol, m_omega, m_ball)


@dataclass
class CBFCondition:
    residuals: np.ndarray
    a: float
    tol: float

    @property
    def min_residual(self) -> float:
        return float(np.min(self.residuals)) if self.residuals.size else math.inf

    @property
    def violation_fraction(self) -> float:
        if not self.residuals.size:
            return 0.0
        return float(np.mean(self.residuals < -self.tol))


def cbf_condition_check(times, h, a: float, tol: Optional[float] = None) -> CBFCondition:
    """Forward-difference residual ``(h[k+1] - h[k]) / dt + a h[k]``.

    The default tolerance is ``1e-4 * max |h|``.
    """
    times = np.asarray(times, float)
    h = np.asarray(h, float)
    if tol is None:
        tol = 1e-4 * float(np.max(np.abs(h))) if h.size else 0.0
    res = np.diff(h) / np.diff(times) + a * h[:-1]
    return CBFCondition(res, float(a), float(tol))


@dataclass
class SafetyReport:
    """Per-step arrays are ``(K, N)``; ``h`` and ``cbf_residual`` are ``(K,)`` / ``(K-1,)``."""

    times: np.ndarray
    in_omega: np.ndarray
    in_ball: np.ndarray
    in_state_zone: np.ndarray
    margin_omega: np.ndarray
    margin_ball: np.ndarray
    margin_zone: np.ndarray
    h: np.ndarray
    cbf: Optional[CBFCondition]
    extra: dict = field(default_factory=dict)

    @property
    def first_violation_t(self) -> Optional[float]:
        bad = np.flatnonzero(~self.in_omega.all(axis=1))
        return None if bad.size == 0 else float(self.times[bad[0]])

    @property
    def safe(self) -> bool:
        return self.first_violation_t is None

    def implication_chain_holds(self) -> bool:
        """state zone => ball => Omega at every step and agent."""
        zone_ok = ~self.in_state_zone | self.in_ball
        ball_ok = ~self.in_ball | self.in_omega
        return bool(zone_ok.all() and ball_ok.all())

    def summary(self) -> dict:
        def _min(a):
            a = np.asarray(a, float)
            return None if a.size == 0 or np.all(np.isnan(a)) else float(np.nanmin(a))
        return {
            "min_margin_omega": _min(self.margin_omega),
            "min_margin_ball": _min(self.margin_ball),
            "min_margin_zone": _min(self.margin_zone),
            "cbf_min": _min(self.h),
            "cbf_condition_min_residual": None if self.cbf is None else self.cbf.min_residual,
            "first_violation_t": self.first_violation_t,
        }


def safety_report(trace, syntheses=None, a: Optional[float] = None,
                  tol: float = BOUNDARY_TOL) -> SafetyReport:
    """Evaluate every safety construct along a finished trace.

    ``a`` defaults to ``c / 8`` with ``c`` the smallest certificate rate.
    Plant-side checks are skipped (NaN / all-True) for optimizer-only traces.
    """
    m_omega = np.asarray(trace.margin_omega, float)
    in_omega = m_omega >= -tol
    K, N = m_omega.shape
    if trace.mode == "closed_loop":
        m_ball = np.asarray(trace.margin_ball, float)
        m_zone = np.asarray(trace.margin_zone, float)
        in_ball = m_ball > -tol
        in_zone = m_zone >= -tol
        in_zone &= ~((trace.r[:, None] == 0) & (m_zone < 0))
        if a is None:
            a = min(s.c for s in syntheses) / 8 if syntheses else 0.0
        cbf = cbf_condition_check(trace.times, trace.h, a)
        h = trace.h
    else:
        m_ball = np.full((K, N), np.nan)
        m_zone = np.full((K, N), np.nan)
        in_ball = np.ones((K, N), bool)
        in_zone = np.ones((K, N), bool)
        cbf, h = None, np.full(K, np.nan)
    return SafetyReport(trace.times, in_omega, in_ball, in_zone, m_omega, m_ball, m_zone, h, cbf)
