"""Fixed-step closed-loop integration, traces, optimum oracles and metrics."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np

from .errors import ConfigError, DivergenceError, NumericalError
from .graph import CommGraph
from .objectives import ObjectiveEnsemble
from .plant import AgentSynthesis, LinearAgent, synthesize
from .protocol import ProtocolParams
from .regions import Ball, Box, ConvexRegion, ExpandingSchedule

__all__ = [
    "ScenarioConfig",
    "SimulationTrace",
    "OracleResult",
    "integrate_closed_loop",
    "synthesize_all",
    "initial_states",
    "centralized_oracle",
    "time_varying_oracle",
    "convergence_metrics",
    "theta_norms",
]

log = logging.getLogger(__name__)

ORACLE_MAX_ITER = 1_000_000
FD_STEP = 1e-4


@dataclass(eq=False)
class ScenarioConfig:
    """Everything needed to run one scenario.

    ``mode`` is ``"closed_loop"`` (plants driven by the protocol) or
    ``"optimizer_only"`` (the decision layer alone, projected onto the fixed
    region ``region``).  ``x0`` entries left as None are filled by
    ``state_rule``: ``"regulator"`` puts agent i at ``Pi_i y_i(0)``,
    ``"zero_padded"`` at the least-norm solution of ``C_i x = y_i(0)``.
    """

    graph: CommGraph
    agents: Sequence[LinearAgent]
    objectives: ObjectiveEnsemble
    region: ConvexRegion
    schedule: Optional[ExpandingSchedule]
    params: ProtocolParams
    y0: np.ndarray
    gains: Optional[Sequence[Optional[np.ndarray]]] = None
    poles: Optional[Sequence[Optional[Sequence[float]]]] = None
    x0: Optional[Sequence[Optional[np.ndarray]]] = None
    eta0: Optional[np.ndarray] = None
    state_rule: str = "regulator"
    step: float = 1e-3
    horizon: float = 30.0
    output_stride: int = 10
    substep_on_boundary: bool = False
    mode: str = "closed_loop"
    seed: int = 0
    name: str = "scenario"
    M1: Optional[float] = None
    grad_bound: Optional[float] = None

    def __post_init__(self):
        self.y0 = np.atleast_2d(np.asarray(self.y0, dtype=float))
        if self.eta0 is not None:
            self.eta0 = np.atleast_2d(np.asarray(self.eta0, dtype=float))

    @property
    def N(self) -> int:
        return self.graph.n_agents

    @property
    def p(self) -> int:
        return self.y0.shape[1]

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.step))

    def validate(self):
        N = self.N
        if self.mode not in ("closed_loop", "optimizer_only"):
            raise ConfigError(f"mode must be closed_loop or optimizer_only, got {self.mode!r}")
        if not (self.step > 0 and math.isfinite(self.step)):
            raise ConfigError("integration.step must be positive")
        if not (self.horizon > 0 and math.isfinite(self.horizon)):
            raise ConfigError("integration.horizon must be positive")
        if int(self.output_stride) != self.output_stride or self.output_stride < 1:
            raise ConfigError("integration.output_stride must be a positive integer")
        if self.n_steps < 1:
            raise ConfigError("horizon shorter than one step")
        if len(self.objectives) != N:
            raise ConfigError(f"need {N} objectives, got {len(self.objectives)}")
        if self.y0.shape != (N, self.y0.shape[1]):
            raise ConfigError(f"initial outputs must have {N} rows")
        if self.region.dim != self.p:
            raise ConfigError("constraint dimension differs from output dimension")
        if self.mode == "closed_loop":
            if len(self.agents) != N:
                raise ConfigError(f"need {N} agents, got {len(self.agents)}")
            for i, a in enumerate(self.agents):
                if a.p != self.p:
                    raise ConfigError(f"agent {i + 1} has output dimension {a.p}, expected {self.p}")
            if self.schedule is None:
                raise ConfigError("closed-loop mode needs an expanding schedule")
            if self.state_rule not in ("regulator", "zero_padded"):
                raise ConfigError(f"unknown state_rule {self.state_rule!r}")
        self.params.validate()
        eta0 = self.initial_eta()
        if eta0.shape != self.y0.shape:
            raise ConfigError("initial eta must match the initial outputs' shape")
        if np.any(self.region.signed_margin_rows(eta0) <= 0):
            raise ConfigError("initial eta must lie in the interior of the constraint region")

    def initial_eta(self) -> np.ndarray:
        return self.y0.copy() if self.eta0 is None else self.eta0


def synthesize_all(config: ScenarioConfig) -> List[AgentSynthesis]:
    gains = config.gains or [None] * config.N
    poles = config.poles or [None] * config.N
    return [synthesize(a, k, poles=pl) for a, k, pl in zip(config.agents, gains, poles)]


def initial_states(config: ScenarioConfig, syntheses) -> List[np.ndarray]:
    x0 = list(config.x0) if config.x0 is not None else [None] * config.N
    out = []
    for i, (s, given) in enumerate(zip(syntheses, x0)):
        if given is not None:
            x = np.asarray(given, dtype=float).ravel()
            if x.shape != (s.agent.n,):
                raise ConfigError(f"x0 of agent {i + 1} must have length {s.agent.n}")
        elif config.state_rule == "regulator":
            x = s.Pi @ config.y0[i]
        else:
            x = np.linalg.pinv(s.agent.C) @ config.y0[i]
        out.append(x)
    return out


# ---------------------------------------------------------------- projections

def _schedule_projector(schedule: ExpandingSchedule) -> Callable:
    """Fast ``(X, t) -> P_{Ω̄(t)}(X)`` for the common ball and box cases."""
    base = schedule.base
    if schedule.inset_fn is None and isinstance(base, Ball):
        c, R, g, k = base.center, base.radius, schedule.gap, schedule.rate

        def proj(X, t):
            rad = R - g * math.exp(-k * t)
            d = X - c
            nrm = np.sqrt(np.einsum("ij,ij->i", d, d))
            scale = np.minimum(1.0, rad / np.maximum(nrm, 1e-300))
            return c + d * scale[:, None]
        return proj
    if schedule.inset_fn is None and isinstance(base, Box):
        lo, hi, g, k = base.lower, base.upper, schedule.gap, schedule.rate

        def proj(X, t):
            d = g * math.exp(-k * t)
            return np.clip(X, lo + d, hi - d)
        return proj
    return schedule.project_rows


def _static_projector(region: ConvexRegion) -> Callable:
    return lambda X, t: region.project_rows(X)


# ---------------------------------------------------------------- dynamics

class _Dynamics:
    """Stacked right-hand side ``w' = M w + S s + q`` plus the nonlinear parts.

    Closed loop: ``w = [x; zeta; eta]``.  Optimizer only: ``w = [zeta; eta]``.
    With quadratic objectives the gradient is affine and folded into ``M``
    (closed loop) or into ``S`` (optimizer only, where gradients are taken at
    ``s``).  Otherwise the gradient term is evaluated explicitly.
    """

    def __init__(self, config: ScenarioConfig, syntheses, disturbance=None):
        self.N, self.p = config.N, config.p
        N, p = self.N, self.p
        Np = N * p
        prm = config.params
        a, b, k1, k2 = prm.alpha, prm.beta, prm.k1, prm.k2
        Lp = np.kron(config.graph.laplacian(), np.eye(p))
        I = np.eye(Np)
        self.objectives = config.objectives
        self.disturbance = disturbance
        lin = config.objectives.linear_form()
        self.linear = lin is not None
        if self.linear:
            G = np.diag(np.repeat(lin[0], p))
            ge = G @ lin[1].ravel()
        closed = config.mode == "closed_loop"
        self.closed = closed
        if closed:
            sizes = [s.agent.n for s in syntheses]
            nx = sum(sizes)
            Acl = np.zeros((nx, nx))
            BK2 = np.zeros((nx, Np))
            Cb = np.zeros((Np, nx))
            o = 0
            for i, s in enumerate(syntheses):
                n = s.agent.n
                Acl[o:o + n, o:o + n] = s.closed_loop
                BK2[o:o + n, i * p:(i + 1) * p] = s.agent.B @ s.K2
                Cb[i * p:(i + 1) * p, o:o + n] = s.agent.C
                o += n
            self.nx, self.Cb = nx, Cb
            dim = nx + 2 * Np
            M = np.zeros((dim, dim))
            S = np.zeros((dim, Np))
            q = np.zeros(dim)
            xs, zs, es = slice(0, nx), slice(nx, nx + Np), slice(nx + Np, dim)
            M[xs, xs] = Acl
            S[xs] = BK2
            M[zs, zs] = -(k2 / b) * Lp
            M[es, es] = -b * k1 * Lp - b * I
            M[es, zs] = -a * b * I
            S[es] = b * I
            if self.linear:
                M[zs, xs] = -(k2 / b) * Lp @ G @ Cb
                M[es, xs] = -a * b * G @ Cb
                q[zs] = (k2 / b) * Lp @ ge
                q[es] = a * b * ge
            self.project = _schedule_projector(config.schedule)
        else:
            self.nx = 0
            dim = 2 * Np
            M = np.zeros((dim, dim))
            S = np.zeros((dim, Np))
            q = np.zeros(dim)
            zs, es = slice(0, Np), slice(Np, dim)
            M[zs, zs] = -(k2 / b) * Lp
            M[es, es] = -b * k1 * Lp - b * I
            M[es, zs] = -a * b * I
            S[es] = b * I
            if self.linear:
                S[zs] = -(k2 / b) * Lp @ G
                S[es] += -a * b * G
                q[zs] = (k2 / b) * Lp @ ge
                q[es] = a * b * ge
            self.project = _static_projector(config.region)
        self.dim, self.zs, self.es = dim, zs, es
        self.M, self.S, self.q = M, S, q
        self.Lp, self.a, self.b, self.k2 = Lp, a, b, k2

    def decision(self, w, t):
        eta = w[self.es].reshape(self.N, self.p)
        return self.project(eta, t).ravel()

    def __call__(self, t, w):
        s = self.decision(w, t)
        dw = self.M @ w + self.S @ s + self.q
        if not self.linear:
            if self.closed:
                y = (self.Cb @ w[:self.nx]).reshape(self.N, self.p)
            else:
                y = s.reshape(self.N, self.p)
            g = self.objectives.stacked_gradient(y).ravel()
            dw[self.zs] -= (self.k2 / self.b) * (self.Lp @ g)
            dw[self.es] -= self.a * self.b * g
        if self.disturbance is not None:
            dw[self.es] += np.asarray(self.disturbance(t), dtype=float).ravel()
        return dw


def _rk4(f, t, w, h):
    k1 = f(t, w)
    k2 = f(t + 0.5 * h, w + 0.5 * h * k1)
    k3 = f(t + 0.5 * h, w + 0.5 * h * k2)
    k4 = f(t + h, w + h * k3)
    return w + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


# ---------------------------------------------------------------- trace

@dataclass(eq=False)
class SimulationTrace:
    """Sampled run.  Arrays indexed ``[k, i, :]`` are (time, agent, component).

    ``x``, ``u`` and ``xtilde`` are lists over agents because state and
    input dimensions may differ; each entry has shape ``(K, n_i)``.
    In optimizer-only mode the outputs ``y`` are the decisions ``s`` and the
    plant series are empty.
    """

    times: np.ndarray
    mode: str
    y: np.ndarray
    z: np.ndarray
    zeta: np.ndarray
    eta: np.ndarray
    s: np.ndarray
    x: list
    u: list
    xtilde: list
    eta_tilde: np.ndarray
    z_tilde: np.ndarray
    h: np.ndarray
    r: np.ndarray
    margin_omega: np.ndarray
    margin_ball: np.ndarray
    margin_zone: np.ndarray
    gap: np.ndarray
    y_star: np.ndarray
    grad_sum_residual: np.ndarray
    step: float
    output_stride: int
    meta: dict = field(default_factory=dict)

    @property
    def N(self):
        return self.y.shape[1]

    @property
    def final_state(self):
        return self.y[-1]

    def max_gap(self) -> np.ndarray:
        return self.gap.max(axis=1)


def _diagnostics(config, syntheses, times, W, S, dyn, y_star):
    N, p = config.N, config.p
    K = len(times)
    Np = N * p
    zeta = W[:, dyn.zs].reshape(K, N, p)
    eta = W[:, dyn.es].reshape(K, N, p)
    s = S.reshape(K, N, p)
    region = config.region
    if config.mode == "closed_loop":
        X = W[:, :dyn.nx]
        y = (X @ dyn.Cb.T).reshape(K, N, p)
    else:
        X = np.zeros((K, 0))
        y = s.copy()
    grads = np.array([config.objectives.stacked_gradient(yk) for yk in y])
    z = zeta + grads
    xs, us, xt = [], [], []
    h = np.full(K, np.nan)
    r = np.full(K, np.nan)
    zone = np.full((K, N), np.nan)
    ball = np.full((K, N), np.nan)
    if config.mode == "closed_loop":
        sched = config.schedule
        r = np.array([sched.safety_radius(t) for t in times])
        o = 0
        h = np.zeros(K)
        for i, syn in enumerate(syntheses):
            n = syn.agent.n
            xi = X[:, o:o + n]
            o += n
            xs.append(xi)
            us.append(xi @ syn.K1.T + s[:, i] @ syn.K2.T)
            xti = xi - s[:, i] @ syn.Pi.T
            xt.append(xti)
            quad = np.einsum("kj,jl,kl->k", xti, syn.P, xti)
            h += r - quad
            cn = np.linalg.norm(syn.agent.C, 2)
            zone[:, i] = math.sqrt(syn.lambda_min_P) * r / cn - np.sqrt(np.maximum(quad, 0))
            ball[:, i] = r - np.linalg.norm(y[:, i] - s[:, i], axis=1)
    margin_omega = np.array([region.signed_margin_rows(yk) for yk in y])
    gap = np.linalg.norm(y - y_star[None, None, :], axis=2)
    eta_t = eta - eta.mean(axis=1, keepdims=True)
    z_t = z - z.mean(axis=1, keepdims=True)
    gsr = np.abs(z.sum(axis=1) - grads.sum(axis=1)).max(axis=1)
    return dict(y=y, z=z, zeta=zeta, eta=eta, s=s, x=xs, u=us, xtilde=xt,
                eta_tilde=eta_t, z_tilde=z_t, h=h, r=r, margin_omega=margin_omega,
                margin_ball=ball, margin_zone=zone, gap=gap,
                grad_sum_residual=gsr)


def integrate_closed_loop(config: ScenarioConfig, syntheses=None,
                          disturbance: Optional[Callable[[float], np.ndarray]] = None,
                          y_star: Optional[np.ndarray] = None) -> SimulationTrace:
    """Integrate the scenario with classical RK4 and return the sampled trace.

    Decisions are re-projected at every stage.  ``disturbance(t)`` adds an
    ``(N, p)`` term to the decision rate (robustness experiments only).
    Raises :class:`DivergenceError` on the first non-finite state.
    """
    config.validate()
    closed = config.mode == "closed_loop"
    if closed and syntheses is None:
        syntheses = synthesize_all(config)
    dyn = _Dynamics(config, syntheses, disturbance)
    N, p = config.N, config.p
    Np = N * p
    w = np.zeros(dyn.dim)
    eta0 = config.initial_eta()
    w[dyn.es] = eta0.ravel()
    if closed:
        w[:dyn.nx] = np.concatenate(initial_states(config, syntheses))
    # zeta(0) = 0 encodes z_i(0) = grad f_i(y_i(0))

    h, n_steps, stride = config.step, config.n_steps, int(config.output_stride)
    if not math.isclose(n_steps * h, config.horizon, rel_tol=1e-9, abs_tol=1e-12):
        log.warning("horizon %g is not a multiple of step %g; using %d steps",
                     config.horizon, h, n_steps)
    n_out = n_steps // stride + 1 + (1 if n_steps % stride else 0)
    times = np.empty(n_out)
    W = np.empty((n_out, dyn.dim))
    Sv = np.empty((n_out, Np))
    times[0], W[0], Sv[0] = 0.0, w, dyn.decision(w, 0.0)
    j = 1
    near = 10.0 * h
    boundary_region = (config.schedule.region_at if closed else (lambda t: config.region))
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(1, n_steps + 1):
            t = (k - 1) * h
            if config.substep_on_boundary:
                eta = w[dyn.es].reshape(N, p)
                marg = boundary_region(t).signed_margin_rows(eta)
                if np.any(np.abs(marg) <= near):
                    w = _rk4(dyn, t, w, 0.5 * h)
                    w = _rk4(dyn, t + 0.5 * h, w, 0.5 * h)
                else:
                    w = _rk4(dyn, t, w, h)
            else:
                w = _rk4(dyn, t, w, h)
            if not np.isfinite(w).all():
                raise DivergenceError(k * h, f"non-finite state at t={k * h:.6g}")
            if k % stride == 0 or k == n_steps:
                tk = k * h
                times[j], W[j], Sv[j] = tk, w, dyn.decision(w, tk)
                j += 1
    assert j == n_out

    if y_star is None:
        y_star = centralized_oracle(config.objectives, config.region).y
    diag = _diagnostics(config, syntheses, times, W, Sv, dyn, np.asarray(y_star))
    return SimulationTrace(times=times, mode=config.mode, y_star=np.asarray(y_star),
                           step=h, output_stride=stride,
                           meta={"name": config.name, "n_steps": n_steps}, **diag)


# ---------------------------------------------------------------- oracles

@dataclass
class OracleResult:
    y: np.ndarray
    residual: float
    value: float
    iterations: int


def centralized_oracle(objectives: ObjectiveEnsemble, region: ConvexRegion,
                       tol: float = 1e-12, max_iter: int = ORACLE_MAX_ITER,
                       y0=None) -> OracleResult:
    """Minimise the sum of the local objectives over `region` by projected gradient.

    Step ``1 / L_total``; stops once one step moves less than ``tol``.
    """
    step = 1.0 / objectives.L_total
    y = region.project(np.asarray(region.interior_point if y0 is None else y0, float))
    for it in range(1, max_iter + 1):
        y_new = region.project(y - step * objectives.total_gradient(y))
        moved = float(np.linalg.norm(y_new - y))
        y = y_new
        if moved <= tol:
            res = float(np.linalg.norm(
                region.project(y - step * objectives.total_gradient(y)) - y))
            return OracleResult(y, res, objectives.value(y), it)
    raise NumericalError(f"projected gradient did not converge in {max_iter} iterations")


def time_varying_oracle(objectives: ObjectiveEnsemble, schedule: ExpandingSchedule,
                        t: float, tol: float = 1e-12, fd_step: float = FD_STEP):
    """Return ``(y*(t), dy*/dt)`` on the expanding set; derivative by central differences."""
    y = centralized_oracle(objectives, schedule.region_at(t), tol).y
    yp = centralized_oracle(objectives, schedule.region_at(t + fd_step), tol, y0=y).y
    try:
        ym = centralized_oracle(objectives, schedule.region_at(t - fd_step), tol, y0=y).y
        dy = (yp - ym) / (2 * fd_step)
    except Exception:  # the set may not exist before t = 0 for custom rules
        dy = (yp - y) / fd_step
    return y, dy


def theta_norms(trace: SimulationTrace, config: ScenarioConfig) -> np.ndarray:
    """``||theta(t)||`` with ``theta_i = [z_i - zbar; eta_i - etabar; etabar - eta*(t)]``.

    ``eta*(t) = y*(t) - alpha * mean_grad(y*(t))`` uses the optimum on the
    current expanding set (or on the fixed region in optimizer-only mode).
    """
    obj, a = config.objectives, config.params.alpha
    out = np.empty(len(trace.times))
    y_prev = None
    for k, t in enumerate(trace.times):
        reg = config.schedule.region_at(t) if config.mode == "closed_loop" else config.region
        ys = centralized_oracle(obj, reg, y0=y_prev).y
        y_prev = ys
        eta_star = ys - a * obj.mean_gradient(ys)
        etabar = trace.eta[k].mean(axis=0)
        sq = (np.sum(trace.z_tilde[k] ** 2) + np.sum(trace.eta_tilde[k] ** 2)
              + config.N * np.sum((etabar - eta_star) ** 2))
        out[k] = math.sqrt(sq)
    return out


# ---------------------------------------------------------------- metrics

def _time_to(times, g, thr):
    above = np.flatnonzero(g > thr)
    if above.size == 0:
        return float(times[0])
    if above[-1] == len(g) - 1:
        return None
    return float(times[above[-1] + 1])


def convergence_metrics(trace: SimulationTrace, y_star=None) -> dict:
    """Summary of a finished run.

    ``time_to_*`` is the first sample after which the worst-agent gap stays
    at or below the threshold; ``log_slope`` is the least-squares slope of
    the log worst-agent gap over the final half of the horizon (0 when the
    gap is already at round-off level).
    """
    if y_star is None:
        gap = trace.max_gap()
    else:
        gap = np.linalg.norm(trace.y - np.asarray(y_star)[None, None, :], axis=2).max(axis=1)
    t = trace.times
    half = t >= t[-1] / 2
    g_half = gap[half]
    if g_half.size < 2 or np.max(g_half) <= 1e-12:
        slope = 0.0
    else:
        slope = float(np.polyfit(t[half], np.log(np.maximum(g_half, 1e-300)), 1)[0])
    return {
        "final_gap": float(gap[-1]),
        "time_to_1e-1": _time_to(t, gap, 1e-1),
        "time_to_1e-2": _time_to(t, gap, 1e-2),
        "log_slope": slope,
        "min_margin": float(np.min(trace.margin_omega)),
    }
