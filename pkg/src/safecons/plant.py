"""Heterogeneous linear agents and their per-agent controller synthesis."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg as sla
from scipy.signal import place_poles

from .errors import ConfigError, InvariantViolation, NumericalError, RegulatorInfeasible

__all__ = [
    "LinearAgent",
    "AgentSynthesis",
    "check_transmission_zeros",
    "solve_regulator",
    "solve_care",
    "validate_or_synthesize_stabilizer",
    "solve_lyapunov",
    "lyapunov_certificate",
    "synthesize",
]

HURWITZ_MARGIN = 1e-8
RANK_RTOL = 1e-10
C_BACKOFF = 1e-6


def _mat(a, name):
    m = np.atleast_2d(np.asarray(a, dtype=float))
    if m.ndim != 2 or not np.all(np.isfinite(m)):
        raise ConfigError(f"{name} must be a finite matrix")
    return m


@dataclass(frozen=True, eq=False)
class LinearAgent:
    """``x' = A x + B u``, ``y = C x``.

    Only dimensions are checked here; :meth:`validate` checks the structural
    assumptions (full-row-rank output map, controllability, rank condition).
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray

    def __post_init__(self):
        A, B, C = _mat(self.A, "A"), _mat(self.B, "B"), _mat(self.C, "C")
        n = A.shape[0]
        if A.shape != (n, n):
            raise ConfigError(f"A must be square, got {A.shape}")
        if B.shape[0] != n:
            raise ConfigError(f"B must have {n} rows, got {B.shape}")
        if C.shape[1] != n:
            raise ConfigError(f"C must have {n} columns, got {C.shape}")
        for name, m in (("A", A), ("B", B), ("C", C)):
            object.__setattr__(self, name, m)

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.B.shape[1]

    @property
    def p(self):
        return self.C.shape[0]

    def is_controllable(self) -> bool:
        blocks = [self.B]
        for _ in range(self.n - 1):
            blocks.append(self.A @ blocks[-1])
        ctrb = np.hstack(blocks)
        return np.linalg.matrix_rank(ctrb) == self.n

    def validate(self):
        if np.linalg.matrix_rank(self.C) != self.p:
            raise InvariantViolation("C must have full row rank")
        if not check_transmission_zeros(self):
            raise RegulatorInfeasible("rank [[A, B], [C, 0]] < n + p; regulator equations unsolvable")
        if not self.is_controllable():
            raise InvariantViolation("(A, B) is not controllable")


@dataclass(frozen=True, eq=False)
class AgentSynthesis:
    agent: LinearAgent
    Pi: np.ndarray
    Psi: np.ndarray
    K1: np.ndarray
    K2: np.ndarray
    P: np.ndarray
    c: float

    @property
    def closed_loop(self) -> np.ndarray:
        return self.agent.A + self.agent.B @ self.K1

    @property
    def lambda_min_P(self) -> float:
        return float(np.linalg.eigvalsh(self.P)[0])

    def regulator_residuals(self):
        a = self.agent
        return (
            float(np.linalg.norm(a.A @ self.Pi + a.B @ self.Psi, 2)),
            float(np.linalg.norm(a.C @ self.Pi - np.eye(a.p), 2)),
        )

    def certificate_residual(self) -> float:
        """``lambda_max(A_cl^T P + P A_cl + c P)``, nonpositive when valid."""
        Acl = self.closed_loop
        M = Acl.T @ self.P + self.P @ Acl + self.c * self.P
        return float(np.linalg.eigvalsh(0.5 * (M + M.T))[-1])


def check_transmission_zeros(agent: LinearAgent) -> bool:
    """True iff ``rank [[A, B], [C, 0]] == n + p``."""
    block = np.block([[agent.A, agent.B], [agent.C, np.zeros((agent.p, agent.m))]])
    sv = np.linalg.svd(block, compute_uv=False)
    if sv.size == 0 or sv[0] == 0:
        return False
    rank = int(np.sum(sv > RANK_RTOL * sv[0]))
    return rank == agent.n + agent.p


def solve_regulator(agent: LinearAgent, tol=1e-8):
    """Minimum-norm solution of ``A Pi + B Psi = 0``, ``C Pi = I``."""
    n, m, p = agent.n, agent.m, agent.p
    Ip = np.eye(p)
    # column-major vec: vec(A Pi) = (I_p kron A) vec(Pi)
    M = np.block([
        [np.kron(Ip, agent.A), np.kron(Ip, agent.B)],
        [np.kron(Ip, agent.C), np.zeros((p * p, m * p))],
    ])
    rhs = np.concatenate([np.zeros(n * p), Ip.ravel(order="F")])
    sol = np.linalg.lstsq(M, rhs, rcond=None)[0]
    Pi = sol[: n * p].reshape((n, p), order="F")
    Psi = sol[n * p:].reshape((m, p), order="F")
    r1 = np.linalg.norm(agent.A @ Pi + agent.B @ Psi)
    r2 = np.linalg.norm(agent.C @ Pi - Ip)
    if max(r1, r2) > tol:
        raise RegulatorInfeasible(
            f"regulator infeasible: residuals {r1:.3g}, {r2:.3g} exceed {tol:g}"
        )
    return Pi, Psi


def solve_care(A, B, Q=None, R=None):
    """Stabilising solution of ``A'X + XA - X B R^-1 B' X + Q = 0``.

    Uses the stable invariant subspace of the Hamiltonian matrix obtained from
    an ordered real Schur decomposition.
    """
    A = np.atleast_2d(np.asarray(A, float))
    B = np.atleast_2d(np.asarray(B, float))
    n = A.shape[0]
    Q = np.eye(n) if Q is None else np.atleast_2d(np.asarray(Q, float))
    R = np.eye(B.shape[1]) if R is None else np.atleast_2d(np.asarray(R, float))
    G = B @ np.linalg.solve(R, B.T)
    H = np.block([[A, -G], [-Q, -A.T]])
    T, U, sdim = sla.schur(H, output="real", sort="lhp")
    if sdim != n:
        raise NumericalError(
            f"Hamiltonian has {sdim} stable eigenvalues, expected {n}"
        )
    U11, U21 = U[:n, :n], U[n:, :n]
    if np.linalg.cond(U11) > 1e12:
        raise NumericalError("stable subspace is not a graph; Riccati solve failed")
    X = np.linalg.solve(U11.T, U21.T).T
    return 0.5 * (X + X.T)


def _max_real_eig(M):
    return float(np.max(np.linalg.eigvals(M).real))


def validate_or_synthesize_stabilizer(agent: LinearAgent, k1_opt: Optional[np.ndarray] = None,
                                      margin=HURWITZ_MARGIN, poles=None) -> np.ndarray:
    """Return a gain making ``A + B K1`` Hurwitz.

    A supplied gain is only checked.  With ``poles`` the gain is obtained by
    pole placement; otherwise an LQR gain with ``Q = I``, ``R = I`` is computed.
    """
    if k1_opt is not None:
        K1 = _mat(k1_opt, "K1")
        if K1.shape != (agent.m, agent.n):
            raise ConfigError(f"K1 must be {agent.m}x{agent.n}, got {K1.shape}")
        eig = np.linalg.eigvals(agent.A + agent.B @ K1)
        bad = eig[eig.real >= -margin]
        if bad.size:
            raise InvariantViolation(
                f"A + B K1 is not Hurwitz; offending eigenvalues {np.round(bad, 6).tolist()}"
            )
        return K1
    if not agent.is_controllable():
        raise InvariantViolation("(A, B) is not controllable; cannot synthesise K1")
    if poles is not None:
        placed = place_poles(agent.A, agent.B, np.asarray(poles))
        return validate_or_synthesize_stabilizer(agent, -placed.gain_matrix, margin)
    X = solve_care(agent.A, agent.B)
    K1 = -agent.B.T @ X
    if _max_real_eig(agent.A + agent.B @ K1) >= -margin:
        raise NumericalError("Riccati gain is not stabilising")
    return K1


def solve_lyapunov(A, Q):
    """Solve ``A' P + P A = -Q``."""
    A = np.atleast_2d(np.asarray(A, float))
    n = A.shape[0]
    if n > 20:
        P = sla.solve_continuous_lyapunov(A.T, -np.asarray(Q, float))
    else:
        I = np.eye(n)
        K = np.kron(I, A.T) + np.kron(A.T, I)
        P = np.linalg.solve(K, -np.asarray(Q, float).ravel(order="F")).reshape((n, n), order="F")
    return 0.5 * (P + P.T)


def lyapunov_certificate(A_cl, margin=HURWITZ_MARGIN):
    """Return ``(P, c)`` with ``A_cl' P + P A_cl + c P <= 0`` and ``P > 0``.

    ``P`` solves the Lyapunov equation with right-hand side ``-I``; ``c`` is the
    largest admissible rate, backed off so that it stays strictly below
    ``-2 max Re lambda(A_cl)``.
    """
    A_cl = np.atleast_2d(np.asarray(A_cl, float))
    abscissa = _max_real_eig(A_cl)
    if abscissa >= -margin:
        raise InvariantViolation(f"closed loop is not Hurwitz (abscissa {abscissa:.3g})")
    P = solve_lyapunov(A_cl, np.eye(A_cl.shape[0]))
    lam = np.linalg.eigvalsh(P)
    if lam[0] <= 0:
        raise NumericalError("Lyapunov solution is not positive definite")
    c = min(1.0 / lam[-1], -2.0 * abscissa * (1.0 - C_BACKOFF))
    return P, float(c)


def synthesize(agent: LinearAgent, k1_opt=None, poles=None) -> AgentSynthesis:
    """Full per-agent synthesis: regulator pair, gains and certificate."""
    agent.validate()
    Pi, Psi = solve_regulator(agent)
    K1 = validate_or_synthesize_stabilizer(agent, k1_opt, poles=poles)
    K2 = Psi - K1 @ Pi
    P, c = lyapunov_certificate(agent.A + agent.B @ K1)
    return AgentSynthesis(agent, Pi, Psi, K1, K2, P, c)
