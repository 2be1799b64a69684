"""Undirected weighted communication graphs and their Laplacian spectra."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericalError

__all__ = ["CommGraph", "laplacian", "spectrum", "is_connected"]


def _bfs_connected(weights: np.ndarray) -> bool:
    n = weights.shape[0]
    if n <= 1:
        return True
    seen = np.zeros(n, dtype=bool)
    seen[0] = True
    queue = deque([0])
    while queue:
        i = queue.popleft()
        for j in np.flatnonzero(weights[i] > 0):
            if not seen[j]:
                seen[j] = True
                queue.append(j)
    return bool(seen.all())


@dataclass(frozen=True)
class CommGraph:
    """Static undirected graph given by a symmetric weight matrix.

    Connectivity is checked at construction unless ``require_connected``
    is False (only useful for testing the connectivity predicate itself).
    """

    weights: np.ndarray
    require_connected: bool = field(default=True, repr=False)

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise ConfigError(f"weights must be square, got shape {w.shape}")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise ConfigError("weights must be finite and nonnegative")
        if not np.allclose(w, w.T, rtol=0, atol=0):
            raise ConfigError("weights must be symmetric")
        if np.any(np.diag(w) != 0):
            raise ConfigError("weights must have a zero diagonal")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        if self.require_connected and not _bfs_connected(w):
            raise ConfigError("communication graph is not connected")

    @property
    def n_agents(self) -> int:
        return self.weights.shape[0]

    @classmethod
    def from_edges(cls, n_agents, edges, one_based=True, **kwargs) -> "CommGraph":
        """Build from ``[(i, j, weight), ...]``; ``weight`` defaults to 1."""
        w = np.zeros((n_agents, n_agents))
        off = 1 if one_based else 0
        for edge in edges:
            i, j = int(edge[0]) - off, int(edge[1]) - off
            a = float(edge[2]) if len(edge) > 2 else 1.0
            if not (0 <= i < n_agents and 0 <= j < n_agents) or i == j:
                raise ConfigError(f"invalid edge {tuple(edge)}")
            w[i, j] = w[j, i] = a
        return cls(w, **kwargs)

    @classmethod
    def cycle(cls, n_agents) -> "CommGraph":
        return cls.from_edges(
            n_agents, [(i, i % n_agents + 1) for i in range(1, n_agents + 1)]
        )

    def laplacian(self) -> np.ndarray:
        return laplacian(self)

    def spectrum(self) -> np.ndarray:
        return spectrum(self)

    @property
    def lambda2(self) -> float:
        """Algebraic connectivity (0 for a single node)."""
        ev = spectrum(self)
        return float(ev[1]) if ev.size > 1 else 0.0

    @property
    def lambda_max(self) -> float:
        return float(spectrum(self)[-1])


def laplacian(g: CommGraph) -> np.ndarray:
    """Return ``D - A`` for the weight matrix ``A`` of `g`."""
    w = g.weights
    return np.diag(w.sum(axis=1)) - w


def spectrum(g: CommGraph) -> np.ndarray:
    """Ascending eigenvalues of the graph Laplacian."""
    lap = laplacian(g)
    try:
        ev = np.linalg.eigvalsh(lap)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(
            f"symmetric eigensolver failed on {lap.shape} Laplacian: {exc}"
        ) from exc
    return np.sort(ev)


def is_connected(g: CommGraph) -> bool:
    return _bfs_connected(g.weights)
