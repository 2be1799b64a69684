"""Local objective functions and ensemble constants."""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError

__all__ = [
    "LocalObjective",
    "Quadratic",
    "GeneralSmooth",
    "ObjectiveEnsemble",
    "gradient",
    "hessian_action",
    "ensemble_constants",
]


class LocalObjective(ABC):
    """A strongly convex function with Lipschitz gradient."""

    L: float
    sigma: float

    @abstractmethod
    def value(self, y) -> float:
        ...

    @abstractmethod
    def gradient(self, y) -> np.ndarray:
        ...

    @abstractmethod
    def hessian_action(self, y, w) -> np.ndarray:
        ...


@dataclass(frozen=True, eq=False)
class Quadratic(LocalObjective):
    """``(weight / 2) * ||y - target||**2``."""

    target: np.ndarray
    weight: float = 1.0

    def __post_init__(self):
        if not self.weight > 0:
            raise ConfigError(f"quadratic weight must be positive, got {self.weight}")
        object.__setattr__(self, "target", np.atleast_1d(np.asarray(self.target, float)))
        object.__setattr__(self, "weight", float(self.weight))

    @property
    def L(self):
        return self.weight

    @property
    def sigma(self):
        return self.weight

    def value(self, y):
        d = np.asarray(y, dtype=float) - self.target
        return 0.5 * self.weight * float(d @ d)

    def gradient(self, y):
        return self.weight * (np.asarray(y, dtype=float) - self.target)

    def hessian_action(self, y, w):
        return self.weight * np.asarray(w, dtype=float)


@dataclass(frozen=True, eq=False)
class GeneralSmooth(LocalObjective):
    """User-supplied smooth objective.

    ``hessian`` may be omitted, in which case Hessian-vector products are
    taken by central differences of the gradient.
    """

    fn: Callable
    grad: Callable
    L: float
    sigma: float
    hessian: Callable = None

    def __post_init__(self):
        if not (0 < self.sigma <= self.L):
            raise ConfigError(f"need 0 < sigma <= L, got sigma={self.sigma}, L={self.L}")

    def value(self, y):
        return float(self.fn(np.asarray(y, dtype=float)))

    def gradient(self, y):
        return np.asarray(self.grad(np.asarray(y, dtype=float)), dtype=float)

    def hessian_action(self, y, w):
        y = np.asarray(y, dtype=float)
        w = np.asarray(w, dtype=float)
        if self.hessian is not None:
            return np.asarray(self.hessian(y), dtype=float) @ w
        eps = 1e-6 * max(1.0, np.linalg.norm(y)) / max(np.linalg.norm(w), 1e-300)
        return (self.gradient(y + eps * w) - self.gradient(y - eps * w)) / (2 * eps)


def gradient(obj: LocalObjective, y) -> np.ndarray:
    return obj.gradient(y)


def hessian_action(obj: LocalObjective, y, w) -> np.ndarray:
    return obj.hessian_action(y, w)


class ObjectiveEnsemble:
    """The N private objectives, with vectorised gradients when all are quadratic."""

    def __init__(self, locals_: Sequence[LocalObjective]):
        if len(locals_) == 0:
            raise ConfigError("objective ensemble must be nonempty")
        self.locals = tuple(locals_)
        self.all_quadratic = all(isinstance(f, Quadratic) for f in self.locals)
        if self.all_quadratic:
            self._weights = np.array([f.weight for f in self.locals])
            self._targets = np.array([f.target for f in self.locals])
            if self._targets.ndim != 2:
                raise ConfigError("quadratic targets must share a dimension")

    def __len__(self):
        return len(self.locals)

    def __iter__(self):
        return iter(self.locals)

    def __getitem__(self, i):
        return self.locals[i]

    @property
    def L_max(self) -> float:
        return max(f.L for f in self.locals)

    @property
    def L_total(self) -> float:
        return sum(f.L for f in self.locals)

    @property
    def sigma(self) -> float:
        return sum(f.sigma for f in self.locals) / len(self.locals)

    @property
    def sigma1(self) -> float:
        return min(self.sigma, 1.0 / 16.0)

    def value(self, y) -> float:
        """Total cost ``sum_i f_i(y)`` at a common point."""
        return sum(f.value(y) for f in self.locals)

    def total_gradient(self, y) -> np.ndarray:
        return sum(f.gradient(y) for f in self.locals)

    def mean_gradient(self, y) -> np.ndarray:
        return self.total_gradient(y) / len(self.locals)

    def stacked_gradient(self, Y) -> np.ndarray:
        """Row i is ``grad f_i(Y[i])``."""
        Y = np.asarray(Y, dtype=float)
        if self.all_quadratic:
            return self._weights[:, None] * (Y - self._targets)
        return np.array([f.gradient(y) for f, y in zip(self.locals, Y)])

    def linear_form(self):
        """``(W, E)`` with stacked gradient ``W * (Y - E)``, or None if nonlinear."""
        if not self.all_quadratic:
            return None
        return self._weights.copy(), self._targets.copy()


def ensemble_constants(e: ObjectiveEnsemble):
    """Return ``(L_max, sigma, sigma1)``."""
    return e.L_max, e.sigma, e.sigma1
