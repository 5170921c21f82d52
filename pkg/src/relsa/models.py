"""Benchmark failure models and their input laws.

Failure is the event ``G(x) < 0``.  Each model is registered by name so the
command line and the tests share one definition.
"""

from __future__ import annotations

import math
import threading
from typing import Callable, Sequence

import numpy as np
from scipy import special

from relsa.distributions import DistributionSpec, Normal, triangular, truncgumbel, truncnormal, uniform
from relsa.perturbation import MomentConstraint


class FailureModel:
    """Black-box limit-state function with independent marginals.

    ``function`` maps an ``(n, d)`` array to ``n`` values of ``G``.  Every
    row evaluated through :meth:`evaluate` is counted in ``call_counter``.
    """

    def __init__(
        self,
        name: str,
        marginals: Sequence[DistributionSpec],
        function: Callable[[np.ndarray], np.ndarray],
        input_names: Sequence[str] | None = None,
    ):
        self.name = name
        self.marginals = tuple(marginals)
        self.function = function
        self.input_names = tuple(input_names or (f"X{i + 1}" for i in range(len(self.marginals))))
        if len(self.input_names) != len(self.marginals):
            raise ValueError("one name per marginal is required")
        self._calls = 0
        self._lock = threading.Lock()

    @property
    def dim(self) -> int:
        return len(self.marginals)

    @property
    def call_counter(self) -> int:
        return self._calls

    def evaluate(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != self.dim:
            raise ValueError(f"{self.name}: expected {self.dim} columns, got {x.shape[1]}")
        with self._lock:
            self._calls += x.shape[0]
        return np.asarray(self.function(x), dtype=float)

    def with_marginals(self, marginals: Sequence[DistributionSpec]) -> "FailureModel":
        if len(marginals) != self.dim:
            raise ValueError(f"{self.name} takes {self.dim} marginals, got {len(marginals)}")
        return FailureModel(self.name, marginals, self.function, self.input_names)

    def __repr__(self):
        return f"FailureModel({self.name!r}, dim={self.dim})"


# --- hyperplane ---------------------------------------------------------------

HYPERPLANE_K = 16.0
HYPERPLANE_A = (1.0, -6.0, 4.0, 0.0)


def hyperplane_g(x, k: float = HYPERPLANE_K, a: Sequence[float] = HYPERPLANE_A) -> np.ndarray:
    """``k - Σ a_i x_i``."""
    x = np.asarray(x, dtype=float)
    return k - x @ np.asarray(a, dtype=float)


def hyperplane() -> FailureModel:
    return FailureModel("hyperplane", [Normal(0.0, 1.0)] * 4, hyperplane_g)


def hyperplane_exact_p(
    marginals: Sequence[DistributionSpec] | None = None,
    k: float = HYPERPLANE_K,
    a: Sequence[float] = HYPERPLANE_A,
) -> float:
    """Exact ``P(Σ a_i X_i > k)`` for Gaussian marginals."""
    marginals = marginals or [Normal(0.0, 1.0)] * len(a)
    means, variances = _gaussian_moments(marginals)
    a = np.asarray(a, dtype=float)
    return float(special.ndtr((a @ means - k) / math.sqrt(a**2 @ variances)))


def hyperplane_oracle_p_delta(
    i: int,
    constraint: MomentConstraint,
    marginals: Sequence[DistributionSpec] | None = None,
    k: float = HYPERPLANE_K,
    a: Sequence[float] = HYPERPLANE_A,
) -> float:
    """Exact perturbed failure probability when input ``i`` (1-based) is perturbed.

    A Gaussian input stays Gaussian under both perturbations, so
    ``Σ a_j X_j`` remains Gaussian with the updated mean or variance.
    """
    marginals = list(marginals or [Normal(0.0, 1.0)] * len(a))
    if not 1 <= i <= len(marginals):
        raise IndexError(f"input index {i} outside 1..{len(marginals)}")
    means, variances = _gaussian_moments(marginals)
    if constraint.kind == "mean_shift":
        means[i - 1] = constraint.value
    else:
        variances[i - 1] = constraint.value
    a = np.asarray(a, dtype=float)
    return float(special.ndtr((a @ means - k) / math.sqrt(a**2 @ variances)))


def _gaussian_moments(marginals):
    if not all(isinstance(m, Normal) for m in marginals):
        raise ValueError("the hyperplane oracle needs Gaussian marginals")
    return (np.array([m.mu for m in marginals]), np.array([m.sigma**2 for m in marginals]))


# --- thresholded Ishigami -------------------------------------------------------

def ishigami_g(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    s1 = np.sin(x[..., 0])
    return s1 + 7.0 * np.sin(x[..., 1]) ** 2 + 0.1 * x[..., 2] ** 4 * s1 + 7.0


def ishigami_threshold() -> FailureModel:
    return FailureModel("ishigami_threshold", [uniform(-math.pi, math.pi)] * 3, ishigami_g)


# --- flood ----------------------------------------------------------------

FLOOD_L = 5000.0
FLOOD_B = 300.0
FLOOD_HD = 58.0


def flood_g(q, ks, zv, zm, L: float = FLOOD_L, B: float = FLOOD_B, hd: float = FLOOD_HD):
    """Dyke margin ``H_d - (Z_v + H)`` with ``H = (Q / (K_s B √((Z_m - Z_v)/L)))^(3/5)``."""
    q, ks, zv, zm = (np.asarray(v, dtype=float) for v in (q, ks, zv, zm))
    if np.any(zm <= zv):
        raise ValueError("flood model needs zm > zv")
    h = (q / (ks * B * np.sqrt((zm - zv) / L))) ** 0.6
    return hd - (zv + h)


def _flood_columns(x):
    return flood_g(x[:, 0], x[:, 1], x[:, 2], x[:, 3])


def flood() -> FailureModel:
    # Q ~ Gumbel(location 1013, scale 558) truncated at 0; Ks ~ N(30, 7.5) truncated at 1.
    marginals = [
        truncgumbel(1013.0, 558.0, 0.0),
        truncnormal(30.0, 7.5, 1.0),
        triangular(49.0, 50.0, 51.0),
        triangular(54.0, 55.0, 56.0),
    ]
    return FailureModel("flood", marginals, _flood_columns, ("Q", "Ks", "Zv", "Zm"))


REGISTRY: dict[str, Callable[[], FailureModel]] = {
    "hyperplane": hyperplane,
    "ishigami_threshold": ishigami_threshold,
    "flood": flood,
}


def get_model(name: str) -> FailureModel:
    """Fresh model instance (own call counter) from the registry."""
    try:
        return REGISTRY[name]()
    except KeyError:
        raise KeyError(f"unknown model {name!r}; known: {', '.join(sorted(REGISTRY))}") from None


def register_model(name: str, factory: Callable[[], FailureModel]) -> None:
    if name in REGISTRY:
        raise ValueError(f"model {name!r} already registered")
    REGISTRY[name] = factory
