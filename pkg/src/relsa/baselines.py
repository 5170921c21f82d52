"""Reference sensitivity measures: FORM importance factors and Sobol' indices.

FORM works in the standard Gaussian space reached through the componentwise
transform ``x_i = F_i^{-1}(Φ(u_i))`` and locates the design point with the
HL-RF iteration.  Sobol' indices are computed on the failure indicator
``1{G(X) < 0}`` with the pick-freeze scheme on ``d + 2`` sample matrices.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import special

from relsa.distributions import DistributionSpec, Normal
from relsa.models import FailureModel
from relsa.rng import SOBOL_SLOT, stream

FD_STEP = 1e-6
HLRF_TOL = 1e-6
HLRF_MAX_ITER = 100


# --- isoprobabilistic transform ------------------------------------------------

def to_physical(marginals: Sequence[DistributionSpec], u) -> np.ndarray:
    """Map standard normal coordinates to the physical space, column by column.

    Positive ``u`` goes through the inverse survival function so that the
    upper tail keeps its precision.
    """
    u = np.atleast_2d(np.asarray(u, dtype=float))
    cols = []
    for j, m in enumerate(marginals):
        uj = u[:, j]
        lower = m.quantile_unchecked(special.ndtr(np.minimum(uj, 0.0)))
        upper = m.isf(special.ndtr(-np.maximum(uj, 0.0)))
        cols.append(np.where(uj > 0, upper, lower))
    return np.column_stack(cols)


def to_standard(marginals: Sequence[DistributionSpec], x) -> np.ndarray:
    """Inverse of :func:`to_physical`."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    cols = []
    for j, m in enumerate(marginals):
        xj = x[:, j]
        f = np.asarray(m.cdf(xj), dtype=float)
        s = np.asarray(m.sf(xj), dtype=float)
        cols.append(np.where(f > 0.5, -special.ndtri(s), special.ndtri(f)))
    return np.column_stack(cols)


def iso_transform(model: FailureModel) -> FailureModel:
    """The model seen from standard space, ``G(u) = G(x(u))``.

    Calls are counted both on the returned model and on ``model``.
    """
    marginals = model.marginals

    def g_standard(u):
        return model.evaluate(to_physical(marginals, u))

    return FailureModel(
        f"{model.name}[standard]", [Normal(0.0, 1.0)] * model.dim, g_standard, model.input_names
    )


# --- FORM ----------------------------------------------------------------------

@dataclass(frozen=True)
class DesignPoint:
    u_star: np.ndarray
    beta_hl: float
    alpha: np.ndarray
    iterations: int
    model_calls: int
    converged: bool

    @property
    def pf_form(self) -> float:
        """First-order probability ``Φ(-β)``."""
        return float(special.ndtr(-self.beta_hl))


def _value_and_gradient(model: FailureModel, u: np.ndarray, step: float):
    d = u.size
    pts = np.vstack([u, u + step * np.eye(d), u - step * np.eye(d)])
    g = model.evaluate(pts)
    with np.errstate(invalid="ignore"):
        return g[0], (g[1 : d + 1] - g[d + 1 :]) / (2.0 * step)


def hlrf_design_point(
    model: FailureModel,
    start: Sequence[float] | None = None,
    tol: float = HLRF_TOL,
    max_iter: int = HLRF_MAX_ITER,
    step: float = FD_STEP,
) -> DesignPoint:
    """Hasofer-Lind / Rackwitz-Fiessler search for the design point.

    Iterates ``u ← [(∇G·u - G) / |∇G|²] ∇G`` in standard space with a
    central-difference gradient until successive iterates are within
    ``tol``.  Each iteration costs ``2d + 1`` model calls.  Without
    convergence the last iterate is returned with ``converged=False``.
    """
    std = iso_transform(model)
    u = np.zeros(model.dim) if start is None else np.asarray(start, dtype=float).copy()
    converged = False
    it = 0
    grad = np.zeros_like(u)
    for it in range(1, max_iter + 1):
        g, grad = _value_and_gradient(std, u, step)
        norm2 = float(grad @ grad)
        if not (np.isfinite(g) and np.isfinite(norm2)) or norm2 == 0.0:
            break
        u_new = ((grad @ u - g) / norm2) * grad
        moved = float(np.linalg.norm(u_new - u))
        u = u_new
        if moved <= tol:
            converged = True
            break
    beta = float(np.linalg.norm(u))
    if beta > 0:
        alpha = u / beta
    else:
        gn = np.linalg.norm(grad)
        alpha = -grad / gn if gn > 0 else np.full_like(u, np.nan)
    return DesignPoint(u, beta, alpha, it, std.call_counter, converged)


def importance_factors(dp: DesignPoint, allow_unconverged: bool = False) -> np.ndarray:
    """FORM importance factors ``α_i²``; they sum to one."""
    if not dp.converged and not allow_unconverged:
        raise ValueError("importance factors requested for an unconverged design point")
    return dp.alpha**2


# --- Sobol' indices ---------------------------------------------------------------

@dataclass(frozen=True)
class SobolEstimate:
    first_order: np.ndarray
    total: np.ndarray
    n_base: int
    total_calls: int
    variance: float


def _sample_matrix(marginals, n, seed, replication, offset):
    return np.column_stack(
        [m.sample(stream(seed, replication, SOBOL_SLOT + offset + j), n) for j, m in enumerate(marginals)]
    )


def sobol_pick_freeze(model: FailureModel, n_base: int, seed: int, replication: int = 0) -> SobolEstimate:
    """First-order and total Sobol' indices of the failure indicator.

    With ``A``, ``B`` two independent samples and ``AB_i`` equal to ``A``
    except for column ``i`` taken from ``B``:

        S_i  = mean(f_B (f_ABi - f_A)) / V
        S_Ti = mean((f_A - f_ABi)²) / (2V)

    ``V`` is the variance of the pooled ``f_A``, ``f_B`` values.  Estimates
    are not clamped and may fall slightly below zero.
    """
    if n_base < 100:
        raise ValueError(f"n_base must be >= 100, got {n_base}")
    d = model.dim
    a = _sample_matrix(model.marginals, n_base, seed, replication, 0)
    b = _sample_matrix(model.marginals, n_base, seed, replication, d)
    blocks = [a, b]
    for i in range(d):
        ab = a.copy()
        ab[:, i] = b[:, i]
        blocks.append(ab)
    y = (model.evaluate(np.vstack(blocks)) < 0).astype(float).reshape(d + 2, n_base)
    f_a, f_b, f_ab = y[0], y[1], y[2:]
    var = float(np.var(np.concatenate([f_a, f_b])))
    if var == 0.0:
        nan = np.full(d, np.nan)
        return SobolEstimate(nan, nan.copy(), n_base, n_base * (d + 2), 0.0)
    first = np.mean(f_b * (f_ab - f_a), axis=1) / var
    total = np.mean((f_a - f_ab) ** 2, axis=1) / (2.0 * var)
    return SobolEstimate(first, total, n_base, n_base * (d + 2), var)


@dataclass(frozen=True)
class SobolReplications:
    """Replication statistics for the Sobol' estimates."""

    first_order: np.ndarray  # (R, d)
    total: np.ndarray  # (R, d)

    @property
    def replications(self) -> int:
        return self.first_order.shape[0]

    def mean(self) -> tuple[np.ndarray, np.ndarray]:
        return self.first_order.mean(axis=0), self.total.mean(axis=0)

    def std(self) -> tuple[np.ndarray, np.ndarray]:
        return self.first_order.std(axis=0, ddof=1), self.total.std(axis=0, ddof=1)

    def cov(self) -> tuple[np.ndarray, np.ndarray]:
        """Coefficient of variation ``sd / |mean|`` (NaN where the mean is zero)."""
        (m1, mt), (s1, st) = self.mean(), self.std()
        with np.errstate(divide="ignore", invalid="ignore"):
            return (
                np.where(m1 != 0, s1 / np.abs(m1), np.nan),
                np.where(mt != 0, st / np.abs(mt), np.nan),
            )


def sobol_replications(model: FailureModel, n_base: int, seed: int, replications: int) -> SobolReplications:
    if replications < 2:
        raise ValueError("at least two replications are needed for a spread estimate")
    runs = [sobol_pick_freeze(model, n_base, seed, r) for r in range(replications)]
    return SobolReplications(
        np.array([r.first_order for r in runs]), np.array([r.total for r in runs])
    )


def form_probability(dp: DesignPoint) -> float:
    return dp.pf_form


def hyperplane_form_exact(k: float, a: Sequence[float]) -> tuple[float, np.ndarray]:
    """Exact ``β = k/|a|`` and factors ``a_i²/|a|²`` for ``G = k - a·X`` with standard normal inputs."""
    a = np.asarray(a, dtype=float)
    norm = math.sqrt(float(a @ a))
    return k / norm, a**2 / norm**2
