"""Failure probabilities, reverse importance sampling and the sensitivity index.

A single Monte Carlo design ``x^1..x^N`` drawn from the joint input law is
evaluated once.  Perturbed probabilities are then obtained by reweighting
the failure points with the likelihood ratio of the perturbed marginal,

    P̂_iδ = (1/N) Σ_n 1{G(x^n) < 0} · f_iδ(x_i^n) / f_i(x_i^n),

so no further model runs are needed.  The index compares ``P̂_iδ`` with
``P̂``; its confidence interval follows from the joint normal limit of the
pair and the delta method.

Input indices are 1-based throughout this module.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import special

from relsa.distributions import DistributionSpec, MgfDomainError
from relsa.models import FailureModel
from relsa.perturbation import (
    ConstraintInfeasibleError,
    DomainError,
    MomentConstraint,
    PerturbedDensity,
    SolverError,
    build_perturbed_density,
    likelihood_ratio,
)
from relsa.rng import stream

log = logging.getLogger(__name__)

DEFAULT_LEVEL = 0.95

# Errors that make a single grid point unusable without invalidating the curve.
POINT_ERRORS = (ConstraintInfeasibleError, SolverError, DomainError, MgfDomainError)


class SupportMismatchError(ValueError):
    """The perturbed density was not built on the design's marginal."""


class DegenerateIndexError(ValueError):
    """The index is undefined because a probability is zero."""


@dataclass(frozen=True)
class MonteCarloDesign:
    """Evaluated iid sample from the joint input law.

    The arrays are made read-only; the design is reused for every
    perturbation and never re-evaluated.
    """

    inputs: np.ndarray
    g_values: np.ndarray
    indicators: np.ndarray
    seed: int | None
    model_id: str
    marginals: tuple[DistributionSpec, ...]
    replication: int = 0

    def __post_init__(self):
        for a in (self.inputs, self.g_values, self.indicators):
            a.setflags(write=False)
        if self.inputs.ndim != 2 or self.inputs.shape[0] != self.g_values.shape[0]:
            raise ValueError("inputs must be (N, d) with one g value per row")
        if self.inputs.shape[1] != len(self.marginals):
            raise ValueError("one marginal per input column is required")
        if not np.array_equal(self.indicators, self.g_values < 0):
            raise ValueError("indicators must equal g_values < 0")

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]

    @property
    def n_failures(self) -> int:
        return int(np.count_nonzero(self.indicators))


@dataclass(frozen=True)
class ProbabilityEstimate:
    """Point estimate with its estimated sampling variance and normal CI.

    ``variance_hat`` is the variance of the estimator itself, i.e. the
    asymptotic variance divided by ``n``.
    """

    p_hat: float
    variance_hat: float
    n: int
    ci: tuple[float, float]
    level: float = DEFAULT_LEVEL
    degenerate: bool = False

    @property
    def std_error(self) -> float:
        return math.sqrt(self.variance_hat)

    def covers(self, value: float) -> bool:
        return self.ci[0] <= value <= self.ci[1]


@dataclass(frozen=True)
class IndexEstimate:
    input_index: int
    constraint: MomentConstraint
    s_hat: float
    variance_hat: float
    ci: tuple[float, float]
    p_hat: float
    p_delta_hat: float
    n: int
    p_delta_ci: tuple[float, float] = (math.nan, math.nan)
    level: float = DEFAULT_LEVEL
    degenerate: bool = False


@dataclass(frozen=True)
class CurveFailure:
    """A grid point whose perturbation could not be built."""

    grid_value: float
    constraint: MomentConstraint
    error: str


@dataclass(frozen=True)
class SensitivityCurve:
    input_index: int
    kind: str
    points: tuple[tuple[float, IndexEstimate], ...]
    failures: tuple[CurveFailure, ...] = field(default=())

    @property
    def grid_values(self) -> np.ndarray:
        return np.array([v for v, _ in self.points])

    @property
    def s_hat(self) -> np.ndarray:
        return np.array([e.s_hat for _, e in self.points])

    @property
    def estimates(self) -> list[IndexEstimate]:
        return [e for _, e in self.points]


def _z(level: float) -> float:
    if not 0.0 < level < 1.0:
        raise ValueError(f"confidence level must lie in (0, 1), got {level}")
    return float(special.ndtri(0.5 + level / 2.0))


def _normal_ci(center: float, variance: float, level: float, lo=-math.inf, hi=math.inf):
    half = _z(level) * math.sqrt(max(variance, 0.0))
    return (max(lo, center - half), min(hi, center + half))


# --- design and plain Monte Carlo --------------------------------------------

def run_design(model: FailureModel, n: int, seed: int, replication: int = 0) -> MonteCarloDesign:
    """Draw ``n`` iid input rows and evaluate the model once on them.

    Column ``j`` is sampled from its own stream, so the design does not
    depend on the number of inputs drawn before it.
    """
    if n < 1:
        raise ValueError(f"design size must be >= 1, got {n}")
    cols = [m.sample(stream(seed, replication, j), n) for j, m in enumerate(model.marginals)]
    x = np.column_stack(cols)
    g = model.evaluate(x)
    return MonteCarloDesign(x, g, g < 0, seed, model.name, model.marginals, replication)


def estimate_failure_probability(design: MonteCarloDesign, level: float = DEFAULT_LEVEL) -> ProbabilityEstimate:
    """Failure fraction with binomial variance ``p̂(1 - p̂)/N``.

    A design without failures gives ``p̂ = 0`` and a zero-width interval,
    flagged as degenerate.
    """
    n = design.n
    if n == 0:
        raise ValueError("empty design")
    p = float(np.mean(design.indicators))
    var = p * (1.0 - p) / n
    return ProbabilityEstimate(p, var, n, _normal_ci(p, var, level, 0.0, 1.0), level, p == 0.0)


def _check_base(design: MonteCarloDesign, pd: PerturbedDensity, i: int) -> None:
    if not 1 <= i <= design.dim:
        raise IndexError(f"input index {i} outside 1..{design.dim}")
    if pd.base != design.marginals[i - 1]:
        raise SupportMismatchError(
            f"perturbed density is built on {pd.base!r}, input {i} follows {design.marginals[i - 1]!r}"
        )


def _failure_weights(design: MonteCarloDesign, pd: PerturbedDensity, i: int) -> np.ndarray:
    """Likelihood ratios at the failure points only (the others carry no weight)."""
    _check_base(design, pd, i)
    return likelihood_ratio(pd, design.inputs[design.indicators, i - 1])


def _reverse_moments(design, pd, i) -> tuple[float, float, float]:
    """``(p̂, p̂_iδ, σ̂²_iδ)`` with ``σ̂²_iδ = mean(1·w²) - p̂_iδ²``."""
    w = _failure_weights(design, pd, i)
    n = design.n
    p = float(np.mean(design.indicators))
    if pd.coeffs.is_null:
        return p, p, p * (1.0 - p)
    with np.errstate(over="ignore"):
        p_delta = float(np.sum(w)) / n
        second = float(np.sum(w * w)) / n
    return p, p_delta, max(second - p_delta * p_delta, 0.0)


def reverse_is_estimate(
    design: MonteCarloDesign, pd: PerturbedDensity, i: int, level: float = DEFAULT_LEVEL
) -> ProbabilityEstimate:
    """Perturbed failure probability by reweighting the existing design.

    Under the null perturbation the result is identical to
    :func:`estimate_failure_probability`.
    """
    _check_base(design, pd, i)
    if pd.coeffs.is_null:
        return estimate_failure_probability(design, level)
    _, p_delta, sigma2 = _reverse_moments(design, pd, i)
    var = sigma2 / design.n
    ci = _normal_ci(p_delta, var, level, 0.0)
    return ProbabilityEstimate(p_delta, var, design.n, ci, level, p_delta == 0.0)


def estimate_joint_covariance(design: MonteCarloDesign, pd: PerturbedDensity, i: int) -> np.ndarray:
    """Asymptotic covariance of ``√N (P̂ - P, P̂_iδ - P_iδ)``.

    ``Cov(1, 1·w) = E_δ[1] - P·P_δ`` so the cross term is ``p̂_iδ (1 - p̂)``.
    """
    p, p_delta, sigma2 = _reverse_moments(design, pd, i)
    c = p_delta * (1.0 - p)
    return np.array([[p * (1.0 - p), c], [c, sigma2]])


# --- the index -----------------------------------------------------------------

def compute_index(p: float, p_delta: float) -> float:
    """``p_δ/p - 1`` when ``p_δ >= p``, else ``1 - p/p_δ``.

    Positive values mean the perturbation raises the failure probability;
    ``s = α`` reads as ``P_δ = (1 + α) P`` and ``s = -α`` as ``P = (1 + α) P_δ``.
    """
    if not (p > 0 and p_delta > 0):
        raise DegenerateIndexError(f"index needs positive probabilities, got p={p}, p_delta={p_delta}")
    if p_delta >= p:
        return p_delta / p - 1.0
    return 1.0 - p / p_delta


def index_gradient(p: float, p_delta: float) -> np.ndarray:
    """Gradient of the index with respect to ``(p, p_delta)``.

    Both branches give ``(-1/p, 1/p)`` on the diagonal, so the map is
    differentiable there.
    """
    if not (p > 0 and p_delta > 0):
        raise DegenerateIndexError(f"gradient needs positive probabilities, got p={p}, p_delta={p_delta}")
    if p_delta >= p:
        return np.array([-p_delta / (p * p), 1.0 / p])
    return np.array([-1.0 / p_delta, p / (p_delta * p_delta)])


def index_confidence_interval(
    p_hat: float,
    p_delta_hat: float,
    sigma_matrix: np.ndarray,
    n: int,
    level: float = DEFAULT_LEVEL,
) -> tuple[float, float, tuple[float, float]]:
    """Delta-method interval for the index.

    Returns ``(s_hat, variance, (lo, hi))`` with ``variance = dᵀ Σ̂ d / n``.
    """
    s = compute_index(p_hat, p_delta_hat)
    d = index_gradient(p_hat, p_delta_hat)
    var = float(d @ np.asarray(sigma_matrix, dtype=float) @ d) / n
    return s, var, _normal_ci(s, var, level)


def estimate_index(
    design: MonteCarloDesign,
    pd: PerturbedDensity,
    i: int,
    level: float = DEFAULT_LEVEL,
) -> IndexEstimate:
    """Index, its variance and CI for one perturbation of input ``i``.

    An empty reweighted failure set yields the ``-inf`` sentinel with
    ``degenerate=True``; a design without any failure yields NaN.
    """
    p, p_delta, sigma2 = _reverse_moments(design, pd, i)
    n = design.n
    p_delta_ci = _normal_ci(p_delta, sigma2 / n, level, 0.0)
    common = dict(
        input_index=i, constraint=pd.constraint, p_hat=p, p_delta_hat=p_delta, n=n,
        p_delta_ci=p_delta_ci, level=level,
    )
    if p == 0.0 or p_delta == 0.0:
        s = math.nan if p == 0.0 else -math.inf
        return IndexEstimate(s_hat=s, variance_hat=math.nan, ci=(math.nan, math.nan), degenerate=True, **common)
    c = p_delta * (1.0 - p)
    sigma = np.array([[p * (1.0 - p), c], [c, sigma2]])
    s, var, ci = index_confidence_interval(p, p_delta, sigma, n, level)
    return IndexEstimate(s_hat=s, variance_hat=var, ci=ci, **common)


# --- curves ------------------------------------------------------------------

def constraint_grid(kind: str, values: Sequence[float]) -> list[MomentConstraint]:
    return [MomentConstraint(kind, float(v)) for v in values]


def validate_grid(base: DistributionSpec, grid: Sequence[MomentConstraint]) -> None:
    """Grids hold one constraint kind, are strictly monotone and avoid the null point."""
    if len(grid) == 0:
        raise ValueError("empty perturbation grid")
    kinds = {c.kind for c in grid}
    if len(kinds) != 1:
        raise ValueError(f"a grid must use a single constraint kind, got {sorted(kinds)}")
    values = np.array([c.value for c in grid])
    steps = np.diff(values)
    if len(values) > 1 and not (np.all(steps > 0) or np.all(steps < 0)):
        raise ValueError("grid values must be strictly monotone")
    for c in grid:
        if c.is_null(base):
            raise ValueError(
                f"grid value {c.value!r} is the null perturbation of {base!r} and is not a perturbation"
            )


def compute_sensitivity_curve(
    design: MonteCarloDesign,
    model: FailureModel,
    i: int,
    grid: Sequence[MomentConstraint],
    level: float = DEFAULT_LEVEL,
    threads: int = 1,
    labels: Sequence[float] | None = None,
) -> SensitivityCurve:
    """Index curve of input ``i`` over a constraint grid.

    Every point reuses ``design``; the model is never called.  Points whose
    perturbation cannot be built are skipped and listed in ``failures``.
    The result does not depend on ``threads``.  ``labels`` replaces the
    constraint targets as grid values (e.g. shifts counted in standard
    deviations).
    """
    if design.model_id != model.name:
        raise ValueError(f"design was drawn for {design.model_id!r}, not {model.name!r}")
    if not 1 <= i <= model.dim:
        raise IndexError(f"input index {i} outside 1..{model.dim}")
    base = design.marginals[i - 1]
    validate_grid(base, grid)
    if labels is None:
        labels = [c.value for c in grid]
    elif len(labels) != len(grid):
        raise ValueError("one label per grid point is required")

    def one(c: MomentConstraint):
        try:
            pd = build_perturbed_density(base, c)
        except POINT_ERRORS as exc:
            log.warning("input %d, %s=%r skipped: %s", i, c.kind, c.value, exc)
            return CurveFailure(c.value, c, f"{type(exc).__name__}: {exc}")
        return estimate_index(design, pd, i, level)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, grid))
    else:
        results = [one(c) for c in grid]
    points = tuple((float(v), r) for v, r in zip(labels, results) if isinstance(r, IndexEstimate))
    failures = tuple(
        CurveFailure(float(v), r.constraint, r.error)
        for v, r in zip(labels, results)
        if isinstance(r, CurveFailure)
    )
    return SensitivityCurve(i, grid[0].kind, points, failures)
