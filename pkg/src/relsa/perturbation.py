"""KL-minimal perturbations of a one-dimensional input density.

Under linear moment constraints ``E[g_k(X)] = δ_k`` the perturbed density
closest to ``f`` in Kullback-Leibler divergence is the exponential tilt

    f_δ(x) = f(x) · exp(Σ_k λ_k g_k(x) - ψ(λ)),
    ψ(λ) = log ∫ f(x) exp(Σ_k λ_k g_k(x)) dx,

where ``λ`` minimises the convex dual ``H(λ) = ψ(λ) - λ·δ``.  Two constraint
sets are provided: a mean shift (``g = x``) and a variance shift with the
mean held fixed (``g = (x, x²)``).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Literal, Sequence

import numpy as np
from scipy import optimize

from relsa import quadrature
from relsa.distributions import (
    DistributionSpec,
    MgfDomainError,
    Normal,
    Truncated,
    truncated_mgf_correction,
)
from relsa.quadrature import DomainError

__all__ = [
    "ConstraintInfeasibleError",
    "DomainError",
    "MomentConstraint",
    "NewtonResult",
    "PerturbedDensity",
    "PolynomialBasis",
    "SolverError",
    "TiltingCoefficients",
    "build_perturbed_density",
    "check_feasible",
    "kl_divergence",
    "likelihood_ratio",
    "mean_shift",
    "mean_shift_sigma",
    "newton_minimize_lagrange",
    "psi_normalizer",
    "solve_mean_shift",
    "solve_variance_shift",
    "truncated_mgf_correction",
    "variance_shift",
]

log = logging.getLogger(__name__)

# Relative distance to a bounded support end below which a target mean is refused.
FEASIBILITY_MARGIN = 1e-9
BRACKET_CAP = 1e6
NEWTON_TOL = 1e-10
NEWTON_MAX_ITER = 200
# Give up when |∇H| has not improved on its best value for this many steps.
NEWTON_STALL = 25


class ConstraintInfeasibleError(ValueError):
    """No density on the base support satisfies the requested moments."""


class SolverError(RuntimeError):
    """The multiplier search failed to converge."""


@dataclass(frozen=True)
class MomentConstraint:
    """Target moments for the perturbed density.

    ``mean_shift`` carries the target mean; ``variance_shift`` carries the
    target variance, the mean staying at the base mean.
    """

    kind: Literal["mean_shift", "variance_shift"]
    value: float

    def __post_init__(self):
        if self.kind not in ("mean_shift", "variance_shift"):
            raise ValueError(f"unknown constraint kind {self.kind!r}")
        if not math.isfinite(self.value):
            raise ValueError("constraint target must be finite")

    def is_null(self, dist: DistributionSpec, rtol: float = 1e-12) -> bool:
        """True when the target equals the base moment (λ = 0)."""
        if self.kind == "mean_shift":
            return abs(self.value - dist.mean) <= rtol * max(dist.std, abs(dist.mean))
        return abs(self.value - dist.variance) <= rtol * dist.variance


def mean_shift(delta: float) -> MomentConstraint:
    return MomentConstraint("mean_shift", float(delta))


def mean_shift_sigma(dist: DistributionSpec, t: float) -> MomentConstraint:
    """Mean shift by ``t`` standard deviations of ``dist``."""
    return MomentConstraint("mean_shift", dist.mean + float(t) * dist.std)


def variance_shift(v_per: float) -> MomentConstraint:
    return MomentConstraint("variance_shift", float(v_per))


@dataclass(frozen=True)
class PolynomialBasis:
    """Constraint functions ``g_k(x) = ((x - center) / scale)**k``, k = 1..degree.

    With the defaults this is the plain ``(x, x², ...)`` basis.  Solvers work
    in a standardised basis for conditioning; :meth:`TiltingCoefficients.raw`
    converts back.
    """

    degree: int
    center: float = 0.0
    scale: float = 1.0

    def functions(self) -> list[Callable[[np.ndarray], np.ndarray]]:
        c, s = self.center, self.scale
        return [(lambda x, k=k: ((np.asarray(x, dtype=float) - c) / s) ** k)
                for k in range(1, self.degree + 1)]

    def evaluate(self, x) -> np.ndarray:
        z = (np.asarray(x, dtype=float) - self.center) / self.scale
        return np.stack([z**k for k in range(1, self.degree + 1)])


@dataclass(frozen=True)
class TiltingCoefficients:
    lambdas: tuple[float, ...]
    psi: float
    basis: PolynomialBasis

    def exponent(self, x) -> np.ndarray:
        """``Σ λ_k g_k(x) - ψ``: the log likelihood ratio."""
        x = np.asarray(x, dtype=float)
        z = (x - self.basis.center) / self.basis.scale
        acc = np.zeros_like(z)
        # Horner on the polynomial Σ λ_k z^k
        for lam in reversed(self.lambdas):
            acc = (acc + lam) * z
        return acc - self.psi

    @property
    def is_null(self) -> bool:
        return all(lam == 0.0 for lam in self.lambdas)

    def raw(self) -> "TiltingCoefficients":
        """Coefficients on the plain basis ``(x, x², ...)``."""
        c, s = self.basis.center, self.basis.scale
        if c == 0.0 and s == 1.0:
            return self
        k = len(self.lambdas)
        # expand Σ λ_k ((x - c)/s)^k into powers of x
        coeffs = np.zeros(k + 1)
        for j, lam in enumerate(self.lambdas, start=1):
            poly = np.polynomial.polynomial.polypow([-c / s, 1.0 / s], j)
            coeffs[: len(poly)] += lam * poly
        return TiltingCoefficients(
            tuple(float(v) for v in coeffs[1:]), float(self.psi - coeffs[0]), PolynomialBasis(k)
        )


def psi_normalizer(
    dist: DistributionSpec,
    lambdas: Sequence[float],
    basis: PolynomialBasis | Sequence[Callable] | None = None,
) -> float:
    """Log-normaliser ``ψ(λ) = log ∫ f(x) exp(Σ λ_k g_k(x)) dx``.

    ``basis`` defaults to the plain polynomial basis of matching length.
    Raises :class:`DomainError` when the integral diverges.
    """
    lambdas = [float(v) for v in lambdas]
    if basis is None:
        basis = PolynomialBasis(len(lambdas))
    if all(v == 0.0 for v in lambdas):
        return 0.0
    if isinstance(basis, PolynomialBasis):
        if basis.degree == 1 and basis.center == 0.0 and basis.scale == 1.0:
            try:
                return dist.log_mgf(lambdas[0])
            except MgfDomainError as exc:
                raise DomainError(str(exc)) from exc
        basis = basis.functions()
    return quadrature.tilted_grid(dist, lambdas, basis).psi


@dataclass(frozen=True)
class PerturbedDensity:
    base: DistributionSpec
    coeffs: TiltingCoefficients
    constraint: MomentConstraint
    closed_form: DistributionSpec | None = None

    @property
    def support(self):
        return self.base.support

    @property
    def breakpoints(self):
        return self.base.breakpoints

    def quantile(self, p):
        # Only used to seed integration ranges; see quadrature.effective_range.
        return self.base.quantile(p)

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(invalid="ignore"):
            out = self.base.logpdf(x) + self.coeffs.exponent(x)
        return np.where(self.base.support.contains(x), out, -np.inf)

    def pdf(self, x):
        with np.errstate(under="ignore"):
            return np.exp(self.logpdf(x))

    def likelihood_ratio(self, x) -> np.ndarray:
        return likelihood_ratio(self, x)

    def _grid(self):
        raw = self.coeffs
        return quadrature.tilted_grid(self.base, raw.lambdas, raw.basis.functions())

    def moments(self) -> tuple[float, float]:
        """Mean and variance of the perturbed law, by quadrature."""
        if self.coeffs.is_null:
            return self.base.mean, self.base.variance
        m0, s0 = self.base.mean, self.base.std
        e1, e2 = self._grid().expectations(PolynomialBasis(2, m0, s0).functions())
        return m0 + s0 * e1, s0 * s0 * (e2 - e1 * e1)


def likelihood_ratio(pd: PerturbedDensity, x) -> np.ndarray:
    """Weight ``f_δ(x) / f(x) = exp(Σ λ_k g_k(x) - ψ)``.

    Evaluated from the tilt exponent directly, never as a ratio of densities.
    Raises ``ValueError`` if any ``x`` lies outside the base support.
    """
    x = np.asarray(x, dtype=float)
    if not np.all(pd.base.support.contains(x)):
        raise ValueError("likelihood ratio undefined outside the base support")
    if pd.coeffs.is_null:
        return np.ones_like(x)
    with np.errstate(over="ignore", under="ignore"):
        return np.exp(pd.coeffs.exponent(x))


def kl_divergence(pd: PerturbedDensity) -> float:
    """KL(f_δ, f) = E_{f_δ}[Σ λ_k g_k] - ψ."""
    if pd.coeffs.is_null:
        return 0.0
    c = pd.coeffs
    e = pd._grid().expectations(c.basis.functions())
    return float(np.dot(c.lambdas, e) - c.psi)


# --- mean shift ------------------------------------------------------------

def _check_mean_feasible(dist: DistributionSpec, delta: float) -> None:
    sup = dist.support
    margin = FEASIBILITY_MARGIN * (sup.width if sup.bounded else dist.std)
    if not (sup.lo + margin < delta < sup.hi - margin):
        raise ConstraintInfeasibleError(
            f"target mean {delta!r} is not strictly inside the support [{sup.lo}, {sup.hi}]"
        )


def solve_mean_shift(dist: DistributionSpec, delta: float) -> TiltingCoefficients:
    """Multiplier and normaliser for the mean-shift perturbation.

    Solves ``M'(λ)/M(λ) = δ``.  The Gaussian case is closed form
    (``λ = (δ - μ)/σ²``); otherwise a bracket on ``λ`` is grown geometrically
    from ``[-1, 1]/sd`` (staying inside the mgf domain) until the tilted-mean
    residual changes sign, then refined with Brent's method.
    """
    delta = float(delta)
    basis = PolynomialBasis(1)
    _check_mean_feasible(dist, delta)
    if delta == dist.mean:
        return TiltingCoefficients((0.0,), 0.0, basis)
    if isinstance(dist, Normal):
        lam = (delta - dist.mu) / dist.sigma**2
        return TiltingCoefficients((lam,), dist.log_mgf(lam), basis)

    sd = dist.std
    dom_lo, dom_hi = (v * sd for v in dist.mgf_domain)

    def residual(u: float) -> float:
        return (dist.tilted_mean(u / sd) - delta) / sd

    sign = 1.0 if delta > dist.mean else -1.0
    bound = dom_hi if sign > 0 else -dom_lo
    inner, outer = 0.0, 1.0
    if outer >= bound:
        outer = 0.5 * bound
    for _ in range(400):
        r = residual(sign * outer)
        if sign * r >= 0:
            break
        inner = outer
        if 2.0 * outer < bound:
            outer *= 2.0
        else:
            outer = outer + 0.5 * (bound - outer)
        if outer > BRACKET_CAP or outer == inner:
            raise SolverError(
                f"could not bracket the mean-shift multiplier for δ={delta!r} "
                f"(|λ·sd| reached {outer:g}, residual {r:g})"
            )
    else:
        raise SolverError(f"bracket expansion did not terminate for δ={delta!r}")
    lo, hi = sorted((sign * inner, sign * outer))
    try:
        u = optimize.brentq(residual, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    except (ValueError, RuntimeError) as exc:
        raise SolverError(f"Brent refinement failed on [{lo}, {hi}]: {exc}") from exc
    lam = u / sd
    err = abs(dist.tilted_mean(lam) - delta)
    if err > 1e-8 * max(1.0, sd):
        raise SolverError(f"mean-shift residual {err:g} too large at λ={lam!r}")
    return TiltingCoefficients((lam,), dist.log_mgf(lam), basis)


# --- variance shift ----------------------------------------------------------

@dataclass(frozen=True)
class NewtonResult:
    lambdas: np.ndarray
    psi: float
    iterations: int
    grad_norm: float
    history: tuple[float, ...] = field(default=(), repr=False)


def newton_minimize_lagrange(
    dist: DistributionSpec,
    constraints: Sequence[tuple[Callable[[np.ndarray], np.ndarray], float]],
    init: Sequence[float] | None = None,
    tol: float = NEWTON_TOL,
    max_iter: int = NEWTON_MAX_ITER,
) -> NewtonResult:
    """Minimise ``H(λ) = ψ(λ) - Σ λ_k δ_k`` by damped Newton.

    ``constraints`` pairs each function ``g_k`` with its target ``δ_k``.  The
    gradient is the tilted mean of ``g`` minus the targets and the Hessian the
    tilted covariance of ``g``, both from Simpson quadrature.  Steps are
    halved while ``H`` fails to decrease or ``λ`` leaves ``Dom ψ``.
    """
    basis = [g for g, _ in constraints]
    targets = np.array([float(d) for _, d in constraints])
    k = len(basis)
    lam = np.zeros(k) if init is None else np.asarray(init, dtype=float).copy()
    prods = [(lambda x, i=i, j=j: basis[i](x) * basis[j](x)) for i in range(k) for j in range(i, k)]

    def evaluate(lmb):
        grid = quadrature.tilted_grid(dist, lmb, basis)
        e = grid.expectations(basis + prods)
        mean_g = e[:k]
        second = np.empty((k, k))
        pos = k
        for i in range(k):
            for j in range(i, k):
                second[i, j] = second[j, i] = e[pos]
                pos += 1
        psi = grid.psi
        return psi - lmb @ targets, mean_g - targets, second - np.outer(mean_g, mean_g), psi

    try:
        h, grad, hess, psi = evaluate(lam)
    except DomainError as exc:
        raise SolverError(f"H is not finite at the initial point: {exc}") from exc
    history = [float(np.linalg.norm(grad))]
    best, best_at = history[0], 0
    for it in range(max_iter + 1):
        gnorm = float(np.linalg.norm(grad))
        if gnorm <= tol:
            return NewtonResult(lam, psi, it, gnorm, tuple(history))
        if gnorm < 0.999 * best:
            best, best_at = gnorm, it
        elif it - best_at >= NEWTON_STALL:
            raise SolverError(
                f"Newton stalled after {it} iterations (|∇H|={gnorm:g}, λ={lam}); "
                "the target is likely outside the attainable moment set"
            )
        if it == max_iter:
            break
        try:
            step = -np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError as exc:
            raise SolverError(f"singular Hessian at λ={lam} (|∇H|={gnorm:g})") from exc
        t = 1.0
        for _ in range(60):
            trial = lam + t * step
            try:
                h_new, g_new, hess_new, psi_new = evaluate(trial)
            except DomainError:
                t *= 0.5
                continue
            if h_new <= h + 1e-4 * t * float(grad @ step) + 1e-14 * (1.0 + abs(h)):
                break
            t *= 0.5
        else:
            raise SolverError(f"backtracking exhausted at λ={lam} (|∇H|={gnorm:g})")
        lam, h, grad, hess, psi = trial, h_new, g_new, hess_new, psi_new
        history.append(float(np.linalg.norm(grad)))
    raise SolverError(
        f"Newton did not converge in {max_iter} iterations (last |∇H|={gnorm:g}, λ={lam})"
    )


def _check_variance_feasible(dist: DistributionSpec, v_per: float) -> None:
    if not v_per > 0:
        raise ConstraintInfeasibleError(f"target variance must be > 0, got {v_per!r}")
    sup = dist.support
    if sup.bounded:
        m = dist.mean
        vmax = (m - sup.lo) * (sup.hi - m)
        if v_per >= vmax * (1.0 - FEASIBILITY_MARGIN):
            raise ConstraintInfeasibleError(
                f"target variance {v_per!r} is not below the maximum {vmax!r} "
                f"attainable on [{sup.lo}, {sup.hi}] with mean {m!r}"
            )


def solve_variance_shift(dist: DistributionSpec, v_per: float) -> TiltingCoefficients:
    """Multipliers for the variance shift at fixed mean.

    Gaussian bases are closed form: the tilt stays Gaussian with precision
    ``1/σ² - 2λ₂``.  Other bases run :func:`newton_minimize_lagrange` in
    the standardised basis ``z = (x - mean)/sd``.
    """
    v_per = float(v_per)
    _check_variance_feasible(dist, v_per)
    m, s = dist.mean, dist.std
    if v_per == dist.variance:
        return TiltingCoefficients((0.0, 0.0), 0.0, PolynomialBasis(2))
    if isinstance(dist, Normal):
        mu, s2 = dist.mu, dist.sigma**2
        lam2 = 0.5 * (1.0 / s2 - 1.0 / v_per)
        lam1 = mu * (1.0 / v_per - 1.0 / s2)
        psi = 0.5 * math.log(v_per / s2) + 0.5 * mu * mu * (1.0 / v_per - 1.0 / s2)
        return TiltingCoefficients((lam1, lam2), psi, PolynomialBasis(2))
    basis = PolynomialBasis(2, m, s)
    g1, g2 = basis.functions()
    res = newton_minimize_lagrange(dist, [(g1, 0.0), (g2, v_per / s**2)])
    log.debug("variance shift %s -> %s in %d Newton steps", dist, v_per, res.iterations)
    return TiltingCoefficients(tuple(float(v) for v in res.lambdas), res.psi, basis)


# --- assembly ----------------------------------------------------------------

def check_feasible(dist: DistributionSpec, constraint: MomentConstraint) -> None:
    """Raise ``ConstraintInfeasibleError`` for targets no density on the support can meet.

    This is a necessary condition only; a solver may still fail on targets
    that are feasible in principle but numerically extreme.
    """
    if constraint.kind == "mean_shift":
        _check_mean_feasible(dist, constraint.value)
    else:
        _check_variance_feasible(dist, constraint.value)


def build_perturbed_density(dist: DistributionSpec, constraint: MomentConstraint) -> PerturbedDensity:
    """Solve the constraint and attach a closed form where the family is closed under the tilt."""
    if constraint.kind == "mean_shift":
        coeffs = solve_mean_shift(dist, constraint.value)
    else:
        coeffs = solve_variance_shift(dist, constraint.value)
    closed: DistributionSpec | None = None
    if isinstance(dist, Normal):
        if constraint.kind == "mean_shift":
            closed = Normal(constraint.value, dist.sigma)
        else:
            closed = Normal(dist.mu, math.sqrt(constraint.value))
    elif (
        isinstance(dist, Truncated)
        and isinstance(dist.parent, Normal)
        and constraint.kind == "mean_shift"
    ):
        p = dist.parent
        closed = Truncated(Normal(p.mu + p.sigma**2 * coeffs.lambdas[0], p.sigma), dist.lower)
    pd = PerturbedDensity(dist, coeffs, constraint, closed)
    if constraint.kind == "variance_shift" and closed is None:
        mean, var = pd.moments()
        scale = dist.std
        if abs(mean - dist.mean) > 1e-6 * scale or abs(var - constraint.value) > 1e-6 * constraint.value:
            raise SolverError(
                f"variance-shift residuals too large: mean {mean!r}, variance {var!r}"
            )
    return pd
