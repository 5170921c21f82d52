"""One-dimensional input laws used by the reliability models.

Every family exposes pdf/cdf/quantile/sampling, first two moments and the
moment generating function together with its derivative.  The mgf is handled
in log space (``log_mgf``) and through the tilted mean ``M'(t)/M(t)``, which
is what the mean-shift solver actually needs and which stays finite long
after ``M`` itself would overflow.

Truncated laws keep their untruncated parent and a lower bound and
renormalise by ``1 / (1 - F(lower))``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import special

from relsa import quadrature

EULER_GAMMA = float(np.euler_gamma)
_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


class DistributionError(ValueError):
    """Invalid distribution parameters or arguments."""


class MgfDomainError(DistributionError):
    """The mgf argument lies outside the open domain of the mgf."""


@dataclass(frozen=True)
class Support:
    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo < self.hi:
            raise DistributionError(f"empty support [{self.lo}, {self.hi}]")

    @property
    def bounded(self) -> bool:
        return bool(np.isfinite(self.lo) and np.isfinite(self.hi))

    @property
    def width(self) -> float:
        return self.hi - self.lo

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return (x >= self.lo) & (x <= self.hi)


class DistributionSpec:
    """Base class of the parametric families.

    Subclasses are frozen dataclasses; equality and hashing therefore follow
    the parameter values.
    """

    family: str = ""
    breakpoints: tuple[float, ...] = ()

    @property
    def params(self) -> tuple[float, ...]:
        raise NotImplementedError

    @property
    def support(self) -> Support:
        return Support(-math.inf, math.inf)

    # --- densities -------------------------------------------------------
    def logpdf(self, x):
        raise NotImplementedError

    def pdf(self, x):
        with np.errstate(under="ignore"):
            return np.exp(self.logpdf(x))

    def cdf(self, x):
        raise NotImplementedError

    def sf(self, x):
        return 1.0 - self.cdf(x)

    def _ppf(self, p):
        raise NotImplementedError

    def _isf(self, q):
        return self._ppf(1.0 - q)

    def quantile(self, p):
        p = np.asarray(p, dtype=float)
        if np.any((p <= 0.0) | (p >= 1.0)) or np.any(np.isnan(p)):
            raise DistributionError("quantile level must lie strictly inside (0, 1)")
        return self.quantile_unchecked(p)

    def quantile_unchecked(self, p):
        """Quantile that maps 0 and 1 to the support ends instead of raising."""
        p = np.asarray(p, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            upper = self._isf(1.0 - p)
            out = np.where(p > 0.5, upper, self._ppf(p))
        out = np.where(p <= 0.0, self.support.lo, out)
        out = np.where(p >= 1.0, self.support.hi, out)
        return out[()] if out.ndim == 0 else out

    def isf(self, q):
        """Inverse survival function, accurate for small upper-tail masses ``q``."""
        q = np.asarray(q, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(q < 0.5, self._isf(q), self._ppf(1.0 - q))
        out = np.where(q <= 0.0, self.support.hi, out)
        out = np.where(q >= 1.0, self.support.lo, out)
        return out[()] if out.ndim == 0 else out

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if n < 1:
            raise DistributionError("sample size must be >= 1")
        return np.asarray(self.quantile_unchecked(rng.random(n)), dtype=float)

    # --- moments ---------------------------------------------------------
    @property
    def mean(self) -> float:
        raise NotImplementedError

    @property
    def variance(self) -> float:
        raise NotImplementedError

    @property
    def std(self) -> float:
        return math.sqrt(self.variance)

    # --- mgf -------------------------------------------------------------
    mgf_domain: tuple[float, float] = (-math.inf, math.inf)

    def _check_mgf_arg(self, t: float) -> None:
        lo, hi = self.mgf_domain
        if not lo < t < hi:
            raise MgfDomainError(
                f"{self.family}: mgf argument {t!r} outside open domain ({lo}, {hi})"
            )

    def log_mgf(self, t: float) -> float:
        self._check_mgf_arg(t)
        return self._log_mgf(t)

    def tilted_mean(self, t: float) -> float:
        """M'(t) / M(t): the mean of the exponentially tilted law."""
        self._check_mgf_arg(t)
        return self._tilted_mean(t)

    def _log_mgf(self, t: float) -> float:
        return _quad_log_mgf(self, t)[0]

    def _tilted_mean(self, t: float) -> float:
        return _quad_log_mgf(self, t)[1]


def _quad_log_mgf(dist: DistributionSpec, t: float) -> tuple[float, float]:
    grid = quadrature.tilted_grid(dist, [t], [_identity])
    return grid.psi, float(grid.expectations([_identity])[0])


def _identity(x):
    return x


@dataclass(frozen=True)
class Normal(DistributionSpec):
    mu: float
    sigma: float
    family = "Normal"

    def __post_init__(self):
        if not self.sigma > 0:
            raise DistributionError(f"Normal: sigma must be > 0, got {self.sigma}")

    @property
    def params(self):
        return (self.mu, self.sigma)

    def logpdf(self, x):
        z = (np.asarray(x, dtype=float) - self.mu) / self.sigma
        return -0.5 * z * z - _LOG_SQRT_2PI - math.log(self.sigma)

    def cdf(self, x):
        return special.ndtr((np.asarray(x, dtype=float) - self.mu) / self.sigma)

    def sf(self, x):
        return special.ndtr((self.mu - np.asarray(x, dtype=float)) / self.sigma)

    def _ppf(self, p):
        return self.mu + self.sigma * special.ndtri(p)

    def _isf(self, q):
        return self.mu - self.sigma * special.ndtri(q)

    def sample(self, rng, n):
        if n < 1:
            raise DistributionError("sample size must be >= 1")
        return self.mu + self.sigma * rng.standard_normal(n)

    @property
    def mean(self):
        return self.mu

    @property
    def variance(self):
        return self.sigma**2

    def _log_mgf(self, t):
        return self.mu * t + 0.5 * (self.sigma * t) ** 2

    def _tilted_mean(self, t):
        return self.mu + self.sigma**2 * t


@dataclass(frozen=True)
class Uniform(DistributionSpec):
    a: float
    b: float
    family = "Uniform"

    def __post_init__(self):
        if not self.a < self.b:
            raise DistributionError(f"Uniform: need a < b, got ({self.a}, {self.b})")

    @property
    def params(self):
        return (self.a, self.b)

    @property
    def support(self):
        return Support(self.a, self.b)

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        return np.where((x >= self.a) & (x <= self.b), -math.log(self.b - self.a), -np.inf)

    def cdf(self, x):
        return np.clip((np.asarray(x, dtype=float) - self.a) / (self.b - self.a), 0.0, 1.0)

    def _ppf(self, p):
        return self.a + (self.b - self.a) * p

    def _isf(self, q):
        return self.b - (self.b - self.a) * q

    @property
    def mean(self):
        return 0.5 * (self.a + self.b)

    @property
    def variance(self):
        return (self.b - self.a) ** 2 / 12.0

    def _log_mgf(self, t):
        # log(sinh(th)/(th)) + t·centre, with h the half width
        h = 0.5 * (self.b - self.a)
        x = abs(t) * h
        if x < 1e-8:
            body = x * x / 6.0
        else:
            body = x + math.log1p(-math.exp(-2.0 * x)) - math.log(2.0 * x)
        return t * self.mean + body

    def _tilted_mean(self, t):
        h = 0.5 * (self.b - self.a)
        return self.mean + h * _langevin(t * h)


def _langevin(x: float) -> float:
    """coth(x) - 1/x, with a series near zero."""
    if abs(x) < 1e-2:
        x2 = x * x
        return x * (1.0 / 3.0 - x2 * (1.0 / 45.0 - x2 * (2.0 / 945.0 - x2 / 4725.0)))
    return 1.0 / math.tanh(x) - 1.0 / x


@dataclass(frozen=True)
class Triangular(DistributionSpec):
    a: float
    c: float
    b: float
    family = "Triangular"

    def __post_init__(self):
        if not (self.a < self.b and self.a <= self.c <= self.b):
            raise DistributionError(
                f"Triangular: need a <= c <= b and a < b, got ({self.a}, {self.c}, {self.b})"
            )

    @property
    def params(self):
        return (self.a, self.c, self.b)

    @property
    def support(self):
        return Support(self.a, self.b)

    @property
    def breakpoints(self):
        return (self.c,)

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        a, b, c = self.a, self.b, self.c
        with np.errstate(divide="ignore", invalid="ignore"):
            left = 2.0 * (x - a) / ((b - a) * (c - a)) if c > a else np.zeros_like(x)
            right = 2.0 * (b - x) / ((b - a) * (b - c)) if b > c else np.zeros_like(x)
            dens = np.where(x < c, left, right)
            if c == a:
                dens = np.where(x == a, 2.0 / (b - a), dens)
            dens = np.where((x < a) | (x > b), 0.0, dens)
            return np.log(dens)

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        a, b, c = self.a, self.b, self.c
        with np.errstate(divide="ignore", invalid="ignore"):
            left = (x - a) ** 2 / ((b - a) * (c - a)) if c > a else np.zeros_like(x)
            right = 1.0 - (b - x) ** 2 / ((b - a) * (b - c)) if b > c else np.ones_like(x)
        out = np.where(x <= c, left, right)
        return np.clip(np.where(x <= a, 0.0, np.where(x >= b, 1.0, out)), 0.0, 1.0)

    def sf(self, x):
        x = np.asarray(x, dtype=float)
        a, b, c = self.a, self.b, self.c
        with np.errstate(divide="ignore", invalid="ignore"):
            left = 1.0 - (x - a) ** 2 / ((b - a) * (c - a)) if c > a else np.ones_like(x)
            right = (b - x) ** 2 / ((b - a) * (b - c)) if b > c else np.zeros_like(x)
        out = np.where(x < c, left, right)
        return np.clip(np.where(x <= a, 1.0, np.where(x >= b, 0.0, out)), 0.0, 1.0)

    def _ppf(self, p):
        a, b, c = self.a, self.b, self.c
        p = np.asarray(p, dtype=float)
        fc = (c - a) / (b - a)
        left = a + np.sqrt(np.clip(p, 0, None) * (b - a) * (c - a))
        right = b - np.sqrt(np.clip(1.0 - p, 0, None) * (b - a) * (b - c))
        return np.where(p < fc, left, right)

    def _isf(self, q):
        a, b, c = self.a, self.b, self.c
        q = np.asarray(q, dtype=float)
        fc = (b - c) / (b - a)
        right = b - np.sqrt(np.clip(q, 0, None) * (b - a) * (b - c))
        left = a + np.sqrt(np.clip(1.0 - q, 0, None) * (b - a) * (c - a))
        return np.where(q <= fc, right, left)

    def sample(self, rng, n):
        if n < 1:
            raise DistributionError("sample size must be >= 1")
        return np.asarray(self._ppf(rng.random(n)), dtype=float)

    @property
    def mean(self):
        return (self.a + self.b + self.c) / 3.0

    @property
    def variance(self):
        a, b, c = self.a, self.b, self.c
        return (a * a + b * b + c * c - a * b - a * c - b * c) / 18.0

    def _closed_form_ok(self, t):
        return self.a < self.c < self.b and abs(t) * (self.b - self.a) > 0.5

    def _scaled_terms(self, t):
        # N(t) = Σ w_k exp(t x_k) = exp(t x*) · Σ w_k exp(t (x_k - x*))
        a, b, c = self.a, self.b, self.c
        nodes = np.array([a, b, c])
        wts = np.array([b - c, c - a, a - b])
        top = b if t > 0 else a
        e = np.exp(t * (nodes - top))
        return top, float(wts @ e), float((wts * nodes) @ e)

    def _log_mgf(self, t):
        if not self._closed_form_ok(t):
            return super()._log_mgf(t)
        a, b, c = self.a, self.b, self.c
        top, n0, _ = self._scaled_terms(t)
        denom = (b - a) * (c - a) * (b - c) * t * t
        return t * top + math.log(2.0 * n0 / denom)

    def _tilted_mean(self, t):
        if not self._closed_form_ok(t):
            return super()._tilted_mean(t)
        _, n0, n1 = self._scaled_terms(t)
        return n1 / n0 - 2.0 / t


@dataclass(frozen=True)
class Gumbel(DistributionSpec):
    """Gumbel law of maxima, location ``mu`` and scale ``beta``."""

    mu: float
    beta: float
    family = "Gumbel"

    def __post_init__(self):
        if not self.beta > 0:
            raise DistributionError(f"Gumbel: beta must be > 0, got {self.beta}")

    @property
    def params(self):
        return (self.mu, self.beta)

    @property
    def mgf_domain(self):
        return (-math.inf, 1.0 / self.beta)

    def logpdf(self, x):
        z = (np.asarray(x, dtype=float) - self.mu) / self.beta
        with np.errstate(over="ignore"):
            return -z - np.exp(-z) - math.log(self.beta)

    def cdf(self, x):
        z = (np.asarray(x, dtype=float) - self.mu) / self.beta
        with np.errstate(over="ignore"):
            return np.exp(-np.exp(-z))

    def sf(self, x):
        z = (np.asarray(x, dtype=float) - self.mu) / self.beta
        with np.errstate(over="ignore"):
            return -np.expm1(-np.exp(-z))

    def _ppf(self, p):
        return self.mu - self.beta * np.log(-np.log(p))

    def _isf(self, q):
        return self.mu - self.beta * np.log(-np.log1p(-np.asarray(q, dtype=float)))

    @property
    def mean(self):
        return self.mu + EULER_GAMMA * self.beta

    @property
    def variance(self):
        return (math.pi * self.beta) ** 2 / 6.0

    def _log_mgf(self, t):
        return self.mu * t + float(special.gammaln(1.0 - self.beta * t))

    def _tilted_mean(self, t):
        return self.mu - self.beta * float(special.digamma(1.0 - self.beta * t))


@dataclass(frozen=True)
class Truncated(DistributionSpec):
    """``parent`` conditioned on ``X >= lower``."""

    parent: DistributionSpec
    lower: float

    def __post_init__(self):
        if not self.lower < self.parent.support.hi:
            raise DistributionError("truncation bound must lie below the upper support limit")
        if not self.parent.sf(self.lower) > 0:
            raise DistributionError("truncation leaves no probability mass")

    @property
    def family(self):
        return "Truncated" + self.parent.family

    @property
    def params(self):
        return (*self.parent.params, self.lower)

    @property
    def support(self):
        return Support(max(self.lower, self.parent.support.lo), self.parent.support.hi)

    @property
    def breakpoints(self):
        return tuple(b for b in self.parent.breakpoints if b > self.lower)

    @property
    def mgf_domain(self):
        return self.parent.mgf_domain

    @property
    def _mass(self) -> float:
        return float(self.parent.sf(self.lower))

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore"):
            return np.where(x >= self.lower, self.parent.logpdf(x) - math.log(self._mass), -np.inf)

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        out = (self.parent.cdf(x) - self.parent.cdf(self.lower)) / self._mass
        return np.clip(np.where(x <= self.lower, 0.0, out), 0.0, 1.0)

    def sf(self, x):
        x = np.asarray(x, dtype=float)
        out = self.parent.sf(x) / self._mass
        return np.clip(np.where(x <= self.lower, 1.0, out), 0.0, 1.0)

    def _ppf(self, p):
        f0 = float(self.parent.cdf(self.lower))
        return np.maximum(self.parent._ppf(f0 + np.asarray(p) * self._mass), self.lower)

    def _isf(self, q):
        return np.maximum(self.parent._isf(np.asarray(q) * self._mass), self.lower)

    @property
    def mean(self):
        return self._moments()[0]

    @property
    def variance(self):
        return self._moments()[1]

    def _moments(self) -> tuple[float, float]:
        if isinstance(self.parent, Normal):
            mu, s = self.parent.mu, self.parent.sigma
            alpha = (self.lower - mu) / s
            mills = _inverse_mills(alpha)
            return mu + s * mills, s * s * (1.0 + alpha * mills - mills * mills)
        m0, s0 = self.parent.mean, self.parent.std
        z = [lambda x: (x - m0) / s0, lambda x: ((x - m0) / s0) ** 2]
        e1, e2 = quadrature.tilted_grid(self, [0.0], [_identity]).expectations(z)
        return m0 + s0 * e1, s0 * s0 * (e2 - e1 * e1)

    def _log_mgf(self, t):
        if isinstance(self.parent, Normal):
            mu, s = self.parent.mu, self.parent.sigma
            shifted = mu + s * s * t
            return (
                self.parent._log_mgf(t)
                + float(special.log_ndtr((shifted - self.lower) / s))
                - float(special.log_ndtr((mu - self.lower) / s))
            )
        m, _ = truncated_mgf_correction(self.parent, self.lower, t)
        if m is None:
            return super()._log_mgf(t)
        return math.log(m)

    def _tilted_mean(self, t):
        if isinstance(self.parent, Normal):
            mu, s = self.parent.mu, self.parent.sigma
            shifted = mu + s * s * t
            return shifted + s * _inverse_mills((self.lower - shifted) / s)
        m, dm = truncated_mgf_correction(self.parent, self.lower, t)
        if m is None:
            return super()._tilted_mean(t)
        return dm / m


def _inverse_mills(alpha: float) -> float:
    """φ(α) / (1 - Φ(α)), evaluated in log space."""
    return math.exp(-0.5 * alpha * alpha - _LOG_SQRT_2PI - float(special.log_ndtr(-alpha)))


# Cancellation guard: if the left tail removes more than this share of M_Y the
# subtraction is no longer accurate and direct quadrature is used instead.
_TAIL_SHARE_LIMIT = 0.5


def truncated_mgf_correction(parent: DistributionSpec, lower: float, t: float):
    """Mgf and derivative of ``parent`` truncated below at ``lower``.

    Uses the parent's closed-form mgf minus the small left-tail integral
    ``∫_{-∞}^{lower} f(y) e^{ty} dy`` (and its ``y``-weighted analogue),
    renormalised by ``1 - F(lower)``.  Heavy right tails never enter a
    quadrature this way.

    Returns ``(M_T, M_T')``, or ``(None, None)`` when the tail dominates the
    parent mgf so that the subtraction would lose accuracy.
    """
    parent._check_mgf_arg(t)
    mass = float(parent.sf(lower))
    log_m = parent._log_mgf(t)
    m_parent = math.exp(log_m)
    dm_parent = m_parent * parent._tilted_mean(t)
    tail0, tail1 = _left_tail_integrals(parent, lower, t)
    if tail0 > _TAIL_SHARE_LIMIT * m_parent:
        return None, None
    return (m_parent - tail0) / mass, (dm_parent - tail1) / mass


def _left_tail_integrals(parent: DistributionSpec, lower: float, t: float) -> tuple[float, float]:
    lo = parent.support.lo
    if not np.isfinite(lo):
        lo = float(parent.quantile(quadrature.CLIP_PROB))
        # extend while the tilted tail is still material
        step = max(lower - lo, parent.std)
        while float(parent.logpdf(lo)) + t * lo > -740.0 and lo > -1e300:
            lo -= step
            step *= 2.0
    if lo >= lower:
        return 0.0, 0.0

    def f0(y):
        with np.errstate(under="ignore", over="ignore"):
            return np.exp(parent.logpdf(y) + t * y)

    breaks = parent.breakpoints
    i0 = quadrature.integrate(f0, lo, lower, breakpoints=breaks, rtol=1e-13)
    i1 = quadrature.integrate(lambda y: y * f0(y), lo, lower, breakpoints=breaks, rtol=1e-13)
    return i0, i1


# --- module-level operations ---------------------------------------------

def eval_pdf(dist: DistributionSpec, x):
    return dist.pdf(x)


def eval_cdf(dist: DistributionSpec, x):
    return dist.cdf(x)


def eval_quantile(dist: DistributionSpec, p):
    return dist.quantile(p)


def draw_samples(dist: DistributionSpec, rng: np.random.Generator, n: int) -> np.ndarray:
    return dist.sample(rng, n)


def mgf_with_derivative(dist: DistributionSpec, t: float) -> tuple[float, float]:
    """Return ``(M(t), M'(t))``.

    Raises :class:`MgfDomainError` outside the mgf domain, e.g. ``t >= 1/β``
    for the Gumbel law.
    """
    m = math.exp(dist.log_mgf(t))
    return m, m * dist.tilted_mean(t)


def central_moments(dist: DistributionSpec) -> tuple[float, float]:
    return dist.mean, dist.variance


# --- literal constructors, as written in study configs --------------------

def normal(mu: float, sigma: float) -> Normal:
    return Normal(float(mu), float(sigma))


def uniform(a: float, b: float) -> Uniform:
    return Uniform(float(a), float(b))


def triangular(a: float, c: float, b: float) -> Triangular:
    return Triangular(float(a), float(c), float(b))


def gumbel(mu: float, beta: float) -> Gumbel:
    return Gumbel(float(mu), float(beta))


def truncnormal(mu: float, sigma: float, lower: float) -> Truncated:
    return Truncated(Normal(float(mu), float(sigma)), float(lower))


def truncgumbel(mu: float, beta: float, lower: float) -> Truncated:
    return Truncated(Gumbel(float(mu), float(beta)), float(lower))


FAMILIES = {
    "normal": normal,
    "uniform": uniform,
    "triangular": triangular,
    "gumbel": gumbel,
    "truncnormal": truncnormal,
    "truncgumbel": truncgumbel,
}


def to_literal(dist: DistributionSpec) -> str:
    """Inverse of :func:`parse_literal`."""
    names = {
        "Normal": "normal",
        "Uniform": "uniform",
        "Triangular": "triangular",
        "Gumbel": "gumbel",
        "TruncatedNormal": "truncnormal",
        "TruncatedGumbel": "truncgumbel",
    }
    args = ", ".join(repr(float(p)) for p in dist.params)
    return f"{names[dist.family]}({args})"


def parse_literal(text: str) -> DistributionSpec:
    """Parse ``name(arg, ...)`` into a distribution, e.g. ``gumbel(1013, 558)``."""
    text = text.strip()
    name, sep, rest = text.partition("(")
    name = name.strip().lower()
    if not sep or not rest.endswith(")"):
        raise DistributionError(f"malformed distribution literal {text!r}")
    if name not in FAMILIES:
        raise DistributionError(f"unknown distribution family {name!r}")
    body = rest[:-1].strip()
    try:
        args: Sequence[float] = [float(s) for s in body.split(",")] if body else []
    except ValueError as exc:
        raise DistributionError(f"non-numeric argument in {text!r}") from exc
    try:
        return FAMILIES[name](*args)
    except TypeError as exc:
        raise DistributionError(f"wrong number of arguments in {text!r}") from exc
