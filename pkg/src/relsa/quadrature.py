"""Composite Simpson quadrature and log-stabilised tilted integrals.

The integrals needed by the perturbation solvers all have the form

    I = ∫ f(x) exp(Σ_k λ_k g_k(x)) h(x) dx

over the support of a one-dimensional density ``f``.  They are evaluated on
a panel grid (panels split at kinks and truncation points) with a fixed
number of Simpson nodes per panel that is doubled until two successive
resolutions agree.  The exponent is shifted by its maximum on the grid so
that large tilts neither overflow nor underflow.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

DEFAULT_POINTS = 2049
MAX_POINTS = 2**16 + 1
CLIP_PROB = 1e-10
# Tilted integrand below exp(-TAIL_LOG_DROP) of its peak is treated as negligible.
TAIL_LOG_DROP = 46.0


class DomainError(ValueError):
    """Raised when a tilted integral diverges (λ outside Dom ψ)."""


def simpson_weights(n: int, h: float) -> np.ndarray:
    """Composite Simpson weights for ``n`` (odd) equally spaced nodes."""
    if n < 3 or n % 2 == 0:
        raise ValueError(f"Simpson's rule needs an odd number >= 3 of nodes, got {n}")
    w = np.ones(n)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w * (h / 3.0)


def simpson(y: np.ndarray, x: np.ndarray) -> float:
    """Composite Simpson rule on an equally spaced odd-length grid."""
    h = (x[-1] - x[0]) / (len(x) - 1)
    return float(simpson_weights(len(x), h) @ y)


def integrate(
    fn: Callable[[np.ndarray], np.ndarray],
    lo: float,
    hi: float,
    *,
    breakpoints: Sequence[float] = (),
    n: int = DEFAULT_POINTS,
    rtol: float = 1e-12,
) -> float:
    """Integrate a vectorised ``fn`` over the finite interval [lo, hi].

    Each panel between consecutive breakpoints receives ``n`` Simpson nodes;
    ``n`` is doubled (to at most ``MAX_POINTS``) until the estimate changes by
    less than ``rtol`` relative.
    """
    if not (np.isfinite(lo) and np.isfinite(hi)):
        raise ValueError("integrate() needs a finite interval")
    if hi <= lo:
        return 0.0
    edges = _panel_edges(lo, hi, breakpoints)
    prev = None
    while True:
        total = 0.0
        for a, b in zip(edges[:-1], edges[1:]):
            x = np.linspace(a, b, n)
            total += simpson(np.asarray(fn(x), dtype=float), x)
        if prev is not None and abs(total - prev) <= rtol * max(abs(total), 1e-300):
            return total
        if n >= MAX_POINTS:
            return total
        prev = total
        n = 2 * n - 1


def _panel_edges(lo: float, hi: float, breakpoints: Sequence[float]) -> list[float]:
    inner = sorted(b for b in breakpoints if lo < b < hi)
    return [lo, *inner, hi]


@dataclass(frozen=True)
class TiltedGrid:
    """Quadrature nodes for a tilted density.

    ``log_weights`` holds ``log(simpson weight) + log f(x) + Σλg(x) - shift``
    so that ``exp(log_weights)`` sums to ``exp(ψ - shift)``.
    """

    x: np.ndarray
    log_weights: np.ndarray
    shift: float

    @property
    def psi(self) -> float:
        return self.shift + float(np.log(np.exp(self.log_weights).sum()))

    def expectations(self, fns: Sequence[Callable[[np.ndarray], np.ndarray]]) -> np.ndarray:
        """Expectations of ``fns`` under the normalised tilted density."""
        p = np.exp(self.log_weights)
        p /= p.sum()
        return np.array([float(p @ f(self.x)) for f in fns])


def _exponent(dist, lambdas: np.ndarray, basis, x: np.ndarray, keep_nan: bool = False) -> np.ndarray:
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        e = dist.logpdf(x)
        for lam, g in zip(lambdas, basis):
            if lam != 0.0:
                e = e + lam * g(x)
    return e if keep_nan else np.where(np.isnan(e), -np.inf, e)


def effective_range(dist, lambdas: np.ndarray, basis) -> tuple[float, float]:
    """Finite interval carrying all but a negligible part of the tilted mass.

    Infinite support ends start at the parent quantiles ``CLIP_PROB`` and
    ``1 - CLIP_PROB`` and are pushed outward while the tilted integrand at the
    edge is still within ``TAIL_LOG_DROP`` of its peak.  An integrand that
    never decays signals a divergent normaliser.
    """
    lo, hi = dist.support.lo, dist.support.hi
    a = lo if np.isfinite(lo) else float(dist.quantile(CLIP_PROB))
    b = hi if np.isfinite(hi) else float(dist.quantile(1.0 - CLIP_PROB))
    for _ in range(80):
        x = np.linspace(a, b, 513)
        raw = _exponent(dist, lambdas, basis, x, keep_nan=True)
        # inf - inf at an open end means the tilt outgrows the density
        if (not np.isfinite(lo) and not raw[0] < np.inf) or (not np.isfinite(hi) and not raw[-1] < np.inf):
            raise DomainError("tilted integrand does not decay: normaliser diverges")
        e = np.where(np.isnan(raw), -np.inf, raw)
        peak = float(np.max(e))
        if not np.isfinite(peak):
            raise DomainError("tilted integrand is not finite on the support")
        # the absolute drop can vanish in rounding when |peak| is huge
        cut = peak - max(TAIL_LOG_DROP, 1e-12 * abs(peak))
        grow_lo = not np.isfinite(lo) and (e[0] > cut or e[0] == peak)
        grow_hi = not np.isfinite(hi) and (e[-1] > cut or e[-1] == peak)
        if not (grow_lo or grow_hi):
            return a, b
        width = b - a
        if grow_lo:
            a -= width
        if grow_hi:
            b += width
        if max(abs(a), abs(b)) > 1e300:
            break
    raise DomainError("tilted integrand does not decay: normaliser diverges")


def tilted_grid(
    dist,
    lambdas: Sequence[float],
    basis: Sequence[Callable[[np.ndarray], np.ndarray]],
    *,
    n: int = DEFAULT_POINTS,
    rtol: float = 1e-13,
) -> TiltedGrid:
    """Build an adaptively refined Simpson grid for ``f·exp(Σλg)``."""
    lambdas = np.asarray(lambdas, dtype=float)
    a, b = effective_range(dist, lambdas, basis)
    edges = _panel_edges(a, b, getattr(dist, "breakpoints", ()))
    prev = None
    while True:
        xs, logw = [], []
        for lo, hi in zip(edges[:-1], edges[1:]):
            x = np.linspace(lo, hi, n)
            w = simpson_weights(n, (hi - lo) / (n - 1))
            xs.append(x)
            logw.append(np.log(w) + _exponent(dist, lambdas, basis, x))
        x = np.concatenate(xs)
        lw = np.concatenate(logw)
        shift = float(np.max(lw))
        if not np.isfinite(shift):
            raise DomainError("tilted integrand vanishes on the grid")
        grid = TiltedGrid(x, lw - shift, shift)
        psi = grid.psi
        if prev is not None and abs(psi - prev) <= rtol * max(1.0, abs(psi)):
            return grid
        if n >= MAX_POINTS:
            return grid
        prev = psi
        n = 2 * n - 1
