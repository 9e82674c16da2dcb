"""Exact draws from the one-dimensional conditionals pi(x_i | x_{-i}).

For a target with constants (mu, L) the restriction g(t) = f(x with x_i = t)
is mu-strongly convex and L-smooth, so a Gaussian centred at the minimiser of
g with variance 1/mu dominates exp(-g) after shifting by g(t*). Rejection
against it accepts with probability at least 1/sqrt(kappa).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .numerics import adaptive_panels, gauss_legendre, monotone_root
from .targets import TargetDensity

__all__ = [
    "ConditionalSlice", "RejectionCapError", "make_slice", "slice_from_function",
    "sample_exact_gaussian", "gaussian_conditional", "sample_rejection",
    "sample_rejection_batch", "cdf_by_quadrature", "fiber_masses",
    "fiber_transition_probability", "TRUNCATION_SIGMAS",
]

# truncation half-width in units of 1/sqrt(mu); Gaussian tail beyond is < e^-72
TRUNCATION_SIGMAS = 12.0


class RejectionCapError(RuntimeError):
    """Too many rejected proposals: the declared (mu, L) are likely wrong."""


@dataclass(frozen=True)
class ConditionalSlice:
    g_eval: Callable[[np.ndarray], np.ndarray]
    g_prime: Callable[[np.ndarray], np.ndarray]
    minimizer: float
    mu: float
    lipschitz: float
    g_min: float

    @property
    def kappa(self) -> float:
        return self.lipschitz / self.mu

    def window(self) -> tuple[float, float]:
        half = TRUNCATION_SIGMAS / math.sqrt(self.mu)
        return self.minimizer - half, self.minimizer + half

    def unnormalized(self, t):
        """exp(-(g(t) - g(t*))), the density up to a constant."""
        return np.exp(-(self.g_eval(np.asarray(t, dtype=float)) - self.g_min))


def slice_from_function(g, g_prime, mu: float, lipschitz: float,
                        t0: float = 0.0) -> ConditionalSlice:
    """Slice built from a bare 1-D function; ``g`` and ``g_prime`` must be vectorised."""
    t_star = monotone_root(lambda t: float(g_prime(np.array(t))), t0, mu, lipschitz)
    return ConditionalSlice(g, g_prime, t_star, float(mu), float(lipschitz),
                            float(g(np.array(t_star))))


def make_slice(target: TargetDensity, x, i: int) -> ConditionalSlice:
    """Restrict ``target`` to the line through ``x`` along coordinate ``i``."""
    n = target.dim
    if not 0 <= i < n:
        raise IndexError(f"coordinate {i} out of range for dimension {n}")
    base = np.array(x, dtype=float)
    if base.shape != (n,):
        raise ValueError(f"point has shape {base.shape}, expected ({n},)")
    base.setflags(write=False)

    def _points(t):
        t = np.asarray(t, dtype=float)
        pts = np.broadcast_to(base, t.shape + (n,)).copy()
        pts[..., i] = t
        return pts

    def g(t):
        return target.f_eval(_points(t))

    def gp(t):
        return np.asarray(target.grad_eval(_points(t)))[..., i]

    d0 = float(np.asarray(target.grad_eval(base))[i])
    t_star = monotone_root(lambda t: float(gp(np.array(t))), base[i], target.mu,
                           target.lipschitz, d0=d0)
    return ConditionalSlice(g, gp, t_star, target.mu, target.lipschitz,
                            float(g(np.array(t_star))))


def gaussian_conditional(precision, mean, x, i: int) -> tuple[float, float]:
    """Mean and variance of x_i given the other coordinates."""
    P = np.asarray(precision, dtype=float)
    d = np.asarray(x, dtype=float) - np.asarray(mean, dtype=float)
    lam = P[i, i]
    cross = float(P[i] @ d - lam * d[i])
    return float(mean[i]) - cross / lam, 1.0 / lam


def sample_exact_gaussian(precision, mean, x, i: int, rng: np.random.Generator) -> float:
    """One draw from the Gaussian conditional; consumes one standard normal."""
    m, v = gaussian_conditional(precision, mean, x, i)
    return m + math.sqrt(v) * float(rng.standard_normal())


def _default_cap(slc: ConditionalSlice) -> int:
    return int(math.ceil(200.0 * math.sqrt(slc.kappa)))


def sample_rejection(slc: ConditionalSlice, rng: np.random.Generator,
                     max_proposals: int | None = None) -> tuple[float, int]:
    """Exact draw from exp(-g) by rejection from Normal(t*, 1/mu).

    Each proposal consumes one standard normal and one uniform from ``rng``.
    Returns the accepted value and the number of proposals used.
    """
    cap = _default_cap(slc) if max_proposals is None else int(max_proposals)
    sd = 1.0 / math.sqrt(slc.mu)
    half_mu = 0.5 * slc.mu
    for k in range(1, cap + 1):
        z = float(rng.standard_normal())
        u = float(rng.random())
        t = slc.minimizer + sd * z
        excess = float(slc.g_eval(np.array(t))) - slc.g_min - half_mu * (sd * z) ** 2
        log_u = math.log(u) if u > 0.0 else -math.inf
        if log_u < -excess:
            return t, k
    raise RejectionCapError(
        f"no acceptance in {cap} proposals (kappa={slc.kappa:g}); "
        "the target likely violates its declared mu or lipschitz")


def sample_rejection_batch(slc: ConditionalSlice, size: int, rng: np.random.Generator,
                           block: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """``size`` independent rejection draws, proposals generated in blocks.

    Returns the accepted values and the number of proposals each one used.
    """
    sd = 1.0 / math.sqrt(slc.mu)
    block = block or max(1024, int(1.5 * math.sqrt(slc.kappa) * size))
    values = np.empty(size)
    counts = np.empty(size, dtype=np.int64)
    filled = 0
    run = 0  # proposals spent on the current, not yet accepted, draw
    while filled < size:
        z = rng.standard_normal(block)
        u = rng.random(block)
        t = slc.minimizer + sd * z
        excess = slc.g_eval(t) - slc.g_min - 0.5 * slc.mu * (sd * z) ** 2
        acc = np.flatnonzero(np.log(u) < -excess)
        take = acc[: size - filled]
        if len(take):
            gaps = np.diff(np.concatenate([[-1], take]))
            gaps[0] += run
            values[filled:filled + len(take)] = t[take]
            counts[filled:filled + len(take)] = gaps
            filled += len(take)
            run = block - 1 - take[-1]
        else:
            run += block
    return values, counts


def _panels(slc: ConditionalSlice, extra=()):
    lo, hi = slc.window()
    pts = [lo, slc.minimizer, hi]
    pts += [p for p in extra if lo < p < hi]
    edges = np.unique(np.array(pts, dtype=float))
    return edges, adaptive_panels(slc.unnormalized, edges, rtol=1e-12)


def _partial(slc: ConditionalSlice, a: np.ndarray, b: np.ndarray, order: int = 10):
    # Gauss-Legendre integral of the density over [a, b] (inside one accepted panel)
    x, w = gauss_legendre(order)
    mid = 0.5 * (a + b)
    half = 0.5 * (b - a)
    pts = mid[:, None] + half[:, None] * x
    return half * (slc.unnormalized(pts) @ w)


def cdf_by_quadrature(slc: ConditionalSlice, t):
    """P(T <= t) for T with density proportional to exp(-g).

    Vectorised over ``t``. Mass beyond t* +- 12/sqrt(mu) is ignored.
    """
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    _, (lo, hi, val, _) = _panels(slc)
    total = val.sum()
    cum = np.concatenate([[0.0], np.cumsum(val)])
    tc = np.clip(t_arr, lo[0], hi[-1])
    k = np.clip(np.searchsorted(lo, tc, side="right") - 1, 0, len(lo) - 1)
    part = _partial(slc, lo[k], tc)
    out = np.clip((cum[k] + part) / total, 0.0, 1.0)
    out = np.where(t_arr >= hi[-1], 1.0, np.where(t_arr <= lo[0], 0.0, out))
    return out if np.ndim(t) else float(out[0])


def fiber_masses(slc: ConditionalSlice, edges) -> np.ndarray:
    """Conditional probabilities of consecutive intervals ``[edges[j], edges[j+1]]``.

    ``edges`` must be nondecreasing and may include +-inf.
    """
    edges = np.asarray(edges, dtype=float)
    if np.any(np.diff(edges) < 0):
        raise ValueError("edges must be nondecreasing")
    w_lo, w_hi = slc.window()
    grid, (lo, hi, val, pid) = _panels(slc, extra=edges[np.isfinite(edges)])
    total = val.sum()
    piece_mass = np.bincount(pid, weights=val, minlength=len(grid) - 1)
    cum = np.concatenate([[0.0], np.cumsum(piece_mass)])
    # every finite edge inside the window is a grid point, so masses are differences
    e = np.clip(edges, w_lo, w_hi)
    pos = np.searchsorted(grid, e)
    return np.diff(cum[pos]) / total


def _intervals(intervals) -> np.ndarray:
    arr = np.asarray(intervals, dtype=float).reshape(-1, 2)
    if np.any(arr[:, 1] < arr[:, 0]):
        raise ValueError("interval with upper end below lower end")
    arr = arr[np.argsort(arr[:, 0], kind="stable")]
    if len(arr) > 1 and np.any(arr[1:, 0] < arr[:-1, 1]):
        raise ValueError("intervals overlap; pass a disjoint union")
    return arr


def fiber_transition_probability(target: TargetDensity, x, i: int,
                                 intervals: Sequence[tuple[float, float]],
                                 slc: ConditionalSlice | None = None) -> float:
    """Conditional mass of a finite union of disjoint intervals on the
    coordinate line through ``x`` along axis ``i``."""
    arr = _intervals(intervals)
    if len(arr) == 0:
        return 0.0
    slc = make_slice(target, x, i) if slc is None else slc
    edges = arr.ravel()
    masses = fiber_masses(slc, edges)
    return float(np.clip(masses[0::2].sum(), 0.0, 1.0))
