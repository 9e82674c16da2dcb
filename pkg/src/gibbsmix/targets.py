"""Strongly log-concave, log-smooth targets pi(x) proportional to exp(-f(x)).

All ``f_eval``/``grad_eval`` callables are vectorised over leading axes: a
point batch of shape ``(..., n)`` maps to values of shape ``(...)`` and
gradients of shape ``(..., n)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.stats import special_ortho_group

from .numerics import integrate_pieces, monotone_root

__all__ = [
    "TargetDensity", "Piece", "ConvexityReport", "ModeNotFoundError",
    "make_gaussian", "make_separable", "make_target", "make_perturbed_gaussian",
    "make_two_point_gaussian", "quadratic_piece", "logcosh_piece", "find_mode",
    "check_convexity_smoothness", "numerical_log_normalizer",
]


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class TargetDensity:
    """Unnormalised density exp(-f) with declared constants (mu, L).

    ``precision``/``mean`` are set only for Gaussian targets; samplers use
    them for the closed-form conditional path.
    """

    f_eval: Callable[[np.ndarray], np.ndarray]
    grad_eval: Callable[[np.ndarray], np.ndarray]
    mu: float
    lipschitz: float
    dim: int
    mode: np.ndarray
    log_normalizer: float | None = None
    family: str = "custom"
    params: dict = field(default_factory=dict)
    precision: np.ndarray | None = None
    mean: np.ndarray | None = None

    def __post_init__(self):
        if not (self.mu > 0):
            raise ValueError(f"strong-convexity constant must be positive, got {self.mu}")
        if self.lipschitz < self.mu:
            raise ValueError(f"lipschitz={self.lipschitz} is smaller than mu={self.mu}")
        object.__setattr__(self, "mode", _frozen(self.mode))
        if self.mode.shape != (self.dim,):
            raise ValueError(f"mode has shape {self.mode.shape}, expected ({self.dim},)")

    @property
    def kappa(self) -> float:
        return self.lipschitz / self.mu

    @property
    def is_gaussian(self) -> bool:
        return self.precision is not None

    def log_density(self, x) -> np.ndarray:
        """Normalised log-density; requires a known or computed log Z."""
        if self.log_normalizer is None:
            raise ValueError("log normalizer unknown for this target")
        return -self.f_eval(np.asarray(x, dtype=float)) - self.log_normalizer

    def describe(self) -> dict:
        return {"family": self.family, "dim": self.dim, "mu": self.mu,
                "lipschitz": self.lipschitz, **self.params}


class ModeNotFoundError(RuntimeError):
    def __init__(self, message, best, grad_norm):
        super().__init__(message)
        self.best = best
        self.grad_norm = grad_norm


def find_mode(target_or_grad, lipschitz: float | None = None, dim: int | None = None,
              x0=None, tol: float | None = None, max_iter: int = 200_000) -> np.ndarray:
    """Minimise f by gradient descent with step 1/L.

    Accepts a :class:`TargetDensity` (its stored mode is ignored) or a bare
    gradient callable together with ``lipschitz`` and ``dim``. The default
    tolerance is ``1e-10 * sqrt(n)`` on the gradient norm.
    """
    if isinstance(target_or_grad, TargetDensity):
        grad = target_or_grad.grad_eval
        lipschitz = target_or_grad.lipschitz
        dim = target_or_grad.dim
    else:
        grad = target_or_grad
        if lipschitz is None or dim is None:
            raise ValueError("lipschitz and dim are required with a bare gradient")
    x = np.zeros(dim) if x0 is None else np.array(x0, dtype=float)
    tol = 1e-10 * math.sqrt(dim) if tol is None else tol
    best, best_norm = x.copy(), np.inf
    for _ in range(max_iter):
        g = np.asarray(grad(x), dtype=float)
        gn = float(np.linalg.norm(g))
        if gn < best_norm:
            best, best_norm = x.copy(), gn
        if gn <= tol:
            return x
        x = x - g / lipschitz
    raise ModeNotFoundError(
        f"gradient descent did not reach |grad f| <= {tol:g} in {max_iter} iterations "
        f"(best {best_norm:.3e})", best, best_norm)


def make_target(f_eval, grad_eval, mu: float, lipschitz: float, dim: int,
                mode=None, log_normalizer=None, family="custom", params=None) -> TargetDensity:
    """Wrap user-supplied f and grad f; the mode is found numerically if absent."""
    if mode is None:
        mode = find_mode(grad_eval, lipschitz=lipschitz, dim=dim)
    return TargetDensity(f_eval, grad_eval, float(mu), float(lipschitz), int(dim),
                         mode, log_normalizer, family, dict(params or {}))


def _check_precision(precision) -> tuple[np.ndarray, np.ndarray]:
    P = np.array(precision, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise ValueError(f"precision must be square, got shape {P.shape}")
    scale = max(1.0, float(np.max(np.abs(P))))
    asym = float(np.max(np.abs(P - P.T)))
    if asym > 1e-12 * scale:
        raise ValueError(f"precision is not symmetric (max |P - P^T| = {asym:.3e})")
    P = 0.5 * (P + P.T)
    eig = np.linalg.eigvalsh(P)
    if eig[0] <= 0:
        raise ValueError(f"precision is not positive definite: eigenvalue {eig[0]!r} <= 0")
    return P, eig


def make_gaussian(precision, mean=None, family: str = "gaussian",
                  params: dict | None = None) -> TargetDensity:
    """Gaussian target f(x) = (x - m)^T P (x - m) / 2."""
    P, eig = _check_precision(precision)
    n = P.shape[0]
    m = np.zeros(n) if mean is None else np.array(mean, dtype=float)
    if m.shape != (n,):
        raise ValueError(f"mean has shape {m.shape}, expected ({n},)")
    P = _frozen(P)
    m = _frozen(m)

    def f(x):
        d = np.asarray(x, dtype=float) - m
        return 0.5 * np.einsum("...i,ij,...j->...", d, P, d)

    def grad(x):
        return (np.asarray(x, dtype=float) - m) @ P

    _, logdet = np.linalg.slogdet(P)
    log_z = 0.5 * n * math.log(2 * math.pi) - 0.5 * logdet
    desc = {"precision": P.tolist(), "mean": m.tolist()}
    if params:
        desc = dict(params)
    return TargetDensity(f, grad, float(eig[0]), float(eig[-1]), n, m, log_z,
                         family, desc, precision=P, mean=m)


def make_two_point_gaussian(n: int, mu: float = 1.0, kappa: float = 1.0,
                            rotation_seed: int = 0) -> TargetDensity:
    """Gaussian whose precision has eigenvalue mu on the first n//2 axes and
    kappa * mu on the rest, rotated by a seeded uniform orthogonal map."""
    lam = np.full(n, float(mu))
    lam[n // 2:] = kappa * mu
    if n >= 2:
        rng = np.random.Generator(np.random.PCG64(rotation_seed))
        Q = special_ortho_group.rvs(n, random_state=rng)
    else:
        Q = np.eye(1)
    P = (Q * lam) @ Q.T
    P = 0.5 * (P + P.T)
    return make_gaussian(P, np.zeros(n), family="two_point",
                         params={"n": n, "mu": mu, "kappa": kappa,
                                 "rotation_seed": rotation_seed})


@dataclass(frozen=True)
class Piece:
    """One-dimensional convex summand with curvature in [mu, lipschitz]."""

    f: Callable[[np.ndarray], np.ndarray]
    df: Callable[[np.ndarray], np.ndarray]
    mu: float
    lipschitz: float | None
    name: str = "custom"
    minimizer: float | None = None


def _log_cosh(t):
    a = np.abs(t)
    return a + np.log1p(np.exp(-2.0 * a)) - math.log(2.0)


def quadratic_piece(curvature: float = 1.0, center: float = 0.0) -> Piece:
    c = float(curvature)
    return Piece(lambda t: 0.5 * c * (t - center) ** 2, lambda t: c * (t - center),
                 c, c, name=f"quadratic({c:g})", minimizer=float(center))


def logcosh_piece(weight: float = 1.0) -> Piece:
    """t^2/2 + w log cosh t; curvature 1 + w sech^2 t lies in [1, 1 + w]."""
    w = float(weight)
    return Piece(lambda t: 0.5 * t * t + w * _log_cosh(t),
                 lambda t: t + w * np.tanh(t), 1.0, 1.0 + w,
                 name="logcosh" if w == 1.0 else f"logcosh({w:g})", minimizer=0.0)


PIECES = {"quadratic": quadratic_piece, "logcosh": logcosh_piece}


def _piece_log_normalizer(p: Piece, t_star: float) -> float:
    half = 12.0 / math.sqrt(p.mu)
    f0 = float(p.f(np.array(t_star)))
    mass = integrate_pieces(lambda t: np.exp(-(p.f(t) - f0)),
                            [t_star - half, t_star, t_star + half]).sum()
    return -f0 + math.log(mass)


def make_separable(pieces: Sequence[Piece]) -> TargetDensity:
    """Product target f(x) = sum_i piece_i(x_i)."""
    pieces = list(pieces)
    if not pieces:
        raise ValueError("need at least one piece")
    for k, p in enumerate(pieces):
        if not (p.mu > 0):
            raise ValueError(f"piece {k} ({p.name}) has mu={p.mu}; must be positive")
        if p.lipschitz is None or not math.isfinite(p.lipschitz):
            raise ValueError(f"piece {k} ({p.name}) has no finite curvature bound; "
                             "supply a valid lipschitz constant")
        if p.lipschitz < p.mu:
            raise ValueError(f"piece {k} ({p.name}) has lipschitz < mu")
    n = len(pieces)
    mode = []
    for p in pieces:
        if p.minimizer is not None:
            mode.append(p.minimizer)
        else:
            mode.append(monotone_root(lambda t, p=p: float(p.df(np.array(t))), 0.0,
                                      p.mu, p.lipschitz))
    mode = np.array(mode)

    def f(x):
        x = np.asarray(x, dtype=float)
        return sum(p.f(x[..., k]) for k, p in enumerate(pieces))

    def grad(x):
        x = np.asarray(x, dtype=float)
        return np.stack([p.df(x[..., k]) for k, p in enumerate(pieces)], axis=-1)

    log_z = sum(_piece_log_normalizer(p, t) for p, t in zip(pieces, mode))
    return TargetDensity(f, grad, min(p.mu for p in pieces),
                         max(p.lipschitz for p in pieces), n, mode, log_z,
                         "separable", {"pieces": [p.name for p in pieces]})


def make_perturbed_gaussian(precision, mean=None, weight: float = 1.0) -> TargetDensity:
    """Coupled non-Gaussian target: Gaussian plus w * sum_i log cosh(x_i).

    The mode is not known in closed form and is located numerically.
    """
    P, eig = _check_precision(precision)
    n = P.shape[0]
    m = np.zeros(n) if mean is None else np.array(mean, dtype=float)
    w = float(weight)
    P, m = _frozen(P), _frozen(m)

    def f(x):
        x = np.asarray(x, dtype=float)
        d = x - m
        return 0.5 * np.einsum("...i,ij,...j->...", d, P, d) + w * _log_cosh(x).sum(axis=-1)

    def grad(x):
        x = np.asarray(x, dtype=float)
        return (x - m) @ P + w * np.tanh(x)

    return make_target(f, grad, float(eig[0]), float(eig[-1]) + w, n,
                       family="perturbed_gaussian",
                       params={"precision": P.tolist(), "mean": m.tolist(), "weight": w})


def numerical_log_normalizer(target: TargetDensity, panels: int = 16, order: int = 8) -> float:
    """log Z by tensor Gauss-Legendre quadrature over mode +- 12/sqrt(mu); dim <= 3."""
    from .numerics import composite_rule
    n = target.dim
    if n > 3:
        raise ValueError("tensor quadrature of Z is limited to dim <= 3")
    half = 12.0 / math.sqrt(target.mu)
    f0 = float(target.f_eval(target.mode))
    axes = []
    for k in range(n):
        x, w = composite_rule(target.mode[k] - half, target.mode[k] + half, panels, order)
        axes.append((x, w))
    grids = np.meshgrid(*[a[0] for a in axes], indexing="ij")
    pts = np.stack(grids, axis=-1)
    wts = np.ones(pts.shape[:-1])
    for k, (_, w) in enumerate(axes):
        shape = [1] * n
        shape[k] = len(w)
        wts = wts * w.reshape(shape)
    mass = float(np.sum(wts * np.exp(-(target.f_eval(pts) - f0))))
    return -f0 + math.log(mass)


@dataclass
class ConvexityReport:
    n_pairs: int
    min_ratio: float
    max_ratio: float
    mu: float
    lipschitz: float
    ratios_ok: bool
    grad_max_rel_error: float
    grad_ok: bool

    @property
    def ok(self) -> bool:
        return self.ratios_ok and self.grad_ok


def check_convexity_smoothness(target: TargetDensity, n_pairs: int = 1000,
                               rng_seed: int = 0, tol: float | None = None,
                               n_grad_points: int = 100,
                               grad_tol: float = 1e-5) -> ConvexityReport:
    """Sample-based check of the two quadratic bounds on f and of grad f.

    Pairs come from a Gaussian cloud of scale 3/sqrt(mu) around the mode. The
    normalised Bregman ratio 2 (f(y) - f(x) - <grad f(x), y - x>) / |x - y|^2
    must lie in [mu, L] up to ``tol * L``. Violations are reported, not raised.
    """
    if n_pairs < 1:
        raise ValueError("n_pairs must be >= 1")
    if tol is None:
        tol = 1e-8 if target.is_gaussian else 1e-6
    rng = np.random.default_rng(rng_seed)
    n = target.dim
    scale = 3.0 / math.sqrt(target.mu)
    x = target.mode + scale * rng.standard_normal((n_pairs, n))
    y = target.mode + scale * rng.standard_normal((n_pairs, n))
    d = y - x
    breg = target.f_eval(y) - target.f_eval(x) - np.einsum("ij,ij->i", target.grad_eval(x), d)
    ratio = 2.0 * breg / np.einsum("ij,ij->i", d, d)
    lo, hi = float(ratio.min()), float(ratio.max())
    slack = tol * target.lipschitz
    ratios_ok = lo >= target.mu - slack and hi <= target.lipschitz + slack

    pts = target.mode + scale * rng.standard_normal((n_grad_points, n))
    worst = 0.0
    for p in pts:
        h = 1e-5 * (1.0 + np.linalg.norm(p))
        e = np.eye(n) * h
        fd = (target.f_eval(p + e) - target.f_eval(p - e)) / (2 * h)
        g = np.asarray(target.grad_eval(p))
        worst = max(worst, float(np.linalg.norm(fd - g) / max(np.linalg.norm(g), 1.0)))
    return ConvexityReport(n_pairs, lo, hi, target.mu, target.lipschitz, ratios_ok,
                           worst, worst <= grad_tol)
