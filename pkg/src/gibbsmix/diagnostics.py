"""Convergence measurements: histogram TV, mixing-time estimation, warmness of
Gaussian starts, effective sample size and the Kolmogorov-Smirnov statistic."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import bounds
from .chain import ChainConfig, GaussianLaw, gaussian_law_step, kl_to_target, simulate_ensemble
from .isoperimetry import Grid, box_grid
from .targets import TargetDensity

__all__ = [
    "MixingEstimate", "CRITERIA", "reference_grid", "histogram_tv", "histogram_tv_masses",
    "moment_discrepancy", "fitted_gaussian_kl", "estimate_mixing_time",
    "warmness_underdispersed_gaussian", "numerical_warmness", "ess_autocorrelation",
    "ks_statistic", "coupon_collector_bound",
]

CRITERIA = ("histogram_tv", "gaussian_kl", "moment_match")
TV_COVERAGE = 1e-6


# ---------------------------------------------------------------- total variation

def reference_grid(target: TargetDensity, bins: int = 40, extent=None) -> Grid:
    """Histogram cells with Pi-masses; the default extent covers the ball of
    mass >= 1 - 1e-6 around the mode."""
    n = target.dim
    if n > 2:
        raise ValueError("histogram TV is limited to dim <= 2")
    if extent is None:
        half = bounds.radius_r(TV_COVERAGE, max(n, 2)) * math.sqrt(n / target.mu)
        lo, hi = target.mode - half, target.mode + half
    else:
        lo, hi = (np.asarray(e, dtype=float).reshape(n) for e in extent)
    return box_grid(lo, hi, bins, target)


def histogram_tv_masses(p_cells, p_out: float, grid: Grid) -> float:
    """Binned TV between a law given by its cell masses and the grid's target masses.

    The region outside the grid counts as one more cell.
    """
    p = np.asarray(p_cells, dtype=float).reshape(grid.shape)
    q = grid.cell_measures
    q_out = max(0.0, 1.0 - float(q.sum()))
    return 0.5 * (float(np.abs(p - q).sum()) + abs(float(p_out) - q_out))


def histogram_tv(samples, target: TargetDensity, bins: int = 40, extent=None,
                 grid: Grid | None = None) -> float:
    """Binned TV between the empirical law of ``samples`` and the target.

    This is the TV restricted to the histogram sigma-algebra, hence a lower
    bound on the true TV up to Monte Carlo noise.
    """
    x = np.asarray(samples, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] == 0:
        raise ValueError("no samples")
    grid = grid or reference_grid(target, bins, extent)
    if x.shape[1] != grid.dim:
        raise ValueError("sample dimension does not match the target")
    counts, _ = np.histogramdd(x, bins=grid.edges)
    p = counts / x.shape[0]
    return histogram_tv_masses(p, 1.0 - float(p.sum()), grid)


# ---------------------------------------------------------------- convergence criteria

def _target_moments(target: TargetDensity):
    if not target.is_gaussian:
        raise ValueError("moment and KL criteria need a Gaussian target")
    return np.asarray(target.mean, dtype=float), np.linalg.inv(target.precision)


def moment_discrepancy(X: np.ndarray, target: TargetDensity) -> tuple[float, float]:
    """(whitened mean norm, relative Frobenius error of the whitened covariance)."""
    mean, cov = _target_moments(target)
    L = np.linalg.cholesky(cov)
    Z = np.linalg.solve(L, (X - mean).T).T
    n = X.shape[1]
    m = Z.mean(axis=0)
    C = np.cov(Z, rowvar=False).reshape(n, n)
    return float(np.linalg.norm(m)), float(np.linalg.norm(C - np.eye(n)) / math.sqrt(n))


def fitted_gaussian_kl(X: np.ndarray, target: TargetDensity) -> float:
    """KL from a Gaussian fitted to the ensemble to the Gaussian target."""
    mean, _ = _target_moments(target)
    n = X.shape[1]
    law = GaussianLaw(X.mean(axis=0), np.cov(X, rowvar=False).reshape(n, n))
    return kl_to_target(law, target.precision, mean)


def coupon_collector_bound(n: int) -> float:
    """n (ln n + 3): steps after which all coordinates are touched w.h.p."""
    return n * (math.log(n) + 3.0)


@dataclass
class MixingEstimate:
    tau_hat: int
    criterion: str
    threshold: float
    replicas: int
    seed: int
    censored: bool
    T_max: int
    grid_step: int
    steps: list = field(default_factory=list)
    values: list = field(default_factory=list)
    warmness: float | None = None
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.tau_hat < 0:
            raise ValueError("tau_hat must be >= 0")
        if not self.threshold > 0:
            raise ValueError("threshold must be positive")

    def as_dict(self) -> dict:
        return asdict(self)


def estimate_mixing_time(target: TargetDensity, start_sampler, threshold: float,
                         criterion: str = "moment_match", replicas: int = 10_000,
                         T_max: int = 10_000, seed: int = 0,
                         config: ChainConfig | None = None, bins: int = 40,
                         start_law: GaussianLaw | None = None,
                         warmness: float | None = None) -> MixingEstimate:
    """First step on the grid 0, g, 2g, ... (g = ceil(n/2)) where the criterion
    falls to ``threshold``.

    ``moment_match``: whitened covariance relative Frobenius error <= threshold
    and whitened mean norm <= 3 sqrt(n / replicas). ``gaussian_kl``: exact KL of
    the tracked law when ``start_law`` is given and the scan is systematic,
    otherwise the KL of a Gaussian fitted to the ensemble. ``histogram_tv``:
    binned TV (dim <= 2). If T_max is reached first the estimate is censored
    at the last grid step.
    """
    if criterion not in CRITERIA:
        raise ValueError(f"criterion must be one of {CRITERIA}")
    if not threshold > 0:
        raise ValueError("threshold must be positive")
    config = config or ChainConfig(seed=seed)
    n = target.dim
    g = max(1, math.ceil(n / 2))
    checkpoints = list(range(0, int(T_max) + 1, g))
    record = dict(chain=asdict(config), target=target.describe(), bins=bins)
    steps, values = [], []

    tracked = (criterion == "gaussian_kl" and start_law is not None
               and config.scan == "systematic_cyclic" and not config.lazy)
    if tracked:
        mean, _ = _target_moments(target)
        law = start_law
        t_cur = 0
        for t in checkpoints:
            while t_cur < t:
                law = gaussian_law_step(target.precision, mean, law, t_cur % n)
                t_cur += 1
            try:
                val = kl_to_target(law, target.precision, mean)
            except ValueError:
                val = math.inf
            steps.append(t)
            values.append(val)
            if val <= threshold:
                return MixingEstimate(t, criterion, threshold, 0, seed, False, T_max, g,
                                      steps, values, warmness, record)
        return MixingEstimate(steps[-1], criterion, threshold, 0, seed, True, T_max, g,
                              steps, values, warmness, record)

    grid = reference_grid(target, bins) if criterion == "histogram_tv" else None
    mean_tol = 3.0 * math.sqrt(n / replicas)
    hit = []

    def evaluate(t, X):
        if criterion == "moment_match":
            m, c = moment_discrepancy(X, target)
            val = c if m <= mean_tol else math.inf
        elif criterion == "gaussian_kl":
            val = fitted_gaussian_kl(X, target)
        else:
            val = histogram_tv(X, target, grid=grid)
        steps.append(t)
        values.append(val)
        if val <= threshold:
            hit.append(t)
            return True
        return False

    simulate_ensemble(target, start_sampler, replicas, checkpoints, seed, config, evaluate)
    if hit:
        return MixingEstimate(hit[0], criterion, threshold, replicas, seed, False, T_max, g,
                              steps, values, warmness, record)
    return MixingEstimate(steps[-1], criterion, threshold, replicas, seed, True, T_max, g,
                          steps, values, warmness, record)


# ---------------------------------------------------------------- warmness

def warmness_underdispersed_gaussian(c: float, n: int) -> float:
    """sup of the density ratio of Normal(m, c Sigma) to Normal(m, Sigma): c^(-n/2)."""
    if not 0.0 < c < 1.0:
        raise ValueError("c must lie in (0, 1); for c >= 1 the ratio is unbounded or trivial")
    if n < 1:
        raise ValueError("n must be >= 1")
    return c ** (-n / 2.0)


def numerical_warmness(c: float, cov, points_per_axis: int = 201, span: float = 3.0) -> float:
    """Maximum of the density ratio over a dense grid around the mean (n <= 3)."""
    cov = np.asarray(cov, dtype=float)
    n = cov.shape[0]
    if n > 3:
        raise ValueError("dense grid search is limited to n <= 3")
    sd = np.sqrt(np.diag(cov))
    axes = [np.linspace(-span * s, span * s, points_per_axis) for s in sd]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
    P = np.linalg.inv(cov)
    quad = np.einsum("ij,jk,ik->i", pts, P, pts)
    log_ratio = -0.5 * n * math.log(c) - 0.5 * quad * (1.0 / c - 1.0)
    return float(np.exp(log_ratio.max()))


# ---------------------------------------------------------------- chain summaries

def ess_autocorrelation(trajectory, coordinate: int = 0, max_lag: int | None = None):
    """Effective sample size by Geyer's initial positive sequence.

    Returns ``(ess, acf, constant)``; a constant trajectory gives ``(0.0, [], True)``.
    """
    x = np.asarray(getattr(trajectory, "states", trajectory), dtype=float)
    if x.ndim == 2:
        x = x[:, coordinate]
    T = len(x)
    if T < 100:
        raise ValueError("trajectory too short for an autocorrelation estimate (need >= 100)")
    x = x - x.mean()
    var = float(x @ x) / T
    if var <= 0.0 or not np.isfinite(var):
        return 0.0, [], True
    nfft = 1 << (2 * T - 1).bit_length()
    f = np.fft.rfft(x, nfft)
    acov = np.fft.irfft(f * np.conj(f), nfft)[:T] / T
    acf = acov / acov[0]
    max_lag = T - 1 if max_lag is None else min(max_lag, T - 1)
    total = 0.0
    last = 0
    # pairs Gamma_m = rho_{2m} + rho_{2m+1}; stop at the first nonpositive pair
    for m in range(0, (max_lag - 1) // 2 + 1):
        pair = acf[2 * m] + acf[2 * m + 1]
        if pair <= 0:
            break
        total += pair
        last = 2 * m + 1
    tau = max(2.0 * total - 1.0, 1.0 / T)
    return T / tau, [float(v) for v in acf[: last + 1]], False


def ks_statistic(samples, cdf: Callable) -> float:
    """sup_x |F_n(x) - F(x)| for a continuous reference CDF."""
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    m = len(x)
    if m == 0:
        raise ValueError("no samples")
    F = np.asarray(cdf(x), dtype=float)
    i = np.arange(1, m + 1)
    return float(max(np.max(i / m - F), np.max(F - (i - 1) / m)))
