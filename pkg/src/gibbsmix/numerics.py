"""Quadrature rules and a safeguarded 1-D root finder.

Everything here is vectorised over numpy arrays; integrands must accept an
array of abscissae and return an array of the same shape.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np


@lru_cache(maxsize=None)
def gauss_legendre(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights on [-1, 1]."""
    x, w = np.polynomial.legendre.leggauss(order)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def composite_rule(a, b, panels: int = 8, order: int = 8):
    """Composite Gauss-Legendre rule on [a, b].

    ``a`` and ``b`` broadcast against each other; the returned nodes and
    weights have shape ``broadcast(a, b).shape + (panels * order,)``.
    Zero-width intervals get zero weights.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    x, w = gauss_legendre(order)
    # reference nodes of the composite rule on [0, 1]
    edges = np.arange(panels) / panels
    ref = (edges[:, None] + (x[None, :] + 1.0) / (2 * panels)).ravel()
    refw = np.tile(w / (2 * panels), panels)
    width = (b - a)[..., None]
    nodes = a[..., None] + width * ref
    weights = width * refw
    return nodes, weights


def _panel_estimates(fun, a, b, order):
    x, w = gauss_legendre(order)
    mid = 0.5 * (a + b)
    half = 0.5 * (b - a)
    # coarse rule on [a, b] and fine rule on the two halves, one vectorised call
    pts = np.concatenate([
        mid[:, None] + half[:, None] * x,
        0.5 * (a + mid)[:, None] + 0.5 * half[:, None] * x,
        0.5 * (mid + b)[:, None] + 0.5 * half[:, None] * x,
    ], axis=1)
    vals = np.asarray(fun(pts), dtype=float)
    q = len(x)
    coarse = half * (vals[:, :q] @ w)
    fine = 0.5 * half * (vals[:, q:2 * q] @ w + vals[:, 2 * q:] @ w)
    return coarse, fine


def adaptive_panels(fun, edges, rtol: float = 1e-10, atol: float = 0.0,
                    order: int = 10, max_panels: int = 200_000):
    """Globally adaptive Gauss-Legendre integration over consecutive pieces.

    Panels are bisected until the coarse/fine discrepancy of every panel is
    below its share (by width) of ``max(atol, rtol * |total|)``.

    Returns
    -------
    lo, hi, value, piece : arrays describing the accepted panels, sorted by
        ``lo``; ``piece[k]`` is the index of the piece ``[edges[j], edges[j+1]]``
        that contains panel ``k``.
    """
    edges = np.asarray(edges, dtype=float)
    if edges.ndim != 1 or len(edges) < 2:
        raise ValueError("need at least two edges")
    if np.any(np.diff(edges) < 0):
        raise ValueError("edges must be nondecreasing")
    span = edges[-1] - edges[0]
    a = edges[:-1].copy()
    b = edges[1:].copy()
    pid = np.arange(len(a))
    keep = b > a
    a, b, pid = a[keep], b[keep], pid[keep]
    out_lo, out_hi, out_val, out_pid = [], [], [], []
    accepted_sum = 0.0
    total_panels = len(a)
    while len(a):
        coarse, fine = _panel_estimates(fun, a, b, order)
        err = np.abs(coarse - fine)
        total = accepted_sum + fine.sum()
        tol = max(atol, rtol * abs(total))
        width = b - a
        ok = err <= tol * width / span
        # panels at floating-point resolution cannot be refined further
        ok |= width <= 8 * np.finfo(float).eps * np.maximum(1.0, np.abs(a))
        if total_panels > max_panels:
            ok[:] = True
        out_lo.append(a[ok])
        out_hi.append(b[ok])
        out_val.append(fine[ok])
        out_pid.append(pid[ok])
        accepted_sum += fine[ok].sum()
        bad = ~ok
        mid = 0.5 * (a[bad] + b[bad])
        a = np.concatenate([a[bad], mid])
        b = np.concatenate([mid, b[bad]])
        pid = np.concatenate([pid[bad], pid[bad]])
        total_panels += int(bad.sum())
    lo = np.concatenate(out_lo) if out_lo else np.empty(0)
    hi = np.concatenate(out_hi) if out_hi else np.empty(0)
    val = np.concatenate(out_val) if out_val else np.empty(0)
    pidx = np.concatenate(out_pid) if out_pid else np.empty(0, dtype=int)
    order_idx = np.argsort(lo, kind="stable")
    return lo[order_idx], hi[order_idx], val[order_idx], pidx[order_idx]


def integrate_pieces(fun, edges, rtol: float = 1e-10, atol: float = 0.0,
                     order: int = 10) -> np.ndarray:
    """Integrals of ``fun`` over each piece ``[edges[j], edges[j+1]]``."""
    edges = np.asarray(edges, dtype=float)
    _, _, val, pid = adaptive_panels(fun, edges, rtol=rtol, atol=atol, order=order)
    return np.bincount(pid, weights=val, minlength=len(edges) - 1)


class BracketError(RuntimeError):
    """A sign change could not be bracketed; the declared constants are wrong."""


def monotone_root(dfun, x0: float, mu: float, lipschitz: float,
                  tol_scale: float = 1e-12, max_iter: int = 200,
                  d0: float | None = None) -> float:
    """Root of an increasing scalar function with slope in ``[mu, lipschitz]``.

    Secant-Newton steps with the slope clipped to ``[mu, lipschitz]``; any
    step leaving the current bracket is replaced by bisection. Converges to
    ``|dfun(t)| <= tol_scale * (1 + |dfun(x0)|)``.
    """
    x0 = float(x0)
    d0 = float(dfun(x0)) if d0 is None else float(d0)
    tol = tol_scale * (1.0 + abs(d0))
    if abs(d0) <= tol:
        return x0
    # strong monotonicity puts the root within |d0| / mu of x0
    reach = abs(d0) / mu
    far = x0 - np.sign(d0) * reach * (1.0 + 1e-9) - np.sign(d0) * 1e-12 * (1.0 + abs(x0))
    d_far = float(dfun(far))
    expand = 0
    while np.sign(d_far) == np.sign(d0) and d_far != 0.0:
        expand += 1
        if expand > 60:
            raise BracketError(
                f"no sign change of derivative found from x0={x0!r} (d0={d0!r}); "
                f"last probe {far!r} had derivative {d_far!r}")
        far = x0 + 2.0 * (far - x0)
        d_far = float(dfun(far))
    if d_far == 0.0:
        return far
    lo, hi = (far, x0) if d0 > 0 else (x0, far)
    t_prev, d_prev = far, d_far
    t, d = x0, d0
    for _ in range(max_iter):
        if abs(d) <= tol:
            return t
        if d > 0:
            hi = t
        else:
            lo = t
        if hi - lo <= 4 * np.spacing(max(abs(lo), abs(hi))):
            return t
        slope = (d - d_prev) / (t - t_prev) if t != t_prev else 0.5 * (mu + lipschitz)
        slope = min(max(slope, mu), lipschitz)
        t_new = t - d / slope
        if not (lo < t_new < hi):
            t_new = 0.5 * (lo + hi)
        t_prev, d_prev = t, d
        t = t_new
        d = float(dfun(t))
    return t
