"""Low-dimensional numerical checks of the geometric ingredients of the
conductance argument: axis-disjoint partitions, cube isoperimetry, density
control on small cubes, the threshold refinement of a halfspace partition and
the three-set inequality on a ball.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import bounds
from .conditional import fiber_masses, fiber_transition_probability, make_slice
from .numerics import composite_rule
from .targets import TargetDensity, numerical_log_normalizer

__all__ = [
    "Grid", "GridPartition", "Cube", "CubeIsoReport", "SweepReport", "FactReport",
    "RefinementResult", "ThreeSetReport", "OUTSIDE", "S1", "S2", "S3",
    "box_grid", "ball_grid", "axis_disjoint", "count_labelings", "enumerate_partitions",
    "verify_cube_isoperimetry", "cube_isoperimetry_sweep", "verify_fact_density_ratio",
    "verify_uniform_approx", "verify_area_approx", "minimize_on_box", "random_cube_in_ball",
    "refine_partition", "three_set_check", "random_axis_disjoint_partition", "kernel_flow",
    "k_radius_interval", "ball_measure_oracle",
]

OUTSIDE, S1, S2, S3 = 0, 1, 2, 3
MAX_LABELINGS = 3 ** 16


# ---------------------------------------------------------------- quadrature

def _log_norm(target: TargetDensity) -> float:
    if target.log_normalizer is not None:
        return target.log_normalizer
    return numerical_log_normalizer(target)


def _scaled_density(target: TargetDensity):
    """pi(x) written as exp(-(f - f(mode))) * scale, with the scale returned separately."""
    f0 = float(target.f_eval(target.mode))
    scale = math.exp(-f0 - _log_norm(target))
    return (lambda x: np.exp(-(target.f_eval(x) - f0))), scale


def _tensor_cells(fun, edges: list[np.ndarray], order: int, panels: int) -> np.ndarray:
    """Integrals of ``fun`` over every cell of a tensor grid."""
    d = len(edges)
    nodes, weights = [], []
    for e in edges:
        x, w = composite_rule(e[:-1], e[1:], panels, order)
        nodes.append(x.ravel())
        weights.append(w)
    mesh = np.meshgrid(*nodes, indexing="ij")
    vals = fun(np.stack(mesh, axis=-1))
    k = [len(e) - 1 for e in edges]
    q = panels * order
    vals = vals.reshape(sum(([kk, q] for kk in k), []))
    for ax in range(d):
        shape = [1] * (2 * d)
        shape[2 * ax], shape[2 * ax + 1] = k[ax], q
        vals = vals * weights[ax].reshape(shape)
    return vals.sum(axis=tuple(range(1, 2 * d, 2)))


def _critical_r2(lo: np.ndarray, hi: np.ndarray, center: np.ndarray) -> np.ndarray:
    # squared radii at which a ball slice meets a face, edge or corner of the box
    opts = [((lo[j] - center[j]) ** 2, (hi[j] - center[j]) ** 2) for j in range(len(lo))]
    vals = []
    for choice in itertools.product(*[(0.0,) + o for o in opts]):
        if any(c != 0.0 for c in choice):
            vals.append(sum(choice))
    return np.unique(np.array(vals))


def _clipped(fun, lo, hi, center, r2, prefix, order, panels):
    """Integral over box [lo, hi] cut by the ball |x - center|^2 <= r2, batched over r2."""
    rho = np.sqrt(np.clip(r2, 0.0, None))
    a = np.maximum(lo[0], center[0] - rho)
    b = np.maximum(a, np.minimum(hi[0], center[0] + rho))
    B = len(r2)
    if len(lo) == 1:
        x, w = composite_rule(a, b, panels, order)
        pts = np.concatenate([np.broadcast_to(prefix[:, None, :], (B, x.shape[1], prefix.shape[1])),
                              x[..., None]], axis=-1)
        return (fun(pts) * w).sum(axis=1)
    crit = _critical_r2(lo[1:], hi[1:], center[1:])
    gap = r2[:, None] - crit[None, :]
    root = np.sqrt(np.clip(gap, 0.0, None))
    cand = np.concatenate([center[0] - root, center[0] + root], axis=1)
    cand = np.where(np.concatenate([gap, gap], axis=1) > 0, cand, a[:, None])
    bp = np.sort(np.clip(np.concatenate([a[:, None], b[:, None], cand], axis=1),
                         a[:, None], b[:, None]), axis=1)
    x, w = composite_rule(bp[:, :-1], bp[:, 1:], panels, order)
    flat_x = x.reshape(B, -1)
    new_prefix = np.concatenate([np.repeat(prefix, flat_x.shape[1], axis=0),
                                 flat_x.reshape(-1, 1)], axis=1)
    new_r2 = (r2[:, None] - (flat_x - center[0]) ** 2).ravel()
    inner = _clipped(fun, lo[1:], hi[1:], center[1:], new_r2, new_prefix, order, panels)
    return (inner.reshape(B, -1) * w.reshape(B, -1)).sum(axis=1)


def box_ball_integral(fun, lo, hi, center, radius, order: int = 8, panels: int = 4) -> float:
    """Integral of ``fun`` over the box [lo, hi] intersected with a ball."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    center = np.asarray(center, dtype=float)
    return float(_clipped(fun, lo, hi, center, np.array([float(radius) ** 2]),
                          np.zeros((1, 0)), order, panels)[0])


def box_integral(fun, lo, hi, order: int = 16, panels: int = 1) -> float:
    """Tensor Gauss-Legendre integral over a box (zero-width boxes give 0)."""
    edges = [np.array([l, h], dtype=float) for l, h in zip(lo, hi)]
    return float(_tensor_cells(fun, edges, order, panels).sum())


def ball_measure_oracle(target: TargetDensity, radius: float, order: int = 64) -> float:
    """Pi(ball of given radius at the mode) in dim 2 by polar Gauss-Legendre quadrature."""
    if target.dim != 2:
        raise ValueError("polar oracle is two-dimensional")
    dens, scale = _scaled_density(target)
    r, wr = composite_rule(0.0, radius, 16, order)
    th, wt = composite_rule(0.0, 2 * math.pi, 16, order)
    R, TH = np.meshgrid(r, th, indexing="ij")
    pts = target.mode + np.stack([R * np.cos(TH), R * np.sin(TH)], axis=-1)
    return float(scale * np.sum(dens(pts) * R * wr[:, None] * wt[None, :]))


# ---------------------------------------------------------------- grids

@dataclass
class Grid:
    """Tensor grid of ``k`` cells per axis over a box, optionally clipped to a ball.

    ``cell_measures`` holds the Pi-measure (or, for ``measure="uniform"``, the
    volume) of each cell's intersection with the domain.
    """

    dim: int
    k: int
    lo: np.ndarray
    hi: np.ndarray
    edges: list
    cell_measures: np.ndarray
    inside: np.ndarray
    center: np.ndarray | None = None
    radius: float | None = None
    measure: str = "target"

    @property
    def kind(self) -> str:
        return "box" if self.radius is None else "ball"

    @property
    def shape(self) -> tuple:
        return (self.k,) * self.dim

    def cell_centers(self) -> np.ndarray:
        mids = [0.5 * (e[:-1] + e[1:]) for e in self.edges]
        return np.stack(np.meshgrid(*mids, indexing="ij"), axis=-1)

    def total(self) -> float:
        return float(self.cell_measures.sum())

    def mass(self, mask) -> float:
        return float(self.cell_measures[np.asarray(mask, dtype=bool)].sum())


def box_grid(lo, hi, k: int, target: TargetDensity | None = None,
             nodes_per_axis: int | None = None) -> Grid:
    """Box grid; cell measures are Pi-measures for a target, volumes otherwise."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    d = len(lo)
    if not 1 <= d <= 3:
        raise ValueError("grids support dimensions 1 to 3")
    edges = [np.linspace(lo[j], hi[j], k + 1) for j in range(d)]
    if target is None:
        vol = np.ones((k,) * d)
        for j in range(d):
            shape = [1] * d
            shape[j] = k
            vol = vol * np.diff(edges[j]).reshape(shape)
        return Grid(d, k, lo, hi, edges, vol, np.ones((k,) * d, dtype=bool), measure="uniform")
    if target.dim != d:
        raise ValueError("target dimension does not match the box")
    q = nodes_per_axis or (64 if d <= 2 else 16)
    panels = 8 if q >= 64 else 1
    dens, scale = _scaled_density(target)
    meas = scale * _tensor_cells(dens, edges, q // panels, panels)
    return Grid(d, k, lo, hi, edges, meas, np.ones((k,) * d, dtype=bool))


def ball_grid(target: TargetDensity, radius: float, k: int, center=None,
              nodes_per_axis: int | None = None, clip_order: int = 8,
              clip_panels: int = 4) -> Grid:
    """Grid over the bounding box of a ball (default centre: the mode).

    Cells inside the ball use tensor quadrature; cells cut by the sphere use
    nested quadrature with exact chord limits and breakpoints wherever the
    chord meets a cell face, edge or corner.
    """
    d = target.dim
    c = target.mode if center is None else np.asarray(center, dtype=float)
    lo, hi = c - radius, c + radius
    g = box_grid(lo, hi, k, target, nodes_per_axis)
    dens, scale = _scaled_density(target)
    # nearest and farthest squared distances from the centre to each cell
    near = np.zeros((k,) * d)
    far = np.zeros((k,) * d)
    for j, e in enumerate(g.edges):
        a, b = e[:-1] - c[j], e[1:] - c[j]
        nj = np.where((a <= 0) & (b >= 0), 0.0, np.minimum(a * a, b * b))
        fj = np.maximum(a * a, b * b)
        shape = [1] * d
        shape[j] = k
        near = near + nj.reshape(shape)
        far = far + fj.reshape(shape)
    r2 = radius * radius
    meas = g.cell_measures.copy()
    meas[near >= r2] = 0.0
    cut = (near < r2) & (far > r2)
    for idx in zip(*np.nonzero(cut)):
        clo = np.array([g.edges[j][idx[j]] for j in range(d)])
        chi = np.array([g.edges[j][idx[j] + 1] for j in range(d)])
        meas[idx] = scale * box_ball_integral(dens, clo, chi, c, radius, clip_order, clip_panels)
    return Grid(d, k, lo, hi, g.edges, meas, near < r2, center=c, radius=float(radius))


# ---------------------------------------------------------------- partitions

@dataclass
class GridPartition:
    labels: np.ndarray

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int8)
        if self.labels.min(initial=0) < 0 or self.labels.max(initial=0) > 3:
            raise ValueError("labels must be 0 (outside), 1, 2 or 3")

    def mask(self, label: int) -> np.ndarray:
        return self.labels == label

    @classmethod
    def from_sets(cls, shape, s1=(), s2=(), inside=None) -> "GridPartition":
        lab = np.full(shape, S3, dtype=np.int8)
        for c in s1:
            lab[tuple(c)] = S1
        for c in s2:
            lab[tuple(c)] = S2
        if inside is not None:
            lab[~np.asarray(inside, dtype=bool)] = OUTSIDE
        return cls(lab)


def axis_disjoint(partition: GridPartition | np.ndarray) -> bool:
    """True iff no axis-parallel line of cells holds both an S1 and an S2 cell."""
    lab = partition.labels if isinstance(partition, GridPartition) else np.asarray(partition)
    a, b = lab == S1, lab == S2
    for ax in range(lab.ndim):
        if np.any(a.any(axis=ax) & b.any(axis=ax)):
            return False
    return True


def count_labelings(k: int, dim: int) -> int:
    return 3 ** (k ** dim)


def _neighbourhoods(k: int, dim: int) -> np.ndarray:
    # bitmask of cells at Hamming distance <= 1 (same fibre) from each cell
    cells = list(itertools.product(range(k), repeat=dim))
    out = np.zeros(len(cells), dtype=np.int64)
    for a, ca in enumerate(cells):
        m = 0
        for b, cb in enumerate(cells):
            if sum(x != y for x, y in zip(ca, cb)) <= 1:
                m |= 1 << b
        out[a] = m
    return out


def _free_mask(s1: int, neigh: np.ndarray) -> int:
    blocked = 0
    j = 0
    while s1 >> j:
        if (s1 >> j) & 1:
            blocked |= int(neigh[j])
        j += 1
    return ~blocked & ((1 << len(neigh)) - 1)


def _bits(mask: int) -> list[int]:
    return [j for j in range(mask.bit_length()) if (mask >> j) & 1]


def enumerate_partitions(k: int, dim: int, axis_disjoint_only: bool = False,
                         nonempty: bool = False, max_labelings: int = MAX_LABELINGS):
    """Stream labelings of a k^dim grid into S1/S2/S3.

    With ``axis_disjoint_only`` the stream is generated directly from S1 and
    the cells that share no fibre with it, so non-admissible labelings are
    never materialised.
    """
    N = k ** dim
    total = 3 ** N
    if total > max_labelings:
        raise ValueError(f"{total} labelings of a {k}^{dim} grid exceed the limit "
                         f"{max_labelings}")
    shape = (k,) * dim
    if not axis_disjoint_only:
        for lab in itertools.product((S1, S2, S3), repeat=N):
            if nonempty and (S1 not in lab or S2 not in lab):
                continue
            yield GridPartition(np.array(lab, dtype=np.int8).reshape(shape))
        return
    neigh = _neighbourhoods(k, dim)
    for s1 in range(1 << N):
        if nonempty and s1 == 0:
            continue
        free = _bits(_free_mask(s1, neigh))
        for r in range(len(free) + 1):
            if nonempty and r == 0:
                continue
            for s2 in itertools.combinations(free, r):
                lab = np.full(N, S3, dtype=np.int8)
                lab[_bits(s1)] = S1
                lab[list(s2)] = S2
                yield GridPartition(lab.reshape(shape))


# ---------------------------------------------------------------- cube isoperimetry

@dataclass
class CubeIsoReport:
    lemma: str
    admissible: bool
    holds: bool
    margin: float
    bound: float
    m1: float
    m2: float
    m3: float


def _cube_constants(dim: int, lemma: str):
    pc = bounds.psi_c(dim)
    if lemma == "uniform":
        return pc / 4.0, 2.0 / 3.0
    nu = bounds.nu(dim)
    return pc / 4.0 * math.exp(-nu), 2.0 / 3.0 * math.exp(-nu)


def verify_cube_isoperimetry(partition: GridPartition, measure: str = "uniform",
                             cell_measures=None, tol: float = 1e-12) -> CubeIsoReport:
    """Check m(S3) >= coef * m(S1) for one axis-disjoint labeling of a cube.

    ``measure="uniform"`` uses cell volumes (unit cube); ``"target"`` needs the
    Pi-measures of the cells. Inadmissible partitions (S1 too heavy) are
    reported with ``admissible=False``.
    """
    lab = partition.labels
    if not axis_disjoint(partition):
        raise ValueError("partition is not axis-disjoint")
    if measure == "uniform":
        w = np.full(lab.shape, 1.0 / lab.size)
    elif measure == "target":
        if cell_measures is None:
            raise ValueError("target measure needs cell_measures")
        w = np.asarray(cell_measures, dtype=float)
    else:
        raise ValueError(f"unknown measure {measure!r}")
    coef, cap = _cube_constants(lab.ndim, measure)
    m1, m2, m3 = (float(w[lab == s].sum()) for s in (S1, S2, S3))
    total = float(w.sum())
    admissible = m1 <= cap * total + tol
    bound = coef * m1
    margin = m3 - bound
    return CubeIsoReport(measure, admissible, (not admissible) or margin >= -tol,
                         margin, bound, m1, m2, m3)


@dataclass
class SweepReport:
    k: int
    dim: int
    measure: str
    labelings: int
    axis_disjoint: int
    admissible: int
    skipped: int
    violations: int
    min_margin: float
    worst: tuple = ()
    min_ratio: float = math.inf  # min m(S3) / (coef m(S1)) over admissible, nonempty S1

    @property
    def ok(self) -> bool:
        return self.violations == 0


def _subset_sums(w: np.ndarray) -> np.ndarray:
    out = np.zeros(1)
    for v in w:
        out = np.concatenate([out, out + v])
    return out


def cube_isoperimetry_sweep(k: int, dim: int, measure: str = "uniform",
                            cell_measures=None, tol: float = 1e-12) -> SweepReport:
    """Exhaustive check over every axis-disjoint labeling of a k^dim cube grid.

    For each S1 the admissible S2 are exactly the subsets of the cells sharing
    no fibre with S1; their masses are produced as one vectorised subset-sum,
    so the full 3^(k^dim) labeling space is covered without materialising it.
    """
    N = k ** dim
    if measure == "uniform":
        w = np.full(N, 1.0 / N)
    else:
        w = np.asarray(cell_measures, dtype=float).ravel()
        if w.shape != (N,):
            raise ValueError("cell_measures shape does not match the grid")
    total = float(w.sum())
    coef, cap = _cube_constants(dim, measure)
    neigh = _neighbourhoods(k, dim)
    n_disjoint = n_adm = n_skip = n_viol = 0
    min_margin = math.inf
    min_ratio = math.inf
    worst = ()
    for s1 in range(1 << N):
        cells1 = _bits(s1)
        m1 = float(w[cells1].sum())
        free = _bits(_free_mask(s1, neigh))
        sums = _subset_sums(w[free])
        count = len(sums)
        n_disjoint += count
        if m1 > cap * total + tol:
            n_skip += count
            continue
        n_adm += count
        margin = (total - m1 - sums) - coef * m1
        j = int(np.argmin(margin))
        if margin[j] < min_margin:
            min_margin = float(margin[j])
            worst = (tuple(cells1), tuple(free[b] for b in range(len(free)) if (j >> b) & 1))
        n_viol += int(np.count_nonzero(margin < -tol))
        if m1 > 0:
            min_ratio = min(min_ratio, float(np.min(total - m1 - sums)) / (coef * m1))
    return SweepReport(k, dim, measure, count_labelings(k, dim), n_disjoint, n_adm,
                       n_skip, n_viol, min_margin, worst, min_ratio)


# ---------------------------------------------------------------- cubes and facts

@dataclass(frozen=True)
class Cube:
    lower: np.ndarray
    side: float

    @property
    def upper(self) -> np.ndarray:
        return self.lower + self.side

    @property
    def dim(self) -> int:
        return len(self.lower)

    def corners(self) -> np.ndarray:
        n = self.dim
        offs = np.array(list(itertools.product((0.0, 1.0), repeat=n)))
        return self.lower + self.side * offs

    def inside_ball(self, center, radius: float) -> bool:
        d = np.linalg.norm(self.corners() - np.asarray(center), axis=1)
        return bool(np.all(d <= radius))


def k_radius_interval(target: TargetDensity, epsilon: float) -> tuple[float, float]:
    """(r sqrt(n/mu), 2 r sqrt(n/mu)]: admissible radii for the ball K."""
    base = bounds.radius_r(epsilon, target.dim) * math.sqrt(target.dim / target.mu)
    return base, 2.0 * base


def _check_cube(target, cube, epsilon, radius):
    if cube.dim != target.dim:
        raise ValueError("cube dimension does not match the target")
    R = k_radius_interval(target, epsilon)[1] if radius is None else radius
    if not cube.inside_ball(target.mode, R):
        raise ValueError(f"cube is not inside the ball K of radius {R:g} around the mode")
    return R


def minimize_on_box(target: TargetDensity, lo, hi, tol: float = 1e-14,
                    max_iter: int = 100_000) -> np.ndarray:
    """argmin of f over a box by projected gradient descent with step 1/L."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    x = np.clip(target.mode, lo, hi)
    for _ in range(max_iter):
        y = np.clip(x - np.asarray(target.grad_eval(x)) / target.lipschitz, lo, hi)
        if np.max(np.abs(y - x)) <= tol * (1.0 + np.max(np.abs(x))):
            return y
        x = y
    return x


def random_cube_in_ball(target: TargetDensity, side: float, radius: float,
                        rng: np.random.Generator) -> Cube:
    """Cube of the given side, uniformly placed so that it lies in the ball."""
    n = target.dim
    slack = radius - side * math.sqrt(n)
    if slack <= 0:
        raise ValueError("cube does not fit in the ball")
    while True:
        u = rng.uniform(-slack, slack, size=n)
        if np.linalg.norm(u) <= slack:
            break
    center = target.mode + u
    return Cube(center - 0.5 * side, side)


@dataclass
class FactReport:
    fact: str
    measured: float
    lower: float
    upper: float
    holds: bool
    details: dict = field(default_factory=dict)


def verify_fact_density_ratio(target: TargetDensity, cube: Cube, epsilon: float = 0.01,
                              radius: float | None = None, n_pairs: int = 10_000,
                              rng_seed: int = 0) -> FactReport:
    """max |exp(-(f(x) - f(y))) - 1| over point pairs in the cube vs e^nu - 1.

    Pairs are drawn uniformly; the exact supremum exp(max f - min f) - 1
    (max at a corner by convexity, min by projected descent) is reported too
    and is what the verdict uses.
    """
    _check_cube(target, cube, epsilon, radius)
    rng = np.random.default_rng(rng_seed)
    n = target.dim
    x = cube.lower + cube.side * rng.random((n_pairs, n))
    y = cube.lower + cube.side * rng.random((n_pairs, n))
    sampled = float(np.max(np.abs(np.exp(-(target.f_eval(x) - target.f_eval(y))) - 1.0)))
    w = minimize_on_box(target, cube.lower, cube.upper)
    fmax = float(np.max(target.f_eval(cube.corners())))
    sup = math.expm1(fmax - float(target.f_eval(w)))
    bound = math.expm1(bounds.nu(n))
    return FactReport("density_ratio", max(sampled, sup), 0.0, bound,
                      max(sampled, sup) <= bound,
                      {"sampled": sampled, "supremum": sup, "n_pairs": n_pairs})


def verify_uniform_approx(target: TargetDensity, cube: Cube, subset_lo, subset_hi,
                          epsilon: float = 0.01, radius: float | None = None,
                          order: int = 16, rtol: float = 1e-9) -> FactReport:
    """Pi(S) / (pi(w) vol(S)) in [e^-nu, 1] for a sub-box S of the cube."""
    _check_cube(target, cube, epsilon, radius)
    slo = np.asarray(subset_lo, dtype=float)
    shi = np.asarray(subset_hi, dtype=float)
    if np.any(slo < cube.lower - 1e-15) or np.any(shi > cube.upper + 1e-15):
        raise ValueError("subset is not contained in the cube")
    vol = float(np.prod(shi - slo))
    if not vol > 0:
        raise ValueError("subset has zero volume; the ratio is undefined")
    w = minimize_on_box(target, cube.lower, cube.upper)
    fw = float(target.f_eval(w))
    mass = box_integral(lambda p: np.exp(-(target.f_eval(p) - fw)), slo, shi, order)
    ratio = mass / vol
    lower = math.exp(-bounds.nu(target.dim))
    holds = lower * (1 - rtol) <= ratio <= 1.0 + rtol
    return FactReport("uniform_approx", ratio, lower, 1.0, holds, {"w": w.tolist(), "vol": vol})


def verify_area_approx(target: TargetDensity, cube: Cube, axis: int, omega_lo, omega_hi,
                       facet: str = "lower", epsilon: float = 0.01,
                       radius: float | None = None, order: int = 16,
                       rtol: float = 1e-9) -> FactReport:
    """|Pi(B) - delta Pi_{n-1}(omega)| <= (e^nu - 1) delta Pi_{n-1}(omega).

    ``omega`` is the rectangle [omega_lo, omega_hi] in the coordinates other
    than ``axis`` on the chosen facet; B is its extension across the cube.
    """
    _check_cube(target, cube, epsilon, radius)
    n = target.dim
    others = [j for j in range(n) if j != axis]
    olo = np.asarray(omega_lo, dtype=float)
    ohi = np.asarray(omega_hi, dtype=float)
    if olo.shape != (n - 1,) or ohi.shape != (n - 1,):
        raise ValueError("omega needs n - 1 coordinates")
    if np.any(olo < cube.lower[others] - 1e-15) or np.any(ohi > cube.upper[others] + 1e-15):
        raise ValueError("omega is not inside the facet")
    nu = bounds.nu(n)
    if np.any(ohi - olo <= 0):
        return FactReport("area_approx", 0.0, 0.0, 0.0, True, {"pi_B": 0.0, "pi_omega": 0.0})
    w = minimize_on_box(target, cube.lower, cube.upper)
    fw = float(target.f_eval(w))
    dens = lambda p: np.exp(-(target.f_eval(p) - fw))
    blo = cube.lower.copy()
    bhi = cube.upper.copy()
    blo[others], bhi[others] = olo, ohi
    pi_b = box_integral(dens, blo, bhi, order)
    a = cube.lower[axis] if facet == "lower" else cube.upper[axis]

    def facet_dens(q):
        q = np.asarray(q)
        pts = np.empty(q.shape[:-1] + (n,))
        pts[..., others] = q
        pts[..., axis] = a
        return dens(pts)

    pi_omega = box_integral(facet_dens, olo, ohi, order)
    gap = abs(pi_b - cube.side * pi_omega)
    allowed = math.expm1(nu) * cube.side * pi_omega
    return FactReport("area_approx", gap, 0.0, allowed, gap <= allowed * (1 + rtol),
                      {"pi_B": pi_b, "pi_omega": pi_omega, "relative": gap / (cube.side * pi_omega)})


# ---------------------------------------------------------------- refinement and the ball inequality

@dataclass
class RefinementResult:
    partition: GridPartition
    a1_mask: np.ndarray
    p_cross: np.ndarray
    threshold: float
    measure_a1: float
    axis_disjoint: bool


def _halfspace_measure(target: TargetDensity, normal, offset) -> float | None:
    """Pi({x : <normal, x> > offset}) for Gaussian targets, else None."""
    if not target.is_gaussian:
        return None
    from scipy.stats import norm
    v = np.asarray(normal, dtype=float)
    cov = np.linalg.inv(target.precision)
    sd = math.sqrt(float(v @ cov @ v))
    return float(norm.sf((offset - float(v @ target.mean)) / sd))


def refine_partition(target: TargetDensity, normal, offset: float, grid: Grid) -> RefinementResult:
    """Threshold refinement of A1 = {<normal, x> > offset}, A2 = complement.

    At each cell centre x, P_x(other side) = (1/n) sum_i of the conditional
    mass of the other side on the coordinate line through x along axis i.
    Cells of A1 with P_x(A2) < 1/(2n) become S1, cells of A2 with
    P_x(A1) < 1/(2n) become S2, the remaining in-domain cells S3. The fibre
    probabilities depend only on x_{-i}, so they are computed once per line.
    """
    if target.dim > 3:
        raise ValueError("refinement is limited to dim <= 3")
    v = np.asarray(normal, dtype=float)
    n = target.dim
    pa1 = _halfspace_measure(target, v, offset)
    if pa1 is not None and not (0.0 < pa1 <= 0.5 + 1e-12):
        raise ValueError(f"A1 has measure {pa1:.6g}; it must lie in (0, 1/2]")
    centers = grid.cell_centers()
    in_a1 = centers @ v > offset
    p_cross = np.zeros(grid.shape)
    for i in range(n):
        # for each fibre along axis i, the cut point <v, x> = offset splits the line
        other_axes = [j for j in range(n) if j != i]
        cache: dict = {}
        for idx in np.ndindex(*grid.shape):
            key = tuple(idx[j] for j in other_axes)
            if key not in cache:
                x = centers[idx]
                rest = float(v @ x - v[i] * x[i])
                if v[i] == 0.0:
                    side_a1 = rest > offset
                    cache[key] = (1.0 if side_a1 else 0.0, 0.0 if side_a1 else 1.0)
                else:
                    cut = (offset - rest) / v[i]
                    up = [(cut, math.inf)]
                    down = [(-math.inf, cut)]
                    try:
                        p_up = fiber_transition_probability(target, x, i, up)
                    except Exception as exc:
                        raise RuntimeError(f"quadrature failed on the fibre along axis {i} "
                                           f"through {x.tolist()}: {exc}") from exc
                    # A1 lies on the side where <v, x> grows
                    p_a1 = p_up if v[i] > 0 else 1.0 - p_up
                    cache[key] = (p_a1, 1.0 - p_a1)
            p_a1, p_a2 = cache[key]
            p_cross[idx] += (p_a2 if in_a1[idx] else p_a1) / n
    thr = 1.0 / (2 * n)
    lab = np.full(grid.shape, S3, dtype=np.int8)
    lab[in_a1 & (p_cross < thr)] = S1
    lab[~in_a1 & (p_cross < thr)] = S2
    lab[~grid.inside] = OUTSIDE
    part = GridPartition(lab)
    ok = axis_disjoint(part)
    assert ok, "threshold refinement produced sets that share a fibre"
    return RefinementResult(part, in_a1, p_cross, thr,
                            pa1 if pa1 is not None else grid.mass(in_a1 & grid.inside), ok)


@dataclass
class ThreeSetReport:
    m1: float
    m2: float
    m3: float
    big_psi: float
    rhs: float
    slack: float
    holds: bool
    epsilon: float
    radius: float


def three_set_check(target: TargetDensity, grid: Grid, partition: GridPartition,
                 epsilon: float = 0.01, big_psi: float | None = None) -> ThreeSetReport:
    """Pi(S3) >= Psi min{Pi(S1)/5 - eps, Pi(S2)/5 - eps} on a ball grid."""
    if grid.radius is None:
        raise ValueError("the inequality is stated on a ball; use ball_grid")
    lo, hi = k_radius_interval(target, epsilon)
    if not (lo < grid.radius <= hi * (1 + 1e-12)):
        raise ValueError(f"ball radius {grid.radius:g} outside the admissible interval "
                         f"({lo:g}, {hi:g}]")
    if not axis_disjoint(partition):
        raise ValueError("S1 and S2 are not axis-disjoint at grid resolution")
    psi = bounds.big_psi(target.kappa, target.dim, epsilon) if big_psi is None else big_psi
    lab = partition.labels
    m1, m2, m3 = (grid.mass(lab == s) for s in (S1, S2, S3))
    rhs = psi * min(m1 / 5.0 - epsilon, m2 / 5.0 - epsilon)
    slack = m3 - rhs
    return ThreeSetReport(m1, m2, m3, psi, rhs, slack, slack > 0, epsilon, grid.radius)


def random_axis_disjoint_partition(grid: Grid, rng: np.random.Generator,
                                   keep: float | None = None) -> GridPartition:
    """Random axis-disjoint labeling built from per-axis index subsets.

    S1 takes cells whose indices all fall in randomly chosen subsets, S2 cells
    whose indices all fall in the complements; a random fraction of each is
    then moved to S3.
    """
    d, k = grid.dim, grid.k
    chosen = [rng.random(k) < rng.uniform(0.2, 0.8) for _ in range(d)]
    idx = np.indices(grid.shape)
    in1 = np.ones(grid.shape, dtype=bool)
    in2 = np.ones(grid.shape, dtype=bool)
    for j in range(d):
        in1 &= chosen[j][idx[j]]
        in2 &= ~chosen[j][idx[j]]
    keep = rng.uniform(0.5, 1.0) if keep is None else keep
    in1 &= rng.random(grid.shape) < keep
    in2 &= rng.random(grid.shape) < keep
    lab = np.full(grid.shape, S3, dtype=np.int8)
    lab[in1] = S1
    lab[in2] = S2
    lab[~grid.inside] = OUTSIDE
    return GridPartition(lab)


# ---------------------------------------------------------------- kernel flows

def kernel_flow(target: TargetDensity, grid: Grid, A, B, order: int = 16) -> float:
    """Ergodic flow int_A pi(x) P_x(B) dx of the non-lazy random-scan kernel.

    ``A`` and ``B`` are boolean cell masks of a box grid. P_x(B) sums, over the
    n coordinate lines through x, 1/n times the conditional mass of B's cells
    on that line; the line masses come from per-line quadrature of the
    conditional density.
    """
    A = np.asarray(A, dtype=bool)
    B = np.asarray(B, dtype=bool)
    n = grid.dim
    dens, scale = _scaled_density(target)
    per_axis = []
    for e in grid.edges:
        x, w = composite_rule(e[:-1], e[1:], 1, order)
        per_axis.append((x, w))
    total = 0.0
    for i in range(n):
        others = [j for j in range(n) if j != i]
        for cell in zip(*np.nonzero(A)):
            line = [slice(None) if j == i else cell[j] for j in range(n)]
            targets_on_line = B[tuple(line)]
            if not targets_on_line.any():
                continue
            # nodes of the cell along the other axes; P along axis i depends only on them
            mesh = np.meshgrid(*[per_axis[j][0][cell[j]] for j in others], indexing="ij")
            wmesh = np.ones(mesh[0].shape)
            for m, j in enumerate(others):
                shape = [1] * len(others)
                shape[m] = order
                wmesh = wmesh * per_axis[j][1][cell[j]].reshape(shape)
            xi, wi = per_axis[i][0][cell[i]], per_axis[i][1][cell[i]]
            for pos in np.ndindex(*mesh[0].shape):
                rest = {j: mesh[m][pos] for m, j in enumerate(others)}
                masses = _line_masses(target, grid, i, tuple(sorted(rest.items())))
                p_line = float(masses[targets_on_line].sum())
                pts = np.empty((order, n))
                pts[:, i] = xi
                for j, val in rest.items():
                    pts[:, j] = val
                inner = float(np.sum(wi * dens(pts)))
                total += wmesh[pos] * inner * p_line / n
    return scale * total


_LINE_CACHE: dict = {}


def _line_masses(target: TargetDensity, grid: Grid, axis: int, rest: tuple) -> np.ndarray:
    key = (id(target), id(grid), axis, rest)
    hit = _LINE_CACHE.get(key)
    if hit is None:
        if len(_LINE_CACHE) > 200_000:
            _LINE_CACHE.clear()
        x = np.array(target.mode, dtype=float)
        for j, val in rest:
            x[j] = val
        slc = make_slice(target, x, axis)
        hit = _LINE_CACHE[key] = fiber_masses(slc, grid.edges[axis])
    return hit
