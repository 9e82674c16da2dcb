"""Random-scan Gibbs sampler (coordinate hit-and-run), lazy and systematic variants.

Random-number contract
----------------------
Replica ``k`` of base seed ``s`` owns three independent PCG64 streams built
from ``SeedSequence(entropy=s, spawn_key=(k, j))``:

* ``j = 0`` (start): consumed only by the start sampler;
* ``j = 1`` (control): two uniforms per step, ``(u_lazy, u_coord)``; the step
  is a no-op when the chain is lazy and ``u_lazy < 1/2``; under random scan the
  coordinate is ``floor(u_coord * n)``, under systematic scan it is ``t mod n``;
* ``j = 2`` (value): one standard normal per step for Gaussian targets (used
  only when the step is not a no-op), otherwise whatever the rejection sampler
  consumes on non-lazy steps.

Draws are taken in blocks; numpy generators produce the same values in blocks
as one at a time, so single-step and ensemble code paths agree bitwise.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .conditional import make_slice, sample_rejection
from .targets import TargetDensity, make_gaussian

__all__ = [
    "ChainConfig", "ChainStreams", "Trajectory", "EnsembleRun", "GaussianLaw",
    "RNG_ALGORITHM", "LAZY", "replica_streams", "step", "run", "run_ensemble",
    "simulate_ensemble", "simulate_until", "point_start", "gaussian_law_step",
    "sweep_law", "kl_to_target", "write_trajectory_csv", "read_trajectory_csv",
]

RNG_ALGORITHM = "numpy.PCG64; replica k stream j seeded by SeedSequence(entropy=seed, spawn_key=(k, j))"
LAZY = -1  # coordinate sentinel for a lazy no-op
SCANS = ("random_uniform", "systematic_cyclic")
_BLOCK_MIN, _BLOCK_MAX = 32, 512


@dataclass(frozen=True)
class ChainConfig:
    lazy: bool = False
    scan: str = "random_uniform"
    seed: int = 0
    thin: int | None = None

    def __post_init__(self):
        if self.scan not in SCANS:
            raise ValueError(f"scan must be one of {SCANS}, got {self.scan!r}")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if self.thin is not None and self.thin < 1:
            raise ValueError("thin must be >= 1")

    def thinning(self, n: int) -> int:
        if self.thin is not None:
            return self.thin
        return 1 if n <= 16 else n


class ChainStreams:
    """The three generators of one replica, created on first use."""

    _NAMES = ("start", "control", "value")

    def __init__(self, base_seed: int, replica: int):
        self.base_seed = int(base_seed)
        self.replica = int(replica)
        self._gens: dict[str, np.random.Generator] = {}

    def _get(self, name: str) -> np.random.Generator:
        gen = self._gens.get(name)
        if gen is None:
            ss = np.random.SeedSequence(entropy=self.base_seed,
                                        spawn_key=(self.replica, self._NAMES.index(name)))
            gen = self._gens[name] = np.random.Generator(np.random.PCG64(ss))
        return gen

    start = property(lambda self: self._get("start"))
    control = property(lambda self: self._get("control"))
    value = property(lambda self: self._get("value"))


def replica_streams(base_seed: int, k: int) -> ChainStreams:
    return ChainStreams(base_seed, k)


def point_start(x0) -> Callable[[np.random.Generator], np.ndarray]:
    """Start sampler returning a fixed point (consumes no randomness)."""
    x0 = np.array(x0, dtype=float)

    def sampler(rng):
        return x0.copy()

    sampler.uses_rng = False
    return sampler


class _Engine:
    """Advances a batch of replicas, each with its own streams."""

    def __init__(self, target: TargetDensity, X: np.ndarray, config: ChainConfig,
                 streams: Sequence[ChainStreams]):
        self.target = target
        self.config = config
        self.streams = list(streams)
        self.X = np.array(X, dtype=float).reshape(len(self.streams), target.dim)
        self.t = 0
        self.R, self.n = self.X.shape
        self._u = np.empty((self.R, 0, 2))
        self._z = np.empty((self.R, 0))
        self._pos = 0
        self._block = _BLOCK_MIN
        if target.is_gaussian:
            self._P = np.asarray(target.precision)
            self._m = np.asarray(target.mean)
            self._diag = np.diag(self._P).copy()
            self._sd = 1.0 / np.sqrt(self._diag)

    def _refill(self):
        b = self._block
        self._u = np.stack([s.control.random(2 * b).reshape(b, 2) for s in self.streams])
        if self.target.is_gaussian:
            self._z = np.stack([s.value.standard_normal(b) for s in self.streams])
        self._pos = 0
        self._block = min(2 * b, _BLOCK_MAX)

    def advance(self) -> np.ndarray:
        """One step for every replica; returns the coordinates used (LAZY for no-ops)."""
        if self._pos >= self._u.shape[1]:
            self._refill()
        u = self._u[:, self._pos]
        if self.config.scan == "random_uniform":
            coord = np.minimum((u[:, 1] * self.n).astype(np.int64), self.n - 1)
        else:
            coord = np.full(self.R, self.t % self.n, dtype=np.int64)
        if self.config.lazy:
            coord = np.where(u[:, 0] < 0.5, LAZY, coord)
        active = np.flatnonzero(coord != LAZY)
        if self.target.is_gaussian:
            self._gaussian_update(active, coord[active], self._z[active, self._pos])
        else:
            for r in active:
                slc = make_slice(self.target, self.X[r], int(coord[r]))
                self.X[r, coord[r]] = sample_rejection(slc, self.streams[r].value)[0]
        self._pos += 1
        self.t += 1
        return coord

    def _gaussian_update(self, rows: np.ndarray, idx: np.ndarray, z: np.ndarray):
        if len(rows) == 0:
            return
        D = self.X[rows] - self._m
        Prow = self._P[idx]
        # fixed summation order so a replica's result does not depend on batch size
        cross = np.zeros(len(rows))
        for j in range(self.n):
            cross += Prow[:, j] * D[:, j]
        di = D[np.arange(len(rows)), idx]
        lam = self._diag[idx]
        cross -= lam * di
        self.X[rows, idx] = self._m[idx] - cross / lam + self._sd[idx] * z


def _start_states(start_sampler, streams: Sequence[ChainStreams], n: int) -> np.ndarray:
    X = np.empty((len(streams), n))
    if not getattr(start_sampler, "uses_rng", True):
        X[:] = np.asarray(start_sampler(None), dtype=float)
        return X
    for k, s in enumerate(streams):
        X[k] = np.asarray(start_sampler(s.start), dtype=float)
    return X


def step(target: TargetDensity, state, config: ChainConfig, streams: ChainStreams,
         t: int = 0) -> tuple[np.ndarray, int]:
    """One transition from ``state`` at step index ``t``.

    Returns the new state and the coordinate updated (``LAZY`` for a no-op).
    Uses exactly the same draws as step ``t`` of :func:`run`.
    """
    eng = _Engine(target, np.asarray(state, dtype=float)[None, :], config, [streams])
    eng.t = t
    eng._u = streams.control.random(2).reshape(1, 1, 2)
    if target.is_gaussian:
        eng._z = streams.value.standard_normal(1).reshape(1, 1)
    coord = int(eng.advance()[0])
    return eng.X[0].copy(), coord


@dataclass
class Trajectory:
    """Stored chain states; ``states[k]`` is the state after ``steps[k]`` steps."""

    states: np.ndarray
    steps: np.ndarray
    coordinates: np.ndarray
    seed: int
    config: ChainConfig
    replica: int = 0
    target: dict = field(default_factory=dict)

    @property
    def T(self) -> int:
        return len(self.coordinates)

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    def metadata(self) -> dict:
        return {"target": self.target, "seed": self.seed, "replica": self.replica,
                "config": asdict(self.config), "rng": RNG_ALGORITHM, "T": self.T}


def _trajectories(target, X0, T, config, base_seed, replicas, start_streams=None):
    streams = start_streams or [replica_streams(base_seed, k) for k in range(replicas)]
    eng = _Engine(target, X0, config, streams)
    thin = config.thinning(target.dim)
    stored = [0] + [s for s in range(1, T + 1) if s % thin == 0 or s == T]
    states = np.empty((len(stored), eng.R, target.dim))
    states[0] = eng.X
    coords = np.empty((eng.R, T), dtype=np.int64)
    k = 1
    for s in range(1, T + 1):
        coords[:, s - 1] = eng.advance()
        if k < len(stored) and stored[k] == s:
            states[k] = eng.X
            k += 1
    desc = target.describe()
    return [Trajectory(states[:, r].copy(), np.array(stored), coords[r].copy(), int(base_seed),
                       config, r, desc) for r in range(eng.R)]


def run(target: TargetDensity, x0, T: int, config: ChainConfig) -> Trajectory:
    """Run replica 0 of ``config.seed`` from the point ``x0`` for ``T`` steps."""
    if T < 0:
        raise ValueError("T must be >= 0")
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (target.dim,):
        raise ValueError(f"x0 has shape {x0.shape}, expected ({target.dim},)")
    return _trajectories(target, x0[None, :], T, config, config.seed, 1)[0]


def run_ensemble(target: TargetDensity, start_sampler, replicas: int, T: int,
                 base_seed: int, config: ChainConfig | None = None) -> list[Trajectory]:
    """Independent replicas; replica ``k`` uses the streams of ``(base_seed, k)``."""
    if replicas < 1:
        raise ValueError("replicas must be >= 1")
    config = config or ChainConfig(seed=base_seed)
    streams = [replica_streams(base_seed, k) for k in range(replicas)]
    X0 = _start_states(start_sampler, streams, target.dim)
    return _trajectories(target, X0, T, config, base_seed, replicas, streams)


@dataclass
class EnsembleRun:
    """Ensemble states at selected step counts."""

    checkpoints: list[int]
    states: list[np.ndarray]
    base_seed: int
    config: ChainConfig

    def at(self, t: int) -> np.ndarray:
        return self.states[self.checkpoints.index(t)]


def simulate_ensemble(target: TargetDensity, start_sampler, replicas: int,
                      checkpoints: Iterable[int], base_seed: int,
                      config: ChainConfig | None = None,
                      callback: Callable[[int, np.ndarray], bool] | None = None) -> EnsembleRun:
    """Advance ``replicas`` chains, keeping the ensemble at each checkpoint.

    ``callback(t, X)`` runs at each checkpoint; returning True stops early.
    """
    config = config or ChainConfig(seed=base_seed)
    cps = sorted(set(int(c) for c in checkpoints))
    if cps and cps[0] < 0:
        raise ValueError("checkpoints must be >= 0")
    streams = [replica_streams(base_seed, k) for k in range(replicas)]
    eng = _Engine(target, _start_states(start_sampler, streams, target.dim), config, streams)
    kept_t, kept = [], []
    for c in cps:
        while eng.t < c:
            eng.advance()
        kept_t.append(c)
        kept.append(eng.X.copy())
        if callback is not None and callback(c, kept[-1]):
            break
    return EnsembleRun(kept_t, kept, int(base_seed), config)


def simulate_until(target: TargetDensity, start_sampler, replicas: int, base_seed: int,
                   config: ChainConfig | None = None, until: str | int = "cover",
                   T_max: int = 100_000) -> tuple[np.ndarray, np.ndarray]:
    """Per-replica stopping: capture each replica's state when it first
    satisfies ``until``.

    ``until="cover"`` stops once every coordinate has been updated at least
    once; an integer ``m`` stops after ``m`` non-lazy updates. Returns the
    captured states and the step at which each was captured (-1 if ``T_max``
    ran out first, in which case the state at ``T_max`` is returned).
    """
    config = config or ChainConfig(seed=base_seed)
    streams = [replica_streams(base_seed, k) for k in range(replicas)]
    eng = _Engine(target, _start_states(start_sampler, streams, target.dim), config, streams)
    out = eng.X.copy()
    when = np.full(replicas, -1, dtype=np.int64)
    touched = np.zeros((replicas, target.dim), dtype=bool)
    updates = np.zeros(replicas, dtype=np.int64)
    if until != "cover" and int(until) == 0:
        return out, np.zeros(replicas, dtype=np.int64)
    pending = np.ones(replicas, dtype=bool)
    while pending.any() and eng.t < T_max:
        coord = eng.advance()
        act = coord != LAZY
        if until == "cover":
            rows = np.flatnonzero(act)
            touched[rows, coord[rows]] = True
            done = pending & touched.all(axis=1)
        else:
            updates += act
            done = pending & (updates >= int(until))
        out[done] = eng.X[done]
        when[done] = eng.t
        pending &= ~done
    out[pending] = eng.X[pending]
    return out, when


@dataclass
class GaussianLaw:
    """Law Normal(mean, cov) of the chain state."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        self.mean = np.array(self.mean, dtype=float)
        self.cov = np.array(self.cov, dtype=float)
        n = len(self.mean)
        if self.cov.shape != (n, n):
            raise ValueError("covariance shape does not match mean")
        if np.linalg.eigvalsh(0.5 * (self.cov + self.cov.T))[0] < -1e-12 * max(1.0, np.abs(self.cov).max()):
            raise ValueError("covariance has a negative eigenvalue")

    @classmethod
    def point(cls, x) -> "GaussianLaw":
        x = np.asarray(x, dtype=float)
        return cls(x, np.zeros((len(x), len(x))))

    def _root(self) -> np.ndarray:
        w, V = np.linalg.eigh(0.5 * (self.cov + self.cov.T))
        return V * np.sqrt(np.clip(w, 0.0, None))

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        return self.mean + self._root() @ rng.standard_normal(len(self.mean))

    def sampler(self) -> Callable[[np.random.Generator], np.ndarray]:
        root, mean = self._root(), self.mean.copy()
        return lambda rng: mean + root @ rng.standard_normal(len(mean))

    def as_target(self) -> TargetDensity:
        return make_gaussian(np.linalg.inv(self.cov), self.mean)


def gaussian_law_step(precision, mean_target, law: GaussianLaw, i: int) -> GaussianLaw:
    """Exact law after a non-lazy update of coordinate ``i``."""
    P = np.asarray(precision, dtype=float)
    m_t = np.asarray(mean_target, dtype=float)
    n = len(m_t)
    lam = P[i, i]
    A = np.eye(n)
    A[i] = -P[i] / lam
    A[i, i] = 0.0
    b = np.zeros(n)
    b[i] = m_t[i] + (P[i] @ m_t - lam * m_t[i]) / lam
    cov = A @ law.cov @ A.T
    cov[i, i] += 1.0 / lam
    return GaussianLaw(A @ law.mean + b, 0.5 * (cov + cov.T))


def sweep_law(precision, mean_target, law: GaussianLaw, order: Sequence[int] | None = None) -> GaussianLaw:
    """Law after one systematic sweep (coordinates ``0..n-1`` by default)."""
    order = range(len(law.mean)) if order is None else order
    for i in order:
        law = gaussian_law_step(precision, mean_target, law, i)
    return law


def kl_to_target(law: GaussianLaw, precision, mean_target) -> float:
    """KL(law || Normal(mean_target, precision^-1))."""
    P = np.asarray(precision, dtype=float)
    n = len(law.mean)
    try:
        chol = np.linalg.cholesky(law.cov)
    except np.linalg.LinAlgError:
        raise ValueError("law covariance is singular; complete at least one full sweep "
                         "over all coordinates before computing KL") from None
    logdet_c = 2.0 * np.log(np.diag(chol)).sum()
    _, logdet_p = np.linalg.slogdet(P)
    d = law.mean - np.asarray(mean_target, dtype=float)
    kl = 0.5 * (np.trace(P @ law.cov) + d @ P @ d - n - logdet_c - logdet_p)
    return max(float(kl), 0.0)


def write_trajectory_csv(traj: Trajectory, path) -> None:
    """CSV with '#'-prefixed JSON metadata lines, then step, coordinate_or_lazy, x_0..."""
    n = traj.states.shape[1]
    with open(path, "w", newline="") as fh:
        for key, val in traj.metadata().items():
            fh.write(f"# {key}: {json.dumps(val, sort_keys=True)}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "coordinate_or_lazy"] + [f"x_{j}" for j in range(n)])
        for s, x in zip(traj.steps, traj.states):
            if s == 0:
                c = ""
            else:
                c = traj.coordinates[s - 1]
                c = "lazy" if c == LAZY else str(c)
            w.writerow([int(s), c] + [repr(float(v)) for v in x])


def read_trajectory_csv(path) -> tuple[dict, np.ndarray, np.ndarray, list]:
    """Returns (metadata, steps, states, coordinate column)."""
    meta, rows = {}, []
    with open(path) as fh:
        lines = fh.read().splitlines()
    body = []
    for line in lines:
        if line.startswith("# "):
            key, val = line[2:].split(": ", 1)
            meta[key] = json.loads(val)
        else:
            body.append(line)
    reader = csv.reader(body)
    next(reader)
    for r in reader:
        rows.append(r)
    steps = np.array([int(r[0]) for r in rows])
    states = np.array([[float(v) for v in r[2:]] for r in rows])
    coords = [r[1] for r in rows]
    return meta, steps, states, coords
