"""Mergeable ensemble statistics: density, number fluctuations, pair correlators.

All accumulators are exact integers (popcounts and pair counts), so merging
is associative and commutative and finalized values do not depend on how the
trajectories were split between workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .lattice import SpinRow


class EmptyStatisticsError(ValueError):
    pass


@dataclass
class EnsembleStats:
    """Accumulators for ``n_traj`` trajectories of ``steps`` steps on ``n_sites``.

    Row-level sums run over the measurement window ``meas_start <= t <= steps``;
    ``pop_t``/``alive_t`` cover every time step ``0..steps``.  ``fire_pair``
    holds translation-summed pair counts of the constraint pattern that
    produced each window row (only filled by the two-site gate).
    """

    n_sites: int
    steps: int
    meas_start: int
    n_traj: int = 0
    n_absorbed: int = 0
    sum_pop: int = 0
    sum_pop_sq: int = 0
    sum_pop_traj_sq: int = 0
    pop_t: np.ndarray = None
    alive_t: np.ndarray = None
    pair: np.ndarray = None
    pair_traj_sq: np.ndarray = None
    fire_pair: np.ndarray = None
    has_fire: bool = False
    _cur_pop: int = field(default=0, repr=False)
    _cur_pair: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if not 1 <= self.meas_start <= self.steps:
            raise ValueError("measurement window must lie within 1..steps")
        nd = self.n_sites // 2 + 1
        for name, size in (("pop_t", self.steps + 1), ("alive_t", self.steps + 1),
                           ("pair", nd), ("pair_traj_sq", nd), ("fire_pair", nd)):
            if getattr(self, name) is None:
                setattr(self, name, np.zeros(size, dtype=np.int64))

    @property
    def window(self) -> int:
        return self.steps - self.meas_start + 1

    @property
    def n_rows(self) -> int:
        return self.n_traj * self.window

    def empty_like(self) -> "EnsembleStats":
        return EnsembleStats(self.n_sites, self.steps, self.meas_start, has_fire=self.has_fire)

    def merge(self, other: "EnsembleStats") -> "EnsembleStats":
        if (self.n_sites, self.steps, self.meas_start) != (other.n_sites, other.steps, other.meas_start):
            raise ValueError("cannot merge statistics of different shapes")
        return EnsembleStats(
            self.n_sites, self.steps, self.meas_start,
            n_traj=self.n_traj + other.n_traj,
            n_absorbed=self.n_absorbed + other.n_absorbed,
            sum_pop=self.sum_pop + other.sum_pop,
            sum_pop_sq=self.sum_pop_sq + other.sum_pop_sq,
            sum_pop_traj_sq=self.sum_pop_traj_sq + other.sum_pop_traj_sq,
            pop_t=self.pop_t + other.pop_t,
            alive_t=self.alive_t + other.alive_t,
            pair=self.pair + other.pair,
            pair_traj_sq=self.pair_traj_sq + other.pair_traj_sq,
            fire_pair=self.fire_pair + other.fire_pair,
            has_fire=self.has_fire and other.has_fire,
        )

    __add__ = merge

    def __eq__(self, other) -> bool:
        if not isinstance(other, EnsembleStats):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    # -- single-trajectory recording (reference path) --

    def begin_trajectory(self):
        self._cur_pop = 0
        self._cur_pair = np.zeros_like(self.pair)

    def record_row(self, row: SpinRow, t: int, fire: SpinRow | None = None) -> "EnsembleStats":
        bits = row.to_bits().astype(np.int64)
        pop = int(bits.sum())
        self.pop_t[t] += pop
        self.alive_t[t] += pop > 0
        if t >= self.meas_start:
            self.sum_pop += pop
            self.sum_pop_sq += pop * pop
            counts = pair_counts(bits)
            self.pair += counts
            if self._cur_pair is not None:
                self._cur_pop += pop
                self._cur_pair += counts
            if fire is not None:
                self.fire_pair += pair_counts(fire.to_bits().astype(np.int64))
        return self

    def end_trajectory(self, absorbed_at: int = -1):
        self.n_traj += 1
        self.n_absorbed += absorbed_at >= 0
        self.sum_pop_traj_sq += self._cur_pop * self._cur_pop
        self.pair_traj_sq += self._cur_pair * self._cur_pair
        self._cur_pair = None

    # -- persistence --

    def to_dict(self) -> dict:
        return {
            "n_sites": self.n_sites, "steps": self.steps, "meas_start": self.meas_start,
            "n_traj": self.n_traj, "n_absorbed": self.n_absorbed,
            "sum_pop": int(self.sum_pop), "sum_pop_sq": int(self.sum_pop_sq),
            "sum_pop_traj_sq": int(self.sum_pop_traj_sq),
            "pop_t": self.pop_t.tolist(), "alive_t": self.alive_t.tolist(),
            "pair": self.pair.tolist(), "pair_traj_sq": self.pair_traj_sq.tolist(),
            "fire_pair": self.fire_pair.tolist(), "has_fire": self.has_fire,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EnsembleStats":
        arrays = {k: np.asarray(d[k], dtype=np.int64)
                  for k in ("pop_t", "alive_t", "pair", "pair_traj_sq", "fire_pair")}
        scalars = {k: d[k] for k in ("n_sites", "steps", "meas_start", "n_traj", "n_absorbed",
                                     "sum_pop", "sum_pop_sq", "sum_pop_traj_sq", "has_fire")}
        return cls(**scalars, **arrays)


def pair_counts(bits: np.ndarray) -> np.ndarray:
    """counts[d] = sum_m b_m b_{m+d} (periodic) for d = 0..N/2."""
    n = bits.shape[0]
    return np.array([int(np.dot(bits, np.roll(bits, -d))) for d in range(n // 2 + 1)], dtype=np.int64)


def record_row(stats: EnsembleStats, row: SpinRow, t: int) -> EnsembleStats:
    return stats.record_row(row, t)


@dataclass(frozen=True)
class CorrelationRecord:
    d: int
    c2: float
    connected: float
    c2_err: float = float("nan")

    @property
    def c(self) -> float:
        return math.sqrt(self.c2)


@dataclass
class Observables:
    n_sites: int
    n_traj: int
    density: float
    density_err: float
    var_ratio: float
    correlations: list
    density_t: np.ndarray
    survival_t: np.ndarray
    absorbed_fraction: float
    fire_density: float | None = None
    fire_pair: np.ndarray | None = None


def finalize(stats: EnsembleStats, n_sites: int | None = None) -> Observables:
    """Turn integer accumulators into densities, (dN)^2/N and correlators."""
    n = stats.n_sites if n_sites is None else n_sites
    if n != stats.n_sites:
        raise ValueError("n_sites does not match the statistics")
    rows = stats.n_rows
    if rows == 0:
        raise EmptyStatisticsError("no samples recorded")
    mean_pop = stats.sum_pop / rows
    density = stats.sum_pop / (rows * n)
    # variance of the excitation number, divided by N
    var_ratio = max(stats.sum_pop_sq / rows - mean_pop * mean_pop, 0.0) / n
    nt = stats.n_traj
    scale = stats.window * n
    density_err = _stderr(stats.sum_pop / scale, stats.sum_pop_traj_sq / scale**2, nt)
    corr = []
    for d in range(n // 2 + 1):
        c2 = stats.pair[d] / (rows * n)
        err = _stderr(stats.pair[d] / scale, stats.pair_traj_sq[d] / scale**2, nt)
        corr.append(CorrelationRecord(d, c2, c2 - density * density, err))
    fire_density = fire_pair = None
    if stats.has_fire:
        fire_pair = stats.fire_pair / (rows * n)
        fire_density = float(fire_pair[0])
    return Observables(
        n_sites=n, n_traj=nt, density=density, density_err=density_err,
        var_ratio=var_ratio, correlations=corr,
        density_t=stats.pop_t / (nt * n), survival_t=stats.alive_t / nt,
        absorbed_fraction=stats.n_absorbed / nt,
        fire_density=fire_density, fire_pair=fire_pair,
    )


def _stderr(total, total_sq, count):
    if count < 2:
        return float("nan")
    mean = total / count
    var = max(total_sq / count - mean * mean, 0.0) * count / (count - 1)
    return math.sqrt(var / count)
