"""Stochastic slice-to-slice propagation and trajectory orchestration.

The two-site gate gives the Domany-Kinzel automaton with p1 = p2 = x: a
target turns up with probability x when at least one of its controls
(m, m+1) on the previous slice is up.  The K-site gate turns target m up
with probability x_k, k being the number of up sites in m..m+K-1.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import _kernels as kern
from .lattice import ConfigError, LatticeConfig, SpinRow, count_in_window
from .observables import EnsembleStats
from .rng import INIT, STEP, RngStream, derive_key

SCALE53 = 2.0**53


def flip_probability(alpha: float) -> float:
    return math.sin(alpha / 2.0) ** 2


@dataclass(frozen=True)
class GateParams:
    """Two-control gate: rotation angle ``alpha`` and flip probability x."""

    x: float
    alpha: float = None

    def __post_init__(self):
        if not 0.0 <= self.x <= 1.0:
            raise ConfigError(f"flip probability x={self.x} outside [0, 1]")
        if self.alpha is None:
            object.__setattr__(self, "alpha", 2.0 * math.asin(math.sqrt(self.x)))
        elif abs(flip_probability(self.alpha) - self.x) > 1e-12:
            raise ConfigError("x must equal sin^2(alpha/2)")

    @classmethod
    def from_alpha(cls, alpha: float) -> "GateParams":
        return cls(flip_probability(alpha), alpha)

    K = 2

    @property
    def xs(self) -> tuple:
        return (0.0, self.x, self.x)

    @property
    def absorbing_down(self) -> bool:
        return True

    @property
    def absorbing_up(self) -> bool:
        return self.x == 1.0

    def as_general(self) -> "GeneralGateParams":
        return GeneralGateParams(self.xs)


@dataclass(frozen=True)
class GeneralGateParams:
    """K-control gate; ``xs[k]`` is the flip probability with k controls up."""

    xs: tuple

    def __post_init__(self):
        xs = tuple(float(v) for v in self.xs)
        object.__setattr__(self, "xs", xs)
        if len(xs) < 2:
            raise ConfigError("need at least x_0 and x_1")
        for k, v in enumerate(xs):
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"x_{k}={v} outside [0, 1]")

    @classmethod
    def from_alphas(cls, alphas) -> "GeneralGateParams":
        return cls(tuple(flip_probability(a) for a in alphas))

    @property
    def K(self) -> int:
        return len(self.xs) - 1

    @property
    def alphas(self) -> tuple:
        return tuple(2.0 * math.asin(math.sqrt(v)) for v in self.xs)

    @property
    def absorbing_down(self) -> bool:
        return self.xs[0] == 0.0

    @property
    def absorbing_up(self) -> bool:
        return self.xs[-1] == 1.0


Gate = GateParams | GeneralGateParams


def thresholds(xs) -> tuple[np.ndarray, np.ndarray]:
    """53-bit integer thresholds (u < thr / 2**53) and the x == 1 flags."""
    thr = np.array([min(int(math.floor(v * SCALE53)), 2**53) for v in xs], dtype=np.uint64)
    certain = np.array([v >= 1.0 for v in xs], dtype=np.bool_)
    return thr, certain


def quantized(xs) -> np.ndarray:
    thr, certain = thresholds(xs)
    return np.where(certain, 1.0, thr.astype(np.float64) / SCALE53)


_INIT_KINDS = {"all_up": kern.INIT_ALL_UP, "all_down": kern.INIT_ALL_DOWN,
               "seed": kern.INIT_SEED, "random": kern.INIT_RANDOM}


@dataclass(frozen=True)
class InitialCondition:
    kind: str = "all_up"
    site: int = 0
    density: float = 0.5

    def __post_init__(self):
        if self.kind not in _INIT_KINDS:
            raise ConfigError(f"unknown initial condition {self.kind!r}")
        if not 0.0 <= self.density <= 1.0:
            raise ConfigError("initial density must lie in [0, 1]")

    @classmethod
    def parse(cls, text: str) -> "InitialCondition":
        """``all-up``, ``all-down``, ``seed[:site]`` or ``random:p``."""
        name, _, arg = text.strip().partition(":")
        name = name.replace("-", "_")
        if name == "seed":
            return cls("seed", site=int(arg) if arg else 0)
        if name == "random":
            return cls("random", density=float(arg) if arg else 0.5)
        if arg:
            raise ConfigError(f"{name} takes no argument")
        return cls(name)

    def __str__(self) -> str:
        if self.kind == "seed":
            return f"seed:{self.site}"
        if self.kind == "random":
            return f"random:{self.density!r}"
        return self.kind.replace("_", "-")

    def row(self, n: int, seed: int, trajectory: int) -> SpinRow:
        if self.kind == "seed" and not 0 <= self.site < n:
            raise ConfigError(f"seed site {self.site} outside lattice of {n}")
        thr, certain = thresholds([self.density])
        out = np.zeros((n + 63) // 64, dtype=np.uint64)
        key = np.uint64(derive_key(np.uint64(seed & (2**64 - 1)), trajectory, INIT))
        kern.init_row(_INIT_KINDS[self.kind], n, self.site, thr[0], certain[0], key, out)
        return SpinRow(n, out)


@dataclass(frozen=True)
class TrajectorySpec:
    lattice: LatticeConfig
    gate: Gate
    steps: int
    init: InitialCondition = field(default_factory=InitialCondition)
    seed: int = 0
    meas_window: int | None = None

    def __post_init__(self):
        if self.steps < 1:
            raise ConfigError("steps must be >= 1")
        if self.gate.K > self.lattice.n_sites:
            raise ConfigError(f"window K={self.gate.K} exceeds N={self.lattice.n_sites}")
        if self.meas_window is not None and not 1 <= self.meas_window <= self.steps:
            raise ConfigError("meas_window must lie in [1, steps]")

    @property
    def window(self) -> int:
        if self.meas_window is not None:
            return self.meas_window
        return max(1, round(0.2 * self.steps))

    @property
    def meas_start(self) -> int:
        return self.steps - self.window + 1

    @property
    def dk_mode(self) -> bool:
        return isinstance(self.gate, GateParams)

    def empty_stats(self) -> EnsembleStats:
        return EnsembleStats(self.lattice.n_sites, self.steps, self.meas_start,
                             has_fire=self.dk_mode)


# -- single steps --

def _step_index(stream: RngStream, t: int | None) -> int:
    if t is None:
        t = stream.counter
        stream.counter += 1
    return t


def dk_step(row: SpinRow, gate: GateParams, stream: RngStream, t: int | None = None,
            fire_out: np.ndarray | None = None) -> SpinRow:
    """One synchronous two-site update.  ``t`` selects the counter block
    (defaults to the stream counter, which then advances by one)."""
    t = _step_index(stream, t)
    thr, certain = thresholds([gate.x])
    out = np.empty_like(row.words)
    fire = np.empty_like(row.words) if fire_out is None else fire_out
    kern.dk_step_words(row.words, row.n, thr[0], certain[0], stream.key, t, out, fire)
    return SpinRow(row.n, out)


def general_step(row: SpinRow, gate: GeneralGateParams, stream: RngStream,
                 t: int | None = None) -> SpinRow:
    if gate.K > row.n:
        raise ConfigError(f"window K={gate.K} exceeds N={row.n}")
    t = _step_index(stream, t)
    thr, certain = thresholds(gate.xs)
    nw = row.words.shape[0]
    out = np.empty_like(row.words)
    shifted = np.zeros((gate.K, nw), dtype=np.uint64)
    masks = np.zeros((nw, gate.K + 1), dtype=np.uint64)
    kern.general_step_words(row.words, row.n, gate.K, thr, certain, stream.key, t, out, shifted, masks)
    return SpinRow(row.n, out)


def step_with_uniforms(row: SpinRow, gate: Gate, u: np.ndarray) -> SpinRow:
    """Reference update with explicit per-site uniforms: bit m = [u_m < x_k(m)]."""
    xs = quantized(gate.xs)
    counts = np.array([count_in_window(row, m, gate.K) for m in range(row.n)])
    return SpinRow.from_bits(np.asarray(u) < xs[counts])


def implied_uniforms(stream: RngStream, t: int, n: int) -> np.ndarray:
    """The per-site uniforms that the packed kernels consume at step ``t``."""
    return kern.implied_uniforms(stream.key, t, n)


# -- trajectories --

@dataclass
class TrajectoryResult:
    final_row: SpinRow
    absorbed_at: int
    stats: EnsembleStats


def run_trajectory(spec: TrajectorySpec, recorder: EnsembleStats | None = None,
                   trajectory: int = 0) -> TrajectoryResult:
    """Propagate one trajectory row by row, calling ``recorder.record_row`` each step.

    Reference path: runs in Python around the per-step kernels.  Once the row
    hits an absorbing configuration the remaining steps are filled in without
    drawing further randomness.
    """
    stats = spec.empty_stats() if recorder is None else recorder
    n = spec.lattice.n_sites
    gate = spec.gate
    stream = RngStream(spec.seed, trajectory, STEP)
    row = spec.init.row(n, spec.seed, trajectory)
    fire = np.zeros_like(row.words)
    absorbed_at = -1
    stats.begin_trajectory()
    for t in range(spec.steps + 1):
        pop = row.popcount()
        if pop == 0 and gate.absorbing_down:
            absorbed_at = t
            break
        if pop == n and gate.absorbing_up:
            fire_row = SpinRow.ones(n) if spec.dk_mode else None
            for tt in range(t, spec.steps + 1):
                stats.record_row(row, tt, fire_row)
            break
        stats.record_row(row, t, SpinRow(n, fire.copy()) if spec.dk_mode else None)
        if t == spec.steps:
            break
        if spec.dk_mode:
            row = dk_step(row, gate, stream, t + 1, fire_out=fire)
        else:
            row = general_step(row, gate, stream, t + 1)
    stats.end_trajectory(absorbed_at)
    return TrajectoryResult(row, absorbed_at, stats)


class Interrupted(RuntimeError):
    """Raised by ``run_ensemble`` when ``stop_after`` trajectories are done."""

    def __init__(self, stats: EnsembleStats):
        super().__init__(f"stopped after {stats.n_traj} trajectories")
        self.stats = stats


def _run_block(spec: TrajectorySpec, first: int, last: int) -> EnsembleStats:
    n = spec.lattice.n_sites
    stats = spec.empty_stats()
    if spec.dk_mode:
        thr, certain = thresholds([0.0, spec.gate.x])
        K = 1
    else:
        thr, certain = thresholds(spec.gate.xs)
        K = spec.gate.K
    ithr, icert = thresholds([spec.init.density])
    scalars = np.zeros(3, dtype=np.int64)
    absorbed = np.empty(last - first, dtype=np.int64)
    if spec.init.kind == "seed" and not 0 <= spec.init.site < n:
        raise ConfigError(f"seed site {spec.init.site} outside lattice of {n}")
    kern.run_chunk(first, last, np.uint64(spec.seed & (2**64 - 1)), n, spec.steps, K,
                   spec.dk_mode, thr, certain, _INIT_KINDS[spec.init.kind], spec.init.site,
                   ithr[0], icert[0], spec.meas_start, stats.pop_t, stats.alive_t,
                   stats.pair, stats.pair_traj_sq, stats.fire_pair, scalars, absorbed)
    stats.sum_pop, stats.sum_pop_sq, stats.sum_pop_traj_sq = (int(v) for v in scalars)
    stats.n_traj = last - first
    stats.n_absorbed = int((absorbed >= 0).sum())
    return stats


def run_ensemble(spec: TrajectorySpec, n_traj: int, workers: int = 1, *,
                 chunk: int = 64, start: EnsembleStats | None = None,
                 checkpoint_every: int = 0,
                 on_checkpoint: Callable[[EnsembleStats], None] | None = None,
                 stop_after: int | None = None) -> EnsembleStats:
    """Run trajectories ``0 .. n_traj-1`` and merge their statistics.

    Trajectory ``i`` always uses the streams keyed by ``(seed, i)``, so the
    result is independent of ``workers`` and ``chunk``.  ``start`` resumes
    from statistics of the first ``start.n_traj`` trajectories;
    ``on_checkpoint`` is called every ``checkpoint_every`` completed
    trajectories with the statistics so far.
    """
    if n_traj < 1:
        raise ConfigError("n_traj must be >= 1")
    total = spec.empty_stats() if start is None else start
    done = total.n_traj
    if done > n_traj:
        raise ConfigError("resume state has more trajectories than requested")
    if checkpoint_every:
        chunk = min(chunk, checkpoint_every)
    blocks = [(a, min(a + chunk, n_traj)) for a in range(done, n_traj, chunk)]
    next_mark = (done // checkpoint_every + 1) * checkpoint_every if checkpoint_every else None

    def merged(results):
        nonlocal total, next_mark
        for part in results:
            total = total.merge(part)
            if next_mark is not None and total.n_traj >= next_mark and on_checkpoint:
                on_checkpoint(total)
                next_mark = (total.n_traj // checkpoint_every + 1) * checkpoint_every
            if stop_after is not None and total.n_traj >= stop_after and total.n_traj < n_traj:
                raise Interrupted(total)

    if workers <= 1:
        merged(_run_block(spec, a, b) for a, b in blocks)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_run_block, spec, a, b) for a, b in blocks]
            try:
                merged(f.result() for f in futures)
            finally:
                for f in futures:
                    f.cancel()
    return total
