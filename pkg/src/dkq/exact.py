"""Brute-force evolution of the full 2^N distribution for small rings.

Configurations are indexed by bitmask (bit m = site m).  One step groups the
source distribution by the per-site control class (idle/fired for the
two-site gate, the window count k for the K-site gate) and then applies one
2 x n_classes matrix per site, so the cost is O(N * n_classes^N).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .automaton import Gate, GateParams, GeneralGateParams


class CapacityError(RuntimeError):
    pass


MAX_SITES = 22
MAX_CLASS_ENTRIES = 2**24


@dataclass
class ProbVector:
    n: int
    probs: np.ndarray

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if self.probs.shape != (2**self.n,):
            raise ValueError("probability vector must have 2^N entries")

    @classmethod
    def delta(cls, n: int, config: int) -> "ProbVector":
        _check_size(n)
        p = np.zeros(2**n)
        p[config] = 1.0
        return cls(n, p)

    @classmethod
    def all_up(cls, n: int) -> "ProbVector":
        return cls.delta(n, 2**n - 1)

    @classmethod
    def all_down(cls, n: int) -> "ProbVector":
        return cls.delta(n, 0)

    def total(self) -> float:
        return float(self.probs.sum())

    def density(self) -> float:
        return float(self.probs @ _bits(self.n).sum(axis=1)) / self.n

    def site_density(self, i: int) -> float:
        return float(self.probs @ _bits(self.n)[:, i])

    def site_pair(self, i: int, j: int) -> float:
        b = _bits(self.n)
        return float(self.probs @ (b[:, i] * b[:, j]))

    def pair_correlation(self, d: int) -> float:
        """Translation-averaged <n_m n_{m+d}>."""
        b = _bits(self.n).astype(np.float64)
        return float(self.probs @ (b * np.roll(b, -d, axis=1)).mean(axis=1))

    def pair_correlations(self) -> np.ndarray:
        return np.array([self.pair_correlation(d) for d in range(self.n // 2 + 1)])


def _check_size(n: int, limit: int = MAX_SITES):
    if n > limit:
        raise CapacityError(f"N={n} exceeds the exact-evolution limit of {limit} sites")
    if n < 2:
        raise ValueError("need at least two sites")


_bits_cache: dict[int, np.ndarray] = {}


def _bits(n: int) -> np.ndarray:
    if n not in _bits_cache:
        s = np.arange(2**n, dtype=np.int64)
        _bits_cache.clear()
        _bits_cache[n] = ((s[:, None] >> np.arange(n)) & 1).astype(np.int8)
    return _bits_cache[n]


def _fired(n: int) -> np.ndarray:
    s = np.arange(2**n, dtype=np.int64)
    return s | (s >> 1) | ((s & 1) << (n - 1))


def _class_xs(gate: Gate) -> np.ndarray:
    return np.array([0.0, gate.x]) if isinstance(gate, GateParams) else np.asarray(gate.xs)


def site_classes(n: int, gate: Gate, site: int) -> np.ndarray:
    """Control class of ``site`` for every configuration."""
    if isinstance(gate, GateParams):
        return (_fired(n) >> site) & 1
    if gate.K > n:
        raise ValueError(f"window K={gate.K} exceeds N={n}")
    s = np.arange(2**n, dtype=np.int64)
    return sum((s >> ((site + j) % n)) & 1 for j in range(gate.K))


def class_codes(n: int, gate: Gate) -> np.ndarray:
    """Pattern code sum_m c_m * n_classes**m for every configuration."""
    if isinstance(gate, GateParams):
        return _fired(n)
    ncls = gate.K + 1
    codes = np.zeros(2**n, dtype=np.int64)
    for m in reversed(range(n)):
        codes = codes * ncls + site_classes(n, gate, m)
    return codes


def exact_step(p: ProbVector, gate: Gate, max_sites: int = MAX_SITES) -> ProbVector:
    n = p.n
    _check_size(n, max_sites)
    ncls = 2 if isinstance(gate, GateParams) else gate.K + 1
    if ncls**n > MAX_CLASS_ENTRIES:
        raise CapacityError(f"{ncls}^{n} class patterns exceed the oracle capacity")
    codes, xs = class_codes(n, gate), _class_xs(gate)
    q = np.bincount(codes, weights=p.probs, minlength=ncls**n).reshape((ncls,) * n)
    # row 0: target stays down, row 1: target flips up
    m = np.vstack([1.0 - xs, xs])
    for _ in range(n):
        q = np.tensordot(m, q, axes=(1, q.ndim - 1))
    return ProbVector(n, q.reshape(-1))


def evolve(p: ProbVector, gate: Gate, steps: int) -> list[ProbVector]:
    """[p_0, p_1, ..., p_steps]."""
    out = [p]
    for _ in range(steps):
        out.append(exact_step(out[-1], gate))
    return out


def fire_probabilities(p: ProbVector, sites, gate: Gate | None = None) -> np.ndarray:
    """Joint distribution of the control classes of ``sites``.

    Indexed ``[c_0, c_1, ...]`` in the order of ``sites``; for the two-site
    gate class 1 means the constraint fired and class 0 means idle.
    """
    sites = list(sites)
    if len(set(sites)) != len(sites):
        raise ValueError("sites must be distinct")
    gate = GateParams(1.0) if gate is None else gate
    ncls = len(_class_xs(gate))
    code = np.zeros(2**p.n, dtype=np.int64)
    for s in sites:
        code = code * ncls + site_classes(p.n, gate, s)
    joint = np.bincount(code, weights=p.probs, minlength=ncls ** len(sites))
    return joint.reshape((ncls,) * len(sites))


def local_state(x: float) -> np.ndarray:
    """U|down><down|U^dagger for flip probability x, basis (up, down)."""
    off = np.sqrt(x * (1.0 - x))
    return np.array([[x, off], [off, 1.0 - x]], dtype=np.complex128)


@dataclass(frozen=True)
class LocalStatePair:
    x: float

    @property
    def rho_fired(self) -> np.ndarray:
        return local_state(self.x)

    @property
    def rho_idle(self) -> np.ndarray:
        return local_state(0.0)


def exact_reduced_state(p_prev: ProbVector, gate: Gate, sites) -> np.ndarray:
    """Reduced density matrix on ``sites`` one step after ``p_prev``.

    A mixture over control-class patterns of products of the local states
    ``local_state(x_c)``; the first listed site is the leftmost tensor factor.
    """
    sites = list(sites)
    if not 1 <= len(sites) <= 4:
        raise ValueError("between 1 and 4 sites supported")
    joint = fire_probabilities(p_prev, sites, gate)
    locals_ = [local_state(v) for v in _class_xs(gate)]
    dim = 2 ** len(sites)
    rho = np.zeros((dim, dim), dtype=np.complex128)
    for idx in np.ndindex(joint.shape):
        w = joint[idx]
        if w == 0.0:
            continue
        term = np.ones((1, 1), dtype=np.complex128)
        for c in idx:
            term = np.kron(term, locals_[c])
        rho += w * term
    return rho
