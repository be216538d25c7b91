"""Two-spin reduced states from classical moments and their local quantum uncertainty."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exact import local_state

SIGMA = (
    np.array([[0, 1], [1, 0]], dtype=np.complex128),
    np.array([[0, -1j], [1j, 0]], dtype=np.complex128),
    np.array([[1, 0], [0, -1]], dtype=np.complex128),
)
FEASIBILITY_TOL = 1e-10


class MomentInfeasibleError(ValueError):
    """The moments cannot come from the separable mixture at this x."""

    def __init__(self, violation: str, amount: float):
        super().__init__(f"infeasible moments: {violation} (violated by {amount:.3e})")
        self.violation = violation
        self.amount = amount


def mixture_weights(n_mean: float, n_pair: float, x: float) -> tuple[float, float, float]:
    """Weights (both fired, one fired, none fired) of the separable mixture.

    Raises MomentInfeasibleError when a weight is negative beyond
    FEASIBILITY_TOL; smaller violations are clamped and renormalized.
    """
    if not 0.0 < x <= 1.0:
        raise ValueError(f"x={x} must lie in (0, 1]")
    both = n_pair / x**2
    one = n_mean / x - both
    none = 1.0 - 2.0 * n_mean / x + both
    checks = (("<n_i n_j> >= 0", both), ("<n_i n_j> <= x <n>", one),
              ("1 - 2<n>/x + <n_i n_j>/x^2 >= 0", none))
    for name, w in checks:
        if w < -FEASIBILITY_TOL:
            raise MomentInfeasibleError(name, -w)
    if n_mean > x * (1.0 + FEASIBILITY_TOL):
        raise MomentInfeasibleError("<n> <= x", n_mean - x)
    both, one, none = max(both, 0.0), max(one, 0.0), max(none, 0.0)
    total = both + 2.0 * one + none
    return both / total, one / total, none / total


def build_rho_pair(n_mean: float, n_pair: float, x: float) -> np.ndarray:
    """4x4 state in basis (uu, ud, du, dd) reproducing <n> and <n_i n_j>."""
    both, one, none = mixture_weights(n_mean, n_pair, x)
    fired, idle = local_state(x), local_state(0.0)
    return (both * np.kron(fired, fired)
            + one * (np.kron(fired, idle) + np.kron(idle, fired))
            + none * np.kron(idle, idle))


def rho_pair_printed(n_mean: float, n_pair: float, x: float) -> np.ndarray:
    """The closed-form two-spin matrix with off-diagonals x * c, c = sqrt(<n_i n_j>).

    Kept only for comparison against ``build_rho_pair``; it does not
    reproduce the coherence of the underlying mixture for general x.
    """
    c = math.sqrt(n_pair)
    single = np.array([[c, x * c], [x * c, 1.0 - c]], dtype=np.complex128)
    corr = np.array([[0, 0, 0, 0], [0, 1, 0, x], [0, 0, 1, x], [0, x, x, -2]], dtype=np.complex128)
    return np.kron(single, single) + (n_mean - c) * corr


def printed_deviation(n_mean: float, n_pair: float, x: float) -> float:
    """Max-norm distance between the printed closed form and the mixture state."""
    return float(np.abs(rho_pair_printed(n_mean, n_pair, x) - build_rho_pair(n_mean, n_pair, x)).max())


def sqrt_psd(m: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    m = np.asarray(m, dtype=np.complex128)
    if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] > 16:
        raise ValueError("expected a square matrix of dimension <= 16")
    if np.abs(m - m.conj().T).max() > tol:
        raise ValueError("matrix is not Hermitian")
    vals, vecs = np.linalg.eigh(0.5 * (m + m.conj().T))
    if vals.min() < -tol * max(1.0, vals.max()):
        raise ValueError(f"matrix has negative eigenvalue {vals.min():.3e}")
    root = np.sqrt(np.clip(vals, 0.0, None))
    return (vecs * root) @ vecs.conj().T


@dataclass(frozen=True)
class LquResult:
    lqu: float
    w_matrix: np.ndarray
    lambda_max: float


def check_density_matrix(rho: np.ndarray, tol: float = 1e-10):
    if rho.shape != (4, 4):
        raise ValueError("two-spin density matrix must be 4x4")
    if np.abs(rho - rho.conj().T).max() > tol:
        raise ValueError("density matrix is not Hermitian")
    if abs(np.trace(rho).real - 1.0) > tol:
        raise ValueError("density matrix trace differs from 1")


def lqu(rho: np.ndarray, site: int = 0) -> LquResult:
    """1 - lambda_max(W), W_ab = Tr(sqrt(rho) s_a sqrt(rho) s_b), s acting on ``site``."""
    rho = np.asarray(rho, dtype=np.complex128)
    check_density_matrix(rho)
    root = sqrt_psd(rho)
    eye = np.eye(2)
    ops = [np.kron(s, eye) if site == 0 else np.kron(eye, s) for s in SIGMA]
    left = [root @ op for op in ops]
    w = np.empty((3, 3))
    for a in range(3):
        for b in range(3):
            w[a, b] = np.trace(left[a] @ left[b]).real
    w = 0.5 * (w + w.T)
    lam = float(np.linalg.eigvalsh(w)[-1])
    return LquResult(min(max(1.0 - lam, 0.0), 1.0), w, lam)


@dataclass(frozen=True)
class LquPoint:
    d: int
    value: float | None
    violation: str | None = None

    @property
    def log_value(self) -> float:
        if self.value is None or self.value <= 0.0:
            return float("-inf") if self.value == 0.0 else float("nan")
        return math.log(self.value)


def pipeline_moments(obs, x: float, estimator: str = "auto") -> tuple[float, np.ndarray]:
    """(<n>, <n_0 n_d> for d = 0..N/2) as fed to the two-spin construction.

    ``direct`` uses the sampled spin configurations.  ``fire`` uses the
    sampled constraint patterns, <n> = x P(fired) and <n_0 n_d> = x^2
    P(both fired) for d >= 1; it has the same expectation, lower variance
    and always yields feasible moments.  ``auto`` picks ``fire`` when it
    was recorded.
    """
    if estimator == "auto":
        estimator = "fire" if obs.fire_pair is not None else "direct"
    if estimator == "fire":
        if obs.fire_pair is None:
            raise ValueError("constraint-pattern statistics were not recorded")
        pairs = x * x * np.asarray(obs.fire_pair, dtype=np.float64)
        pairs[0] = x * obs.fire_density
        return x * obs.fire_density, pairs
    if estimator == "direct":
        return obs.density, np.array([c.c2 for c in obs.correlations])
    raise ValueError(f"unknown estimator {estimator!r}")


def lqu_profile(obs, x: float, distances=None, estimator: str = "auto") -> list[LquPoint]:
    """LQU of the two-spin state versus distance, from finalized observables."""
    n_mean, pairs = pipeline_moments(obs, x, estimator)
    if distances is None:
        distances = range(1, len(pairs))
    out = []
    for d in distances:
        try:
            rho = build_rho_pair(n_mean, float(pairs[d]), x)
        except MomentInfeasibleError as err:
            out.append(LquPoint(d, None, err.violation))
            continue
        out.append(LquPoint(d, lqu(rho).lqu))
    return out
