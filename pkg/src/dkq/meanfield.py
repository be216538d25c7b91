"""Mean-field density recurrences, fixed points and phase-diagram cuts.

Two-site gate:  nu' = x nu (2 - nu).
K-site gate:    nu' = sum_k x_k C(K,k) nu^k (1-nu)^(K-k),  with x_0 = 0.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from .automaton import GateParams, GeneralGateParams

CRITICAL_X = 0.5


class UnsupportedRegimeError(ValueError):
    pass


def _check_unit(name: str, v: float):
    if not 0.0 <= v <= 1.0:
        raise ValueError(f"{name}={v} outside [0, 1]")


def mf_step(nu: float, x: float) -> float:
    _check_unit("nu", nu)
    _check_unit("x", x)
    return x * nu * (2.0 - nu)


def mf_closed_form(t, x: float):
    """Solution of d nu/dt = nu(2x-1) - x nu^2 with nu(0) = 1."""
    _check_unit("x", x)
    t = np.asarray(t, dtype=np.float64)
    a = 1.0 - 2.0 * x
    if abs(a) < 1e-8:
        out = 2.0 / (2.0 + t)
    elif a > 0:
        # rewritten with exp(-a t) so large t does not overflow
        e = np.exp(-a * t)
        out = a * e / ((1.0 - x) - x * e)
    else:
        out = -a / (x + np.exp(a * t) * (x - 1.0))
    out = np.clip(out, 0.0, 1.0)
    return out if out.ndim else float(out)


def stationary_density(x: float) -> float:
    """Long-time limit of the two-site recurrence: 0 below x = 1/2, (2x-1)/x above."""
    _check_unit("x", x)
    return max(0.0, (2.0 * x - 1.0) / x) if x > 0 else 0.0


def mf_flow(x: float, t_eval, rtol: float = 1e-13, atol: float = 1e-16) -> np.ndarray:
    """Continuous-time limit of the recurrence, d nu/dt = mf_step(nu, x) - nu, from nu = 1."""
    t_eval = np.asarray(t_eval, dtype=np.float64)

    def rhs(_, y):
        v = min(max(y[0], 0.0), 1.0)
        return [mf_step(v, x) - v]

    sol = solve_ivp(rhs, (0.0, float(t_eval[-1])), [1.0], method="DOP853",
                    t_eval=t_eval, rtol=rtol, atol=atol)
    return sol.y[0]


def _as_general(gate) -> GeneralGateParams:
    if isinstance(gate, GateParams):
        return gate.as_general()
    if isinstance(gate, GeneralGateParams):
        return gate
    return GeneralGateParams(tuple(gate))


def mf_general_step(nu: float, gate) -> float:
    gate = _as_general(gate)
    _check_unit("nu", nu)
    if gate.xs[0] != 0.0:
        raise UnsupportedRegimeError("the K-site recurrence assumes x_0 = 0")
    K = gate.K
    return sum(gate.xs[k] * math.comb(K, k) * nu**k * (1.0 - nu) ** (K - k) for k in range(1, K + 1))


def poly_coefficients(gate) -> np.ndarray:
    """Power-basis coefficients c_j of f(nu) = sum_j c_j nu^j."""
    gate = _as_general(gate)
    K = gate.K
    c = np.zeros(K + 1)
    for k, xk in enumerate(gate.xs):
        for i in range(K - k + 1):
            c[k + i] += xk * math.comb(K, k) * math.comb(K - k, i) * (-1) ** i
    return c


def flow_coefficients(gate) -> np.ndarray:
    """Coefficients of g(nu) = f(nu) - nu."""
    c = poly_coefficients(gate)
    c[1] -= 1.0
    return c


def _polyval(c, v):
    out = 0.0
    for a in reversed(c):
        out = out * v + a
    return out


def _derivative(c) -> np.ndarray:
    return np.array([j * c[j] for j in range(1, len(c))]) if len(c) > 1 else np.zeros(1)


@dataclass(frozen=True)
class FixedPoint:
    nu: float
    stability: str  # stable | unstable | marginal
    slope: float    # f'(nu)


def _bisect(fn, lo, hi, flo, tol=1e-12):
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        fm = fn(mid)
        if fm == 0.0:
            return mid
        if (fm < 0) == (flo < 0):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)


def fixed_points(gate, tol: float = 1e-9, grid: int = 10_000) -> list[FixedPoint]:
    """All fixed points of the recurrence in [0, 1], sorted, with stability labels.

    Roots at 0 are factored out of g(nu) = f(nu) - nu before bracketing so
    that small nonzero roots close to 0 are resolved.  Tangential roots are
    found from sign changes of the derivative and reported as marginal.
    """
    g = flow_coefficients(gate)
    fprime = _derivative(poly_coefficients(gate))
    roots = []
    j = 0
    while j < len(g) - 1 and abs(g[j]) < 1e-14:
        j += 1
    if j > 0:
        roots.append(0.0)
    h = g[j:]
    if np.all(np.abs(h) < 1e-14):
        raise ValueError("every density is a fixed point")
    dh = _derivative(h)
    hv = lambda v: _polyval(h, v)
    grid_v = np.linspace(0.0, 1.0, grid + 1)
    vals = np.polyval(h[::-1], grid_v)
    for i in range(grid):
        a, b = vals[i], vals[i + 1]
        if a == 0.0 and i > 0:
            roots.append(grid_v[i])
        elif a * b < 0:
            roots.append(_bisect(hv, grid_v[i], grid_v[i + 1], a))
    if vals[-1] == 0.0:
        roots.append(1.0)
    # double roots: extrema of h touching zero
    if len(dh) > 1:
        dv = np.polyval(dh[::-1], grid_v)
        for i in range(grid):
            if dv[i] * dv[i + 1] < 0:
                r = _bisect(lambda v: _polyval(dh, v), grid_v[i], grid_v[i + 1], dv[i])
                if abs(hv(r)) < tol and r > 0.0:
                    roots.append(r)
    roots.sort()
    out = []
    for r in roots:
        if out and abs(r - out[-1].nu) < 1e-9:
            continue
        s = _polyval(fprime, r)
        if abs(abs(s) - 1.0) <= tol:
            label = "marginal"
        elif abs(s) < 1.0:
            label = "stable"
        else:
            label = "unstable"
        out.append(FixedPoint(float(r), label, float(s)))
    return out


def iterate(gate, nu0: float = 1.0, steps: int = 100_000, tol: float = 1e-15) -> tuple[float, int]:
    """Iterate nu <- f(nu) until the update is below ``tol``; returns (nu, steps used)."""
    g = flow_coefficients(gate)
    nu = nu0
    for t in range(1, steps + 1):
        delta = _polyval(g, nu)
        nu = min(max(nu + delta, 0.0), 1.0)
        if abs(delta) < tol:
            return nu, t
    return nu, steps


def trajectory(gate, steps: int, nu0: float = 1.0) -> np.ndarray:
    """[nu(0), ..., nu(steps)] of the discrete recurrence."""
    g = flow_coefficients(gate)
    out = np.empty(steps + 1)
    nu = out[0] = nu0
    for t in range(1, steps + 1):
        nu = min(max(nu + _polyval(g, nu), 0.0), 1.0)
        out[t] = nu
    return out


def _zero_attracting(gate) -> bool:
    """Whether nu = 0 attracts densities slightly above it."""
    g = flow_coefficients(gate)
    for j in range(1, len(g)):
        if abs(g[j]) > 1e-14:
            return g[j] < 0
    return False


def classify(gate, tol: float = 1e-9) -> tuple[str, list[FixedPoint], float]:
    """(phase label, fixed points, density reached from nu = 1).

    inactive: 0 is the only stable fixed point; active: 0 unstable and a
    nonzero stable fixed point exists; bistable: both; critical: 0 is
    marginal and no nonzero stable fixed point exists.
    """
    fps = fixed_points(gate, tol)
    stationary, _ = iterate(gate)
    zero = next((fp for fp in fps if fp.nu == 0.0), None)
    nonzero_stable = any(fp.nu > 0 and fp.stability == "stable" for fp in fps)
    if zero is None or zero.stability == "unstable":
        label = "active" if nonzero_stable else "inactive"
    elif zero.stability == "stable":
        label = "bistable" if nonzero_stable else "inactive"
    elif nonzero_stable:
        label = "bistable" if _zero_attracting(gate) else "active"
    else:
        label = "critical"
    return label, fps, stationary


@dataclass
class ScanPoint:
    params: tuple
    xs: tuple
    label: str
    stationary: float
    fixed_points: list


@dataclass
class PhaseScanResult:
    axes: list        # [(indices, values), ...]
    base: tuple
    points: list = field(default_factory=list)

    def labels(self) -> np.ndarray:
        shape = tuple(len(v) for _, v in self.axes)
        return np.array([p.label for p in self.points], dtype=object).reshape(shape)


def scan_phase_diagram(base, axes, tol: float = 1e-9) -> PhaseScanResult:
    """Classify every point of a 1-D or 2-D cut.

    ``base`` holds all x_k; ``axes`` is a list of ``(indices, values)`` where
    each ``indices`` tuple names the x_k set to the axis value (for the
    two-site gate use ``((1, 2), xs)``).
    """
    base = tuple(_as_general(base).xs)
    axes = [(tuple(np.atleast_1d(idx).tolist()), np.asarray(vals, dtype=np.float64)) for idx, vals in axes]
    if not 1 <= len(axes) <= 2:
        raise ValueError("a cut varies one or two parameter groups")
    res = PhaseScanResult(axes, base)
    for combo in itertools.product(*(vals for _, vals in axes)):
        xs = list(base)
        for (idx, _), v in zip(axes, combo):
            for k in idx:
                xs[k] = float(v)
        gate = GeneralGateParams(tuple(xs))
        label, fps, stat = classify(gate, tol)
        res.points.append(ScanPoint(tuple(float(c) for c in combo), gate.xs, label, stat, fps))
    return res


def mcp_tune(K: int, x_top: float = 0.0) -> GeneralGateParams:
    """Choose x_1..x_{K-1} so that f(nu) - nu = (x_K - 1) nu^K."""
    if K < 2:
        raise ValueError("K must be >= 2")
    # coefficient of nu^j in f, j = 1..K-1, is linear in x_1..x_{K-1}
    a = np.zeros((K - 1, K - 1))
    for j in range(1, K):
        for k in range(1, j + 1):
            a[j - 1, k - 1] = math.comb(K, k) * math.comb(K - k, j - k) * (-1) ** (j - k)
    rhs = np.zeros(K - 1)
    rhs[0] = 1.0
    if abs(np.linalg.det(a)) < 1e-300:
        raise np.linalg.LinAlgError("singular multicritical system")
    sol = np.linalg.solve(a, rhs)
    gate = GeneralGateParams((0.0, *sol.tolist(), x_top))
    g = flow_coefficients(gate)
    expected = np.zeros(K + 1)
    expected[K] = x_top - 1.0
    if np.abs(g - expected).max() > 1e-12:
        raise np.linalg.LinAlgError("multicritical coefficients not cancelled")
    return gate


@dataclass(frozen=True)
class DecayEstimate:
    slope: float
    power_law: bool
    t_end: int
    reason: str = ""


def mf_decay_exponent(gate, t_max: int = 10**6, nu0: float = 0.5,
                      floor: float = 1e-12) -> DecayEstimate:
    """Log-log slope of the density (or of its distance to a nonzero limit) over the last decade.

    Starts below 1 by default: with x_K = 0 the map sends nu = 1 straight to 0.
    """
    g = flow_coefficients(gate)
    limit = 0.0
    for fp in fixed_points(gate):
        if fp.nu > 0 and fp.stability == "stable":
            limit = fp.nu
    marks = {t_max // 10: None, int(round(t_max / math.sqrt(10))): None, t_max: None}
    nu = nu0
    for t in range(1, t_max + 1):
        nu = min(max(nu + _polyval(g, nu), 0.0), 1.0)
        dev = abs(nu - limit)
        if dev < floor:
            return DecayEstimate(float("nan"), False, t, "reached the fixed point (exponential approach)")
        if t in marks:
            marks[t] = dev
    t0, t1, t2 = sorted(marks)
    s_lo = math.log(marks[t1] / marks[t0]) / math.log(t1 / t0)
    s_hi = math.log(marks[t2] / marks[t1]) / math.log(t2 / t1)
    slope = math.log(marks[t2] / marks[t0]) / math.log(t2 / t0)
    power = abs(s_hi - s_lo) < 0.02
    return DecayEstimate(slope, power, t_max, "" if power else "slope drifts across the decade")
