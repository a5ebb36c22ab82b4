"""Deterministic solver kernels: local x-update, polytope projection, dual
update, residuals, and the full consensus loop.

The feasible polytope is C = {z : sum(z) <= c, sum(a*z) <= d, z >= gamma}.
Devices maximize concave utilities h_i; the gateway projects the aggregate
v = x + u onto C each round.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .trace import IterationTrace, TraceRow
from .utility import UtilityFunction


class InfeasibleBudgetError(ValueError):
    """The budget defines an empty polytope."""


class XUpdateError(RuntimeError):
    """The scalar stationarity solve found no bracket; typically signals a
    non-concave (manipulated) utility."""


@dataclass(frozen=True)
class ResourceBudget:
    """Shared constraint data (c, d, a_i, gamma_i)."""

    c: float
    d: float
    a: tuple[float, ...]
    gamma: tuple[float, ...] = ()

    def __post_init__(self):
        if not self.gamma:
            object.__setattr__(self, "gamma", (1.0,) * len(self.a))
        if len(self.a) != len(self.gamma):
            raise ValueError("a and gamma must have the same length")
        if self.c <= 0 or self.d <= 0:
            raise InfeasibleBudgetError("c and d must be positive")
        if any(ai <= 0 for ai in self.a):
            raise InfeasibleBudgetError("all a_i must be positive")
        if any(g < 0 for g in self.gamma):
            raise InfeasibleBudgetError("all gamma_i must be nonnegative")
        if sum(self.gamma) > self.c + 1e-12:
            raise InfeasibleBudgetError("sum(gamma) exceeds c: empty polytope")
        if sum(ai * g for ai, g in zip(self.a, self.gamma)) > self.d + 1e-12:
            raise InfeasibleBudgetError("sum(a*gamma) exceeds d: empty polytope")

    @property
    def n(self) -> int:
        return len(self.a)

    def with_device(self, a_i: float, gamma_i: float = 1.0) -> "ResourceBudget":
        """Budget after a new device joins with write size a_i."""
        return ResourceBudget(self.c, self.d, self.a + (a_i,), self.gamma + (gamma_i,))

    def contains(self, z, tol: float = 1e-8) -> bool:
        z = np.asarray(z, dtype=float)
        a = np.asarray(self.a)
        g = np.asarray(self.gamma)
        return bool(
            z.sum() <= self.c + tol
            and float(a @ z) <= self.d + tol
            and np.all(z >= g - tol)
        )


@dataclass(frozen=True)
class SolverConfig:
    rho: float = 1.0
    primal_tol: float = 1e-4
    dual_tol: float = 1e-4
    max_iterations: int = 2000
    projection_tol: float = 1e-9
    scalar_tol: float = 1e-8

    def __post_init__(self):
        if self.rho <= 0:
            raise ValueError("rho must be positive")
        if min(self.primal_tol, self.dual_tol, self.projection_tol, self.scalar_tol) <= 0:
            raise ValueError("tolerances must be positive")


@dataclass
class AdmmState:
    """Per-iteration solver state: (x, u) live on devices, z on the gateway."""

    x: np.ndarray
    z: np.ndarray
    u: np.ndarray
    iteration: int = 0

    @classmethod
    def initial(cls, budget: ResourceBudget) -> "AdmmState":
        g = np.asarray(budget.gamma, dtype=float)
        return cls(x=g.copy(), z=g.copy(), u=np.zeros(budget.n))


@dataclass
class AdmmResult:
    x: np.ndarray
    z: np.ndarray
    u: np.ndarray
    iterations: int
    converged: bool
    trace: IterationTrace


# ---------------------------------------------------------------------------
# scalar x-update


def local_x_update(
    f: UtilityFunction, z_i: float, u_i: float, cfg: SolverConfig
) -> float:
    """Maximize h(x) - (rho/2)(x - z_i + u_i)^2 via bisection on stationarity.

    Returns x* with |h'(x*) - rho*(x* - z_i + u_i)| <= scalar_tol, or 0.0 when
    the residual is already negative at the frequency floor (boundary optimum;
    the projection step enforces the gamma bounds).
    """
    rho = cfg.rho
    w = z_i - u_i

    cap = f.domain_max()
    if math.isfinite(cap):
        cap -= 1e-6

    def phi(x: float) -> float:
        return f.derivative(x) - rho * (x - w)

    lo = 0.0
    if phi(lo) <= 0.0:
        return 0.0
    hi = max(w + abs(f.derivative(0.0)) / rho, lo + 1.0)
    if math.isfinite(cap):
        hi = min(hi, cap)
    for _ in range(60):
        if phi(hi) <= 0.0:
            break
        if math.isfinite(cap) and hi >= cap:
            break
        hi = min(hi * 2.0, cap) if math.isfinite(cap) else hi * 2.0
    if phi(hi) > 0.0:
        # non-monotone derivative (manipulated utility): scan for the
        # first interior descent of the stationarity residual
        grid = np.linspace(lo, hi, 512)
        vals = [phi(t) for t in grid]
        for k in range(len(grid) - 1):
            if vals[k] > 0.0 >= vals[k + 1]:
                lo, hi = grid[k], grid[k + 1]
                break
        else:
            raise XUpdateError(
                "no sign change in bracket after expansion"
                + (" (domain-capped)" if math.isfinite(cap) else "")
            )

    x = 0.5 * (lo + hi)
    for _ in range(200):
        x = 0.5 * (lo + hi)
        val = phi(x)
        if abs(val) <= cfg.scalar_tol:
            return x
        if val > 0.0:
            lo = x
        else:
            hi = x
        if hi - lo < 1e-15 * max(1.0, abs(x)):
            break
    if abs(phi(x)) > cfg.scalar_tol:
        raise XUpdateError("bisection failed to meet scalar tolerance")
    return x


# ---------------------------------------------------------------------------
# Euclidean projection onto C


def _solve_sum_clamped(vv: np.ndarray, g: np.ndarray, rhs: float) -> float:
    """Exact mu with sum_i max(g_i, vv_i - mu) = rhs.

    The left side is continuous, piecewise linear, and non-increasing in mu;
    coordinate i clamps to g_i once mu >= vv_i - g_i.
    """
    bp = vv - g
    order = np.argsort(bp)
    free_sum = float(vv.sum())
    clamp_sum = 0.0
    n_free = len(vv)
    lo = -math.inf
    for idx in order:
        # on [lo, bp[idx]): value = free_sum - n_free*mu + clamp_sum
        mu = (free_sum + clamp_sum - rhs) / n_free
        if mu <= bp[idx]:
            return max(mu, lo) if math.isfinite(lo) else mu
        lo = float(bp[idx])
        free_sum -= float(vv[idx])
        clamp_sum += float(g[idx])
        n_free -= 1
    # all clamped: value is sum(g) for every larger mu; return the boundary
    return lo


def _solve_weighted_clamped(
    vv: np.ndarray, g: np.ndarray, a: np.ndarray, rhs: float
) -> float:
    """Exact mu with sum_i a_i * max(g_i, vv_i - mu*a_i) = rhs."""
    bp = (vv - g) / a
    order = np.argsort(bp)
    free_lin = float((a * vv).sum())
    free_quad = float((a * a).sum())
    clamp_sum = 0.0
    lo = -math.inf
    for idx in order:
        mu = (free_lin + clamp_sum - rhs) / free_quad
        if mu <= bp[idx]:
            return max(mu, lo) if math.isfinite(lo) else mu
        lo = float(bp[idx])
        free_lin -= float(a[idx] * vv[idx])
        free_quad -= float(a[idx] ** 2)
        clamp_sum += float(a[idx] * g[idx])
    return lo


def project_onto_feasible(
    v, budget: ResourceBudget, cfg: SolverConfig | None = None
) -> np.ndarray:
    """argmin ||z - v||^2 s.t. sum(z) <= c, sum(a*z) <= d, z >= gamma.

    Dual active-set enumeration over the two coupling constraints with
    per-coordinate clamping.
    """
    if cfg is None:
        cfg = SolverConfig()
    v = np.asarray(v, dtype=float)
    if v.shape != (budget.n,):
        raise ValueError("v has wrong length")
    a = np.asarray(budget.a)
    g = np.asarray(budget.gamma)
    c, d = budget.c, budget.d
    tol_c = cfg.projection_tol * max(1.0, abs(c))
    tol_d = cfg.projection_tol * max(1.0, abs(d))

    # degenerate polytope: single point {gamma}
    if c - g.sum() <= 1e-12 or d - float(a @ g) <= 1e-12:
        return g.copy()

    def clamp(l1: float, l2: float) -> np.ndarray:
        return np.maximum(g, v - l1 - l2 * a)

    # (lambda1, lambda2) = (0, 0)
    z = clamp(0.0, 0.0)
    if z.sum() <= c + tol_c and float(a @ z) <= d + tol_d:
        return z

    # g1 active only
    l1 = _solve_sum_clamped(v, g, c)
    if l1 >= -1e-12:
        z = clamp(l1, 0.0)
        if float(a @ z) <= d + tol_d:
            return z

    # g2 active only
    l2 = _solve_weighted_clamped(v, g, a, d)
    if l2 >= -1e-12:
        z = clamp(0.0, l2)
        if z.sum() <= c + tol_c:
            return z

    # both active: 2-D root-finding, outer in lambda2, inner exact in lambda1
    def residual_d(l2: float) -> float:
        l1 = _solve_sum_clamped(v - l2 * a, g, c)
        return float(a @ clamp(l1, l2)) - d

    hi = max(l2, 1.0)
    for _ in range(80):
        if residual_d(hi) <= 0.0:
            break
        hi *= 2.0
    else:
        raise RuntimeError("projection: could not bracket lambda2")
    if residual_d(0.0) < 0.0:
        raise RuntimeError("projection: inconsistent active-set pattern")
    l2 = brentq(residual_d, 0.0, hi, xtol=1e-14, rtol=8.9e-16, maxiter=300)
    l1 = _solve_sum_clamped(v - l2 * a, g, c)
    if l1 < -1e-9 or l2 < -1e-9:
        raise RuntimeError("projection: negative multiplier in both-active pattern")
    return clamp(l1, l2)


# ---------------------------------------------------------------------------
# remaining kernels


def dual_u_update(u_i: float, x_i: float, z_i: float) -> float:
    """u <- u + x - z."""
    return u_i + x_i - z_i


def residuals(x, z, z_prev, rho: float) -> tuple[float, float]:
    """(primal, dual) = (||x - z||_2, rho*||z - z_prev||_2)."""
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    z_prev = np.asarray(z_prev, dtype=float)
    if not (x.shape == z.shape == z_prev.shape):
        raise ValueError("residuals: vector length mismatch")
    return float(np.linalg.norm(x - z)), float(rho * np.linalg.norm(z - z_prev))


def admm_step(
    functions: list[UtilityFunction],
    budget: ResourceBudget,
    state: AdmmState,
    cfg: SolverConfig,
) -> tuple[AdmmState, np.ndarray, tuple[float, float]]:
    """One synchronous round; returns (new state, v, (primal, dual))."""
    x = np.array(
        [
            local_x_update(f, float(state.z[i]), float(state.u[i]), cfg)
            for i, f in enumerate(functions)
        ]
    )
    v = x + state.u
    z = project_onto_feasible(v, budget, cfg)
    u = state.u + x - z
    res = residuals(x, z, state.z, cfg.rho)
    return AdmmState(x=x, z=z, u=u, iteration=state.iteration + 1), v, res


def admm_solve(
    functions: list[UtilityFunction],
    budget: ResourceBudget,
    cfg: SolverConfig | None = None,
    state: AdmmState | None = None,
) -> AdmmResult:
    """Iterate until both residuals pass their tolerances or max_iterations.

    A non-converged run is flagged, not raised; the trace is always returned.
    """
    if cfg is None:
        cfg = SolverConfig()
    if len(functions) != budget.n:
        raise ValueError("one utility per device required")
    if state is None:
        state = AdmmState.initial(budget)
    trace = IterationTrace(
        n_devices=budget.n, c=budget.c, d=budget.d, a=budget.a, gamma=budget.gamma
    )
    converged = False
    for _ in range(cfg.max_iterations):
        state, v, (primal, dual) = admm_step(functions, budget, state, cfg)
        trace.append(
            TraceRow(iteration=state.iteration, z=tuple(state.z), v=tuple(v))
        )
        if primal <= cfg.primal_tol and dual <= cfg.dual_tol:
            converged = True
            break
    return AdmmResult(
        x=state.x,
        z=state.z,
        u=state.u,
        iterations=state.iteration,
        converged=converged,
        trace=trace,
    )
