"""Independent optimality verification and cross-device response prediction.

This module is the reference route used to check the main solver: a Dykstra
projection, a multistart reference solver polished by exhaustive active-set
enumeration, first-order certificates, and the sign predictions used by the
rule-based detector analysis.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.optimize import nnls

from .solver import ResourceBudget
from .utility import UtilityFunction

_log = logging.getLogger(__name__)


class Situation(str, Enum):
    INTERIOR = "interior"
    G1_ACTIVE = "g1_active"
    G2_ACTIVE = "g2_active"
    BOTH_ACTIVE = "both_active"


class ResponseDirection(str, Enum):
    DOWN_OR_EQUAL = "down_or_equal"
    UNCHANGED = "unchanged"


@dataclass(frozen=True)
class KktCertificate:
    lambda1: float
    lambda2: float
    situation: Situation
    stationarity_residual: float
    active_lower_bounds: frozenset[int]
    degenerate: bool = False


def dykstra_project(
    v,
    budget: ResourceBudget,
    tol: float = 1e-9,
    max_iterations: int = 20000,
) -> np.ndarray:
    """Dykstra's alternating projection onto the two halfspaces and the box.

    Kept deliberately independent of the active-set projection in the solver;
    used as its cross-check.
    """
    v = np.asarray(v, dtype=float)
    a = np.asarray(budget.a)
    g = np.asarray(budget.gamma)
    n = budget.n
    ones = np.ones(n)
    sets = [
        (ones, budget.c),   # sum(z) <= c
        (a, budget.d),      # sum(a*z) <= d
        None,               # z >= gamma
    ]
    z = v.copy()
    p = [np.zeros(n) for _ in sets]
    for _ in range(max_iterations):
        # Birgin-Raydan criterion: change of the correction vectors over a
        # full cycle certifies convergence (plain z-change stops too early)
        drift = 0.0
        for k, spec in enumerate(sets):
            y = z + p[k]
            if spec is None:
                z = np.maximum(y, g)
            else:
                normal, rhs = spec
                excess = float(normal @ y) - rhs
                if excess > 0.0:
                    z = y - (excess / float(normal @ normal)) * normal
                else:
                    z = y
            p_new = y - z
            drift += float(np.sum((p_new - p[k]) ** 2))
            p[k] = p_new
        if drift < tol * tol:
            break
    return z


# ---------------------------------------------------------------------------
# reference solver


def _objective(functions, x) -> float:
    return sum(f.utility(float(xi)) for f, xi in zip(functions, x))


def _grad(functions, x) -> np.ndarray:
    return np.array([f.derivative(float(xi)) for f, xi in zip(functions, x)])


def _projected_gradient_ascent(functions, budget, x0, steps=400, step0=0.2):
    x = np.asarray(x0, dtype=float)
    for k in range(steps):
        step = step0 / (1.0 + 0.05 * k)
        x = dykstra_project(x + step * _grad(functions, x), budget, tol=1e-10)
    return x


def _newton_active_set(functions, budget, pattern, bound_set, x0):
    """Solve the KKT equalities for a fixed activity pattern by Newton's method.

    pattern is (g1_active, g2_active); bound_set the coordinates fixed at gamma.
    Returns (x, lambda1, lambda2) or None when the solve fails.
    """
    g1_on, g2_on = pattern
    a = np.asarray(budget.a)
    g = np.asarray(budget.gamma)
    n = budget.n
    free = [i for i in range(n) if i not in bound_set]
    n_mult = int(g1_on) + int(g2_on)
    if len(free) + n_mult == 0:
        x = g.copy()
        return x, 0.0, 0.0
    if n_mult > len(free):
        return None  # more active couplings than free coordinates

    # unknowns: x_free, then lambda1 (if on), lambda2 (if on)
    def pack_residual(x, l1, l2):
        rows = []
        for i in free:
            rows.append(functions[i].derivative(float(x[i])) - l1 - l2 * a[i])
        if g1_on:
            rows.append(float(x.sum()) - budget.c)
        if g2_on:
            rows.append(float(a @ x) - budget.d)
        return np.array(rows)

    x = np.asarray(x0, dtype=float).copy()
    x[list(bound_set)] = g[list(bound_set)]
    l1 = l2 = 0.0
    m = len(free) + n_mult
    for _ in range(100):
        try:
            r = pack_residual(x, l1, l2)
        except Exception:
            return None
        if np.max(np.abs(r)) < 1e-12:
            break
        jac = np.zeros((m, m))
        for row, i in enumerate(free):
            try:
                jac[row, row] = functions[i].second_derivative(float(x[i]))
            except Exception:
                return None
            col = len(free)
            if g1_on:
                jac[row, col] = -1.0
                col += 1
            if g2_on:
                jac[row, col] = -a[i]
        row = len(free)
        if g1_on:
            jac[row, :len(free)] = 1.0
            row += 1
        if g2_on:
            jac[row, :len(free)] = a[free]
        try:
            delta = np.linalg.solve(jac, -r)
        except np.linalg.LinAlgError:
            return None
        x[free] += delta[: len(free)]
        col = len(free)
        if g1_on:
            l1 += delta[col]
            col += 1
        if g2_on:
            l2 += delta[col]
    else:
        return None
    if np.max(np.abs(pack_residual(x, l1, l2))) > 1e-9:
        return None
    return x, l1, l2


def _valid_kkt_point(functions, budget, x, l1, l2, g1_on, g2_on, bound_set):
    a = np.asarray(budget.a)
    g = np.asarray(budget.gamma)
    eps = 1e-8
    if np.any(x < g - eps):
        return False
    if x.sum() > budget.c + eps or float(a @ x) > budget.d + eps:
        return False
    if (g1_on and l1 < -1e-9) or (g2_on and l2 < -1e-9):
        return False
    l1e = l1 if g1_on else 0.0
    l2e = l2 if g2_on else 0.0
    for i in bound_set:
        # reduced gradient at the lower bound must not favor an increase
        if functions[i].derivative(float(g[i])) - l1e - l2e * a[i] > 1e-7:
            return False
    return True


def reference_solve(
    functions: list[UtilityFunction],
    budget: ResourceBudget,
    seed: int = 0,
    starts: int = 20,
) -> np.ndarray:
    """Brute-force reference: multistart projected-gradient ascent polished by
    exhaustive active-set KKT solves; the best objective wins."""
    rng = np.random.default_rng(seed)
    n = budget.n
    g = np.asarray(budget.gamma)

    candidates = []
    start_points = [g.copy()]
    for _ in range(starts - 1):
        raw = g + rng.uniform(0.0, 1.0, size=n) * max(budget.c, budget.d)
        start_points.append(dykstra_project(raw, budget, tol=1e-10))
    pga_results = []
    for x0 in start_points:
        x = _projected_gradient_ascent(functions, budget, x0)
        pga_results.append(x)
        candidates.append(x)

    # exhaustive activity-pattern enumeration (two couplings x lower bounds)
    warm = pga_results[0]
    for g1_on, g2_on in itertools.product((False, True), repeat=2):
        for r in range(n + 1):
            for bound_set in itertools.combinations(range(n), r):
                sol = _newton_active_set(
                    functions, budget, (g1_on, g2_on), set(bound_set), warm
                )
                if sol is None:
                    continue
                x, l1, l2 = sol
                if _valid_kkt_point(
                    functions, budget, x, l1, l2, g1_on, g2_on, set(bound_set)
                ):
                    candidates.append(x)

    best = max(candidates, key=lambda x: _objective(functions, x))
    spread = max(
        (float(np.max(np.abs(x - best))) for x in pga_results), default=0.0
    )
    if spread > 1e-4:
        # flagged, not fatal: the best objective still wins
        _log.debug("multistart disagreement: max spread %.3e", spread)
    return np.array(best, dtype=float)


# ---------------------------------------------------------------------------
# certificates


def check_kkt(
    x,
    functions: list[UtilityFunction],
    budget: ResourceBudget,
    tol: float = 1e-6,
) -> KktCertificate:
    """Estimate multipliers by nonnegative least squares on the stationarity
    rows of interior coordinates and classify the activity situation."""
    x = np.asarray(x, dtype=float)
    a = np.asarray(budget.a)
    g = np.asarray(budget.gamma)
    feas_slack = 10.0 * max(tol, 1e-9)
    if not budget.contains(x, tol=feas_slack):
        raise ValueError("check_kkt requires a feasible point")

    g1_active = abs(x.sum() - budget.c) <= tol * max(1.0, abs(budget.c))
    g2_active = abs(float(a @ x) - budget.d) <= tol * max(1.0, abs(budget.d))
    interior_idx = [i for i in range(budget.n) if x[i] > g[i] + tol]
    bound_idx = frozenset(i for i in range(budget.n) if i not in set(interior_idx))

    cols = []
    if g1_active:
        cols.append(np.ones(len(interior_idx)))
    if g2_active:
        cols.append(a[interior_idx])
    l1 = l2 = 0.0
    if cols and interior_idx:
        mat = np.column_stack(cols)
        rhs = np.array([functions[i].derivative(float(x[i])) for i in interior_idx])
        sol, _ = nnls(mat, rhs)
        k = 0
        if g1_active:
            l1 = float(sol[k])
            k += 1
        if g2_active:
            l2 = float(sol[k])

    resid = 0.0
    for i in interior_idx:
        resid = max(
            resid, abs(functions[i].derivative(float(x[i])) - l1 - l2 * a[i])
        )

    if g1_active and g2_active:
        situation = Situation.BOTH_ACTIVE
    elif g1_active:
        situation = Situation.G1_ACTIVE
    elif g2_active:
        situation = Situation.G2_ACTIVE
    else:
        situation = Situation.INTERIOR
    return KktCertificate(
        lambda1=l1,
        lambda2=l2,
        situation=situation,
        stationarity_residual=resid,
        active_lower_bounds=bound_idx,
        degenerate=(g1_active and g2_active),
    )


def predict_response_direction(
    situation: Situation, manipulated_index: int, n_devices: int
) -> tuple[dict[int, ResponseDirection], bool]:
    """Expected movement of every other device when device j's frequency rises.

    Returns (per-device direction, degeneracy flag). A binding coupling forces
    other devices down or equal; slack couplings leave them unchanged.
    """
    degenerate = situation is Situation.BOTH_ACTIVE
    if situation is Situation.INTERIOR:
        direction = ResponseDirection.UNCHANGED
    else:
        direction = ResponseDirection.DOWN_OR_EQUAL
    out = {
        i: direction for i in range(n_devices) if i != manipulated_index
    }
    return out, degenerate
