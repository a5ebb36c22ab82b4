"""Concave device utilities and the convex minimization forms used by the solver.

Each device privately owns a utility h(x) of its transmission frequency x (Hz).
The solver works with the convex form f(x) = -h(x). An additive input offset
(``shift``) models tampering with the function argument: the effective utility
is h(x + shift).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum


class UtilityDomainError(ValueError):
    """Raised when a utility is evaluated outside its domain (e.g. at a pole)."""


class Kind(str, Enum):
    # h(x) = -(x + p)^2 - q*x^3 + r
    NEG_QUAD_CUBIC = "neg_quad_cubic"
    # h(x) = -(x - p)^2 + r
    NEG_QUAD = "neg_quad"
    # h(x) = -(s*x + p)^2 - x^3 + r
    SCALED_NEG_QUAD_CUBIC = "scaled_neg_quad_cubic"
    # h(x) = (x - 9)^2 + x^3  (deliberately non-concave; swap-set member)
    CONVEX_QUAD_CUBIC = "convex_quad_cubic"
    # h(x) = -exp(x - 9)
    EXP = "exp"
    # h(x) = -1/(x - 9), pole at x = 9
    RECIPROCAL = "reciprocal"
    # h(x) = -log(1 + exp(x - 9))
    SOFTPLUS = "softplus"


_POLE = 9.0  # reciprocal/exp/softplus families are all anchored at 9


@dataclass(frozen=True)
class UtilityFunction:
    """A device utility, closed under input-shift and type-swap manipulations."""

    kind: Kind
    params: tuple[float, ...] = ()
    shift: float = 0.0

    # -- constructors -------------------------------------------------------

    @classmethod
    def neg_quad(cls, p: float, r: float = 0.0) -> "UtilityFunction":
        return cls(Kind.NEG_QUAD, (p, r))

    @classmethod
    def neg_quad_cubic(cls, p: float, q: float, r: float = 0.0) -> "UtilityFunction":
        return cls(Kind.NEG_QUAD_CUBIC, (p, q, r))

    @classmethod
    def scaled_neg_quad_cubic(cls, s: float, p: float, r: float = 0.0) -> "UtilityFunction":
        return cls(Kind.SCALED_NEG_QUAD_CUBIC, (s, p, r))

    @classmethod
    def convex_quad_cubic(cls) -> "UtilityFunction":
        return cls(Kind.CONVEX_QUAD_CUBIC)

    @classmethod
    def exp(cls) -> "UtilityFunction":
        return cls(Kind.EXP)

    @classmethod
    def reciprocal(cls) -> "UtilityFunction":
        return cls(Kind.RECIPROCAL)

    @classmethod
    def softplus(cls) -> "UtilityFunction":
        return cls(Kind.SOFTPLUS)

    def shifted(self, input_factor: float) -> "UtilityFunction":
        """Return a copy with the input offset by ``input_factor``."""
        return replace(self, shift=self.shift + input_factor)

    # -- evaluation ----------------------------------------------------------

    def utility(self, x: float) -> float:
        """h(x + shift)."""
        return self._h(x + self.shift)

    def convex_value(self, x: float) -> float:
        """f(x + shift) = -h(x + shift), the minimization form."""
        return -self.utility(x)

    def derivative(self, x: float) -> float:
        """h'(x + shift)."""
        return self._dh(x + self.shift)

    def second_derivative(self, x: float) -> float:
        """h''(x + shift)."""
        return self._d2h(x + self.shift)

    def domain_max(self) -> float:
        """Largest admissible x, or +inf when the domain is unbounded."""
        if self.kind is Kind.RECIPROCAL:
            return _POLE - self.shift
        return math.inf

    def is_concave_family(self) -> bool:
        """True when h'' < 0 everywhere on the admissible domain (x >= 0)."""
        if self.kind in (Kind.NEG_QUAD, Kind.EXP, Kind.SOFTPLUS):
            return True
        if self.kind is Kind.NEG_QUAD_CUBIC:
            return self.params[1] >= 0.0
        if self.kind is Kind.SCALED_NEG_QUAD_CUBIC:
            return True
        return False

    # -- per-family formulas -------------------------------------------------

    def _h(self, t: float) -> float:
        k = self.kind
        if k is Kind.NEG_QUAD_CUBIC:
            p, q, r = self.params
            return -((t + p) ** 2) - q * t**3 + r
        if k is Kind.NEG_QUAD:
            p, r = self.params
            return -((t - p) ** 2) + r
        if k is Kind.SCALED_NEG_QUAD_CUBIC:
            s, p, r = self.params
            return -((s * t + p) ** 2) - t**3 + r
        if k is Kind.CONVEX_QUAD_CUBIC:
            return (t - _POLE) ** 2 + t**3
        if k is Kind.EXP:
            return -math.exp(t - _POLE)
        if k is Kind.RECIPROCAL:
            self._check_pole(t)
            return -1.0 / (t - _POLE)
        if k is Kind.SOFTPLUS:
            # numerically safe log(1 + exp(y))
            y = t - _POLE
            return -(max(y, 0.0) + math.log1p(math.exp(-abs(y))))
        raise AssertionError(k)

    def _dh(self, t: float) -> float:
        k = self.kind
        if k is Kind.NEG_QUAD_CUBIC:
            p, q, _ = self.params
            return -2.0 * (t + p) - 3.0 * q * t**2
        if k is Kind.NEG_QUAD:
            p, _ = self.params
            return -2.0 * (t - p)
        if k is Kind.SCALED_NEG_QUAD_CUBIC:
            s, p, _ = self.params
            return -2.0 * s * (s * t + p) - 3.0 * t**2
        if k is Kind.CONVEX_QUAD_CUBIC:
            return 2.0 * (t - _POLE) + 3.0 * t**2
        if k is Kind.EXP:
            return -math.exp(t - _POLE)
        if k is Kind.RECIPROCAL:
            self._check_pole(t)
            return 1.0 / (t - _POLE) ** 2
        if k is Kind.SOFTPLUS:
            return -_logistic(t - _POLE)
        raise AssertionError(k)

    def _d2h(self, t: float) -> float:
        k = self.kind
        if k is Kind.NEG_QUAD_CUBIC:
            _, q, _ = self.params
            return -2.0 - 6.0 * q * t
        if k is Kind.NEG_QUAD:
            return -2.0
        if k is Kind.SCALED_NEG_QUAD_CUBIC:
            s, _, _ = self.params
            return -2.0 * s * s - 6.0 * t
        if k is Kind.CONVEX_QUAD_CUBIC:
            return 2.0 + 6.0 * t
        if k is Kind.EXP:
            return -math.exp(t - _POLE)
        if k is Kind.RECIPROCAL:
            self._check_pole(t)
            return -2.0 / (t - _POLE) ** 3
        if k is Kind.SOFTPLUS:
            sig = _logistic(t - _POLE)
            return -sig * (1.0 - sig)
        raise AssertionError(k)

    def _check_pole(self, t: float) -> None:
        if abs(t - _POLE) < 1e-12:
            raise UtilityDomainError(
                f"reciprocal utility evaluated at its pole (x + shift = {t!r})"
            )


def _logistic(y: float) -> float:
    if y >= 0.0:
        return 1.0 / (1.0 + math.exp(-y))
    e = math.exp(y)
    return e / (1.0 + e)


def allocation_demo_set() -> list[UtilityFunction]:
    """The three-device set used in the frequency allocation experiments."""
    return [
        UtilityFunction.scaled_neg_quad_cubic(1.0, 9.0, 900.0),   # -(x+9)^2 - x^3 + 900
        UtilityFunction.neg_quad(4.0, 500.0),                     # -(x-4)^2 + 500
        UtilityFunction.scaled_neg_quad_cubic(2.0, 3.0, 110.0),   # -(2x+3)^2 - x^3 + 110
    ]


def anomaly_demo_set() -> list[UtilityFunction]:
    """The three-device set used in the anomaly detection experiments.

    Written in the convex minimization form in the source material; here as
    utilities h = -f.
    """
    return [
        UtilityFunction.scaled_neg_quad_cubic(1.0, -9.0, 0.0),   # -(x-9)^2 - x^3
        UtilityFunction.neg_quad(4.0, 0.0),                      # -(x-4)^2
        UtilityFunction.scaled_neg_quad_cubic(2.0, -6.0, 0.0),   # -(2x-6)^2 - x^3
    ]


def swap_candidate_set() -> list[UtilityFunction]:
    """Replacement functions available to a type-1 (function swap) manipulation."""
    return [
        UtilityFunction.exp(),
        UtilityFunction.reciprocal(),
        UtilityFunction.softplus(),
    ]
