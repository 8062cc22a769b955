"""Cost functions and the decentralized frequency feedback law.

Every controllable generator or load applies

    p(omega) = clip((c')^{-1}(-omega), p_lo, p_hi)

using only its own frequency deviation, cost and box.
"""
from __future__ import annotations

import abc
import math
from dataclasses import dataclass

import numpy as np

from .errors import InputError

DEFAULT_LIPSCHITZ_DELTA = 0.01  # rad/s


def clip(x, lo, hi):
    """max(min(x, hi), lo); works on scalars and arrays."""
    if np.any(np.asarray(lo) > np.asarray(hi)):
        raise InputError(f"clip bounds reversed: lo={lo} > hi={hi}")
    out = np.maximum(np.minimum(x, hi), lo)
    return float(out) if np.ndim(out) == 0 else out


class CostFunction(abc.ABC):
    """Strictly convex, twice differentiable cost with an analytic inverse marginal cost.

    All three methods accept scalars or numpy arrays.
    """

    @abc.abstractmethod
    def __call__(self, p): ...

    @abc.abstractmethod
    def derivative(self, p): ...

    @abc.abstractmethod
    def inverse_derivative(self, y): ...


@dataclass(frozen=True)
class QuadraticCost(CostFunction):
    """c(p) = R/2 (p - p_set)^2, i.e. droop with gain 1/R around p_set."""

    R: float
    p_set: float = 0.0

    def __post_init__(self):
        if not self.R > 0:
            raise InputError(f"quadratic cost needs R > 0, got {self.R}")

    @property
    def gain(self) -> float:
        return 1.0 / self.R

    def __call__(self, p):
        return 0.5 * self.R * (np.asarray(p) - self.p_set) ** 2

    def derivative(self, p):
        return self.R * (np.asarray(p) - self.p_set)

    def inverse_derivative(self, y):
        return self.p_set + np.asarray(y) / self.R


@dataclass(frozen=True)
class CubicCost(CostFunction):
    """c(p) = k/4 (p - p0)^4 + m/2 (p - p0)^2, so c'(p) is a monotone cubic.

    With ``m = 0`` the inverse marginal cost is a cube root. With ``m > 0`` it
    is the real root of a depressed cubic (Cardano, one real root).
    """

    k: float
    p0: float = 0.0
    m: float = 0.0

    def __post_init__(self):
        if not self.k > 0 or self.m < 0:
            raise InputError("cubic cost needs k > 0 and m >= 0")

    def __call__(self, p):
        u = np.asarray(p) - self.p0
        return 0.25 * self.k * u**4 + 0.5 * self.m * u**2

    def derivative(self, p):
        u = np.asarray(p) - self.p0
        return self.k * u**3 + self.m * u

    def inverse_derivative(self, y):
        # u^3 + (m/k) u - y/k = 0
        q = self.m / self.k
        r = np.asarray(y, dtype=float) / self.k
        if q == 0.0:
            return self.p0 + np.cbrt(r)
        disc = np.sqrt((r / 2) ** 2 + (q / 3) ** 3)
        u = np.cbrt(r / 2 + disc) + np.cbrt(r / 2 - disc)
        # one Newton polish removes cancellation error near r = 0
        u = u - (u**3 + q * u - r) / (3 * u**2 + q)
        return self.p0 + u


@dataclass(frozen=True)
class ControlLaw:
    """Saturated inverse-marginal-cost feedback on one bus.

    ``p_lo == p_hi`` encodes a constant, uncontrollable injection.
    """

    cost: CostFunction
    p_lo: float
    p_hi: float

    def __post_init__(self):
        if not self.p_lo <= self.p_hi:
            raise InputError(f"control box reversed: [{self.p_lo}, {self.p_hi}]")

    @classmethod
    def constant(cls, value: float) -> "ControlLaw":
        return cls(QuadraticCost(1.0, value), value, value)

    @classmethod
    def droop(cls, gain: float, p_set: float, p_lo: float, p_hi: float) -> "ControlLaw":
        """Quadratic-cost law with droop gain ``gain = 1/R`` (pu per rad/s)."""
        if p_lo == p_hi:
            return cls.constant(p_lo)
        if gain < 0:
            raise InputError(f"droop gain must be >= 0, got {gain}")
        if gain == 0:
            return cls.constant(float(np.clip(p_set, p_lo, p_hi)))
        return cls(QuadraticCost(1.0 / gain, p_set), p_lo, p_hi)

    @property
    def is_constant(self) -> bool:
        return self.p_lo == self.p_hi

    @property
    def is_quadratic(self) -> bool:
        return isinstance(self.cost, QuadraticCost)

    def __call__(self, omega):
        return feedback(self, omega)


def feedback(law: ControlLaw, omega):
    """Control output at frequency deviation ``omega`` (rad/s); non-increasing in omega."""
    if law.is_constant:
        out = np.full(np.shape(omega), law.p_lo)
        return float(out) if out.ndim == 0 else out
    if not np.all(np.isfinite(omega)):
        raise InputError("frequency deviation must be finite")
    return clip(law.cost.inverse_derivative(-np.asarray(omega, dtype=float)), law.p_lo, law.p_hi)


@dataclass(frozen=True)
class LipschitzEstimate:
    L: float
    at_boundary: bool  # omega* sits where the unclipped command meets a bound


def lipschitz_estimate(law: ControlLaw, omega_star: float, delta: float = DEFAULT_LIPSCHITZ_DELTA) -> LipschitzEstimate:
    if not delta > 0:
        raise InputError(f"neighbourhood radius must be > 0, got {delta}")
    if law.is_constant:
        return LipschitzEstimate(0.0, False)

    if law.is_quadratic:
        cost = law.cost
        centre = float(cost.inverse_derivative(-omega_star))
        at_boundary = math.isclose(centre, law.p_lo, abs_tol=1e-12) or math.isclose(
            centre, law.p_hi, abs_tol=1e-12
        )
        # unclipped command over the neighbourhood spans [u_min, u_max]
        u_min = float(cost.inverse_derivative(-(omega_star + delta)))
        u_max = float(cost.inverse_derivative(-(omega_star - delta)))
        touches = u_max >= law.p_lo and u_min <= law.p_hi
        return LipschitzEstimate(cost.gain if touches else 0.0, at_boundary)

    w = np.linspace(omega_star - delta, omega_star + delta, 2001)
    v = feedback(law, w)
    slopes = np.abs(np.diff(v)) / np.diff(w)
    centre = float(law.cost.inverse_derivative(-omega_star))
    at_boundary = math.isclose(centre, law.p_lo, abs_tol=1e-12) or math.isclose(
        centre, law.p_hi, abs_tol=1e-12
    )
    return LipschitzEstimate(1.01 * float(slopes.max()), at_boundary)


def lipschitz_constant(law: ControlLaw, omega_star: float, delta: float = DEFAULT_LIPSCHITZ_DELTA) -> float:
    """Bound on |p(w) - p(w*)| / |w - w*| for |w - w*| <= delta.

    Quadratic costs get the exact answer (1/R or 0). Other costs use the
    largest finite-difference slope on a 2001-point grid times 1.01.
    """
    return lipschitz_estimate(law, omega_star, delta).L
