"""Optimal frequency control (OFC) via its scalar dual reduction.

    minimize    sum_j c_j(p_j) + d_j^2 / (2 D_j)
    subject to  sum_j (p_j - d_j) + sum_j offset_j = 0,   p_lo <= p <= p_hi

Eliminating the box multipliers leaves p_j = clip((c_j')^{-1}(-lam)) and
d_j = D_j lam, so optimality reduces to one strictly decreasing equation in
lam. ``offset`` carries injections outside the control laws (disturbances).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .control import ControlLaw, CostFunction, QuadraticCost
from .errors import InputError, OfcInfeasibleError

LOWER, INTERIOR, UPPER, CONSTANT = "lower", "interior", "upper", "constant"

_BRACKET_CAP = 1e6
_RESIDUAL_TOL = 1e-12
_WIDTH_TOL = 1e-13


@dataclass(frozen=True)
class OfcProblem:
    costs: tuple[CostFunction, ...]
    p_lo: np.ndarray
    p_hi: np.ndarray
    D: np.ndarray
    offset: np.ndarray = None

    def __post_init__(self):
        n = len(self.costs)
        object.__setattr__(self, "costs", tuple(self.costs))
        for name in ("p_lo", "p_hi", "D"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (n,):
                raise InputError(f"{name} must have {n} entries, got shape {arr.shape}")
            object.__setattr__(self, name, arr)
        offset = np.zeros(n) if self.offset is None else np.asarray(self.offset, dtype=float)
        if offset.shape != (n,):
            raise InputError(f"offset must have {n} entries")
        object.__setattr__(self, "offset", offset)
        if np.any(self.p_lo > self.p_hi):
            raise InputError("some box has p_lo > p_hi")
        if np.any(self.D <= 0):
            raise InputError("damping D must be positive on every bus")

    @classmethod
    def from_laws(cls, laws: Sequence[ControlLaw], D, offset=None) -> "OfcProblem":
        return cls(
            tuple(law.cost for law in laws),
            np.array([law.p_lo for law in laws]),
            np.array([law.p_hi for law in laws]),
            D,
            offset,
        )

    @property
    def n(self) -> int:
        return len(self.costs)

    @property
    def constant(self) -> np.ndarray:
        return self.p_lo == self.p_hi

    def injections(self, lam) -> np.ndarray:
        """Optimal p for a given multiplier; shape (n,) or (n, len(lam))."""
        lam = np.asarray(lam, dtype=float)
        out = np.empty((self.n,) + lam.shape)
        for j, cost in enumerate(self.costs):
            if self.p_lo[j] == self.p_hi[j]:
                out[j] = self.p_lo[j]
            else:
                out[j] = np.clip(cost.inverse_derivative(-lam), self.p_lo[j], self.p_hi[j])
        return out

    def objective(self, p, d) -> float:
        p = np.asarray(p, dtype=float)
        d = np.asarray(d, dtype=float)
        total = float(np.sum(d**2 / (2 * self.D)))
        for j, cost in enumerate(self.costs):
            if not self.constant[j]:
                total += float(cost(p[j]))
        return total


@dataclass(frozen=True)
class OfcSolution:
    p_star: np.ndarray
    d_star: np.ndarray
    lambda_star: float
    saturation: tuple[str, ...]
    objective: float
    iterations: int = 0

    @property
    def omega_star(self) -> float:
        return self.lambda_star

    def as_dict(self) -> dict:
        return {
            "lambda_star": self.lambda_star,
            "p_star": self.p_star.tolist(),
            "d_star": self.d_star.tolist(),
            "saturation": list(self.saturation),
            "objective": self.objective,
        }


def balance_residual(problem: OfcProblem, lam):
    """sum_j p_j(lam) + sum offset - lam * sum D; strictly decreasing in lam."""
    lam_arr = np.asarray(lam, dtype=float)
    r = problem.injections(lam_arr).sum(axis=0) + problem.offset.sum() - lam_arr * problem.D.sum()
    return float(r) if r.ndim == 0 else r


def _solution_at(problem: OfcProblem, lam: float, iterations: int = 0) -> OfcSolution:
    p = problem.injections(lam)
    d = problem.D * lam
    flags = []
    for j in range(problem.n):
        if problem.constant[j]:
            flags.append(CONSTANT)
        elif p[j] <= problem.p_lo[j]:
            flags.append(LOWER)
        elif p[j] >= problem.p_hi[j]:
            flags.append(UPPER)
        else:
            flags.append(INTERIOR)
    return OfcSolution(p, d, float(lam), tuple(flags), problem.objective(p, d), iterations)


def find_bracket(problem: OfcProblem, lo: float = -1.0, hi: float = 1.0) -> tuple[float, float]:
    """Expand [lo, hi] by doubling until the residual changes sign."""
    while balance_residual(problem, lo) < 0:
        lo *= 2
        if abs(lo) > _BRACKET_CAP:
            raise OfcInfeasibleError("OFC infeasible or unbounded: no sign change for lam >= -1e6")
    while balance_residual(problem, hi) > 0:
        hi *= 2
        if abs(hi) > _BRACKET_CAP:
            raise OfcInfeasibleError("OFC infeasible or unbounded: no sign change for lam <= 1e6")
    return lo, hi


def solve(problem: OfcProblem, bracket: tuple[float, float] = (-1.0, 1.0)) -> OfcSolution:
    """Unique OFC optimum by bisection on the balance residual."""
    lo, hi = bracket
    if not lo < hi:
        raise InputError(f"bad initial bracket {bracket}")
    lo, hi = find_bracket(problem, lo, hi)
    r_lo = balance_residual(problem, lo)
    if r_lo == 0:
        return _solution_at(problem, lo)
    r_hi = balance_residual(problem, hi)
    if r_hi == 0:
        return _solution_at(problem, hi)

    it = 0
    mid = 0.5 * (lo + hi)
    while True:
        it += 1
        mid = 0.5 * (lo + hi)
        r = balance_residual(problem, mid)
        if abs(r) <= _RESIDUAL_TOL or hi - lo <= _WIDTH_TOL or mid in (lo, hi):
            break
        if r > 0:
            lo = mid
        else:
            hi = mid
    return _solution_at(problem, mid, it)


@dataclass
class KktReport:
    stationarity_p: bool
    stationarity_d: bool
    balance: bool
    box: bool
    dual_feasibility: bool
    complementary_slackness: bool
    mu_plus: np.ndarray = field(repr=False)
    mu_minus: np.ndarray = field(repr=False)
    residuals: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.failures

    @property
    def failures(self) -> list[str]:
        names = (
            "stationarity_p", "stationarity_d", "balance", "box",
            "dual_feasibility", "complementary_slackness",
        )
        return [n for n in names if not getattr(self, n)]


def kkt_check(problem: OfcProblem, p, d, lam: float, tol: float = 1e-9) -> KktReport:
    """Check KKT conditions for (p, d, lam), reconstructing the box multipliers.

    mu+ - mu- = -c'(p) - lam is split by sign. Stationarity in p only credits a
    multiplier whose bound is active, so interior mismatches fail it; the raw
    split is what complementary slackness is judged on.
    """
    p = np.asarray(p, dtype=float)
    d = np.asarray(d, dtype=float)
    if p.shape != (problem.n,) or d.shape != (problem.n,):
        raise InputError("p and d must have one entry per bus")
    const = problem.constant
    s = np.zeros(problem.n)
    for j, cost in enumerate(problem.costs):
        if not const[j]:
            s[j] = -float(cost.derivative(p[j])) - lam
    mu_plus = np.maximum(s, 0.0)
    mu_minus = np.maximum(-s, 0.0)
    at_hi = p >= problem.p_hi - tol
    at_lo = p <= problem.p_lo + tol

    stat_p = np.abs(s - mu_plus * at_hi + mu_minus * at_lo)
    stat_d = np.abs(d - lam * problem.D)
    bal = abs(float(np.sum(p - d) + problem.offset.sum()))
    box_viol = np.maximum(np.maximum(problem.p_lo - p, p - problem.p_hi), 0.0)
    slack = np.maximum(np.abs(mu_plus * (p - problem.p_hi)), np.abs(mu_minus * (problem.p_lo - p)))
    slack[const] = 0.0

    residuals = {
        "stationarity_p": float(stat_p.max(initial=0.0)),
        "stationarity_d": float(stat_d.max(initial=0.0)),
        "balance": bal,
        "box": float(box_viol.max(initial=0.0)),
        "complementary_slackness": float(slack.max(initial=0.0)),
    }
    return KktReport(
        stationarity_p=residuals["stationarity_p"] <= tol,
        stationarity_d=residuals["stationarity_d"] <= tol,
        balance=bal <= tol,
        box=residuals["box"] <= tol,
        dual_feasibility=bool(np.all(mu_plus >= -tol) and np.all(mu_minus >= -tol)),
        complementary_slackness=residuals["complementary_slackness"] <= tol,
        mu_plus=mu_plus,
        mu_minus=mu_minus,
        residuals=residuals,
    )


_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


def oracle_solve(problem: OfcProblem, bracket: tuple[float, float] = (-10.0, 10.0), step: float = 1e-4) -> OfcSolution:
    """Brute-force reference: grid scan of |residual| then golden-section refinement.

    Only meant for validating :func:`solve`.
    """
    a, b = bracket
    if not step > 0:
        raise InputError("step must be positive")
    if not a < b:
        raise InputError(f"empty bracket {bracket}")
    grid = np.arange(a, b + 0.5 * step, step)
    k = int(np.argmin(np.abs(balance_residual(problem, grid))))

    f = lambda x: abs(balance_residual(problem, x))  # noqa: E731
    lo, hi = grid[k] - step, grid[k] + step
    x1 = hi - _INVPHI * (hi - lo)
    x2 = lo + _INVPHI * (hi - lo)
    f1, f2 = f(x1), f(x2)
    while hi - lo > 1e-12 * max(1.0, abs(lo)):
        if f1 <= f2:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - _INVPHI * (hi - lo)
            f1 = f(x1)
        else:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + _INVPHI * (hi - lo)
            f2 = f(x2)
    return _solution_at(problem, 0.5 * (lo + hi))


def quadratic_problem(R, p_set, p_lo, p_hi, D, offset=None) -> OfcProblem:
    """Convenience constructor for an all-quadratic problem."""
    R = np.broadcast_to(np.asarray(R, dtype=float), np.shape(D))
    p_set = np.broadcast_to(np.asarray(p_set, dtype=float), np.shape(D))
    return OfcProblem(tuple(QuadraticCost(r, s) for r, s in zip(R, p_set)), p_lo, p_hi, D, offset)
