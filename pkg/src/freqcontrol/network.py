"""Lossless power network: buses, lines, real power flows and equilibrium angles."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InputError, PowerFlowInfeasibleError

NOMINAL_FREQUENCY = 120.0 * math.pi  # rad/s
NOMINAL_HZ = 60.0


class BusKind(str, enum.Enum):
    GENERATOR = "generator"
    LOAD = "load"


@dataclass(frozen=True)
class Bus:
    """One bus. Generators carry inertia and governor/turbine time constants.

    Powers are per-unit on the common base, ``M`` is in pu*s^2/rad and ``D`` in
    pu/(rad/s).
    """

    id: int
    kind: BusKind
    D: float
    p_set: float = 0.0
    p_lo: float | None = None
    p_hi: float | None = None
    M: float = 0.0
    tau_g: float | None = None
    tau_b: float | None = None

    def __post_init__(self):
        kind = BusKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if self.p_lo is None:
            object.__setattr__(self, "p_lo", self.p_set)
        if self.p_hi is None:
            object.__setattr__(self, "p_hi", self.p_set)
        if not self.D > 0:
            raise InputError(f"bus {self.id}: damping D must be > 0, got {self.D}")
        if not self.p_lo <= self.p_set <= self.p_hi:
            raise InputError(
                f"bus {self.id}: need p_lo <= p_set <= p_hi, got "
                f"{self.p_lo} <= {self.p_set} <= {self.p_hi}"
            )
        if kind is BusKind.GENERATOR:
            if not self.M > 0:
                raise InputError(f"generator {self.id}: inertia M must be > 0")
            if self.tau_g is None or self.tau_b is None or not (self.tau_g > 0 and self.tau_b > 0):
                raise InputError(f"generator {self.id}: tau_g and tau_b must be > 0")
        elif self.M != 0:
            raise InputError(f"load bus {self.id}: inertia M must be exactly 0")

    @property
    def is_generator(self) -> bool:
        return self.kind is BusKind.GENERATOR


@dataclass(frozen=True)
class Line:
    """Directed lossless line; ``Y`` is the maximum real power transfer |Vi||Vj|/x."""

    frm: int
    to: int
    Y: float

    def __post_init__(self):
        if self.frm == self.to:
            raise InputError(f"line {self.frm}->{self.to}: self loop")
        if not self.Y > 0:
            raise InputError(f"line {self.frm}->{self.to}: Y must be > 0")


@dataclass(frozen=True)
class NetworkModel:
    """Immutable network graph. Buses are ordered generators first, then loads."""

    buses: tuple[Bus, ...]
    lines: tuple[Line, ...]
    omega0: float = NOMINAL_FREQUENCY
    # cached arrays, filled in __post_init__
    frm: np.ndarray = field(init=False, repr=False, compare=False)
    to: np.ndarray = field(init=False, repr=False, compare=False)
    Y: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        buses = tuple(self.buses)
        lines = tuple(self.lines)
        object.__setattr__(self, "buses", buses)
        object.__setattr__(self, "lines", lines)
        n = len(buses)
        if n == 0:
            raise InputError("network has no buses")
        for i, bus in enumerate(buses):
            if bus.id != i:
                raise InputError(f"bus ids must be 0..N-1 in order; position {i} has id {bus.id}")
        kinds = [b.is_generator for b in buses]
        if kinds != sorted(kinds, reverse=True):
            raise InputError("generators must precede load buses")
        seen = set()
        for ln in lines:
            if not (0 <= ln.frm < n and 0 <= ln.to < n):
                raise InputError(f"line {ln.frm}->{ln.to}: endpoint does not exist")
            key = frozenset((ln.frm, ln.to))
            if key in seen:
                raise InputError(f"duplicate line between {ln.frm} and {ln.to}")
            seen.add(key)
        if not _connected(n, lines):
            raise InputError("network graph is not connected")
        for name, values, dtype in (
            ("frm", [ln.frm for ln in lines], np.int64),
            ("to", [ln.to for ln in lines], np.int64),
            ("Y", [ln.Y for ln in lines], np.float64),
        ):
            arr = np.asarray(values, dtype=dtype).reshape(-1)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @property
    def n_gen(self) -> int:
        return sum(1 for b in self.buses if b.is_generator)

    @property
    def n_load(self) -> int:
        return self.n_bus - self.n_gen

    @property
    def generators(self) -> tuple[Bus, ...]:
        return self.buses[: self.n_gen]

    @property
    def loads(self) -> tuple[Bus, ...]:
        return self.buses[self.n_gen:]

    def column(self, name: str, generators_only: bool = False) -> np.ndarray:
        """Per-bus attribute as a float array, e.g. ``model.column("D")``."""
        buses = self.generators if generators_only else self.buses
        return np.array([getattr(b, name) for b in buses], dtype=float)

    def angle_differences(self, theta) -> np.ndarray:
        theta = self._check_theta(theta)
        return theta[self.frm] - theta[self.to]

    def _check_theta(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.n_bus,):
            raise InputError(f"expected {self.n_bus} angles, got shape {theta.shape}")
        return theta


def _connected(n: int, lines: Sequence[Line]) -> bool:
    adj = [[] for _ in range(n)]
    for ln in lines:
        adj[ln.frm].append(ln.to)
        adj[ln.to].append(ln.frm)
    seen = {0}
    stack = [0]
    while stack:
        for k in adj[stack.pop()]:
            if k not in seen:
                seen.add(k)
                stack.append(k)
    return len(seen) == n


def net_power_flow(model: NetworkModel, theta) -> np.ndarray:
    """Net real power flowing out of every bus for the angle vector ``theta``."""
    theta = model._check_theta(theta)
    flow = model.Y * np.sin(theta[model.frm] - theta[model.to])
    out = np.zeros(model.n_bus)
    np.add.at(out, model.frm, flow)
    np.subtract.at(out, model.to, flow)
    return out


def flow_jacobian(model: NetworkModel, theta) -> np.ndarray:
    """dF/dtheta; a weighted Laplacian with weights Y*cos(theta_ij)."""
    theta = model._check_theta(theta)
    w = model.Y * np.cos(theta[model.frm] - theta[model.to])
    J = np.zeros((model.n_bus, model.n_bus))
    np.add.at(J, (model.frm, model.frm), w)
    np.add.at(J, (model.to, model.to), w)
    np.subtract.at(J, (model.frm, model.to), w)
    np.subtract.at(J, (model.to, model.frm), w)
    return J


@dataclass(frozen=True)
class AngleSolution:
    theta: np.ndarray
    secure: bool
    line_secure: np.ndarray
    iterations: int
    residual: float


def solve_equilibrium_angles(
    model: NetworkModel,
    injections,
    tol: float = 1e-10,
    max_iter: int = 50,
) -> AngleSolution:
    """Solve F(theta) = injections with theta[0] = 0 by damped Newton from flat start.

    Raises PowerFlowInfeasibleError when Newton does not reach ``tol`` within
    ``max_iter`` iterations.
    """
    p = np.asarray(injections, dtype=float)
    if p.shape != (model.n_bus,):
        raise InputError(f"expected {model.n_bus} injections, got shape {p.shape}")
    if abs(p.sum()) > 1e-9:
        raise InputError(f"injections must sum to zero, sum is {p.sum():.3e}")

    theta = np.zeros(model.n_bus)
    res = net_power_flow(model, theta) - p
    norm = np.max(np.abs(res))
    it = 0
    while norm > tol:
        if it >= max_iter:
            raise PowerFlowInfeasibleError(
                f"power flow did not converge in {max_iter} iterations "
                f"(residual {norm:.3e}); no equilibrium angles for these injections"
            )
        it += 1
        J = flow_jacobian(model, theta)[1:, 1:]
        try:
            step = np.linalg.solve(J, -res[1:])
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(J, -res[1:], rcond=None)[0]
        t = 1.0
        for _ in range(30):
            trial = theta.copy()
            trial[1:] += t * step
            trial_res = net_power_flow(model, trial) - p
            trial_norm = np.max(np.abs(trial_res))
            if trial_norm < norm:
                break
            t *= 0.5
        else:
            raise PowerFlowInfeasibleError(
                f"power flow stalled at residual {norm:.3e}; no equilibrium angles "
                "for these injections"
            )
        theta, res, norm = trial, trial_res, trial_norm

    diffs = theta[model.frm] - theta[model.to]
    line_secure = np.abs(diffs) < math.pi / 2
    return AngleSolution(theta, bool(line_secure.all()), line_secure, it, float(norm))
