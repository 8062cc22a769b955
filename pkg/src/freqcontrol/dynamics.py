"""Closed-loop frequency dynamics.

Generators follow the swing equation with governor and turbine lags; load
buses have zero inertia, so their frequency is the algebraic root of
``D w = p(w) + p_const - F(theta)`` and is re-solved at every RK4 stage.

The public :func:`rhs` and :func:`load_bus_frequency` work with any
:class:`~freqcontrol.control.ControlLaw`. Time stepping dispatches to the
compiled kernels whenever all laws are droop (quadratic) laws.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy.optimize import brentq

from . import kernels
from .control import ControlLaw, feedback
from .errors import InputError, NumericalBlowupError
from .network import NOMINAL_HZ, NetworkModel, net_power_flow, solve_equilibrium_angles
from .ofc import OfcProblem, OfcSolution, solve as solve_ofc

DEFAULT_DT = 1e-3
SETTLE_WINDOW = 1.0  # s
SETTLE_TOL = 1e-7  # rad/s


@dataclass(frozen=True)
class SystemState:
    """theta and omega cover all buses (load omega is algebraic); a and p cover generators."""

    theta: np.ndarray
    omega: np.ndarray
    a: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        for name in ("theta", "omega", "a", "p"):
            object.__setattr__(self, name, np.array(getattr(self, name), dtype=float))

    def vector(self) -> np.ndarray:
        G = self.a.shape[0]
        return np.concatenate((self.theta, self.omega[:G], self.a, self.p))

    @classmethod
    def from_vector(cls, x, n_bus: int, n_gen: int, omega_load) -> "SystemState":
        n, G = n_bus, n_gen
        omega = np.concatenate((x[n:n + G], omega_load))
        return cls(x[:n].copy(), omega, x[n + G:n + 2 * G].copy(), x[n + 2 * G:].copy())


class StateDerivative(NamedTuple):
    theta: np.ndarray
    omega: np.ndarray  # generators only
    a: np.ndarray
    p: np.ndarray

    def vector(self) -> np.ndarray:
        return np.concatenate(self)


@dataclass(frozen=True)
class Disturbance:
    """Step ``delta_p`` (pu) added to the constant injection of ``bus`` at ``time`` (s)."""

    time: float
    bus: int
    delta_p: float

    def __post_init__(self):
        if not self.time >= 0:
            raise InputError(f"disturbance time must be >= 0, got {self.time}")


def _check_inputs(model: NetworkModel, laws, constants) -> np.ndarray:
    if len(laws) != model.n_bus:
        raise InputError(f"need one control law per bus ({model.n_bus}), got {len(laws)}")
    if constants is None:
        return np.zeros(model.n_bus)
    constants = np.asarray(constants, dtype=float)
    if constants.shape != (model.n_bus,):
        raise InputError(f"constants must have {model.n_bus} entries")
    return constants


def _all_droop(laws: Sequence[ControlLaw]) -> bool:
    return all(law.is_constant or law.is_quadratic for law in laws)


def load_bus_frequency(model: NetworkModel, theta, laws: Sequence[ControlLaw], constants=None) -> np.ndarray:
    """Frequency of every load bus solving D w = p(w) + p_const - F(theta).

    Root-finds with Brent's method inside the bracket implied by the control
    box, so it works for any non-increasing law.
    """
    constants = _check_inputs(model, laws, constants)
    F = net_power_flow(model, theta)
    out = np.empty(model.n_load)
    for i, bus in enumerate(model.loads):
        j = bus.id
        law = laws[j]
        rest = constants[j] - F[j]
        if law.is_constant:
            out[i] = (law.p_lo + rest) / bus.D
            continue
        a = (law.p_lo + rest) / bus.D
        b = (law.p_hi + rest) / bus.D
        h = lambda w, law=law, D=bus.D, rest=rest: D * w - feedback(law, w) - rest  # noqa: E731
        # h is increasing and the root lies in [a, b]; a sign "violation" at an
        # end is roundoff and means the root sits on that (saturated) end
        if h(a) >= 0:
            out[i] = a
        elif h(b) <= 0:
            out[i] = b
        else:
            out[i] = brentq(h, a, b, xtol=1e-16, rtol=4 * np.finfo(float).eps, maxiter=500)
    return out


def rhs(model: NetworkModel, state: SystemState, laws: Sequence[ControlLaw], constants=None) -> StateDerivative:
    """Time derivatives of (theta, omega_gen, a, p_gen); load omega is recomputed from theta."""
    constants = _check_inputs(model, laws, constants)
    G = model.n_gen
    F = net_power_flow(model, state.theta)
    omega = np.concatenate((state.omega[:G], load_bus_frequency(model, state.theta, laws, constants)))
    D = model.column("D", generators_only=True)
    M = model.column("M", generators_only=True)
    tau_g = model.column("tau_g", generators_only=True)
    tau_b = model.column("tau_b", generators_only=True)
    pc = np.array([feedback(laws[g], omega[g]) for g in range(G)])
    return StateDerivative(
        omega.copy(),
        (-D * omega[:G] + state.p + constants[:G] - F[:G]) / M,
        (pc - state.a) / tau_g,
        (state.a - state.p) / tau_b,
    )


def complete_state(model: NetworkModel, theta, omega_gen, a, p, laws, constants=None) -> SystemState:
    """Assemble a state whose load-bus frequencies satisfy the algebraic balance."""
    omega_load = load_bus_frequency(model, theta, laws, constants)
    return SystemState(theta, np.concatenate((np.asarray(omega_gen, dtype=float), omega_load)), a, p)


@np.errstate(over="ignore", invalid="ignore")
def _generic_rk4(model, x, n_steps, dt, laws, constants):
    n, G = model.n_bus, model.n_gen

    def f(v):
        if not np.all(np.isfinite(v)):
            return np.full_like(v, np.nan)  # let the step's finiteness check report it
        st = SystemState(v[:n], np.concatenate((v[n:n + G], np.zeros(n - G))), v[n + G:n + 2 * G], v[n + 2 * G:])
        return rhs(model, st, laws, constants).vector()

    for _ in range(n_steps):
        k1 = f(x)
        k2 = f(x + 0.5 * dt * k1)
        k3 = f(x + 0.5 * dt * k2)
        k4 = f(x + dt * k3)
        x += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(x)):
            return False
    return True


class _Stepper:
    """Binds model and laws to a backend; advances flat state vectors in place."""

    def __init__(self, model: NetworkModel, laws, backend: str | None = None):
        self.model = model
        self.laws = list(laws)
        if backend == "generic" or not _all_droop(self.laws):
            self.backend = "generic"
            self.params = None
        else:
            self.backend = kernels.resolve_backend(backend)
            self.params = kernels.build_params(model, self.laws)

    def advance(self, x: np.ndarray, n_steps: int, dt: float, constants: np.ndarray) -> None:
        if n_steps <= 0:
            return
        if self.backend == "generic":
            ok = _generic_rk4(self.model, x, n_steps, dt, self.laws, constants)
        else:
            ok = kernels.rk4_steps(self.params, x, n_steps, dt, constants, self.backend)
        if not ok:
            raise NumericalBlowupError("state became non-finite during integration; reduce dt")

    def omega_load(self, theta, constants) -> np.ndarray:
        if self.backend == "generic":
            return load_bus_frequency(self.model, theta, self.laws, constants)
        F = kernels.flows(self.params, theta, self.backend)
        return kernels.load_omega(self.params, F, constants, self.backend)

    def state(self, x, constants) -> SystemState:
        n = self.model.n_bus
        return SystemState.from_vector(x, n, self.model.n_gen, self.omega_load(x[:n], constants))

    def commands(self, omega: np.ndarray) -> np.ndarray:
        """Control outputs of every bus law at the given frequencies, shape (..., N)."""
        if self.params is not None:
            prm = self.params
            return np.clip(prm.p_set - prm.gain * omega, prm.lo, prm.hi)
        out = np.empty_like(omega)
        for j, law in enumerate(self.laws):
            out[..., j] = feedback(law, omega[..., j])
        return out


def step_rk4(model: NetworkModel, state: SystemState, laws, constants=None, dt: float = DEFAULT_DT, backend: str | None = None) -> SystemState:
    """One classical RK4 step; load-bus frequencies are re-solved at each stage."""
    if not dt > 0:
        raise InputError("dt must be positive")
    constants = _check_inputs(model, laws, constants)
    stepper = _Stepper(model, laws, backend)
    x = state.vector()
    stepper.advance(x, 1, dt, constants)
    return stepper.state(x, constants)


@dataclass
class Trajectory:
    """Uniformly sampled simulation output. Arrays have the sample index first."""

    t: np.ndarray
    theta: np.ndarray
    omega: np.ndarray
    a: np.ndarray
    p: np.ndarray
    commands: np.ndarray  # control output of every bus law (p^c for generators, p_L for loads)
    n_gen: int
    dt: float
    constants: np.ndarray  # constant injections in force at the end
    V_total: np.ndarray | None = None
    backend: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def p_command(self) -> np.ndarray:
        return self.commands[:, :self.n_gen]

    @property
    def p_load(self) -> np.ndarray:
        return self.commands[:, self.n_gen:]

    @property
    def final_state(self) -> SystemState:
        return SystemState(self.theta[-1], self.omega[-1], self.a[-1], self.p[-1])

    def sync_gap(self, k: int = -1) -> float:
        w = self.omega[k]
        return float(np.max(np.abs(w - w.mean())))

    def common_frequency(self, k: int = -1) -> float:
        return float(self.omega[k].mean())

    def angle_differences(self, frm, to) -> np.ndarray:
        return self.theta[:, frm] - self.theta[:, to]

    def nadir(self, direction: int = -1) -> np.ndarray:
        """Extreme frequency deviation per bus; ``direction=-1`` for under-frequency events."""
        return self.omega.min(axis=0) if direction < 0 else self.omega.max(axis=0)

    def settling_time(self, window: float = SETTLE_WINDOW, tol: float = SETTLE_TOL) -> float | None:
        """Earliest sample time after which max |w(t) - w(t - window)| <= tol holds to the end."""
        interval = self.t[1] - self.t[0] if len(self.t) > 1 else 0.0
        if interval <= 0:
            return None
        lag = int(round(window / interval))
        if lag < 1 or lag >= len(self.t):
            return None
        change = np.max(np.abs(self.omega[lag:] - self.omega[:-lag]), axis=1)
        bad = np.nonzero(change > tol)[0]
        if len(bad) == 0:
            return float(self.t[lag])
        k = bad[-1] + 1
        if k >= len(change):
            return None
        return float(self.t[lag + k])

    def settled(self, window: float = SETTLE_WINDOW, tol: float = SETTLE_TOL) -> bool:
        return self.settling_time(window, tol) is not None

    def frequency_hz(self) -> np.ndarray:
        return NOMINAL_HZ + self.omega / (2 * math.pi)

    def header(self) -> list[str]:
        n = self.theta.shape[1]
        G = self.n_gen
        return (
            ["t"]
            + [f"theta_{i}" for i in range(n)]
            + [f"omega_{i}" for i in range(n)]
            + [f"a_{g}" for g in range(G)]
            + [f"p_{g}" for g in range(G)]
            + ["V_total"]
        )

    def rows(self) -> np.ndarray:
        V = self.V_total if self.V_total is not None else np.full(len(self.t), np.nan)
        return np.column_stack((self.t, self.theta, self.omega, self.a, self.p, V))

    def to_csv(self, path=None) -> str:
        """Write ``t, theta_i..., omega_i..., a_g..., p_g..., V_total`` with 12 significant digits."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.header())
        for row in self.rows():
            writer.writerow([format(v, ".12g") for v in row])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


def read_csv(path) -> tuple[list[str], np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        data = np.array([[float(v) for v in row] for row in reader])
    return header, data


def simulate(
    model: NetworkModel,
    laws: Sequence[ControlLaw],
    initial: SystemState,
    disturbances: Sequence[Disturbance] = (),
    t_end: float = 10.0,
    dt: float = DEFAULT_DT,
    sample_every: int = 10,
    constants=None,
    monitor=None,
    backend: str | None = None,
) -> Trajectory:
    """Integrate from ``initial`` with step disturbances.

    Each disturbance takes effect at the first step boundary at or after its
    time. The number of steps is rounded up to a multiple of ``sample_every``
    so the last sample is the terminal state. ``monitor``, if given, maps a
    :class:`Trajectory` to a per-sample array stored as ``V_total``.
    """
    if not dt > 0:
        raise InputError("dt must be positive")
    if not t_end > 0:
        raise InputError("t_end must be positive")
    if sample_every < 1:
        raise InputError("sample_every must be >= 1")
    times = [d.time for d in disturbances]
    if times != sorted(times):
        raise InputError("disturbances must be sorted by time")
    for d in disturbances:
        if not 0 <= d.bus < model.n_bus:
            raise InputError(f"disturbance on unknown bus {d.bus}")
    constants = _check_inputs(model, laws, constants).copy()

    n_steps = int(math.ceil(t_end / dt - 1e-9))
    n_steps += (-n_steps) % sample_every
    n_samples = n_steps // sample_every + 1

    events: dict[int, list[Disturbance]] = {}
    for d in disturbances:
        k = int(math.ceil(d.time / dt - 1e-9))
        events.setdefault(k, []).append(d)

    stepper = _Stepper(model, laws, backend)
    n, G = model.n_bus, model.n_gen
    x = initial.vector().copy()
    theta = np.empty((n_samples, n))
    omega = np.empty((n_samples, n))
    a = np.empty((n_samples, G))
    p = np.empty((n_samples, G))

    def record(s):
        theta[s] = x[:n]
        omega[s, :G] = x[n:n + G]
        omega[s, G:] = stepper.omega_load(x[:n], constants)
        a[s] = x[n + G:n + 2 * G]
        p[s] = x[n + 2 * G:]

    event_steps = sorted(events)
    step = 0
    ev = 0

    def apply_events(at):
        nonlocal ev
        while ev < len(event_steps) and event_steps[ev] <= at:
            for d in events[event_steps[ev]]:
                constants[d.bus] += d.delta_p
            ev += 1

    apply_events(0)
    record(0)
    for s in range(1, n_samples):
        target = s * sample_every
        while step < target:
            nxt = target
            if ev < len(event_steps) and event_steps[ev] < nxt:
                nxt = event_steps[ev]
            stepper.advance(x, nxt - step, dt, constants)
            step = nxt
            apply_events(step)
        record(s)

    traj = Trajectory(
        t=np.arange(n_samples) * (sample_every * dt),
        theta=theta,
        omega=omega,
        a=a,
        p=p,
        commands=stepper.commands(omega),
        n_gen=G,
        dt=dt,
        constants=constants.copy(),
        backend=stepper.backend,
    )
    if monitor is not None:
        traj.V_total = np.asarray(monitor(traj), dtype=float)
    return traj


def equilibrium(model: NetworkModel, laws: Sequence[ControlLaw], constants=None) -> tuple[SystemState, OfcSolution]:
    """Closed-loop equilibrium: OFC optimum, common frequency, matching governor states, angles.

    Angles come from the flat-start power flow with injections p* + p_const - d*
    and the reference bus at zero.
    """
    constants = _check_inputs(model, laws, constants)
    problem = OfcProblem.from_laws(laws, model.column("D"), constants)
    sol = solve_ofc(problem)
    injections = sol.p_star + constants - sol.d_star
    injections -= injections.mean()  # strip roundoff so the power flow precondition holds
    angles = solve_equilibrium_angles(model, injections)
    G = model.n_gen
    state = SystemState(
        angles.theta,
        np.full(model.n_bus, sol.lambda_star),
        sol.p_star[:G],
        sol.p_star[:G],
    )
    return state, sol


def equilibrium_residuals(model: NetworkModel, state: SystemState, laws, constants=None) -> dict:
    """Distance of ``state`` from a closed-loop equilibrium, excluding common angle drift."""
    d = rhs(model, state, laws, constants)
    G = model.n_gen
    omega = d.theta  # theta-dot equals the full frequency vector
    return {
        "omega_dot": float(np.max(np.abs(d.omega), initial=0.0)),
        "a_dot": float(np.max(np.abs(d.a), initial=0.0)),
        "p_dot": float(np.max(np.abs(d.p), initial=0.0)),
        "sync_gap": float(np.max(np.abs(omega - omega.mean()))),
        "command_mismatch": float(np.max(np.abs(
            np.array([feedback(laws[g], omega[g]) for g in range(G)]) - state.a), initial=0.0)),
    }
