"""Inner loops of the closed-loop integrator.

Two interchangeable backends operate on the flat state
``x = [theta (N), omega_gen (G), a (G), p_gen (G)]``:

* ``"numba"``: explicit loops compiled with ``@njit``;
* ``"numpy"``: vectorized numpy, used when numba is missing or
  ``FREQCONTROL_DISABLE_NUMBA=1`` is set.

Both support clipped-quadratic (droop) laws only, stored as arrays
``p_set, gain, lo, hi`` with ``gain = 1/R`` (zero for constant injections).
"""
from __future__ import annotations

from math import sin
from typing import NamedTuple

import numpy as np

from ._accel import HAVE_NUMBA, default_backend, njit
from .errors import InputError

LOAD_TOL = 1e-12
LOAD_MAX_ITER = 100


class KernelParams(NamedTuple):
    n_bus: int
    n_gen: int
    frm: np.ndarray
    to: np.ndarray
    Y: np.ndarray
    M: np.ndarray      # generators
    D: np.ndarray      # all buses
    tau_g: np.ndarray  # generators
    tau_b: np.ndarray  # generators
    p_set: np.ndarray  # law arrays, all buses
    gain: np.ndarray
    lo: np.ndarray
    hi: np.ndarray


def build_params(model, laws) -> KernelParams:
    if len(laws) != model.n_bus:
        raise InputError(f"need one control law per bus ({model.n_bus}), got {len(laws)}")
    p_set = np.empty(model.n_bus)
    gain = np.empty(model.n_bus)
    for j, law in enumerate(laws):
        if law.is_constant:
            p_set[j], gain[j] = law.p_lo, 0.0
        elif law.is_quadratic:
            p_set[j], gain[j] = law.cost.p_set, law.cost.gain
        else:
            raise InputError("compiled kernels support quadratic (droop) laws only")
    G = model.n_gen
    return KernelParams(
        model.n_bus,
        G,
        np.ascontiguousarray(model.frm, dtype=np.int64),
        np.ascontiguousarray(model.to, dtype=np.int64),
        np.ascontiguousarray(model.Y, dtype=np.float64),
        model.column("M", generators_only=True),
        model.column("D"),
        model.column("tau_g", generators_only=True) if G else np.zeros(0),
        model.column("tau_b", generators_only=True) if G else np.zeros(0),
        p_set,
        gain,
        np.array([law.p_lo for law in laws], dtype=float),
        np.array([law.p_hi for law in laws], dtype=float),
    )


# --------------------------------------------------------------------- numba


@njit(cache=True)
def _flows_nb(theta, frm, to, Y, out):
    out[:] = 0.0
    for k in range(Y.shape[0]):
        f = Y[k] * sin(theta[frm[k]] - theta[to[k]])
        out[frm[k]] += f
        out[to[k]] -= f


@njit(cache=True)
def _load_omega_nb(F, n_gen, D, p_set, gain, lo, hi, const, out):
    n = F.shape[0]
    for j in range(n_gen, n):
        rest = const[j] - F[j]
        if lo[j] == hi[j] or gain[j] == 0.0:
            out[j] = (min(max(p_set[j], lo[j]), hi[j]) + rest) / D[j]
            continue
        # the clipped law lies in [lo, hi], which brackets the root
        a = (lo[j] + rest) / D[j]
        b = (hi[j] + rest) / D[j]
        w = (p_set[j] + rest) / (D[j] + gain[j])
        if w < a or w > b:
            w = 0.5 * (a + b)
        for _ in range(LOAD_MAX_ITER):
            u = p_set[j] - gain[j] * w
            slope = D[j]
            if u > hi[j]:
                u = hi[j]
            elif u < lo[j]:
                u = lo[j]
            else:
                slope += gain[j]
            g = D[j] * w - u - rest
            if abs(g) <= LOAD_TOL:
                break
            if g > 0.0:
                b = w
            else:
                a = w
            wn = w - g / slope
            if not (a < wn < b):
                wn = 0.5 * (a + b)
            if wn == w:
                break
            w = wn
        out[j] = w


@njit(cache=True)
def _deriv_nb(x, n, G, frm, to, Y, M, D, tau_g, tau_b, p_set, gain, lo, hi, const, F, omega, dx):
    _flows_nb(x[:n], frm, to, Y, F)
    _load_omega_nb(F, G, D, p_set, gain, lo, hi, const, omega)
    for g in range(G):
        omega[g] = x[n + g]
    for j in range(n):
        dx[j] = omega[j]
    for g in range(G):
        w = x[n + g]
        a = x[n + G + g]
        p = x[n + 2 * G + g]
        pc = p_set[g] - gain[g] * w
        if pc > hi[g]:
            pc = hi[g]
        elif pc < lo[g]:
            pc = lo[g]
        dx[n + g] = (-D[g] * w + p + const[g] - F[g]) / M[g]
        dx[n + G + g] = (pc - a) / tau_g[g]
        dx[n + 2 * G + g] = (a - p) / tau_b[g]


@njit(cache=True)
def _rk4_nb(x, n_steps, dt, n, G, frm, to, Y, M, D, tau_g, tau_b, p_set, gain, lo, hi, const):
    m = x.shape[0]
    F = np.empty(n)
    omega = np.empty(n)
    k1 = np.empty(m)
    k2 = np.empty(m)
    k3 = np.empty(m)
    k4 = np.empty(m)
    tmp = np.empty(m)
    half = 0.5 * dt
    sixth = dt / 6.0
    for _ in range(n_steps):
        _deriv_nb(x, n, G, frm, to, Y, M, D, tau_g, tau_b, p_set, gain, lo, hi, const, F, omega, k1)
        for i in range(m):
            tmp[i] = x[i] + half * k1[i]
        _deriv_nb(tmp, n, G, frm, to, Y, M, D, tau_g, tau_b, p_set, gain, lo, hi, const, F, omega, k2)
        for i in range(m):
            tmp[i] = x[i] + half * k2[i]
        _deriv_nb(tmp, n, G, frm, to, Y, M, D, tau_g, tau_b, p_set, gain, lo, hi, const, F, omega, k3)
        for i in range(m):
            tmp[i] = x[i] + dt * k3[i]
        _deriv_nb(tmp, n, G, frm, to, Y, M, D, tau_g, tau_b, p_set, gain, lo, hi, const, F, omega, k4)
        finite = True
        for i in range(m):
            x[i] += sixth * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
            if not np.isfinite(x[i]):
                finite = False
        if not finite:
            return False
    return True


# --------------------------------------------------------------------- numpy


def _flows_np(theta, frm, to, Y, n):
    f = Y * np.sin(theta[frm] - theta[to])
    return np.bincount(frm, f, n) - np.bincount(to, f, n)


def _load_omega_np(F, n_gen, D, p_set, gain, lo, hi, const):
    # The clipped droop law is piecewise linear and the balance is monotone in w,
    # so the root is the unclipped solution projected onto the saturated branch.
    D, p_set, gain, lo, hi = D[n_gen:], p_set[n_gen:], gain[n_gen:], lo[n_gen:], hi[n_gen:]
    rest = const[n_gen:] - F[n_gen:]
    w = (p_set + rest) / (D + gain)
    u = p_set - gain * w
    w = np.where(u > hi, (hi + rest) / D, w)
    return np.where(u < lo, (lo + rest) / D, w)


def _deriv_np(x, prm: KernelParams, const):
    n, G = prm.n_bus, prm.n_gen
    theta = x[:n]
    w_g = x[n:n + G]
    a = x[n + G:n + 2 * G]
    p = x[n + 2 * G:]
    F = _flows_np(theta, prm.frm, prm.to, prm.Y, n)
    w_l = _load_omega_np(F, G, prm.D, prm.p_set, prm.gain, prm.lo, prm.hi, const)
    pc = np.clip(prm.p_set[:G] - prm.gain[:G] * w_g, prm.lo[:G], prm.hi[:G])
    return np.concatenate((
        w_g,
        w_l,
        (-prm.D[:G] * w_g + p + const[:G] - F[:G]) / prm.M,
        (pc - a) / prm.tau_g,
        (a - p) / prm.tau_b,
    ))


@np.errstate(over="ignore", invalid="ignore")  # a blow-up is reported by the caller
def _rk4_np(x, n_steps, dt, prm: KernelParams, const):
    for _ in range(n_steps):
        k1 = _deriv_np(x, prm, const)
        k2 = _deriv_np(x + 0.5 * dt * k1, prm, const)
        k3 = _deriv_np(x + 0.5 * dt * k2, prm, const)
        k4 = _deriv_np(x + dt * k3, prm, const)
        x += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(x)):
            return False
    return True


# ------------------------------------------------------------------ dispatch


def resolve_backend(backend: str | None) -> str:
    backend = backend or default_backend()
    if backend not in ("numba", "numpy"):
        raise InputError(f"unknown backend {backend!r}")
    if backend == "numba" and not HAVE_NUMBA:
        return "numpy"
    return backend


def flows(prm: KernelParams, theta, backend: str | None = None) -> np.ndarray:
    theta = np.ascontiguousarray(theta, dtype=np.float64)
    if resolve_backend(backend) == "numba":
        out = np.empty(prm.n_bus)
        _flows_nb(theta, prm.frm, prm.to, prm.Y, out)
        return out
    return _flows_np(theta, prm.frm, prm.to, prm.Y, prm.n_bus)


def load_omega(prm: KernelParams, F, const, backend: str | None = None) -> np.ndarray:
    """Algebraic frequencies of the load buses (length N - G)."""
    F = np.ascontiguousarray(F, dtype=np.float64)
    const = np.ascontiguousarray(const, dtype=np.float64)
    if resolve_backend(backend) == "numba":
        out = np.zeros(prm.n_bus)
        _load_omega_nb(F, prm.n_gen, prm.D, prm.p_set, prm.gain, prm.lo, prm.hi, const, out)
        return out[prm.n_gen:]
    return _load_omega_np(F, prm.n_gen, prm.D, prm.p_set, prm.gain, prm.lo, prm.hi, const)


def deriv(prm: KernelParams, x, const, backend: str | None = None) -> np.ndarray:
    x = np.ascontiguousarray(x, dtype=np.float64)
    const = np.ascontiguousarray(const, dtype=np.float64)
    if resolve_backend(backend) == "numba":
        dx = np.empty_like(x)
        F = np.empty(prm.n_bus)
        omega = np.empty(prm.n_bus)
        _deriv_nb(x, prm.n_bus, prm.n_gen, prm.frm, prm.to, prm.Y, prm.M, prm.D,
                  prm.tau_g, prm.tau_b, prm.p_set, prm.gain, prm.lo, prm.hi, const, F, omega, dx)
        return dx
    return _deriv_np(x, prm, const)


def rk4_steps(prm: KernelParams, x: np.ndarray, n_steps: int, dt: float, const, backend: str | None = None) -> bool:
    """Advance ``x`` in place by ``n_steps`` RK4 steps; False on a non-finite state."""
    const = np.ascontiguousarray(const, dtype=np.float64)
    if resolve_backend(backend) == "numba":
        return bool(_rk4_nb(x, int(n_steps), float(dt), prm.n_bus, prm.n_gen, prm.frm, prm.to,
                            prm.Y, prm.M, prm.D, prm.tau_g, prm.tau_b, prm.p_set, prm.gain,
                            prm.lo, prm.hi, const))
    return _rk4_np(x, int(n_steps), float(dt), prm, const)
