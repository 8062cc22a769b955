"""Composite Lyapunov function and the per-generator sufficient stability test.

The candidate is the network energy function plus one diagonal quadratic form
per governor/turbine loop,

    V_total = 1/2 sum_G M (w - w*)^2 + sum_lines Y [cos t*_ij - cos t_ij - sin t*_ij (t_ij - t*_ij)]
              + sum_G 1/2 (P11 (a - a*)^2 + P22 (p - p*)^2)

and an equilibrium is certified when every generator command is Lipschitz
with constant L < D near w* and every equilibrium angle difference lies in
(-pi/2, pi/2). Failing the test never means "unstable".
"""
from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .control import DEFAULT_LIPSCHITZ_DELTA, ControlLaw, lipschitz_estimate
from .errors import InputError
from .network import NetworkModel


_L_FLOOR = 1e-6  # relative to D


class Verdict(str, enum.Enum):
    CERTIFIED = "Certified"
    INCONCLUSIVE = "Inconclusive"


@dataclass(frozen=True)
class GovernorCertificate:
    """Diagonal P for one governor/turbine loop and the derivative-bound coefficients.

    dV/dt <= -alpha p~^2 + beta w~^2 - gamma (a~ + eta p~)^2 holds whenever
    |p~c| <= L |w~|. Coefficients are ``None`` when inconclusive.
    """

    tau_g: float
    tau_b: float
    D: float
    L: float
    verdict: Verdict
    P11: float | None = None
    P22: float | None = None
    alpha: float | None = None
    beta: float | None = None
    gamma: float | None = None
    eta: float | None = None
    xi: float | None = None
    sigma: float | None = None
    z: float | None = None
    bus: int | None = None
    note: str = ""

    @property
    def certified(self) -> bool:
        return self.verdict is Verdict.CERTIFIED

    @property
    def P(self) -> np.ndarray:
        return np.diag([self.P11, self.P22])

    def as_dict(self) -> dict:
        out = asdict(self)
        out["verdict"] = self.verdict.value
        return out


def compact_matrices(tau_g: float, tau_b: float) -> tuple[np.ndarray, np.ndarray]:
    """(A, B) of the governor/turbine loop in deviation coordinates y = (a~, p~)."""
    A = np.array([[-1.0 / tau_g, 0.0], [1.0 / tau_b, -1.0 / tau_b]])
    B = np.array([1.0 / tau_g, 0.0])
    return A, B


def _coefficients(tau_g, tau_b, L, P11, P22, gamma):
    # Completing squares in y^T P (A y + B pc) leaves P22^2 (not P22) in the p~^2 term.
    alpha = P22 / tau_b - P22**2 / (4 * gamma * tau_b**2)
    beta = P11**2 * L**2 / (4 * tau_g * (P11 - gamma * tau_g))
    eta = -P22 / (2 * gamma * tau_b)
    return alpha, beta, eta


def construct_P(tau_g: float, tau_b: float, D: float, L: float) -> GovernorCertificate:
    """Diagonal P meeting the derivative bound with 4 alpha (D - beta) > 1, if L < D.

    For 0 < L < D this takes sigma = z = 1/2 and xi = D / (4 L^2), which
    maximizes 16 xi (1 - sigma)(D - L^2 xi / (4 sigma z (1 - z))) at D^2 / L^2,
    and maps back through xi = P22/(4 tau_b), sigma = xi/gamma,
    z = tau_g gamma / P11.
    """
    if not (tau_g > 0 and tau_b > 0 and D > 0):
        raise InputError("tau_g, tau_b and D must be positive")
    if not L >= 0:
        raise InputError("Lipschitz constant must be non-negative")
    if L >= D:
        return GovernorCertificate(tau_g, tau_b, D, L, Verdict.INCONCLUSIVE,
                                   note="L >= D: sufficient condition fails")
    note = ""
    if 0 < L < _L_FLOOR * D:
        # the maximiser's P scales like 1/L^2 and overflows; a bound proven for a
        # larger slope still covers this one
        note = f"P built for L = {_L_FLOOR * D:.3g} (floor), which bounds the actual slope"
        L_build = _L_FLOOR * D
    else:
        L_build = L
    if L == 0:
        # command is locally constant; any valid diagonal P works, scaled so 4 alpha D > 1
        s = max(1.0, 1.0 / D)
        P11, P22 = s * tau_g, 2.0 * s * tau_b
        xi = P22 / (4 * tau_b)
        gamma = 0.75 * s
    else:
        sigma, z = 0.5, 0.5
        xi = D / (4 * L_build**2)
        gamma = xi / sigma
        P22 = 4 * tau_b * xi
        P11 = tau_g * gamma / z
    sigma = xi / gamma
    z = tau_g * gamma / P11
    alpha, beta, eta = _coefficients(tau_g, tau_b, L_build, P11, P22, gamma)
    cert = GovernorCertificate(tau_g, tau_b, D, L, Verdict.CERTIFIED, P11, P22, alpha, beta,
                               gamma, eta, xi, sigma, z, note=note)
    if not all(certificate_conditions(cert).values()):
        return GovernorCertificate(tau_g, tau_b, D, L, Verdict.INCONCLUSIVE,
                                   note="coefficient checks failed")
    return cert


def certificate_conditions(c: GovernorCertificate) -> dict[str, bool]:
    """Every inequality the certificate must satisfy, checked numerically."""
    if c.P11 is None:
        return {"coefficients_present": False}
    A, _ = compact_matrices(c.tau_g, c.tau_b)
    Q = c.P @ A + A.T @ c.P
    return {
        "P_positive": c.P11 > 0 and c.P22 > 0,
        "PA_negative_definite": c.P11 / c.tau_g > c.P22 / (4 * c.tau_b)
        and bool(np.all(np.linalg.eigvalsh(Q) < 0)),
        "gamma_in_range": c.P22 / (4 * c.tau_b) < c.gamma < c.P11 / c.tau_g,
        "alpha_positive": c.alpha > 0,
        "beta_below_D": c.beta < c.D,
        "decay_margin": 4 * c.alpha * (c.D - c.beta) > 1,
        "xi_positive": c.xi > 0,
        "sigma_in_unit": 0 < c.sigma < 1,
        "z_in_unit": 0 < c.z < 1,
    }


def governor_derivative(c: GovernorCertificate, a_dev, p_dev, pc_dev):
    """d/dt of 1/2 y^T P y along y' = A y + B pc~, with y = (a~, p~)."""
    a_dev, p_dev, pc_dev = map(np.asarray, (a_dev, p_dev, pc_dev))
    a_dot = (pc_dev - a_dev) / c.tau_g
    p_dot = (a_dev - p_dev) / c.tau_b
    return c.P11 * a_dev * a_dot + c.P22 * p_dev * p_dot


def derivative_bound(c: GovernorCertificate, a_dev, p_dev, w_dev):
    """-alpha p~^2 + beta w~^2 - gamma (a~ + eta p~)^2."""
    a_dev, p_dev, w_dev = map(np.asarray, (a_dev, p_dev, w_dev))
    return -c.alpha * p_dev**2 + c.beta * w_dev**2 - c.gamma * (a_dev + c.eta * p_dev) ** 2


@dataclass(frozen=True)
class StabilityCertificate:
    generators: tuple[GovernorCertificate, ...]
    line_secure: tuple[bool, ...]
    line_angles: tuple[float, ...]
    omega_star: float
    delta: float
    verdict: Verdict
    notes: tuple[str, ...] = ()

    @property
    def certified(self) -> bool:
        return self.verdict is Verdict.CERTIFIED

    def as_dict(self) -> dict:
        return {
            "verdict": self.verdict.value,
            "omega_star": self.omega_star,
            "lipschitz_delta": self.delta,
            "generators": [g.as_dict() for g in self.generators],
            "line_secure": list(self.line_secure),
            "line_angle_differences": list(self.line_angles),
            "notes": list(self.notes),
        }


def energy_V0(model: NetworkModel, state, eq_state):
    """Kinetic plus closed-form potential energy relative to ``eq_state``.

    ``state`` may carry a leading sample axis (e.g. a Trajectory).
    """
    G = model.n_gen
    M = model.column("M", generators_only=True)
    w_dev = np.asarray(state.omega)[..., :G] - np.asarray(eq_state.omega)[:G]
    theta = np.asarray(state.theta)
    t = theta[..., model.frm] - theta[..., model.to]
    ts = np.asarray(eq_state.theta)[model.frm] - np.asarray(eq_state.theta)[model.to]
    potential = model.Y * (np.cos(ts) - np.cos(t) - np.sin(ts) * (t - ts))
    return 0.5 * np.sum(M * w_dev**2, axis=-1) + np.sum(potential, axis=-1)


def energy_total(model: NetworkModel, state, eq_state, cert: StabilityCertificate):
    """V0 plus the governor/turbine quadratic forms; needs P for every generator."""
    if len(cert.generators) != model.n_gen:
        raise InputError("certificate does not match the model's generators")
    if not all(g.P11 is not None for g in cert.generators):
        raise InputError("energy_total needs a diagonal P for every generator")
    P11 = np.array([g.P11 for g in cert.generators])
    P22 = np.array([g.P22 for g in cert.generators])
    a_dev = np.asarray(state.a) - np.asarray(eq_state.a)
    p_dev = np.asarray(state.p) - np.asarray(eq_state.p)
    governors = 0.5 * np.sum(P11 * a_dev**2 + P22 * p_dev**2, axis=-1)
    return energy_V0(model, state, eq_state) + governors


def certify(
    model: NetworkModel,
    laws: Sequence[ControlLaw],
    eq_state,
    delta: float = DEFAULT_LIPSCHITZ_DELTA,
) -> StabilityCertificate:
    """Check the sufficient condition at a closed-loop equilibrium."""
    omega_star = float(np.mean(eq_state.omega))
    gens = []
    notes = []
    for bus in model.generators:
        est = lipschitz_estimate(laws[bus.id], omega_star, delta)
        g = construct_P(bus.tau_g, bus.tau_b, bus.D, est.L)
        note = g.note
        if est.at_boundary:
            note = (note + "; " if note else "") + "w* at saturation boundary, unsaturated slope used"
            notes.append(f"generator {bus.id}: {note}")
        gens.append(GovernorCertificate(**{**g.__dict__, "bus": bus.id, "note": note}))
    theta = np.asarray(eq_state.theta)
    diffs = theta[model.frm] - theta[model.to]
    secure = tuple(bool(abs(d) < math.pi / 2) for d in diffs)
    for k, ok in enumerate(secure):
        if not ok:
            ln = model.lines[k]
            notes.append(f"line {ln.frm}->{ln.to}: angle difference {diffs[k]:.4f} rad outside (-pi/2, pi/2)")
    ok = all(g.certified for g in gens) and all(secure)
    return StabilityCertificate(
        tuple(gens),
        secure,
        tuple(float(d) for d in diffs),
        omega_star,
        float(delta),
        Verdict.CERTIFIED if ok else Verdict.INCONCLUSIVE,
        tuple(notes),
    )
