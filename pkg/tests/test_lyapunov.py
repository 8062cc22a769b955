import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from freqcontrol.control import ControlLaw
from freqcontrol.dynamics import SystemState, equilibrium
from freqcontrol.errors import InputError
from freqcontrol.lyapunov import (
    Verdict, certify, compact_matrices, construct_P, derivative_bound, energy_total, energy_V0,
    governor_derivative, certificate_conditions,
)
from freqcontrol.network import Line, NetworkModel

from conftest import gen, load

positive = st.floats(0.01, 10.0)


def audit_samples(c, rng, n):
    a, p, w = rng.uniform(-1, 1, (3, n))
    pc = c.L * np.abs(w) * rng.uniform(-1, 1, n)
    return a, p, w, pc


def test_worked_example():
    c = construct_P(0.1, 0.5, 1.0, 0.5)
    assert c.verdict is Verdict.CERTIFIED
    expected = dict(P11=0.4, P22=2.0, beta=0.5, gamma=2.0, eta=-1.0, xi=1.0, sigma=0.5, z=0.5)
    for name, value in expected.items():
        assert getattr(c, name) == pytest.approx(value, abs=1e-12), name
    # completing the square gives alpha = P22/tau_b - P22^2/(4 gamma tau_b^2) = 4 - 2
    assert c.alpha == pytest.approx(2.0, abs=1e-12)
    # the maximised margin equals D^2 / L^2
    assert 4 * c.alpha * (c.D - c.beta) == pytest.approx(c.D**2 / c.L**2, abs=1e-12)
    assert all(certificate_conditions(c).values())


def test_alpha_is_tight(rng):
    c = construct_P(0.1, 0.5, 1.0, 0.5)
    a, p, w, pc = audit_samples(c, rng, 10_000)
    lhs = governor_derivative(c, a, p, pc)
    assert np.all(lhs <= derivative_bound(c, a, p, w) + 1e-9)
    # with the p~^2 term's P22 left unsquared alpha would read 3; that bound fails
    for alpha in (c.alpha + 1e-3, 3.0):
        bigger = replace(c, alpha=alpha)
        # with w = 0 the slack is a quadratic form in (a~, p~) that vanishes along a~ = 0
        p0 = np.array([1.0])
        a0 = np.array([0.0])
        assert governor_derivative(bigger, a0, p0, 0 * p0)[0] > derivative_bound(bigger, a0, p0, 0 * p0)[0]


def test_zero_lipschitz():
    for D in (0.05, 1.0, 20.0):
        c = construct_P(0.2, 0.7, D, 0.0)
        assert c.verdict is Verdict.CERTIFIED
        assert c.beta == 0.0
        assert 4 * c.alpha * D > 1
        assert all(certificate_conditions(c).values())
    c = construct_P(0.2, 0.7, 1.0, 0.0)
    assert (c.P11, c.P22) == pytest.approx((0.2, 1.4))


def test_inconclusive_when_slope_exceeds_damping():
    assert construct_P(0.1, 0.5, 1.0, 1.5).verdict is Verdict.INCONCLUSIVE
    assert construct_P(0.1, 0.5, 1.0, 1.0).verdict is Verdict.INCONCLUSIVE
    c = construct_P(0.1, 0.5, 1.0, 25.0)
    assert c.P11 is None and not c.certified


def test_tiny_slope_uses_floor(rng):
    c = construct_P(0.1, 0.5, 1.0, 1e-200)
    assert c.certified and c.L == 1e-200 and "floor" in c.note
    assert all(certificate_conditions(c).values())
    a, p, w, pc = audit_samples(c, rng, 1000)
    assert np.all(governor_derivative(c, a, p, pc) <= derivative_bound(c, a, p, w) + 1e-9)


def test_bad_parameters():
    for args in ((0.0, 0.5, 1.0, 0.5), (0.1, -1.0, 1.0, 0.5), (0.1, 0.5, 0.0, 0.5), (0.1, 0.5, 1.0, -0.1)):
        with pytest.raises(InputError):
            construct_P(*args)


@settings(max_examples=500, deadline=None)
@given(positive, positive, positive, st.floats(0.0, 0.999))
def test_certificate_invariants(tau_g, tau_b, D, ratio):
    c = construct_P(tau_g, tau_b, D, ratio * D)
    assert c.verdict is Verdict.CERTIFIED
    checks = certificate_conditions(c)
    assert all(checks.values()), checks
    A, _ = compact_matrices(tau_g, tau_b)
    assert np.all(np.linalg.eigvalsh(c.P @ A + A.T @ c.P) < 0)


def test_derivative_bound_audit(rng):
    for _ in range(20):
        D = rng.uniform(0.2, 3)
        c = construct_P(rng.uniform(0.05, 0.5), rng.uniform(0.1, 1.0), D, rng.uniform(0, 0.99) * D)
        a, p, w, pc = audit_samples(c, rng, 10_000)
        assert np.all(governor_derivative(c, a, p, pc) <= derivative_bound(c, a, p, w) + 1e-9)


def single_line():
    return NetworkModel([gen(0), load(1)], [Line(0, 1, 1.0)])


def flat(model, theta=None, omega=None):
    n, G = model.n_bus, model.n_gen
    return SystemState(np.zeros(n) if theta is None else theta, np.zeros(n) if omega is None else omega,
                       np.zeros(G), np.zeros(G))


class TestEnergy:
    def test_zero_at_equilibrium(self):
        model = single_line()
        eq = flat(model, theta=[0.3, 0.0])
        assert energy_V0(model, eq, eq) == 0.0

    def test_single_line_value(self):
        model = single_line()
        v = energy_V0(model, flat(model, theta=[0.1, 0.0]), flat(model))
        assert v == pytest.approx(1 - math.cos(0.1), abs=1e-15)
        assert v == pytest.approx(0.00499583, abs=1e-8)

    def test_closed_form_matches_quadrature(self, rng):
        model = single_line()
        for _ in range(100):
            ts, t = rng.uniform(-1.4, 1.4, 2)
            v = energy_V0(model, flat(model, theta=[t, 0.0]), flat(model, theta=[ts, 0.0]))
            integral, _ = quad(lambda u: math.sin(u) - math.sin(ts), ts, t, epsabs=1e-13)
            assert v == pytest.approx(integral, abs=1e-10)

    def test_kinetic_term(self):
        model = single_line()
        v = energy_V0(model, flat(model, omega=[0.2, 0.0]), flat(model))
        assert v == pytest.approx(0.5 * 1.0 * 0.04)

    def test_batched_over_samples(self, rng):
        model = single_line()
        thetas = rng.uniform(-1, 1, (5, 2))
        batch = SystemState(thetas, np.zeros((5, 2)), np.zeros((5, 1)), np.zeros((5, 1)))
        eq = flat(model)
        expected = [energy_V0(model, flat(model, theta=t), eq) for t in thetas]
        np.testing.assert_allclose(energy_V0(model, batch, eq), expected)


class TestCertify:
    def test_certified_fixture(self, three_bus_certified):
        sc = three_bus_certified
        state, _ = equilibrium(sc.model, sc.laws(), sc.final_constants())
        cert = certify(sc.model, sc.laws(), state, 0.01)
        assert cert.verdict is Verdict.CERTIFIED
        g = cert.generators[0]
        assert g.L == pytest.approx(0.5) and g.bus == 0
        assert all(cert.line_secure)

    def test_high_gain_is_inconclusive(self, three_bus):
        state, _ = equilibrium(three_bus.model, three_bus.laws())
        cert = certify(three_bus.model, three_bus.laws(), state, 0.01)
        assert cert.verdict is Verdict.INCONCLUSIVE
        assert cert.generators[0].L == pytest.approx(25 * 2.0)

    def test_insecure_line(self, three_bus_certified):
        sc = three_bus_certified
        state, _ = equilibrium(sc.model, sc.laws())
        pushed = SystemState([1.6, 0.0, 0.0], state.omega, state.a, state.p)
        cert = certify(sc.model, sc.laws(), pushed, 0.01)
        assert cert.verdict is Verdict.INCONCLUSIVE
        assert cert.generators[0].certified
        assert not all(cert.line_secure)
        assert any("outside" in n for n in cert.notes)

    def test_boundary_note(self):
        model = NetworkModel([gen(0, D=1.0, p_set=1.0, p_lo=0.9, p_hi=1.1), load(1)], [Line(0, 1, 5.0)])
        laws = [ControlLaw.droop(0.5, 1.0, 0.9, 1.1), ControlLaw.constant(0.0)]
        state = SystemState([0.0, 0.0], [-0.2, -0.2], [1.1], [1.1])
        cert = certify(model, laws, state, 0.01)
        assert "saturation boundary" in cert.generators[0].note
        assert cert.generators[0].L == pytest.approx(0.5)

    def test_energy_total(self, three_bus_certified):
        sc = three_bus_certified
        laws = sc.laws()
        eq, _ = equilibrium(sc.model, laws, sc.final_constants())
        cert = certify(sc.model, laws, eq, 0.01)
        assert energy_total(sc.model, eq, eq, cert) == 0.0
        bumped = SystemState(eq.theta, eq.omega, eq.a + 0.01, eq.p)
        assert cert.generators[0].P11 == pytest.approx(0.4)
        assert energy_total(sc.model, bumped, eq, cert) == pytest.approx(0.5 * 0.4 * 1e-4, abs=1e-15)

    def test_positive_near_equilibrium(self, three_bus_certified, rng):
        sc = three_bus_certified
        laws = sc.laws()
        eq, _ = equilibrium(sc.model, laws, sc.final_constants())
        cert = certify(sc.model, laws, eq, 0.01)
        x0 = eq.vector()
        for _ in range(1000):
            dx = rng.normal(size=x0.size)
            dx *= rng.uniform(1e-6, 1e-3) / np.linalg.norm(dx)
            # a common angle shift is invisible to the energy, so remove it
            dx[:3] -= dx[:3].mean()
            x = x0 + dx
            st_ = SystemState(x[:3], np.concatenate((x[3:4], eq.omega[1:])), x[4:5], x[5:6])
            assert energy_total(sc.model, st_, eq, cert) > 0

    def test_energy_total_needs_matrices(self, three_bus):
        state, _ = equilibrium(three_bus.model, three_bus.laws())
        cert = certify(three_bus.model, three_bus.laws(), state, 0.01)
        with pytest.raises(InputError):
            energy_total(three_bus.model, state, state, cert)
