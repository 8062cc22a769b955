import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from freqcontrol.control import (
    ControlLaw, CubicCost, QuadraticCost, clip, feedback, lipschitz_constant, lipschitz_estimate,
)
from freqcontrol.errors import InputError

finite = st.floats(-1e3, 1e3, allow_nan=False)


@pytest.fixture
def droop():
    return ControlLaw(QuadraticCost(0.04, 1.0), 0.9, 1.1)


def random_law(rng):
    lo = rng.uniform(-2, 1)
    hi = lo + rng.uniform(0.01, 2)
    if rng.random() < 0.5:
        cost = QuadraticCost(rng.uniform(0.01, 5), rng.uniform(lo, hi))
    else:
        cost = CubicCost(rng.uniform(0.1, 5), rng.uniform(lo, hi), rng.uniform(0, 2) * (rng.random() < 0.7))
    return ControlLaw(cost, lo, hi)


def test_clip_examples():
    assert clip(0.5, 0, 1) == 0.5
    assert clip(2, 0, 1) == 1
    assert clip(-2, 0, 1) == 0


def test_clip_rejects_reversed_bounds():
    with pytest.raises(InputError):
        clip(0.0, 1, 0)


def test_quadratic_cost_identities():
    c = QuadraticCost(2.0, 0.5)
    assert c(1.5) == pytest.approx(1.0)
    assert c.derivative(1.5) == pytest.approx(2.0)
    assert c.inverse_derivative(2.0) == pytest.approx(1.5)
    assert c.gain == 0.5
    with pytest.raises(InputError):
        QuadraticCost(0.0)


@pytest.mark.parametrize("cost", [CubicCost(1.0), CubicCost(2.0, 0.3, 0.5), CubicCost(0.5, -1.0, 3.0)])
def test_inverse_derivative_round_trip(cost):
    p = np.linspace(-3, 3, 1001)
    np.testing.assert_allclose(cost.inverse_derivative(cost.derivative(p)), p, atol=1e-10)


def test_feedback_examples(droop):
    assert feedback(droop, 0.0) == pytest.approx(1.0)
    # unclipped 1 - 25 * 0.01 = 0.75, clipped to the lower bound
    assert feedback(droop, 0.01) == pytest.approx(0.9)
    assert feedback(droop, -0.002) == pytest.approx(1.05)


def test_feedback_rejects_non_finite(droop):
    with pytest.raises(InputError):
        feedback(droop, np.nan)


def test_constant_law():
    law = ControlLaw.constant(-1.2)
    assert law.is_constant
    assert feedback(law, 0.3) == -1.2
    assert lipschitz_constant(law, 0.0, 0.01) == 0.0


def test_droop_constructor():
    law = ControlLaw.droop(25.0, 1.0, 0.9, 1.1)
    assert law.is_quadratic and law.cost.R == pytest.approx(0.04)
    assert ControlLaw.droop(25.0, 1.0, 1.0, 1.0).is_constant
    assert ControlLaw.droop(0.0, 1.0, 0.9, 1.1).is_constant


def test_lipschitz_examples(droop):
    assert lipschitz_constant(droop, 0.0, 0.001) == pytest.approx(25.0)
    # unclipped command stays below 0.9 across the whole neighbourhood
    assert lipschitz_constant(droop, 0.02, 0.0005) == 0.0


def test_lipschitz_flags_saturation_boundary(droop):
    # omega* = 0.004 puts the unclipped command exactly on the lower bound 0.9
    est = lipschitz_estimate(droop, 0.004, 0.001)
    assert est.at_boundary and est.L == pytest.approx(25.0)
    assert not lipschitz_estimate(droop, 0.0, 0.001).at_boundary


def test_lipschitz_general_cost_has_margin():
    law = ControlLaw(CubicCost(1.0, 0.0, 1.0), -5, 5)
    # slope of the inverse marginal cost at 0 is 1/m = 1
    L = lipschitz_constant(law, 0.0, 0.01)
    assert 1.0 <= L <= 1.02


def test_lipschitz_needs_positive_radius(droop):
    with pytest.raises(InputError):
        lipschitz_constant(droop, 0.0, 0.0)


def test_monotone_and_boxed_random_laws(rng):
    for _ in range(10_000 // 50):
        law = random_law(rng)
        w = np.sort(rng.uniform(-3, 3, 50))
        v = feedback(law, w)
        assert np.all(np.diff(v) <= 1e-15)
        assert np.all((v >= law.p_lo) & (v <= law.p_hi))


def test_inverse_consistency_on_interior_outputs(rng):
    for _ in range(200):
        law = random_law(rng)
        w = rng.uniform(-3, 3, 50)
        v = feedback(law, w)
        inside = (v > law.p_lo) & (v < law.p_hi)
        np.testing.assert_allclose(law.cost.derivative(v[inside]), -w[inside], atol=1e-9)


def test_lipschitz_soundness(rng):
    for _ in range(100):
        law = random_law(rng)
        w_star = rng.uniform(-1, 1)
        delta = rng.uniform(1e-3, 0.1)
        L = lipschitz_constant(law, w_star, delta)
        w1 = w_star + rng.uniform(-delta, delta, 100)
        w2 = w_star + rng.uniform(-delta, delta, 100)
        lhs = np.abs(feedback(law, w1) - feedback(law, w2))
        assert np.all(lhs <= L * np.abs(w1 - w2) + 1e-12)


@settings(max_examples=300, deadline=None)
@given(finite, finite, st.floats(0.01, 10), st.floats(-5, 5), st.floats(0, 3))
def test_feedback_property(w1, w2, R, p_set, width):
    law = ControlLaw(QuadraticCost(R, p_set), p_set - width, p_set + width)
    lo, hi = sorted((w1, w2))
    assert feedback(law, lo) >= feedback(law, hi)
    assert law.p_lo <= feedback(law, w1) <= law.p_hi
