import numpy as np
import pytest

from freqcontrol.control import ControlLaw
from freqcontrol.network import Bus, Line, NetworkModel
from freqcontrol.scenario import bundled, load_scenario


def gen(i, D=1.0, p_set=0.0, M=1.0, tau_g=0.1, tau_b=0.5, p_lo=None, p_hi=None):
    return Bus(i, "generator", D, p_set, p_lo, p_hi, M, tau_g, tau_b)


def load(i, D=1.0, p_set=0.0, p_lo=None, p_hi=None):
    return Bus(i, "load", D, p_set, p_lo, p_hi)


def chain(n, Y=1.0, n_gen=0):
    buses = [gen(i) for i in range(n_gen)] + [load(i) for i in range(n_gen, n)]
    return NetworkModel(buses, [Line(i, i + 1, Y) for i in range(n - 1)])


def random_network(rng, n_bus, n_gen, extra_lines=2, y_range=(2.0, 6.0)):
    """Random connected graph: a random spanning tree plus a few extra lines."""
    order = rng.permutation(n_bus)
    pairs = set()
    for k in range(1, n_bus):
        a, b = int(order[k]), int(order[rng.integers(k)])
        pairs.add((min(a, b), max(a, b)))
    for _ in range(extra_lines):
        a, b = rng.choice(n_bus, 2, replace=False)
        pairs.add((int(min(a, b)), int(max(a, b))))
    lines = [Line(a, b, float(rng.uniform(*y_range))) for a, b in sorted(pairs)]
    buses = [gen(i, D=float(rng.uniform(0.5, 2)), M=float(rng.uniform(2, 10)),
                 tau_g=float(rng.uniform(0.05, 0.3)), tau_b=float(rng.uniform(0.2, 1.0)))
             for i in range(n_gen)]
    buses += [load(i, D=float(rng.uniform(0.5, 2))) for i in range(n_gen, n_bus)]
    return NetworkModel(buses, lines)


def constant_laws(model, values=None):
    values = np.zeros(model.n_bus) if values is None else values
    return [ControlLaw.constant(float(v)) for v in values]


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def three_bus():
    return load_scenario(bundled("three_bus.json"))


@pytest.fixture(scope="session")
def three_bus_certified():
    return load_scenario(bundled("three_bus_certified.json"))


@pytest.fixture(scope="session")
def nine_bus():
    return load_scenario(bundled("nine_bus.json"))


def pytest_terminal_summary(terminalreporter):
    rows = []
    for outcome in ("passed", "failed"):
        for rep in terminalreporter.stats.get(outcome, []):
            if rep.when == "call" and "test_acceptance.py::test_criterion_" in rep.nodeid:
                name = rep.nodeid.split("::test_criterion_")[1]
                number, _, label = name.partition("_")
                rows.append((int(number), label.replace("_", " "), outcome.upper()))
    if rows:
        terminalreporter.section("acceptance criteria")
        for number, label, outcome in sorted(rows):
            terminalreporter.write_line(f"criterion {number}: {outcome:6s} {label}")
