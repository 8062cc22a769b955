"""Time the RK4 inner loop on the numba and numpy backends.

    python3 benchmarks/bench_kernels.py [--steps 2000] [--repeat 5] [--sizes 3 9 50 200]

Each case integrates the same closed-loop state on both backends, checks the
results agree, and reports the best wall time per step.
"""
import argparse
import time

import numpy as np

from freqcontrol import kernels
from freqcontrol._accel import HAVE_NUMBA
from freqcontrol.control import ControlLaw
from freqcontrol.dynamics import complete_state
from freqcontrol.network import Bus, Line, NetworkModel
from freqcontrol.scenario import bundled, load_scenario


def synthetic(n_bus, seed=0):
    """Ring plus random chords; a quarter of the buses are generators."""
    rng = np.random.default_rng(seed)
    G = max(1, n_bus // 4)
    buses = [Bus(i, "generator", 1.0, 1.0, 0.9, 1.1, rng.uniform(2, 10), 0.1, 0.5) for i in range(G)]
    buses += [Bus(i, "load", 1.0, -G / (n_bus - G), -2.0, 0.0) for i in range(G, n_bus)]
    pairs = {(i, (i + 1) % n_bus) for i in range(n_bus)} if n_bus > 2 else {(0, 1)}
    while len(pairs) < int(1.5 * n_bus):
        a, b = sorted(rng.choice(n_bus, 2, replace=False))
        if (b, a) not in pairs:
            pairs.add((int(a), int(b)))
    model = NetworkModel(buses, [Line(a, b, rng.uniform(20, 40)) for a, b in sorted(pairs)])
    laws = [ControlLaw.droop(25 * abs(b.p_set), b.p_set, b.p_lo, b.p_hi) for b in buses]
    return model, laws


def cases(sizes):
    for name in ("three_bus.json", "nine_bus.json"):
        sc = load_scenario(bundled(name))
        yield sc.name, sc.model, sc.laws()
    for n in sizes:
        model, laws = synthetic(n)
        yield f"synthetic_{n}", model, laws


def best_time(prm, x0, steps, dt, const, backend, repeat):
    best = np.inf
    for _ in range(repeat):
        x = x0.copy()
        t0 = time.perf_counter()
        kernels.rk4_steps(prm, x, steps, dt, const, backend)
        best = min(best, time.perf_counter() - t0)
    return best, x


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--steps", type=int, default=2000)
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--dt", type=float, default=1e-3)
    parser.add_argument("--sizes", type=int, nargs="*", default=[50, 200])
    args = parser.parse_args(argv)

    backends = ["numpy"] + (["numba"] if HAVE_NUMBA else [])
    if not HAVE_NUMBA:
        print("numba unavailable or disabled; timing numpy only")
    print(f"{'case':>14} {'buses':>6} " + " ".join(f"{b + ' us/step':>16}" for b in backends) + f" {'speedup':>8}")
    rng = np.random.default_rng(1)
    for name, model, laws in cases(args.sizes):
        prm = kernels.build_params(model, laws)
        G = model.n_gen
        state = complete_state(model, rng.uniform(-0.1, 0.1, model.n_bus), np.zeros(G),
                               model.column("p_set", True), model.column("p_set", True), laws)
        const = np.zeros(model.n_bus)
        const[-1] = -0.1
        x0 = state.vector()
        if HAVE_NUMBA:
            kernels.rk4_steps(prm, x0.copy(), 1, args.dt, const, "numba")  # compile outside the timer
        times, finals = [], []
        for b in backends:
            t, x = best_time(prm, x0, args.steps, args.dt, const, b, args.repeat)
            times.append(t / args.steps * 1e6)
            finals.append(x)
        if len(finals) == 2:
            gap = np.max(np.abs(finals[0] - finals[1]))
            assert gap < 1e-9, f"{name}: backends disagree by {gap:.2e}"
        speed = f"{times[0] / times[-1]:8.1f}" if len(times) == 2 else f"{'-':>8}"
        print(f"{name:>14} {model.n_bus:>6} " + " ".join(f"{t:16.2f}" for t in times) + f" {speed}")


if __name__ == "__main__":
    main()
