"""Command line entry point: ``freqcontrol <command> <scenario.json>``.

Exit codes: 0 success, 2 validation error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from .dynamics import equilibrium, equilibrium_residuals
from .errors import InputError, NumericalError
from .lyapunov import certify
from .ofc import OfcProblem, solve
from .scenario import InternalError, compare_cases, load_scenario, run

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 2, 3

log = logging.getLogger("freqcontrol")


def _scenario(args):
    sc = load_scenario(args.scenario)
    return sc.with_overrides(dt=args.dt, t_end=args.t_end, sample_every=args.sample_every, out_dir=args.out_dir)


def _constants(sc, args):
    return np.zeros(sc.model.n_bus) if args.setpoint else sc.final_constants()


def cmd_ofc(args):
    sc = _scenario(args)
    laws = sc.laws()
    problem = OfcProblem.from_laws(laws, sc.model.column("D"), _constants(sc, args))
    return solve(problem).as_dict()


def cmd_equilibrium(args):
    sc = _scenario(args)
    laws = sc.laws()
    constants = _constants(sc, args)
    state, sol = equilibrium(sc.model, laws, constants)
    return {
        "lambda_star": sol.lambda_star,
        "theta": state.theta.tolist(),
        "omega": state.omega.tolist(),
        "a": state.a.tolist(),
        "p": state.p.tolist(),
        "ofc": sol.as_dict(),
        "residuals": equilibrium_residuals(sc.model, state, laws, constants),
    }


def cmd_certify(args):
    sc = _scenario(args)
    laws = sc.laws()
    state, _ = equilibrium(sc.model, laws, _constants(sc, args))
    return certify(sc.model, laws, state, sc.lipschitz_delta).as_dict()


def cmd_simulate(args):
    return run(_scenario(args), backend=args.backend).as_dict()


def cmd_compare(args):
    return compare_cases(_scenario(args), backend=args.backend).as_dict()


COMMANDS = {
    "ofc": (cmd_ofc, "solve the optimal frequency control problem"),
    "equilibrium": (cmd_equilibrium, "closed-loop equilibrium state"),
    "simulate": (cmd_simulate, "simulate, certify, write trajectory CSV and JSON report"),
    "certify": (cmd_certify, "Lyapunov stability certificate at the post-disturbance equilibrium"),
    "compare": (cmd_compare, "generator-only vs generator+load control at equal capacity"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="freqcontrol", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("scenario", help="scenario JSON file")
        p.add_argument("--dt", type=float, help="integration step, s")
        p.add_argument("--t-end", type=float, help="simulated horizon, s")
        p.add_argument("--sample-every", type=int, help="steps between recorded samples")
        p.add_argument("--out-dir", help="directory for CSV/JSON outputs")
        p.add_argument("--seed", type=int, default=None, help="RNG seed (randomized runs only)")
        p.add_argument("--backend", choices=["numba", "numpy", "generic"], default=None)
        p.add_argument("--setpoint", action="store_true",
                       help="ignore disturbances (ofc/equilibrium/certify)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.seed is not None:
        np.random.seed(args.seed)
    func = COMMANDS[args.command][0]
    try:
        result = func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (NumericalError, InternalError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    json.dump(result, sys.stdout, indent=2)
    sys.stdout.write("\n")
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
