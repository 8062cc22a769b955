"""Scenario files, single runs and the generator-only vs generator+load comparison."""
from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

import jsonschema
import numpy as np

from .control import DEFAULT_LIPSCHITZ_DELTA, ControlLaw
from .dynamics import DEFAULT_DT, Disturbance, Trajectory, equilibrium, equilibrium_residuals, simulate
from .errors import FreqControlError, InputError, NumericalError, ScenarioError
from .lyapunov import StabilityCertificate, certify, energy_total
from .network import NOMINAL_HZ, Bus, Line, NetworkModel
from .ofc import OfcSolution

DEFAULTS = {"t_end": 20.0, "dt": DEFAULT_DT, "sample_every": 10, "lipschitz_delta": DEFAULT_LIPSCHITZ_DELTA}
DEFAULT_CAPACITY = 0.1


class InternalError(FreqControlError, RuntimeError):
    """A consistency check on internally constructed data failed."""


def _schema() -> dict:
    text = resources.files("freqcontrol").joinpath("data/scenario.schema.json").read_text()
    return json.loads(text)


def bundled(name: str) -> Path:
    """Path of a bundled scenario, e.g. ``bundled("three_bus.json")``."""
    return Path(str(resources.files("freqcontrol").joinpath("data", name)))


def bus_bounds(kind: str, p_set: float, capacity: float, controllable: bool) -> tuple[float, float]:
    """Control box: generators get p_set(1 -/+ c), loads (p_set <= 0) get p_set(1 +/- c/2)."""
    if not controllable or capacity == 0:
        return p_set, p_set
    if kind == "generator":
        return p_set * (1 - capacity), p_set * (1 + capacity)
    return p_set * (1 + capacity / 2), p_set * (1 - capacity / 2)


def _gain(bus: dict) -> float:
    ctl = bus.get("control", {})
    if "R" in ctl:
        return 1.0 / ctl["R"]
    return ctl.get("gain_factor", 0.0) * abs(bus["p_set"])


@dataclass(frozen=True)
class Scenario:
    name: str
    model: NetworkModel
    gains: tuple[float, ...]  # droop gain 1/R per bus, pu per rad/s
    disturbances: tuple[Disturbance, ...]
    t_end: float
    dt: float
    sample_every: int
    lipschitz_delta: float
    out_dir: Path
    raw: dict = field(repr=False, compare=False)

    def laws(self) -> list[ControlLaw]:
        return [ControlLaw.droop(g, b.p_set, b.p_lo, b.p_hi) for g, b in zip(self.gains, self.model.buses)]

    def final_constants(self) -> np.ndarray:
        c = np.zeros(self.model.n_bus)
        for d in self.disturbances:
            c[d.bus] += d.delta_p
        return c

    def control_capacity(self) -> float:
        return float(sum(b.p_hi - b.p_lo for b in self.model.buses))

    def with_overrides(self, **run) -> "Scenario":
        raw = copy.deepcopy(self.raw)
        raw.setdefault("run", {})
        for key, value in run.items():
            if value is None:
                continue
            if key == "out_dir":
                raw.setdefault("output", {})["dir"] = str(value)
            else:
                raw["run"][key] = value
        return parse_scenario(raw, self.name)

    def with_control(self, controllable: Sequence[int], capacity: float, name: str | None = None) -> "Scenario":
        """Same network with exactly the listed buses controllable at capacity fraction ``capacity``."""
        raw = copy.deepcopy(self.raw)
        chosen = set(controllable)
        for bus in raw["buses"]:
            ctl = bus.setdefault("control", {"kind": "quadratic"})
            ctl["controllable"] = bus["id"] in chosen
            ctl["capacity"] = capacity
        raw["name"] = name or self.name
        sc = parse_scenario(raw, raw["name"])
        return Scenario(**{**sc.__dict__, "out_dir": self.out_dir / raw["name"]})


def parse_scenario(doc: dict, name: str = "scenario") -> Scenario:
    """Validate a scenario document and build the model; every problem is reported at once."""
    validator = jsonschema.Draft202012Validator(_schema())
    problems = [
        f"{'/'.join(str(p) for p in err.absolute_path) or '<root>'}: {err.message}"
        for err in sorted(validator.iter_errors(doc), key=lambda e: list(map(str, e.absolute_path)))
    ]
    if problems:
        raise ScenarioError(problems)

    buses = doc["buses"]
    n = len(buses)
    ids = [b["id"] for b in buses]
    if ids != list(range(n)):
        problems.append(f"buses: ids must be 0..{n - 1} in order, got {ids}")
    kinds = [b["kind"] for b in buses]
    if kinds != sorted(kinds, key=lambda k: k != "generator"):
        problems.append("buses: generators must be listed before load buses")
    for i, b in enumerate(buses):
        where = f"buses/{i}"
        if b["kind"] == "generator":
            for key in ("M", "tau_g", "tau_b"):
                if key not in b:
                    problems.append(f"{where}: generator needs '{key}'")
            if b.get("M", 1) <= 0:
                problems.append(f"{where}/M: generator inertia must be > 0")
        elif b.get("M", 0) != 0:
            problems.append(f"{where}/M: load bus inertia must be 0")
        ctl = b.get("control")
        if ctl is None:
            continue
        if "R" in ctl and "gain_factor" in ctl:
            problems.append(f"{where}/control: give either R or gain_factor, not both")
        if ctl.get("controllable", False):
            if "R" not in ctl and "gain_factor" not in ctl:
                problems.append(f"{where}/control: controllable bus needs R or gain_factor")
            if b["kind"] == "load" and b["p_set"] > 0:
                problems.append(f"{where}/p_set: controllable load needs p_set <= 0")
            if b["kind"] == "generator" and b["p_set"] < 0:
                problems.append(f"{where}/p_set: controllable generator needs p_set >= 0")
    for k, ln in enumerate(doc["lines"]):
        for end in ("from", "to"):
            if ln[end] >= n:
                problems.append(f"lines/{k}/{end}: unknown bus {ln[end]}")
    for k, d in enumerate(doc.get("disturbances", [])):
        if d["bus"] >= n:
            problems.append(f"disturbances/{k}/bus: unknown bus {d['bus']}")
    times = [d["time"] for d in doc.get("disturbances", [])]
    if times != sorted(times):
        problems.append("disturbances: must be sorted by time")
    run = {**DEFAULTS, **doc.get("run", {})}
    if not run["t_end"] > run["dt"]:
        problems.append(f"run/t_end: must exceed dt ({run['dt']})")
    cmp_cfg = doc.get("comparison", {})
    for key in ("case2_generators", "case2_loads"):
        for j in cmp_cfg.get(key, []):
            if j >= n:
                problems.append(f"comparison/{key}: unknown bus {j}")
    if problems:
        raise ScenarioError(problems)

    bus_objs = []
    gains = []
    for b in buses:
        ctl = b.get("control", {})
        lo, hi = bus_bounds(b["kind"], b["p_set"], ctl.get("capacity", 0.0), ctl.get("controllable", False))
        gains.append(_gain(b) if lo != hi else 0.0)
        try:
            bus_objs.append(Bus(
                id=b["id"], kind=b["kind"], D=b["D"], p_set=b["p_set"], p_lo=lo, p_hi=hi,
                M=b.get("M", 0.0), tau_g=b.get("tau_g"), tau_b=b.get("tau_b"),
            ))
        except InputError as exc:
            problems.append(f"buses/{b['id']}: {exc}")
    if problems:
        raise ScenarioError(problems)
    try:
        model = NetworkModel(tuple(bus_objs), tuple(Line(l["from"], l["to"], l["Y"]) for l in doc["lines"]))
    except InputError as exc:
        raise ScenarioError([f"network: {exc}"]) from None

    return Scenario(
        name=doc.get("name", name),
        model=model,
        gains=tuple(gains),
        disturbances=tuple(Disturbance(d["time"], d["bus"], d["delta_p"]) for d in doc.get("disturbances", [])),
        t_end=float(run["t_end"]),
        dt=float(run["dt"]),
        sample_every=int(run["sample_every"]),
        lipschitz_delta=float(run["lipschitz_delta"]),
        out_dir=Path(doc.get("output", {}).get("dir", "out")),
        raw=doc,
    )


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise ScenarioError([f"{path}: file not found"]) from None
    except json.JSONDecodeError as exc:
        raise ScenarioError([f"{path}: not valid JSON ({exc})"]) from None
    return parse_scenario(doc, path.stem)


@dataclass
class RunReport:
    scenario: str
    ofc: OfcSolution
    certificate: StabilityCertificate
    terminal_omega: float  # rad/s, mean over buses at the last sample
    terminal_hz: float
    nadir: np.ndarray  # per bus, rad/s
    nadir_min: float
    nadir_generators: float  # extreme over generator buses only, rad/s
    settling_time: float | None
    sync_gap: float
    residuals: dict
    trajectory: Trajectory = field(repr=False)
    paths: dict = field(default_factory=dict)

    @property
    def lambda_star(self) -> float:
        return self.ofc.lambda_star

    @property
    def settled(self) -> bool:
        return self.settling_time is not None

    def as_dict(self) -> dict:
        traj = self.trajectory
        return {
            "scenario": self.scenario,
            "lambda_star": self.lambda_star,
            "lambda_star_hz": NOMINAL_HZ + self.lambda_star / (2 * math.pi),
            "ofc": self.ofc.as_dict(),
            "terminal": {
                "t": float(traj.t[-1]),
                "omega_mean": self.terminal_omega,
                "hz": self.terminal_hz,
                "omega": traj.omega[-1].tolist(),
                "a": traj.a[-1].tolist(),
                "p": traj.p[-1].tolist(),
                "sync_gap": self.sync_gap,
                "V_total": None if traj.V_total is None else float(traj.V_total[-1]),
            },
            "nadir": self.nadir.tolist(),
            "nadir_min": self.nadir_min,
            "nadir_hz": NOMINAL_HZ + self.nadir_min / (2 * math.pi),
            "nadir_generators": self.nadir_generators,
            "settling_time": self.settling_time,
            "residuals": self.residuals,
            "certificate": self.certificate.as_dict(),
            "backend": traj.backend,
            "paths": self.paths,
        }


def _with_context(scenario: Scenario, exc: FreqControlError) -> FreqControlError:
    if isinstance(exc, ScenarioError):
        return exc
    new = type(exc)(f"scenario {scenario.name!r}: {exc}")
    return new


def run(scenario: Scenario, write: bool = True, backend: str | None = None) -> RunReport:
    """Start at the setpoint equilibrium, apply the disturbances, simulate and certify."""
    try:
        return _run(scenario, write, backend)
    except (NumericalError, InputError) as exc:
        raise _with_context(scenario, exc) from exc


def _run(scenario: Scenario, write: bool, backend: str | None) -> RunReport:
    model = scenario.model
    laws = scenario.laws()
    initial, _ = equilibrium(model, laws)
    constants = scenario.final_constants()
    target, sol = equilibrium(model, laws, constants)
    cert = certify(model, laws, target, scenario.lipschitz_delta)
    monitor = None
    if cert.certified:
        monitor = lambda traj: energy_total(model, traj, target, cert)  # noqa: E731

    traj = simulate(
        model, laws, initial, scenario.disturbances, scenario.t_end, scenario.dt,
        scenario.sample_every, monitor=monitor, backend=backend,
    )
    total = sum(d.delta_p for d in scenario.disturbances)
    direction = 1 if total > 0 else -1
    nadir = traj.nadir(direction)
    pick = np.min if direction < 0 else np.max
    nadir_ext = float(pick(nadir))
    nadir_gen = float(pick(nadir[:model.n_gen])) if model.n_gen else nadir_ext
    terminal = traj.common_frequency()
    report = RunReport(
        scenario=scenario.name,
        ofc=sol,
        certificate=cert,
        terminal_omega=terminal,
        terminal_hz=NOMINAL_HZ + terminal / (2 * math.pi),
        nadir=nadir,
        nadir_min=nadir_ext,
        nadir_generators=nadir_gen,
        settling_time=traj.settling_time(),
        sync_gap=traj.sync_gap(),
        residuals=equilibrium_residuals(model, traj.final_state, laws, traj.constants),
        trajectory=traj,
    )
    if write:
        out = Path(scenario.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        names = scenario.raw.get("output", {})
        csv_path = out / names.get("trajectory", f"{scenario.name}_trajectory.csv")
        json_path = out / names.get("report", f"{scenario.name}_report.json")
        traj.to_csv(csv_path)
        report.paths = {"trajectory": str(csv_path), "report": str(json_path)}
        json_path.write_text(json.dumps(report.as_dict(), indent=2) + "\n")
    return report


@dataclass
class ComparisonReport:
    case1: RunReport
    case2: RunReport
    capacity_case1: float
    capacity_case2: float

    def as_dict(self) -> dict:
        def summary(r: RunReport) -> dict:
            return {
                "nadir_min": r.nadir_min,
                "nadir_hz": NOMINAL_HZ + r.nadir_min / (2 * math.pi),
                "nadir_generators": r.nadir_generators,
                "settling_time": r.settling_time,
                "terminal_omega": r.terminal_omega,
                "terminal_hz": r.terminal_hz,
                "lambda_star": r.lambda_star,
                "certificate": r.certificate.verdict.value,
                "paths": r.paths,
            }

        return {
            "case1_generators_only": summary(self.case1),
            "case2_generators_and_loads": summary(self.case2),
            "control_capacity": {"case1": self.capacity_case1, "case2": self.capacity_case2},
            "nadir_improvement": abs(self.case1.nadir_min) - abs(self.case2.nadir_min),
            "nadir_improvement_generators": abs(self.case1.nadir_generators) - abs(self.case2.nadir_generators),
            "steady_state_gap_hz": self.case2.terminal_hz - self.case1.terminal_hz,
        }


def comparison_cases(scenario: Scenario) -> tuple[Scenario, Scenario]:
    """Case 1: every generator controllable. Case 2: the chosen half of generators plus the loads."""
    cfg = scenario.raw.get("comparison", {})
    c = cfg.get("capacity", DEFAULT_CAPACITY)
    model = scenario.model
    gens = [b.id for b in model.generators]
    loads = [b.id for b in model.loads]
    case2_gens = cfg.get("case2_generators", gens[1::2])
    case2_loads = cfg.get("case2_loads", loads)
    for g in case2_gens:
        if g not in gens:
            raise ScenarioError([f"comparison/case2_generators: bus {g} is not a generator"])
    for j in case2_loads:
        if j not in loads:
            raise ScenarioError([f"comparison/case2_loads: bus {j} is not a load bus"])
    case1 = scenario.with_control(gens, c, f"{scenario.name}_case1")
    case2 = scenario.with_control(list(case2_gens) + list(case2_loads), c, f"{scenario.name}_case2")
    return case1, case2


def compare_cases(scenario: Scenario, write: bool = True, backend: str | None = None) -> ComparisonReport:
    case1, case2 = comparison_cases(scenario)
    cap1, cap2 = case1.control_capacity(), case2.control_capacity()
    if abs(cap1 - cap2) > 1e-9:
        raise InternalError(
            f"control capacity differs between cases: {cap1:.12g} vs {cap2:.12g}; "
            "case 2 generators must supply half the generation and loads must match it"
        )
    return ComparisonReport(run(case1, write, backend), run(case2, write, backend), cap1, cap2)
