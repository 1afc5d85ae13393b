"""Command-line front end: ``aqimap {simulate,fit,plan,session,eval}``.

Every command reads an optional JSON config file, applies flag overrides on
top of it and writes its artifacts under ``--out``. Exit codes: 0 success,
2 input error, 3 infeasible plan, 4 numerical guard violation.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from aqimap.dataset import DatasetDay, DatasetError, load_days, write_day
from aqimap.experiments import (MODELS, ScenarioConfig, baseline_models, build_world, measure_all, results_to_csv,
                                results_to_json, sweep)
from aqimap.gpmnn import GpmNnModel, convexity_scan, fit
from aqimap.planner import TRAJECTORY_ALGORITHMS, InfeasibleBudget, compute_pdt, plan_trajectory, select_cubes
from aqimap.plume import GuardViolation
from aqimap.session import SessionParams, SessionState, append_log, run_session
from aqimap.sim import BatteryModel, MeasurementSource, trajectory_cost

log = logging.getLogger("aqimap")

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_INFEASIBLE = 3
EXIT_GUARD = 4

DEFAULT_THRESHOLDS = tuple(round(0.1 * i, 1) for i in range(10))


@dataclass
class RunConfig:
    """Scenario settings plus the per-command knobs and paths.

    The JSON config file is flat: scenario keys (see ScenarioConfig) and the
    run keys below live side by side.
    """

    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    threshold: float = 0.4
    sigma_dev: float = 0.2
    algorithm: str = "pdt-greedy"
    cycles: int = 6
    shock_cycle: int | None = None
    shock_factor: float = 2.0
    days: int = 1
    noiseless: bool = False
    thresholds: list[float] = field(default_factory=lambda: list(DEFAULT_THRESHOLDS))
    models: list[str] = field(default_factory=lambda: list(MODELS))
    algorithms: list[str] = field(default_factory=lambda: list(TRAJECTORY_ALGORITHMS))
    neurons: list[int] | None = None
    data_dir: str | None = None
    model_path: str | None = None
    out: str = "out"

    @classmethod
    def run_keys(cls) -> set[str]:
        return {f.name for f in fields(cls)} - {"scenario"}

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        run = {k: v for k, v in doc.items() if k in cls.run_keys()}
        scen = {k: v for k, v in doc.items() if k not in cls.run_keys()}
        cfg = cls(scenario=ScenarioConfig.from_dict(scen), **run)
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        d = self.scenario.to_dict()
        d.update({k: v for k, v in asdict(self).items() if k != "scenario"})
        return d

    def validate(self) -> None:
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError(f"PDT threshold {self.threshold} outside [0, 1]")
        if self.sigma_dev <= 0:
            raise ValueError("sigma_dev must be positive")
        if self.algorithm not in TRAJECTORY_ALGORITHMS:
            raise ValueError(f"unknown trajectory algorithm {self.algorithm!r}")
        if self.cycles < 1 or self.days < 1:
            raise ValueError("cycles and days must be at least 1")
        if self.shock_factor <= 0:
            raise ValueError("shock_factor must be positive")
        unknown = set(self.models) - set(MODELS)
        if unknown:
            raise ValueError(f"unknown models {sorted(unknown)}")

    @property
    def out_dir(self) -> Path:
        path = Path(self.out)
        path.mkdir(parents=True, exist_ok=True)
        return path


def _parse_grid(text: str) -> list[int]:
    parts = [p for p in text.replace("x", ",").split(",") if p.strip()]
    if len(parts) not in (2, 3):
        raise argparse.ArgumentTypeError(f"grid must be NX,NY[,NZ], got {text!r}")
    dims = [int(p) for p in parts] + [1] * (3 - len(parts))
    return dims


def _parse_thresholds(text: str) -> list[float]:
    """``0,0.2,0.5`` or an inclusive range ``start:step:stop``."""
    if ":" in text:
        start, step, stop = (float(v) for v in text.split(":"))
        if step <= 0:
            raise argparse.ArgumentTypeError("threshold step must be positive")
        n = int(math.floor((stop - start) / step + 1e-9)) + 1
        return [round(start + i * step, 10) for i in range(n)]
    return [float(v) for v in text.split(",") if v.strip()]


def load_config(args: argparse.Namespace) -> RunConfig:
    doc: dict = {}
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise FileNotFoundError(f"config file not found: {path}")
        doc = json.loads(path.read_text(encoding="utf-8"))
        if not isinstance(doc, dict):
            raise ValueError("config file must hold a JSON object")
    overrides = {
        "scenario": args.scenario,
        "dims": args.grid,
        "K": args.neurons,
        "threshold": args.pdt,
        "delta": args.delta,
        "seed": args.seed,
        "out": args.out,
    }
    for name in ("data", "model", "days", "noiseless", "cycles", "shock_cycle", "shock_factor", "sigma_dev",
                 "thresholds", "algorithm"):
        if hasattr(args, name):
            key = {"data": "data_dir", "model": "model_path"}.get(name, name)
            overrides[key] = getattr(args, name)
    if getattr(args, "noiseless", False) is False:
        overrides.pop("noiseless", None)
    doc.update({k: v for k, v in overrides.items() if v is not None})
    if args.budget_min is not None:
        battery = dict(doc.get("battery") or {})
        flight = battery.get("flight_minutes", 15.0)
        if args.budget_min <= 0:
            raise ValueError("--budget-min must be positive")
        battery["budget"] = args.budget_min / flight
        hover = BatteryModel(**{**battery, "budget": math.inf}).hover_cost
        if hover > battery["budget"]:
            raise InfeasibleBudget(
                f"budget of {args.budget_min:g} min ({battery['budget']:.4g} charges) cannot cover a single "
                f"hover ({hover:.4g} charges)"
            )
        doc["battery"] = battery
    return RunConfig.from_dict(doc)


def _write_json(path: Path, doc) -> Path:
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _budget(value: float):
    return None if math.isinf(value) else value


# -- commands ---------------------------------------------------------------


def cmd_simulate(cfg: RunConfig) -> list[Path]:
    """Write ``days`` synthetic day files measured over every cube."""
    out = cfg.out_dir
    written = []
    for k in range(cfg.days):
        scen = replace(cfg.scenario, seed=cfg.scenario.seed + k)
        if cfg.noiseless:
            scen = replace(scen, sensor_error=0.0)
        world = build_world(scen)
        samples = measure_all(world.day, range(world.grid.n_cubes), scen, epoch=0)
        samples.extras["u"] = samples.wind.copy()
        day = DatasetDay(scen.scenario, samples, f"day_{k:03d}")
        written.append(write_day(day, out / f"day_{k:03d}.txt"))
    log.info("wrote %d day file(s) to %s", len(written), out)
    return written


def cmd_fit(cfg: RunConfig) -> tuple[Path, dict]:
    """Fit the hybrid model on every day file in ``data_dir``."""
    if not cfg.data_dir:
        raise DatasetError("no dataset found: pass --data DIR")
    days = load_days(cfg.data_dir, spacing=cfg.scenario.spacing)
    samples = days[0].samples
    for day in days[1:]:
        samples = samples.concat(day.samples)
    if not np.any(samples.wind > 0):
        log.warning("dataset has no wind column; the plume term uses the wind floor")
    scen = cfg.scenario
    model, report = fit(samples, scen.K, scen.plume, seed=scen.seed, input_gain=scen.input_gain, rcond=scen.rcond)
    scan = convexity_scan(model, samples)
    out = cfg.out_dir
    path = _write_json(out / "model.json", model.to_dict())
    summary = {
        "days": [d.label for d in days],
        "n_samples": len(samples),
        "residual_s": report.residual_s,
        "h_estimate": report.h_estimate,
        "iterations": report.iterations,
        "converged": report.converged,
        "golden_fallbacks": report.golden_fallbacks,
        "convexity_scan": scan,
    }
    _write_json(out / "fit_report.json", summary)
    lines = [f"{k}: {v}" for k, v in summary.items()]
    (out / "fit_report.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path, summary


def _load_model(path) -> GpmNnModel:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"model file not found: {p}")
    return GpmNnModel.from_dict(json.loads(p.read_text(encoding="utf-8")))


def cmd_plan(cfg: RunConfig) -> tuple[Path, dict]:
    """Select cubes on the current (hour) wind and plan one trajectory."""
    scen = cfg.scenario
    world = build_world(scen)
    grid = world.grid
    model = _load_model(cfg.model_path) if cfg.model_path else baseline_models(world, [scen.K])[scen.K]
    pdt = compute_pdt(model, grid, world.hour.wind, scen.reduction)
    delta = scen.delta if cfg.threshold > scen.delta else 0.0
    selection = select_cubes(pdt, cfg.threshold, delta)
    traj = plan_trajectory(cfg.algorithm, selection, grid.unflat(scen.start), scen.battery, pdt, grid)
    cost = trajectory_cost(traj, scen.battery)
    doc = {
        "algorithm": cfg.algorithm,
        "threshold": cfg.threshold,
        "delta": delta,
        "n_selected": len(selection),
        "selection": list(selection.members),
        "trajectory": traj.to_dict(),
        "consumption": cost,
        "budget": _budget(scen.battery.budget),
        "covers_selection": len(traj) == len(selection),
    }
    if not doc["covers_selection"]:
        log.warning("budget covers %d of %d selected cubes", len(traj), len(selection))
    return _write_json(cfg.out_dir / "trajectory.json", doc), doc


def cmd_session(cfg: RunConfig) -> tuple[Path, list[dict]]:
    """Run ``cycles`` monitoring cycles on a stationary synthetic field.

    With ``shock_cycle`` set, the field is multiplied by ``shock_factor``
    from that cycle on.
    """
    scen = cfg.scenario
    world = build_world(scen)
    params = SessionParams(
        threshold=cfg.threshold, delta=scen.delta if cfg.threshold > scen.delta else 0.0,
        reduction=scen.reduction, K=scen.K, seed=scen.seed, algorithm=cfg.algorithm, start=scen.start,
        plume=scen.plume, battery=scen.battery, input_gain=scen.input_gain, rcond=scen.rcond,
        ridge=scen.refit_ridge, ridge_linear=scen.refit_ridge_linear,
    )
    state = SessionState(world.grid, deviation_threshold=cfg.sigma_dev)
    path = cfg.out_dir / "session.jsonl"
    records = []
    for cycle in range(cfg.cycles):
        truth = world.day
        if cfg.shock_cycle is not None and cycle >= cfg.shock_cycle:
            truth = truth.scaled(cfg.shock_factor)
        sensors = MeasurementSource(truth, scen.sensor_error, seed=scen.seed, epoch=cycle)
        state, _, record = run_session(state, None, sensors, params)
        append_log(path, record)
        records.append(record)
    return path, records


def cmd_eval(cfg: RunConfig) -> tuple[Path, list]:
    """Threshold sweep; one CSV row per (threshold, model, algorithm[, K])."""
    results = sweep(cfg.scenario, cfg.thresholds, cfg.models, cfg.algorithms, cfg.neurons)
    out = cfg.out_dir
    path = out / "sweep.csv"
    results_to_csv(results, path)
    results_to_json(results, out / "sweep.json")
    return path, results


# -- argument parsing -------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file; flags override its values")
    common.add_argument("--scenario", choices=("2D", "3D"))
    common.add_argument("--grid", type=_parse_grid, help="grid dimensions NX,NY[,NZ] in cubes")
    common.add_argument("--neurons", type=int, help="hidden neurons K")
    common.add_argument("--pdt", type=float, help="PDT threshold in [0, 1]")
    common.add_argument("--delta", type=float, help="low-PDT inclusion constant")
    common.add_argument("--seed", type=int)
    common.add_argument("--budget-min", type=float, help="battery budget in flight minutes")
    common.add_argument("--out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="aqimap", description="Fine-grained AQI mapping toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="write synthetic day files")
    p.add_argument("--days", type=int)
    p.add_argument("--noiseless", action="store_true", default=False)

    p = sub.add_parser("fit", parents=[common], help="fit the model on a dataset directory")
    p.add_argument("--data", help="directory of day files")

    p = sub.add_parser("plan", parents=[common], help="select cubes and plan a trajectory")
    p.add_argument("--model", help="model JSON from 'fit' (default: fit on a simulated day)")
    p.add_argument("--algorithm", choices=TRAJECTORY_ALGORITHMS)

    p = sub.add_parser("session", parents=[common], help="run monitoring cycles")
    p.add_argument("--cycles", type=int)
    p.add_argument("--shock-cycle", type=int)
    p.add_argument("--shock-factor", type=float)
    p.add_argument("--sigma-dev", type=float)
    p.add_argument("--algorithm", choices=TRAJECTORY_ALGORITHMS)

    p = sub.add_parser("eval", parents=[common], help="threshold sweep to CSV")
    p.add_argument("--thresholds", type=_parse_thresholds, help="list a,b,c or range start:step:stop")
    return parser


COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "plan": cmd_plan,
    "session": cmd_session,
    "eval": cmd_eval,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args)
        result = COMMANDS[args.command](cfg)
    except GuardViolation as exc:
        print(f"error: convexity guard violated: {exc}", file=sys.stderr)
        return EXIT_GUARD
    except InfeasibleBudget as exc:
        print(f"error: infeasible plan: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (DatasetError, FileNotFoundError, ValueError, TypeError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    path = result[0] if isinstance(result, tuple) else result
    print(f"{args.command}: wrote {path if not isinstance(path, list) else ', '.join(map(str, path))}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
