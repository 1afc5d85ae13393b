"""Threshold sweeps comparing estimators and trajectory algorithms on synthetic worlds.

A world has a "day" field, measured completely to build the baseline model,
and an "hour" field a while later in which the source strength and the wind
have changed and the small-scale structure has drifted part of the way to a
new pattern. Each sweep point runs one
selective pass on the hour field.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from aqimap.gpmnn import GpmNnModel, fit, refit_beta
from aqimap.grid import GridSpec, SampleSet, WindField, cube_centers
from aqimap.metrics import aea, baseline_li, baseline_mlr, err
from aqimap.planner import TRAJECTORY_ALGORITHMS, compute_pdt, plan_trajectory, select_cubes
from aqimap.plume import PlumeParams
from aqimap.sim import (BatteryModel, MeasurementSource, SyntheticField, generate_field, make_wind, measure,
                        trajectory_cost)

log = logging.getLogger(__name__)

MODELS = ("gpmnn", "li", "mlr")
NEURON_COUNTS = (0, 10, 100, 500, 1000)


@dataclass
class ScenarioConfig:
    scenario: str = "2D"
    dims: tuple[int, int, int] = (20, 20, 1)
    spacing: float = 5.0
    plume: PlumeParams = field(default_factory=lambda: PlumeParams(lam=1.5e5, H=20.0))
    c_base: float = 40.0
    perturbation: float = 0.1
    mean_wind: float = 3.0
    sensor_error: float = 0.03
    seed: int = 0
    K: int = 1000
    input_gain: float = 1.0
    rcond: float | None = 1e-5
    refit_ridge: float = 10.0
    refit_ridge_linear: float = 1.0
    delta: float = 0.05
    reduction: str = "mean"
    start: int = 0
    battery: BatteryModel = field(default_factory=lambda: BatteryModel(budget=math.inf))
    # day -> hour change
    source_change: float = 1.2
    wind_change: float = 0.9
    structure_drift: float = 0.1
    aqi_scale: float = 1.0

    @property
    def grid(self) -> GridSpec:
        # a single layer sits on the ground plane: its cube centers have z = 0
        origin = (0.0, 0.0, -0.5 * self.spacing) if self.scenario == "2D" else (0.0, 0.0, 0.0)
        return GridSpec(tuple(self.dims), self.spacing, origin)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dims"] = list(self.dims)
        d["battery"]["budget"] = None if math.isinf(self.battery.budget) else self.battery.budget
        return d

    @classmethod
    def from_dict(cls, doc: dict) -> "ScenarioConfig":
        doc = dict(doc)
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown scenario keys: {sorted(unknown)}")
        if "plume" in doc:
            doc["plume"] = PlumeParams(**doc["plume"])
        if "battery" in doc:
            b = dict(doc["battery"])
            if b.get("budget") is None:
                b["budget"] = math.inf
            doc["battery"] = BatteryModel(**b)
        if "dims" in doc:
            doc["dims"] = tuple(int(v) for v in doc["dims"])
        scenario = doc.get("scenario", "2D")
        if scenario not in ("2D", "3D"):
            raise ValueError(f"scenario must be 2D or 3D, got {scenario!r}")
        base = scenario_3d() if scenario == "3D" else scenario_2d()
        return replace(base, **doc)


def scenario_2d(**overrides) -> ScenarioConfig:
    """Horizontal open space: a 100 m x 100 m park at ground level."""
    return replace(ScenarioConfig(), **overrides)


def scenario_3d(**overrides) -> ScenarioConfig:
    """Vertical enclosed space: a 20 m x 20 m courtyard, 50 m high."""
    base = ScenarioConfig(scenario="3D", dims=(4, 4, 10), plume=PlumeParams(lam=1.5e5, H=20.0), K=500)
    return replace(base, **overrides)


@dataclass
class World:
    config: ScenarioConfig
    grid: GridSpec
    day: SyntheticField
    hour: SyntheticField


def build_world(config: ScenarioConfig) -> World:
    grid = config.grid
    wind = make_wind(grid, config.scenario, config.seed, mean_speed=config.mean_wind)
    day = generate_field(grid, config.plume, config.scenario, config.perturbation, config.seed,
                         c_base=config.c_base, scale=config.aqi_scale, wind=wind)
    hour_wind = WindField(wind.speeds * config.wind_change, wind.floor)
    hour_plume = replace(config.plume, lam=config.plume.lam * config.source_change)
    hour = generate_field(grid, hour_plume, config.scenario, config.perturbation, config.seed,
                          c_base=config.c_base, scale=config.aqi_scale, wind=hour_wind,
                          drift=config.structure_drift, drift_seed=config.seed + 1)
    return World(config, grid, day, hour)


@dataclass
class EvalResult:
    scenario: str
    threshold: float
    model: str
    algorithm: str
    K: int | None
    aea: float
    err: float
    consumption: float
    n_selected: int
    feasible: bool
    aea_negative: bool = False

    def __post_init__(self):
        self.aea_negative = self.aea < 0


CSV_COLUMNS = [f.name for f in fields(EvalResult)]


def measure_all(field_: SyntheticField, cubes, config: ScenarioConfig, epoch: int) -> SampleSet:
    src = MeasurementSource(field_, config.sensor_error, seed=config.seed, epoch=epoch)
    return SampleSet.from_samples(measure(src, int(c)) for c in cubes)


def baseline_models(world: World, neurons) -> dict[int, GpmNnModel]:
    """Fit one model per neuron count on a complete pass over the day field."""
    cfg = world.config
    samples = measure_all(world.day, range(world.grid.n_cubes), cfg, epoch=0)
    models = {}
    for K in neurons:
        models[K], _ = fit(samples, K, cfg.plume, seed=cfg.seed, input_gain=cfg.input_gain, rcond=cfg.rcond)
    return models


def _estimate(name: str, model: GpmNnModel | None, samples: SampleSet, cubes, world: World) -> np.ndarray:
    grid, wind = world.grid, world.hour.wind
    if name == "gpmnn":
        updated = refit_beta(model, samples, rcond=world.config.rcond, ridge=world.config.refit_ridge,
                             ridge_linear=world.config.refit_ridge_linear)
        return updated.predict(cube_centers(grid), wind.effective())
    if len(samples) == 0:
        # nothing measured: the interpolating baselines have no estimate
        return np.full(grid.n_cubes, np.nan)
    if name == "li":
        return baseline_li(dict(zip(cubes, samples.aqi)), grid)
    if name == "mlr":
        return baseline_mlr(samples, grid, wind)
    raise ValueError(f"unknown model {name!r}; choose from {MODELS}")


def sweep(config: ScenarioConfig, thresholds, models=MODELS, algorithms=TRAJECTORY_ALGORITHMS,
          neurons=None) -> list[EvalResult]:
    """One selective pass on the hour field per threshold; rows per (threshold, model, algorithm).

    Cubes are selected with the PDT of the config.K baseline model. With
    ``neurons`` given, the GPM-NN estimator is additionally evaluated for
    every listed neuron count on the same measurements.
    """
    world = build_world(config)
    grid = world.grid
    neuron_counts = sorted({config.K, *(neurons or ())})
    fitted = baseline_models(world, neuron_counts) if "gpmnn" in models or neurons else {}
    primary = fitted.get(config.K)
    if primary is None:
        primary, _ = fit(measure_all(world.day, range(grid.n_cubes), config, 0), config.K, config.plume,
                         seed=config.seed, input_gain=config.input_gain, rcond=config.rcond)
    truth = world.hour.truth
    pdt = compute_pdt(primary, grid, world.hour.wind, config.reduction)
    results = []
    for threshold in thresholds:
        delta = config.delta if threshold > config.delta else 0.0
        selection = select_cubes(pdt, threshold, delta)
        cubes = list(selection.members)
        samples = measure_all(world.hour, cubes, config, epoch=1)
        estimates = {}
        for name in models:
            if name == "gpmnn":
                for K in neuron_counts if neurons else [config.K]:
                    estimates[("gpmnn", K)] = _estimate("gpmnn", fitted[K], samples, cubes, world)
            else:
                estimates[(name, None)] = _estimate(name, None, samples, cubes, world)
        for alg in algorithms:
            traj = plan_trajectory(alg, selection, grid.unflat(config.start), config.battery, pdt, grid)
            cost = trajectory_cost(traj, config.battery)
            feasible = len(traj) == len(cubes) and cost <= config.battery.budget
            for (name, K), est in estimates.items():
                results.append(EvalResult(config.scenario, float(threshold), name, alg, K, aea(est, truth),
                                          err(est, truth), cost, len(cubes), feasible))
    return results


def results_to_csv(results, path=None) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for r in results:
        row = asdict(r)
        row["K"] = "" if r.K is None else r.K
        writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


def results_to_json(results, path=None) -> str:
    text = json.dumps([asdict(r) for r in results], indent=1, sort_keys=True) + "\n"
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text
