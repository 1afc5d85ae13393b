"""Complete/selective monitoring cycles with a deviation-triggered rebuild."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from aqimap.gpmnn import GpmNnModel, fit, refit_beta
from aqimap.grid import GridSpec, SampleSet, WindField, cube_centers
from aqimap.planner import compute_pdt, plan_trajectory, select_cubes
from aqimap.plume import PlumeParams
from aqimap.sim import BatteryModel, MeasurementError, MeasurementSource, Trajectory, measure, trajectory_cost

log = logging.getLogger(__name__)

COMPLETE = "complete"
SELECTIVE = "selective"


@dataclass
class SessionParams:
    threshold: float = 0.4
    delta: float = 0.05
    reduction: str = "max"
    K: int = 100
    seed: int = 0
    algorithm: str = "pdt-greedy"
    start: int = 0
    plume: PlumeParams = field(default_factory=PlumeParams)
    battery: BatteryModel = field(default_factory=lambda: BatteryModel(budget=float("inf")))
    input_gain: float = 1.0
    rcond: float | None = 1e-5
    ridge: float = 10.0
    ridge_linear: float = 1.0


@dataclass
class SessionState:
    grid: GridSpec
    mode: str = COMPLETE
    deviation_threshold: float = 0.2
    baseline_map: np.ndarray | None = None
    current_map: np.ndarray | None = None
    model: GpmNnModel | None = None
    last_complete: int | None = None
    cycle: int = 0
    incomplete: bool = False


def _measure_along(sensors: MeasurementSource, cubes) -> tuple[list[int], SampleSet, bool]:
    done, samples = [], []
    failed = False
    for c in cubes:
        try:
            samples.append(measure(sensors, int(c)))
        except MeasurementError as exc:
            log.warning("measurement aborted: %s", exc)
            failed = True
            break
        done.append(int(c))
    return done, SampleSet.from_samples(samples), failed


def _map(model: GpmNnModel, grid: GridSpec, wind: WindField) -> np.ndarray:
    return np.maximum(model.predict(cube_centers(grid), wind.effective()), 0.0)


def run_session(
    state: SessionState,
    model: GpmNnModel | None,
    sensors: MeasurementSource,
    params: SessionParams,
) -> tuple[SessionState, np.ndarray, dict]:
    """Run one monitoring cycle; returns the updated state, the AQI map and a log record."""
    grid = state.grid
    wind = sensors.wind
    model = model if model is not None else state.model
    mode = state.mode
    if state.baseline_map is None or model is None:
        mode = COMPLETE
    record = {"cycle": state.cycle, "mode": mode}
    start = grid.unflat(params.start)

    if mode == COMPLETE:
        traj = plan_trajectory("sequential", range(grid.n_cubes), start, params.battery, None, grid)
        done, samples, failed = _measure_along(sensors, traj.cubes)
        if len(samples) >= 2:
            model, report = fit(samples, params.K, params.plume, seed=params.seed,
                                input_gain=params.input_gain, rcond=params.rcond)
            record["fit"] = {"residual_s": report.residual_s, "h_estimate": report.h_estimate,
                             "converged": report.converged, "iterations": report.iterations}
        if model is None:
            raise MeasurementError("complete monitoring collected too few samples to build a baseline")
        new_map = _map(model, grid, wind)
        state.baseline_map = new_map
        state.last_complete = state.cycle
        deviation = 0.0
        next_mode = SELECTIVE if not failed else COMPLETE
        n_selected = grid.n_cubes
    else:
        pdt = compute_pdt(model, grid, wind, params.reduction)
        selection = select_cubes(pdt, params.threshold, params.delta)
        traj = plan_trajectory(params.algorithm, selection, start, params.battery, pdt, grid)
        done, samples, failed = _measure_along(sensors, traj.cubes)
        prev = state.current_map[done]
        deviation = float(np.mean(np.abs(samples.aqi - prev) / np.maximum(prev, 1e-12))) if done else 0.0
        if len(samples):
            model = refit_beta(model, samples, rcond=params.rcond, ridge=params.ridge,
                               ridge_linear=params.ridge_linear)
        new_map = _map(model, grid, wind)
        next_mode = COMPLETE if deviation > state.deviation_threshold else SELECTIVE
        n_selected = len(selection)

    flown = Trajectory.build(grid, done, traj.start, params.battery, algorithm=traj.algorithm)
    record.update(
        n_selected=n_selected,
        trajectory=done,
        consumption=trajectory_cost(flown, params.battery),
        deviation=deviation,
        next_mode=next_mode,
        incomplete=failed,
    )
    state.model = model
    state.current_map = new_map
    state.mode = next_mode
    state.incomplete = failed
    state.cycle += 1
    return state, new_map, record


def append_log(path, record: dict) -> None:
    """Append one JSON record per line."""
    with Path(path).open("a", encoding="utf-8") as fh:
        fh.write(json.dumps(record, sort_keys=True) + "\n")
