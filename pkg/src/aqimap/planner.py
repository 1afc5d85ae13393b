"""Cube selection by partial-derivative threshold and battery-aware trajectories."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from aqimap.gpmnn import GpmNnModel
from aqimap.grid import GridSpec, WindField, cube_centers
from aqimap.sim import BatteryModel, Trajectory

log = logging.getLogger(__name__)

VARIABLES = ("x", "y", "z", "u")
REDUCTIONS = ("max", "mean")


class InfeasibleBudget(RuntimeError):
    """The battery budget cannot cover even one measurement."""


@dataclass
class PdtField:
    """Min-max normalised derivative magnitudes per cube and variable.

    ``per_var`` has shape (n, 4) in variable order x, y, z, u; ``pdt`` is the
    per-cube reduction. ``lo``/``hi`` keep the magnitude range of each
    variable so normalised values can be mapped back.
    """

    per_var: np.ndarray
    pdt: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    reduction: str = "max"

    def magnitudes(self) -> np.ndarray:
        """Absolute partial derivatives recovered from the normalised values."""
        return self.per_var * (self.hi - self.lo) + self.lo

    def __len__(self) -> int:
        return len(self.pdt)


def normalise_pdt(magnitudes: np.ndarray, reduction: str = "max") -> PdtField:
    """Min-max normalise each column of ``magnitudes``; a constant column maps to 0."""
    if reduction not in REDUCTIONS:
        raise ValueError(f"reduction must be one of {REDUCTIONS}")
    mags = np.abs(np.asarray(magnitudes, dtype=float))
    lo, hi = mags.min(axis=0), mags.max(axis=0)
    span = hi - lo
    flat = span <= 0
    per_var = np.where(flat, 0.0, (mags - lo) / np.where(flat, 1.0, span))
    per_var = np.clip(per_var, 0.0, 1.0)
    pdt = per_var.max(axis=1) if reduction == "max" else per_var.mean(axis=1)
    return PdtField(per_var, pdt, lo, hi, reduction)


def compute_pdt(model: GpmNnModel, grid: GridSpec, wind: WindField, reduction: str = "max") -> PdtField:
    """PDT of every cube from the model's analytic partials at the cube centers."""
    grad = model.gradient(cube_centers(grid), wind.effective())
    return normalise_pdt(np.abs(grad), reduction)


@dataclass
class SelectionSet:
    threshold: float
    delta: float
    members: list[int] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.members)

    def __contains__(self, item) -> bool:
        return item in set(self.members)


def select_cubes(pdt: PdtField, threshold: float, delta: float = 0.05) -> SelectionSet:
    """Cubes whose PDT is at least ``threshold`` or at most ``delta``."""
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold {threshold} outside [0, 1]")
    if delta < 0:
        raise ValueError(f"delta must be non-negative, got {delta}")
    if threshold > 0 and delta >= threshold:
        raise ValueError(
            f"delta {delta} must be below threshold {threshold}; the selection would be the whole grid, "
            "use complete monitoring instead"
        )
    values = pdt.pdt
    idx = np.flatnonzero((values >= threshold) | (values <= delta))
    if idx.size == 0 and values.size:
        # only possible with the mean reduction, where no cube need reach 1;
        # keep the set non-empty with the highest-scoring cube(s)
        idx = np.flatnonzero(values == values.max())
    return SelectionSet(float(threshold), float(delta), [int(i) for i in idx])


def _route(selection, start: int, battery: BatteryModel, grid: GridSpec, score, algorithm: str) -> Trajectory:
    """Shared greedy loop: repeatedly take the feasible member with the best score.

    ``score(d, cost, i)`` returns a key to maximise; ties go to the lower cube index.
    """
    members = list(selection.members) if hasattr(selection, "members") else [int(m) for m in selection]
    if not members:
        raise ValueError("selection is empty")
    centers = cube_centers(grid)
    start_pos = centers[grid.flat(tuple(start)) if not np.isscalar(start) else int(start)]
    unvisited = sorted(members)
    here = start_pos
    remaining = battery.budget
    order = []
    comparisons = 0
    while unvisited:
        cand = np.array(unvisited)
        dist = np.linalg.norm(centers[cand] - here, axis=1)
        cost = battery.step_cost(dist)
        comparisons += len(cand)
        ok = cost <= remaining
        if not ok.any():
            break
        keys = np.where(ok, score(dist, cost, cand), -np.inf)
        pick = int(np.argmax(keys))  # first maximum = lowest index, since cand is sorted
        remaining -= cost[pick]
        here = centers[cand[pick]]
        order.append(int(cand[pick]))
        unvisited.pop(pick)
    if not order:
        raise InfeasibleBudget(
            f"battery budget {battery.budget:.4g} charges cannot reach any selected cube "
            f"(cheapest step costs {battery.step_cost(np.linalg.norm(centers[members] - start_pos, axis=1)).min():.4g})"
        )
    if unvisited:
        log.info("%s: budget exhausted with %d of %d members unvisited", algorithm, len(unvisited), len(members))
    return Trajectory.build(grid, order, start_pos, battery, algorithm=algorithm, comparisons=comparisons)


def greedy_trajectory(selection, start, cost_model: BatteryModel, pdt: PdtField, grid: GridSpec) -> Trajectory:
    """Next cube maximises |PDT_i / cost(i)|, cost = travel plus hover energy."""
    values = pdt.pdt
    return _route(selection, start, cost_model, grid, lambda d, c, i: np.abs(values[i] / c), "pdt-greedy")


def nearest_trajectory(selection, start, cost_model: BatteryModel, grid: GridSpec) -> Trajectory:
    """Next cube is the closest unvisited member."""
    return _route(selection, start, cost_model, grid, lambda d, c, i: -d, "nearest")


def sequential_trajectory(selection, start, cost_model: BatteryModel, grid: GridSpec) -> Trajectory:
    """Members in flat index order: x fastest, then y, then height (bottom to top)."""
    return _route(selection, start, cost_model, grid, lambda d, c, i: -i.astype(float), "sequential")


TRAJECTORY_ALGORITHMS = ("pdt-greedy", "nearest", "sequential")


def plan_trajectory(algorithm: str, selection, start, battery: BatteryModel, pdt: PdtField, grid: GridSpec):
    if algorithm == "pdt-greedy":
        return greedy_trajectory(selection, start, battery, pdt, grid)
    if algorithm == "nearest":
        return nearest_trajectory(selection, start, battery, grid)
    if algorithm == "sequential":
        return sequential_trajectory(selection, start, battery, grid)
    raise ValueError(f"unknown trajectory algorithm {algorithm!r}; choose from {TRAJECTORY_ALGORITHMS}")
