"""Synthetic ground-truth fields, noisy UAV measurements and the battery model."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from aqimap.grid import Cube, GridSpec, Sample, WindField, cube_centers
from aqimap.plume import PlumeParams, revised_gpm

SCENARIOS = ("2D", "3D")


class MeasurementError(RuntimeError):
    """A measurement could not be taken."""


@dataclass(frozen=True)
class BatteryModel:
    """Time-proportional energy model. Costs are fractions of one full charge.

    ``budget`` is the energy available for a flight in charges; it may be
    ``math.inf`` when batteries are swapped during a pass.
    """

    budget: float = 1.0
    hover_time: float = 10.0
    flight_minutes: float = 15.0
    speed: float = 5.0
    hover_power: float = 1.0
    travel_power: float = 1.0

    def __post_init__(self):
        for name in ("budget", "hover_time", "flight_minutes", "speed", "hover_power", "travel_power"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.hover_cost > self.budget:
            raise ValueError(f"budget {self.budget} cannot cover a single hover ({self.hover_cost:.4g})")

    @property
    def mean_power(self) -> float:
        return 0.5 * (self.hover_power + self.travel_power)

    @property
    def charge_energy(self) -> float:
        return self.flight_minutes * 60.0 * self.mean_power

    @property
    def hover_cost(self) -> float:
        return self.hover_time * self.hover_power / self.charge_energy

    def travel_cost(self, distance):
        return np.asarray(distance, dtype=float) / self.speed * self.travel_power / self.charge_energy

    def step_cost(self, distance):
        """Fly ``distance`` metres then hover for one measurement."""
        return self.travel_cost(distance) + self.hover_cost


@dataclass
class Trajectory:
    """Ordered visit of cubes starting from ``start`` (a position in metres)."""

    cubes: list[int]
    positions: np.ndarray
    start: np.ndarray
    leg_costs: list[float] = field(default_factory=list)
    hover_costs: list[float] = field(default_factory=list)
    algorithm: str = ""
    comparisons: int = 0

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        self.start = np.asarray(self.start, dtype=float)
        if len(set(self.cubes)) != len(self.cubes):
            raise ValueError("trajectory visits a cube twice")

    def __len__(self) -> int:
        return len(self.cubes)

    @property
    def total_cost(self) -> float:
        return float(sum(self.leg_costs) + sum(self.hover_costs))

    @classmethod
    def build(cls, grid: GridSpec, cubes: Sequence[int], start, battery: BatteryModel, **kw) -> "Trajectory":
        cubes = [int(c) for c in cubes]
        centers = cube_centers(grid)
        pos = centers[cubes] if cubes else np.zeros((0, 3))
        start = np.asarray(start, dtype=float)
        path = np.vstack([start[None, :], pos])
        legs = battery.travel_cost(np.linalg.norm(np.diff(path, axis=0), axis=1))
        return cls(cubes, pos, start, [float(v) for v in legs], [battery.hover_cost] * len(cubes), **kw)

    def to_dict(self) -> dict:
        return {
            "algorithm": self.algorithm,
            "cubes": list(self.cubes),
            "start": self.start.tolist(),
            "leg_costs": list(self.leg_costs),
            "hover_costs": list(self.hover_costs),
            "total_cost": self.total_cost,
            "comparisons": self.comparisons,
        }


def trajectory_cost(traj: Trajectory, battery: BatteryModel) -> float:
    """Normalised battery consumption of flying ``traj``; feasible iff <= battery.budget."""
    if not len(traj):
        return 0.0
    path = np.vstack([traj.start[None, :], traj.positions])
    travel = np.linalg.norm(np.diff(path, axis=0), axis=1).sum() / battery.speed * battery.travel_power
    hover = len(traj) * battery.hover_time * battery.hover_power
    return float((travel + hover) / battery.charge_energy)


@dataclass(frozen=True)
class SyntheticField:
    kind: str
    truth: np.ndarray
    wind: WindField
    seed: int
    grid: GridSpec

    def __post_init__(self):
        truth = np.asarray(self.truth, dtype=float)
        if truth.shape != (self.grid.n_cubes,):
            raise ValueError("truth must hold one value per cube")
        if np.any(truth < 0):
            raise ValueError("synthetic AQI must be non-negative")
        truth.setflags(write=False)
        object.__setattr__(self, "truth", truth)

    def scaled(self, factor: float) -> "SyntheticField":
        return replace(self, truth=self.truth * factor)


def smooth_mode_mixture(grid: GridSpec, seed: int, n_modes: int = 4, max_wavenumber: int = 2) -> np.ndarray:
    """Seeded sum of low-order sinusoids over the grid, scaled so max |value| = 1."""
    rng = np.random.default_rng(seed)
    centers = cube_centers(grid)
    lo, hi = grid.extent()
    span = np.where(hi - lo > 0, hi - lo, 1.0)
    rel = (centers - lo) / span
    active = np.array([d > 1 for d in grid.dims], dtype=float)
    out = np.zeros(len(centers))
    for _ in range(n_modes):
        k = rng.integers(0, max_wavenumber + 1, size=3) * active
        if not k.any():
            k = active * (rng.integers(1, max_wavenumber + 1, size=3))
        phase = rng.uniform(0.0, 2.0 * math.pi)
        amp = rng.uniform(0.5, 1.0)
        out += amp * np.sin(math.pi * rel @ k + phase)
    peak = np.max(np.abs(out))
    return out / peak if peak > 0 else out


def _bumps(centers: np.ndarray, lo: np.ndarray, hi: np.ndarray, rng, count: int, width: float) -> np.ndarray:
    """Sum of ``count`` planar Gaussian bumps centred away from the domain edge."""
    out = np.zeros(len(centers))
    margin = 0.15 * (hi - lo)
    for _ in range(count):
        c = rng.uniform(lo[:2] + margin[:2], hi[:2] - margin[:2])
        out += np.exp(-np.sum((centers[:, :2] - c) ** 2, axis=1) / (2.0 * width**2))
    return out


def make_wind(grid: GridSpec, scenario: str, seed: int, mean_speed: float = 3.0, variation: float = 0.15,
              pockets: int = 2, pocket_width: float = 6.0, pocket_depth: float = 0.7,
              gust_width: float = 4.0, gust_speed: float = 2.0, floor: float = 0.1) -> WindField:
    """Smooth seeded wind field.

    2D: a mildly varying background with sheltered low-wind pockets and one
    gust corridor. 3D: speed grows with height (power law) with a weak planar
    modulation.
    """
    if scenario not in SCENARIOS:
        raise ValueError(f"scenario must be one of {SCENARIOS}")
    rng = np.random.default_rng([seed, 7919])
    centers = cube_centers(grid)
    mix = smooth_mode_mixture(grid, seed + 7919)
    if scenario == "2D":
        lo, hi = grid.extent()
        shelter = np.minimum(_bumps(centers, lo, hi, rng, pockets, pocket_width), 1.0)
        gust = _bumps(centers, lo, hi, rng, 1, gust_width)
        speeds = mean_speed * (1.0 + variation * mix) * (1.0 - pocket_depth * shelter) + gust_speed * gust
    else:
        z = centers[:, 2]
        z_ref = max(float(z.max()), 1.0)
        profile = (np.maximum(z, 1.0) / z_ref) ** 0.3
        speeds = mean_speed * profile * (1.0 + variation * mix)
    return WindField(np.maximum(speeds, floor), floor)


def generate_field(
    grid: GridSpec,
    plume: PlumeParams,
    scenario: str = "2D",
    perturbation: float = 0.0,
    seed: int = 0,
    c_base: float = 0.0,
    scale: float = 1.0,
    wind: WindField | None = None,
    drift: float = 0.0,
    drift_seed: int | None = None,
) -> SyntheticField:
    """Ground truth = (c_base + scale * plume) * (1 + perturbation * smooth mode mixture).

    With ``drift`` > 0 the mixture is blended with a second one drawn from
    ``drift_seed``: (1 - drift) * mix(seed) + drift * mix(drift_seed). This
    models small-scale structure that mostly persists between passes.
    """
    if scenario not in SCENARIOS:
        raise ValueError(f"scenario must be one of {SCENARIOS}")
    if scenario == "2D" and not grid.is_2d:
        raise ValueError("2D scenario needs a single layer grid")
    if not 0.0 <= perturbation < 1.0:
        raise ValueError("perturbation must lie in [0, 1)")
    if not 0.0 <= drift <= 1.0:
        raise ValueError("drift must lie in [0, 1]")
    wind = wind if wind is not None else make_wind(grid, scenario, seed)
    centers = cube_centers(grid)
    profile = c_base + scale * revised_gpm(centers, wind.effective(), plume)
    if perturbation:
        mix = smooth_mode_mixture(grid, seed)
        if drift:
            other = smooth_mode_mixture(grid, seed + 1 if drift_seed is None else drift_seed)
            mix = (1.0 - drift) * mix + drift * other
        truth = profile * (1.0 + perturbation * mix)
        kind = "plume-plus-perturbation"
    else:
        truth = profile
        kind = "plume"
    return SyntheticField(kind, truth, wind, seed, grid)


@dataclass
class MeasurementSource:
    """Noisy sensor reading from a synthetic field, or replay of recorded values.

    Noise is a pure function of (seed, epoch, cube): repeated reads of the same
    cube in the same epoch agree.
    """

    field: SyntheticField | None = None
    sensor_error: float = 0.03
    seed: int = 0
    epoch: int = 0
    replay: dict[int, float] | None = None
    grid: GridSpec | None = None
    wind: WindField | None = None
    fail_after: int | None = None
    count: int = 0

    def __post_init__(self):
        if self.field is None and self.replay is None:
            raise ValueError("need a synthetic field or replay values")
        if self.field is not None:
            self.grid = self.grid or self.field.grid
            self.wind = self.wind or self.field.wind
        if self.grid is None or self.wind is None:
            raise ValueError("replay sources need a grid and a wind field")
        if not 0.0 <= self.sensor_error < 1.0:
            raise ValueError("sensor_error must lie in [0, 1)")

    def noise(self, flat: int) -> float:
        if self.sensor_error == 0:
            return 0.0
        rng = np.random.default_rng([self.seed, self.epoch, flat])
        return float(rng.uniform(-self.sensor_error, self.sensor_error))

    def truth_at(self, flat: int) -> float:
        if self.replay is not None:
            if flat not in self.replay:
                raise MeasurementError(f"no recorded value at cube {self.grid.unflat(flat)}")
            return float(self.replay[flat])
        return float(self.field.truth[flat])


def measure(src: MeasurementSource, cube) -> Sample:
    """Read the sensor at ``cube`` (a Cube, index triple or flat index)."""
    if isinstance(cube, Cube):
        flat = src.grid.flat(cube.index)
    elif isinstance(cube, (int, np.integer)):
        flat = int(cube)
        src.grid.unflat(flat)
    else:
        flat = src.grid.flat(tuple(cube))
    if src.fail_after is not None and src.count >= src.fail_after:
        raise MeasurementError(f"sensor failure after {src.count} measurements")
    src.count += 1
    value = src.truth_at(flat) * (1.0 + src.noise(flat))
    pos = src.grid.center(src.grid.unflat(flat))
    return Sample(tuple(float(v) for v in pos), src.wind.at(flat), value)
