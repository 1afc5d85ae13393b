"""Cube grid, wind field and sample containers shared by every other module."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

DEFAULT_SPACING = 5.0
DEFAULT_WIND_FLOOR = 0.1


@dataclass(frozen=True)
class GridSpec:
    """Regular lattice of cubes. Flat indices are row-major with x varying fastest."""

    dims: tuple[int, int, int]
    spacing: float = DEFAULT_SPACING
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if len(dims) != 3 or any(d < 1 for d in dims):
            raise ValueError(f"dims must be three integers >= 1, got {self.dims!r}")
        if not self.spacing > 0:
            raise ValueError(f"spacing must be positive, got {self.spacing}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))
        object.__setattr__(self, "spacing", float(self.spacing))

    @property
    def n_cubes(self) -> int:
        nx, ny, nz = self.dims
        return nx * ny * nz

    @property
    def is_2d(self) -> bool:
        return self.dims[2] == 1

    def flat(self, index: Sequence[int]) -> int:
        self.check_index(index)
        i, j, k = index
        nx, ny, _ = self.dims
        return int(i + nx * (j + ny * k))

    def unflat(self, flat: int) -> tuple[int, int, int]:
        if not 0 <= flat < self.n_cubes:
            raise IndexError(f"flat index {flat} outside grid of {self.n_cubes} cubes")
        nx, ny, _ = self.dims
        return (flat % nx, (flat // nx) % ny, flat // (nx * ny))

    def check_index(self, index: Sequence[int]) -> None:
        if len(index) != 3 or any(not 0 <= int(i) < d for i, d in zip(index, self.dims)):
            raise IndexError(f"cube index {tuple(index)} outside dims {self.dims}")

    def center(self, index: Sequence[int]) -> np.ndarray:
        self.check_index(index)
        return np.asarray(self.origin) + (np.asarray(index, dtype=float) + 0.5) * self.spacing

    def index_of(self, point: Sequence[float]) -> tuple[int, int, int]:
        """Index of the cube containing ``point``."""
        rel = (np.asarray(point, dtype=float) - np.asarray(self.origin)) / self.spacing
        index = tuple(int(v) for v in np.floor(rel))
        self.check_index(index)
        return index

    def indices(self) -> np.ndarray:
        """All cube indices, shape (n, 3), in flat order."""
        nx, ny, nz = self.dims
        k, j, i = np.meshgrid(np.arange(nz), np.arange(ny), np.arange(nx), indexing="ij")
        return np.column_stack([i.ravel(), j.ravel(), k.ravel()])

    def extent(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.asarray(self.origin)
        return lo, lo + np.asarray(self.dims) * self.spacing


def cube_centers(grid: GridSpec) -> np.ndarray:
    """Centers of every cube, shape (n, 3), row-major with x fastest."""
    return np.asarray(grid.origin) + (grid.indices() + 0.5) * grid.spacing


_OFFSETS = ((-1, 0, 0), (1, 0, 0), (0, -1, 0), (0, 1, 0), (0, 0, -1), (0, 0, 1))


def neighbors(grid: GridSpec, cube) -> list[tuple[int, int, int]]:
    """6-connected in-bounds neighbors of ``cube`` (a Cube or an index triple)."""
    index = cube.index if isinstance(cube, Cube) else tuple(cube)
    grid.check_index(index)
    out = []
    for off in _OFFSETS:
        cand = tuple(int(a + b) for a, b in zip(index, off))
        if all(0 <= c < d for c, d in zip(cand, grid.dims)):
            out.append(cand)
    return out


@dataclass
class Cube:
    index: tuple[int, int, int]
    center: np.ndarray
    aqi: float | None = None
    pdt: float | None = None

    def __post_init__(self):
        if self.aqi is not None and self.aqi < 0:
            raise ValueError(f"negative AQI {self.aqi} at cube {self.index}")
        if self.pdt is not None and not 0.0 <= self.pdt <= 1.0:
            raise ValueError(f"pdt {self.pdt} outside [0, 1] at cube {self.index}")

    @classmethod
    def at(cls, grid: GridSpec, index: Sequence[int]) -> "Cube":
        index = tuple(int(i) for i in index)
        return cls(index=index, center=grid.center(index))


@dataclass(frozen=True)
class WindField:
    """Per-cube wind speed; evaluated speeds are clamped to ``floor``."""

    speeds: np.ndarray
    floor: float = DEFAULT_WIND_FLOOR

    def __post_init__(self):
        if not self.floor > 0:
            raise ValueError("wind floor must be positive")
        speeds = np.asarray(self.speeds, dtype=float)
        speeds.setflags(write=False)
        object.__setattr__(self, "speeds", speeds)

    @classmethod
    def uniform(cls, grid: GridSpec, speed: float, floor: float = DEFAULT_WIND_FLOOR) -> "WindField":
        return cls(np.full(grid.n_cubes, float(speed)), floor)

    def effective(self) -> np.ndarray:
        return np.maximum(self.speeds, self.floor)

    def at(self, flat: int) -> float:
        return float(max(self.speeds[flat], self.floor))


def clamp_wind(u, floor: float = DEFAULT_WIND_FLOOR):
    """Return ``max(u, floor)`` and the number of clamped entries."""
    u = np.asarray(u, dtype=float)
    return np.maximum(u, floor), int(np.count_nonzero(u < floor))


@dataclass(frozen=True)
class Sample:
    position: tuple[float, float, float]
    wind: float
    aqi: float

    def __post_init__(self):
        if self.aqi < 0:
            raise ValueError(f"negative AQI {self.aqi}")
        if self.wind < 0:
            raise ValueError(f"negative wind speed {self.wind}")


@dataclass
class SampleSet:
    """Column-oriented set of N samples: positions (N, 3), wind (N,), aqi (N,)."""

    positions: np.ndarray
    wind: np.ndarray
    aqi: np.ndarray
    extras: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        n = len(self.positions)
        self.wind = np.asarray(self.wind, dtype=float).reshape(n)
        self.aqi = np.asarray(self.aqi, dtype=float).reshape(n)
        for key, col in self.extras.items():
            self.extras[key] = np.asarray(col, dtype=float).reshape(n)

    def __len__(self) -> int:
        return len(self.aqi)

    def __iter__(self):
        for p, u, c in zip(self.positions, self.wind, self.aqi):
            yield Sample(tuple(float(v) for v in p), float(u), float(c))

    @classmethod
    def from_samples(cls, samples: Iterable[Sample]) -> "SampleSet":
        samples = list(samples)
        return cls(
            np.array([s.position for s in samples], dtype=float).reshape(-1, 3),
            np.array([s.wind for s in samples], dtype=float),
            np.array([s.aqi for s in samples], dtype=float),
        )

    def subset(self, rows) -> "SampleSet":
        rows = np.asarray(rows)
        if rows.size == 0:
            rows = rows.astype(int)
        return SampleSet(
            self.positions[rows],
            self.wind[rows],
            self.aqi[rows],
            {k: v[rows] for k, v in self.extras.items()},
        )

    def concat(self, other: "SampleSet") -> "SampleSet":
        keys = self.extras.keys() & other.extras.keys()
        return SampleSet(
            np.vstack([self.positions, other.positions]),
            np.concatenate([self.wind, other.wind]),
            np.concatenate([self.aqi, other.aqi]),
            {k: np.concatenate([self.extras[k], other.extras[k]]) for k in keys},
        )

    def is_finite(self) -> bool:
        return bool(
            np.isfinite(self.positions).all() and np.isfinite(self.wind).all() and np.isfinite(self.aqi).all()
        )
