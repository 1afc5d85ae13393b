"""Map accuracy metrics and the interpolation / linear-regression baselines."""

from __future__ import annotations

import logging
import warnings

import numpy as np
from scipy.interpolate import LinearNDInterpolator, NearestNDInterpolator
from scipy.spatial import QhullError

from aqimap.grid import GridSpec, SampleSet, WindField, cube_centers

log = logging.getLogger(__name__)


class CollinearityWarning(UserWarning):
    """Covariates were dropped because they were collinear with earlier ones."""


def _check(predicted, truth):
    predicted = np.asarray(predicted, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if predicted.shape != truth.shape:
        raise ValueError(f"shape mismatch {predicted.shape} vs {truth.shape}")
    if np.any(truth <= 0):
        raise ValueError("truth must be positive at every cube")
    return predicted, truth


def aea(predicted, truth) -> float:
    """Average estimation accuracy: mean of 1 - |pred - truth| / truth. Not clipped, may be negative."""
    predicted, truth = _check(predicted, truth)
    return float(np.mean(1.0 - np.abs(predicted - truth) / truth))


def err(predicted, truth) -> float:
    """Mean squared relative error."""
    predicted, truth = _check(predicted, truth)
    return float(np.mean(((predicted - truth) / truth) ** 2))


def baseline_li(measured, grid: GridSpec) -> np.ndarray:
    """Piecewise-linear interpolation of measured cubes over the grid.

    ``measured`` maps flat cube index to value. Inside the convex hull of the
    measured centers values are linear on a Delaunay triangulation; outside it
    the nearest measured cube is used. Measured cubes are returned exactly.
    """
    measured = dict(measured)
    if not measured:
        raise ValueError("need at least one measured cube")
    idx = np.array(sorted(measured))
    vals = np.array([measured[i] for i in idx], dtype=float)
    centers = cube_centers(grid)
    pts = centers[idx]
    axes = [a for a in range(3) if np.ptp(pts[:, a]) > 0]
    out = NearestNDInterpolator(pts, vals)(centers) if len(idx) > 1 else np.full(grid.n_cubes, vals[0])
    if len(axes) == 1:
        a = axes[0]
        order = np.argsort(pts[:, a], kind="stable")
        x, y = pts[order, a], vals[order]
        line = np.all(centers[:, [b for b in range(3) if b != a]] == pts[0, [b for b in range(3) if b != a]], axis=1)
        inside = line & (centers[:, a] >= x[0]) & (centers[:, a] <= x[-1])
        out[inside] = np.interp(centers[inside, a], x, y)
    elif len(axes) >= 2:
        try:
            lin = LinearNDInterpolator(pts[:, axes], vals)(centers[:, axes])
            ok = np.isfinite(lin)
            out[ok] = lin[ok]
        except QhullError:
            log.info("measured cubes are degenerate for triangulation; nearest-cube fill only")
    out[idx] = vals
    return out


def _covariates(positions, wind) -> np.ndarray:
    return np.column_stack([np.ones(len(positions)), positions, wind])


def _independent_columns(X: np.ndarray, tol: float = 1e-10) -> list[int]:
    """Greedy left-to-right selection of linearly independent columns."""
    keep: list[int] = []
    scale = np.linalg.norm(X, axis=0)
    Xs = X / np.where(scale > 0, scale, 1.0)
    for j in range(X.shape[1]):
        if scale[j] == 0:
            continue
        trial = keep + [j]
        if np.linalg.matrix_rank(Xs[:, trial], tol=tol * np.sqrt(len(X))) == len(trial):
            keep = trial
    return keep


def baseline_mlr(samples: SampleSet, grid: GridSpec, wind: WindField) -> np.ndarray:
    """Least squares of AQI on (1, x, y, z, u), evaluated at every cube."""
    X = _covariates(samples.positions, samples.wind)
    keep = _independent_columns(X)
    if len(keep) < X.shape[1]:
        names = np.array(["const", "x", "y", "z", "u"])
        dropped = [n for j, n in enumerate(names) if j not in keep]
        warnings.warn(f"collinear covariates dropped: {', '.join(dropped)}", CollinearityWarning, stacklevel=2)
    coef, *_ = np.linalg.lstsq(X[:, keep], samples.aqi, rcond=None)
    grid_X = _covariates(cube_centers(grid), wind.effective())
    return grid_X[:, keep] @ coef
