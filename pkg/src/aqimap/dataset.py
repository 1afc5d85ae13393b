"""Daily measurement files and the statistical screening tests.

A day file holds one sample per line: ``x y z aqi [u] [temperature] [humidity]``,
separated by whitespace and/or commas. ``#`` starts a comment.
"""

from __future__ import annotations

import logging
import math
import re
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import stats

from aqimap.grid import DEFAULT_SPACING, SampleSet
from aqimap.metrics import CollinearityWarning, _independent_columns

log = logging.getLogger(__name__)

LATTICE_TOL = 1e-6
OPTIONAL_COLUMNS = ("u", "temperature", "humidity")
_SPLIT = re.compile(r"[\s,]+")


class DatasetError(ValueError):
    pass


@dataclass
class DatasetDay:
    scenario: str
    samples: SampleSet
    label: str = ""
    off_lattice: list[int] = field(default_factory=list)
    malformed: list[tuple[int, str]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.samples)


def _fmt(v: float) -> str:
    return repr(float(v))


def _off_lattice(positions: np.ndarray, spacing: float) -> list[int]:
    # lattice points are cube centers (k + 1/2) * spacing; integer multiples are also accepted
    rel = positions / spacing
    centred = np.abs(rel - 0.5 - np.round(rel - 0.5)) * spacing
    corner = np.abs(rel - np.round(rel)) * spacing
    bad = np.minimum(centred, corner) > LATTICE_TOL
    return [int(i) for i in np.flatnonzero(bad.any(axis=1))]


def parse_day(path, scenario: str | None = None, spacing: float = DEFAULT_SPACING,
              matrix: bool = False) -> DatasetDay:
    """Read one day file. Malformed lines are skipped and reported with their line numbers.

    With ``matrix=True`` the file is a 3D height table: each row is one xy
    position ``x y aqi_z0 aqi_z1 ...`` with heights at ``spacing`` intervals
    starting from the first cube center.
    """
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    rows, malformed = [], []
    width = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            values = [float(tok) for tok in _SPLIT.split(line.strip(", ")) if tok]
        except ValueError:
            malformed.append((lineno, raw))
            continue
        if matrix:
            if len(values) < 3:
                malformed.append((lineno, raw))
                continue
            x, y, *col = values
            for k, aqi in enumerate(col):
                rows.append([x, y, (k + 0.5) * spacing, aqi])
            continue
        if not 4 <= len(values) <= 4 + len(OPTIONAL_COLUMNS) or (width is not None and len(values) != width):
            malformed.append((lineno, raw))
            continue
        if not all(math.isfinite(v) for v in values) or values[3] < 0:
            malformed.append((lineno, raw))
            continue
        width = len(values)
        rows.append(values)
    for lineno, raw in malformed:
        log.warning("%s:%d: malformed line skipped: %r", path, lineno, raw)
    if not rows:
        raise DatasetError(f"{path}: no samples")
    data = np.array(rows, dtype=float)
    positions = data[:, :3]
    ncol = data.shape[1]
    wind = data[:, 4] if ncol > 4 else np.zeros(len(data))
    extras = {name: data[:, 4 + i] for i, name in enumerate(OPTIONAL_COLUMNS) if 4 + i < ncol and i > 0}
    samples = SampleSet(positions, wind, data[:, 3], extras)
    if ncol > 4:
        samples.extras["u"] = wind.copy()
    if scenario is None:
        scenario = "2D" if np.all(positions[:, 2] == 0) else "3D"
    if scenario == "2D" and np.any(positions[:, 2] != 0):
        raise DatasetError(f"{path}: 2D day has samples with z != 0")
    off = _off_lattice(positions, spacing)
    if off:
        log.info("%s: %d sample(s) off the %.3g m lattice", path, len(off), spacing)
    return DatasetDay(scenario, samples, path.stem, off, malformed)


def format_day(day: DatasetDay) -> str:
    s = day.samples
    cols = [s.positions[:, 0], s.positions[:, 1], s.positions[:, 2], s.aqi]
    header = [f"# scenario {day.scenario}", "# x y z aqi"]
    if "u" in s.extras or np.any(s.wind != 0):
        cols.append(s.wind)
        header[-1] += " u"
        for name in OPTIONAL_COLUMNS[1:]:
            if name not in s.extras:
                break
            cols.append(s.extras[name])
            header[-1] += f" {name}"
    lines = header + [" ".join(_fmt(v) for v in row) for row in zip(*cols)]
    return "\n".join(lines) + "\n"


def write_day(day: DatasetDay, path) -> Path:
    path = Path(path)
    path.write_text(format_day(day), encoding="utf-8")
    return path


def load_days(directory, pattern: str = "*.txt", **kw) -> list[DatasetDay]:
    directory = Path(directory)
    if not directory.is_dir():
        raise DatasetError(f"no dataset found at {directory}")
    files = sorted(directory.glob(pattern))
    if not files:
        raise DatasetError(f"no dataset found in {directory}")
    return [parse_day(f, **kw) for f in files]


def two_tailed_mean_test(a: Sequence[float], b: Sequence[float]) -> float:
    """Welch two-sample test of equal means; returns the two-sided p-value."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if len(a) < 2 or len(b) < 2:
        raise ValueError("each group needs at least 2 values")
    va, vb = a.var(ddof=1) / len(a), b.var(ddof=1) / len(b)
    diff = a.mean() - b.mean()
    se2 = va + vb
    if se2 == 0:
        return 1.0 if diff == 0 else 0.0
    t = diff / math.sqrt(se2)
    df = se2**2 / (va**2 / (len(a) - 1) + vb**2 / (len(b) - 1))
    return float(2.0 * stats.t.sf(abs(t), df))


@dataclass
class RegressionScreen:
    names: list[str]
    coefficients: np.ndarray
    std_errors: np.ndarray
    t_values: np.ndarray
    p_values: np.ndarray
    dropped: list[str] = field(default_factory=list)

    def p_value(self, name: str) -> float:
        return float(self.p_values[self.names.index(name)])

    def significant(self, alpha: float = 0.05) -> dict[str, bool]:
        return {n: bool(p < alpha) for n, p in zip(self.names, self.p_values)}

    def to_csv(self, path=None) -> str:
        lines = ["parameter,p_value"] + [f"{n},{_fmt(p)}" for n, p in zip(self.names, self.p_values)]
        text = "\n".join(lines) + "\n"
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text


def spatial_regression_screen(response, covariates: dict[str, Sequence[float]]) -> RegressionScreen:
    """OLS of ``response`` on the covariates plus an intercept, with a t-test per coefficient.

    Collinear covariates are dropped (with a warning) before fitting.
    """
    y = np.asarray(response, dtype=float)
    names = list(covariates)
    X = np.column_stack([np.ones(len(y))] + [np.asarray(covariates[n], dtype=float) for n in names])
    if len(y) < len(names) + 2:
        raise ValueError(f"need at least {len(names) + 2} samples for {len(names)} covariates")
    keep = _independent_columns(X)
    if 0 not in keep:
        keep = [0] + keep
    dropped = [names[j - 1] for j in range(1, X.shape[1]) if j not in keep]
    if dropped:
        warnings.warn(f"collinear covariates dropped: {', '.join(dropped)}", CollinearityWarning, stacklevel=2)
    X = X[:, keep]
    kept = [names[j - 1] for j in keep if j > 0]
    n, p = X.shape
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ coef
    dof = n - p
    sigma2 = resid @ resid / dof if dof > 0 else math.nan
    cov = sigma2 * np.linalg.inv(X.T @ X)
    se = np.sqrt(np.diag(cov))[1:]
    b = coef[1:]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(se > 0, b / se, np.where(b == 0, 0.0, np.inf))
    pvals = np.clip(2.0 * stats.t.sf(np.abs(t), dof), 0.0, 1.0)
    return RegressionScreen(kept, b, se, t, pvals, dropped)
