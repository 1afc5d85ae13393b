import numpy as np
import pytest

from aqimap.grid import GridSpec, SampleSet, WindField, cube_centers
from aqimap.metrics import CollinearityWarning, aea, baseline_li, baseline_mlr, err


def test_aea_fixtures():
    assert aea([5.0, 7.0], [5.0, 7.0]) == 1.0
    assert aea([10.0, 14.0], [5.0, 7.0]) == 0.0
    assert aea([90.0, 110.0, 100.0], [100.0, 100.0, 100.0]) == pytest.approx(1 - 0.2 / 3, abs=1e-15)
    assert round(aea([90.0, 110.0, 100.0], [100.0, 100.0, 100.0]), 4) == 0.9333


def test_aea_unclipped():
    assert aea([400.0], [100.0]) == -2.0


def test_err_fixtures():
    assert err([3.0, 4.0], [3.0, 4.0]) == 0.0
    assert err([80.0], [100.0]) == pytest.approx(0.04, abs=1e-15)


def test_err_of_uniform_twenty_percent_error():
    rng = np.random.default_rng(0)
    truth = rng.uniform(20, 300, 500)
    signs = rng.choice([-1.0, 1.0], 500)
    predicted = truth * (1 + 0.2 * signs)
    assert err(predicted, truth) == pytest.approx(0.04, rel=1e-12)
    # the same prediction has an average accuracy of 80%
    assert aea(predicted, truth) == pytest.approx(0.8, rel=1e-12)
    # and conversely an ERR of 0.04 with equal per-cube error magnitudes means 20% each
    assert np.allclose(np.abs(predicted / truth - 1), np.sqrt(0.04))


def test_zero_error_equivalence():
    rng = np.random.default_rng(1)
    truth = rng.uniform(1, 10, 20)
    for predicted in (truth.copy(), truth * 1.01):
        assert (err(predicted, truth) == 0.0) == (aea(predicted, truth) == 1.0)


def test_metric_errors():
    with pytest.raises(ValueError):
        aea([1.0], [0.0])
    with pytest.raises(ValueError):
        err([1.0, 2.0], [1.0])


# -- LI ------------------------------------------------------------------------


def test_li_identity_when_all_measured():
    grid = GridSpec((5, 4, 2))
    values = np.random.default_rng(0).uniform(10, 90, grid.n_cubes)
    out = baseline_li(dict(enumerate(values)), grid)
    assert np.array_equal(out, values)


def test_li_line_midpoint():
    grid = GridSpec((3, 1, 1))
    assert baseline_li({0: 100.0, 2: 200.0}, grid)[1] == 150.0


def test_li_single_measurement_is_flat():
    grid = GridSpec((3, 3, 1))
    assert np.all(baseline_li({4: 7.0}, grid) == 7.0)


def test_li_plane_reproduced():
    grid = GridSpec((6, 6, 1))
    c = cube_centers(grid)
    plane = 3.0 + 0.5 * c[:, 0] - 0.2 * c[:, 1]
    corners = [0, 5, 30, 35]
    out = baseline_li({i: plane[i] for i in corners}, grid)
    assert np.allclose(out, plane, rtol=1e-12)


def test_li_hull_bounds():
    grid = GridSpec((8, 8, 3))
    for seed in range(20):
        rng = np.random.default_rng(seed)
        idx = rng.choice(grid.n_cubes, int(rng.integers(5, 40)), replace=False)
        vals = rng.uniform(0, 100, len(idx))
        out = baseline_li(dict(zip(idx.tolist(), vals)), grid)
        assert np.array_equal(out[idx], vals)
        assert np.all(out >= vals.min() - 1e-9) and np.all(out <= vals.max() + 1e-9)


def test_li_needs_measurement():
    with pytest.raises(ValueError):
        baseline_li({}, GridSpec((2, 2, 1)))


# -- MLR -----------------------------------------------------------------------


def test_mlr_recovers_linear_truth():
    grid = GridSpec((5, 5, 4))
    rng = np.random.default_rng(2)
    wind = WindField(rng.uniform(1, 5, grid.n_cubes))
    c = cube_centers(grid)
    truth = 12.0 + 0.3 * c[:, 0] - 0.1 * c[:, 1] + 0.7 * c[:, 2] + 2.5 * wind.effective()
    idx = rng.choice(grid.n_cubes, 30, replace=False)
    samples = SampleSet(c[idx], wind.effective()[idx], truth[idx])
    assert np.allclose(baseline_mlr(samples, grid, wind), truth, rtol=0, atol=1e-8)


def test_mlr_constant_truth():
    grid = GridSpec((4, 4, 1))
    rng = np.random.default_rng(3)
    wind = WindField(rng.uniform(1, 5, grid.n_cubes))
    c = cube_centers(grid)
    idx = rng.choice(grid.n_cubes, 10, replace=False)
    samples = SampleSet(c[idx], wind.effective()[idx], np.full(10, 42.0))
    with pytest.warns(CollinearityWarning, match="z"):
        out = baseline_mlr(samples, grid, wind)
    assert np.allclose(out, 42.0, atol=1e-9)
