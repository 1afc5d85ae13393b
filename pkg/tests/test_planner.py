import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aqimap.grid import GridSpec, WindField, cube_centers
from aqimap.gpmnn import GpmNnModel, init_hidden, null_model
from aqimap.planner import (
    InfeasibleBudget,
    compute_pdt,
    greedy_trajectory,
    nearest_trajectory,
    normalise_pdt,
    plan_trajectory,
    select_cubes,
    sequential_trajectory,
)
from aqimap.plume import PlumeParams, revised_gpm
from aqimap.sim import BatteryModel, trajectory_cost

UNLIMITED = BatteryModel(budget=math.inf)


def random_pdt(n, seed):
    return normalise_pdt(np.random.default_rng(seed).uniform(0, 1, (n, 4)))


def exhaustive_optimum(centers, start, members, battery):
    """Cheapest open tour from ``start`` over all permutations of ``members``."""
    pts = np.vstack([centers[start], centers[members]])
    D = np.linalg.norm(pts[:, None] - pts[None], axis=2)
    perms = np.array(list(itertools.permutations(range(1, len(members) + 1))))
    length = D[0, perms[:, 0]] + D[perms[:, :-1], perms[:, 1:]].sum(axis=1)
    travel = length.min() / battery.speed * battery.travel_power
    hover = len(members) * battery.hover_time * battery.hover_power
    return (travel + hover) / battery.charge_energy


# -- PDT -----------------------------------------------------------------------


def test_null_model_pdt_is_zero():
    grid = GridSpec((4, 4, 3))
    model = null_model(PlumeParams(lam=10.0), 30.0, K=5)
    field = compute_pdt(model, grid, WindField.uniform(grid, 2.0))
    assert np.all(field.pdt == 0.0)
    assert np.all(field.per_var == 0.0)


def test_k0_column_peak_at_source_height():
    grid = GridSpec((1, 1, 10))
    p = PlumeParams(lam=100.0, H=23.0)
    model = GpmNnModel(init_hidden(0), np.array([1.0, 0.0]), p, 10.0)
    field = compute_pdt(model, grid, WindField.uniform(grid, 2.0))
    z = cube_centers(grid)[:, 2]
    # |dC/du| = C / u, largest where |z - H| is smallest
    closest = int(np.argmin(np.abs(z - p.H)))
    assert field.per_var[closest, 3] == 1.0
    assert field.pdt[closest] == 1.0
    assert np.argmax(revised_gpm(cube_centers(grid), 2.0, p)) == closest


@given(st.integers(2, 60), st.integers(0, 10_000))
def test_normalised_range_and_endpoints(n, seed):
    mags = np.random.default_rng(seed).normal(size=(n, 4)) * [1, 10, 0, 1e-3]
    field = normalise_pdt(mags)
    assert np.all((field.per_var >= 0) & (field.per_var <= 1))
    for k in range(4):
        col = np.abs(mags[:, k])
        if np.ptp(col) > 0:
            assert field.per_var[:, k].max() == 1.0 and field.per_var[:, k].min() == 0.0
        else:
            assert np.all(field.per_var[:, k] == 0.0)


@given(st.integers(2, 60), st.integers(0, 10_000))
def test_inverse_relation_round_trip(n, seed):
    mags = np.abs(np.random.default_rng(seed).lognormal(size=(n, 4)))
    field = normalise_pdt(mags)
    assert np.allclose(field.magnitudes(), mags, rtol=1e-10, atol=1e-12)


def test_reductions():
    mags = np.array([[0.0, 0.0, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0], [1.0, 1.0, 1.0, 1.0]])
    assert normalise_pdt(mags, "max").pdt.tolist() == [0.0, 1.0, 1.0]
    assert normalise_pdt(mags, "mean").pdt.tolist() == [0.0, 0.25, 1.0]
    with pytest.raises(ValueError):
        normalise_pdt(mags, "median")


# -- selection -----------------------------------------------------------------


def test_threshold_zero_selects_all():
    field = random_pdt(50, 0)
    assert len(select_cubes(field, 0.0, 0.0)) == 50


def test_threshold_one_keeps_extremes():
    field = random_pdt(50, 1)
    members = select_cubes(field, 1.0, 0.0).members
    assert members == [i for i, v in enumerate(field.pdt) if v in (0.0, 1.0)]


def test_selection_matches_set_definition():
    field = random_pdt(200, 2)
    sel = select_cubes(field, 0.6, 0.1)
    expected = {i for i, v in enumerate(field.pdt) if v >= 0.6} | {i for i, v in enumerate(field.pdt) if v <= 0.1}
    assert set(sel.members) == expected


@given(st.integers(0, 10_000))
def test_selection_monotone(seed):
    field = random_pdt(80, seed)
    previous = None
    for t in np.linspace(0.1, 1.0, 19):
        members = set(select_cubes(field, float(t), 0.05).members)
        if previous is not None:
            assert members <= previous
        previous = members


def test_delta_at_or_above_threshold_rejected():
    field = random_pdt(10, 0)
    with pytest.raises(ValueError, match="complete monitoring"):
        select_cubes(field, 0.3, 0.3)
    with pytest.raises(ValueError):
        select_cubes(field, 1.5, 0.0)


def test_empty_set_falls_back_to_top_cube():
    # with the mean reduction no cube reaches 1 here: pdt = (0.25, 0.25, 0.3)
    mags = np.array([[0.0, 1.0, 0, 0], [1.0, 0.0, 0, 0], [0.6, 0.6, 0, 0]])
    field = normalise_pdt(mags, "mean")
    assert field.pdt.tolist() == pytest.approx([0.25, 0.25, 0.3])
    assert select_cubes(field, 0.9, 0.1).members == [2]


# -- trajectories --------------------------------------------------------------


def test_single_member():
    grid = GridSpec((5, 5, 1))
    traj = greedy_trajectory([7], 0, UNLIMITED, random_pdt(25, 0), grid)
    assert traj.cubes == [7]


def test_greedy_prefers_higher_pdt_at_equal_distance():
    grid = GridSpec((3, 1, 1))
    field = normalise_pdt(np.array([[0.5, 0, 0, 0], [0.0, 0, 0, 0], [0.9, 0, 0, 0]]))
    # both members sit 5 m from the start cube (1, 0, 0)
    traj = greedy_trajectory([0, 2], (1, 0, 0), UNLIMITED, field, grid)
    assert traj.cubes == [2, 0]


def test_greedy_tie_breaks_to_lower_index():
    grid = GridSpec((3, 1, 1))
    field = normalise_pdt(np.array([[1.0, 0, 0, 0], [0.0, 0, 0, 0], [1.0, 0, 0, 0]]))
    assert greedy_trajectory([0, 2], (1, 0, 0), UNLIMITED, field, grid).cubes == [0, 2]


def test_greedy_within_twice_exhaustive_optimum():
    rng = np.random.default_rng(0)
    grid = GridSpec((8, 8, 3))
    centers = cube_centers(grid)
    for _ in range(100):
        n = int(rng.integers(1, 10))
        members = sorted(rng.choice(grid.n_cubes, n, replace=False).tolist())
        start = int(rng.integers(grid.n_cubes))
        field = random_pdt(grid.n_cubes, int(rng.integers(1 << 30)))
        traj = greedy_trajectory(members, start, UNLIMITED, field, grid)
        assert sorted(traj.cubes) == members
        assert trajectory_cost(traj, UNLIMITED) <= 2.0 * exhaustive_optimum(centers, start, members, UNLIMITED)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.02, 0.5), st.sampled_from(["pdt-greedy", "nearest", "sequential"]))
def test_disjoint_and_within_budget(seed, budget, algorithm):
    rng = np.random.default_rng(seed)
    grid = GridSpec((10, 10, 2))
    battery = BatteryModel(budget=budget)
    members = rng.choice(grid.n_cubes, int(rng.integers(1, 60)), replace=False).tolist()
    start = int(rng.integers(grid.n_cubes))
    try:
        traj = plan_trajectory(algorithm, members, start, battery, random_pdt(grid.n_cubes, seed), grid)
    except InfeasibleBudget:
        return
    assert len(set(traj.cubes)) == len(traj.cubes)
    assert set(traj.cubes) <= set(members)
    assert traj.total_cost <= battery.budget + 1e-12
    assert trajectory_cost(traj, battery) == pytest.approx(traj.total_cost, rel=1e-12)


def test_budget_stops_early():
    grid = GridSpec((10, 10, 1))
    battery = BatteryModel(budget=0.05)
    traj = sequential_trajectory(range(100), 0, battery, grid)
    assert 0 < len(traj) < 100
    assert traj.total_cost <= 0.05


def test_infeasible_budget_names_budget():
    grid = GridSpec((10, 10, 1))
    battery = BatteryModel(budget=0.0115)
    with pytest.raises(InfeasibleBudget, match="budget"):
        nearest_trajectory([99], 0, battery, grid)


def test_empty_selection_rejected():
    with pytest.raises(ValueError):
        nearest_trajectory([], 0, UNLIMITED, GridSpec((2, 2, 1)))


def test_unknown_algorithm():
    with pytest.raises(ValueError):
        plan_trajectory("random", [0], 0, UNLIMITED, None, GridSpec((2, 2, 1)))


def test_sequential_order():
    grid = GridSpec((3, 3, 2))
    assert sequential_trajectory([17, 4, 0, 9], 0, UNLIMITED, grid).cubes == [0, 4, 9, 17]


def test_nearest_order():
    grid = GridSpec((10, 1, 1))
    assert nearest_trajectory([9, 2, 5], 0, UNLIMITED, grid).cubes == [2, 5, 9]


def test_comparisons_quadratic():
    grid = GridSpec((40, 40, 1))
    field = random_pdt(grid.n_cubes, 3)
    rng = np.random.default_rng(3)
    counts = {}
    for n in (50, 100, 200, 400):
        members = rng.choice(grid.n_cubes, n, replace=False).tolist()
        counts[n] = greedy_trajectory(members, 0, UNLIMITED, field, grid).comparisons
        assert counts[n] == n * (n + 1) // 2
    for n in (50, 100, 200):
        assert counts[2 * n] / counts[n] <= 4.5
