import math
import warnings

import numpy as np
import pytest
import statsmodels.api as sm
from scipy import stats

from aqimap.dataset import (
    DatasetDay,
    DatasetError,
    format_day,
    load_days,
    parse_day,
    spatial_regression_screen,
    two_tailed_mean_test,
    write_day,
)
from aqimap.grid import GridSpec, SampleSet, cube_centers
from aqimap.metrics import CollinearityWarning


def write(tmp_path, text, name="day.txt"):
    path = tmp_path / name
    path.write_text(text)
    return path


# -- parsing -------------------------------------------------------------------


def test_single_line(tmp_path):
    day = parse_day(write(tmp_path, "0 5 0 87\n"))
    assert day.scenario == "2D"
    s = next(iter(day.samples))
    assert s.position == (0.0, 5.0, 0.0)
    assert s.aqi == 87.0


def test_empty_file(tmp_path):
    with pytest.raises(DatasetError, match="no samples"):
        parse_day(write(tmp_path, ""))


def test_comments_separators_and_malformed(tmp_path, caplog):
    text = "# header\n2.5, 2.5, 2.5, 40\n7.5 2.5\t2.5 41 # trailing\nabc def\n1 2 3\n12.5,2.5 2.5,42\n"
    with caplog.at_level("WARNING"):
        day = parse_day(write(tmp_path, text))
    assert day.samples.aqi.tolist() == [40.0, 41.0, 42.0]
    assert [n for n, _ in day.malformed] == [4, 5]
    assert ":4:" in caplog.text and ":5:" in caplog.text
    assert day.scenario == "3D"


def test_negative_aqi_is_malformed(tmp_path):
    day = parse_day(write(tmp_path, "2.5 2.5 0 -4\n2.5 7.5 0 5\n"))
    assert len(day) == 1 and day.malformed[0][0] == 1


def test_2d_requires_ground_plane(tmp_path):
    with pytest.raises(DatasetError, match="z != 0"):
        parse_day(write(tmp_path, "2.5 2.5 2.5 40\n"), scenario="2D")


def test_off_lattice_flagged(tmp_path):
    day = parse_day(write(tmp_path, "2.5 2.5 0 40\n2.5 2.5001 0 41\n5 10 0 42\n"))
    assert day.off_lattice == [1]


def test_optional_columns(tmp_path):
    day = parse_day(write(tmp_path, "2.5 2.5 0 40 3.1 21.5 0.6\n7.5 2.5 0 41 2.9 22.0 0.55\n"))
    assert day.samples.wind.tolist() == [3.1, 2.9]
    assert day.samples.extras["temperature"].tolist() == [21.5, 22.0]
    assert day.samples.extras["humidity"].tolist() == [0.6, 0.55]


def test_matrix_layout(tmp_path):
    day = parse_day(write(tmp_path, "2.5 2.5 40 41 42\n7.5 2.5 50 51 52\n"), matrix=True)
    assert day.samples.positions[:, 2].tolist() == [2.5, 7.5, 12.5] * 2
    assert day.samples.aqi.tolist() == [40, 41, 42, 50, 51, 52]


def test_round_trip_lossless(tmp_path):
    rng = np.random.default_rng(0)
    grid = GridSpec((10, 10, 1), origin=(0.0, 0.0, -2.5))
    samples = SampleSet(cube_centers(grid), rng.uniform(0.5, 6, 100), rng.uniform(1, 300, 100) / 7)
    day = DatasetDay("2D", samples, "d")
    path = write_day(day, tmp_path / "d.txt")
    back = parse_day(path)
    assert np.array_equal(back.samples.positions, samples.positions)
    assert np.array_equal(back.samples.aqi, samples.aqi)
    assert np.array_equal(back.samples.wind, samples.wind)
    # the writer is stable byte for byte
    assert format_day(back) == path.read_text()


def test_load_days_missing(tmp_path):
    with pytest.raises(DatasetError, match="no dataset found"):
        load_days(tmp_path / "nope")
    with pytest.raises(DatasetError, match="no dataset found"):
        load_days(tmp_path)


def test_load_days_sorted(tmp_path):
    write(tmp_path, "2.5 2.5 0 2\n", "b.txt")
    write(tmp_path, "2.5 2.5 0 1\n", "a.txt")
    assert [d.label for d in load_days(tmp_path)] == ["a", "b"]


# -- two-tailed test -----------------------------------------------------------


def test_identical_lists():
    assert two_tailed_mean_test([1, 2, 3, 4], [1, 2, 3, 4]) == 1.0


def test_zero_variance():
    assert two_tailed_mean_test([2, 2], [2, 2]) == 1.0
    assert two_tailed_mean_test([2, 2], [3, 3]) == 0.0


def test_needs_two_values():
    with pytest.raises(ValueError):
        two_tailed_mean_test([1], [1, 2])


@pytest.mark.parametrize("t_crit, p", [(2.101, 0.05), (2.878, 0.01), (1.734, 0.10)])
def test_textbook_critical_values(t_crit, p):
    # two groups of 10 with equal variance: Welch df = 18; table values of the
    # two-tailed t distribution at df = 18
    a = np.arange(1.0, 11.0)
    se = math.sqrt(2 * a.var(ddof=1) / 10)
    b = a + t_crit * se
    assert two_tailed_mean_test(a, b) == pytest.approx(p, abs=1e-3)


def test_matches_reference_welch():
    rng = np.random.default_rng(1)
    a, b = rng.normal(0, 1, 12), rng.normal(0.8, 3, 9)
    ref = stats.ttest_ind(a, b, equal_var=False).pvalue
    assert two_tailed_mean_test(a, b) == pytest.approx(ref, rel=1e-10)


def test_uav_and_station_agree():
    # fourteen daily means from two monitors of the same air: p far above 0.05
    rng = np.random.default_rng(14)
    station = rng.uniform(40, 160, 14)
    uav = station * (1 + rng.uniform(-0.03, 0.03, 14))
    assert two_tailed_mean_test(uav, station) > 0.5


# -- regression screen ---------------------------------------------------------


def test_noise_covariate_mostly_insignificant():
    hits = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=60)
        y = 3 * x + rng.normal(size=60)
        screen = spatial_regression_screen(y, {"x": x, "noise": rng.normal(size=60)})
        hits += screen.p_value("noise") > 0.05
    assert hits >= 90


def test_perfect_predictor():
    rng = np.random.default_rng(0)
    y = rng.normal(size=30)
    screen = spatial_regression_screen(y, {"same": y, "other": rng.normal(size=30)})
    assert screen.p_value("same") < 1e-10


def test_matches_statsmodels():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(40, 3))
    y = X @ [1.0, 0.0, -0.5] + rng.normal(size=40)
    screen = spatial_regression_screen(y, {"a": X[:, 0], "b": X[:, 1], "c": X[:, 2]})
    ref = sm.OLS(y, sm.add_constant(X)).fit()
    assert np.allclose(screen.coefficients, ref.params[1:], rtol=1e-10)
    assert np.allclose(screen.std_errors, ref.bse[1:], rtol=1e-10)
    assert np.allclose(screen.p_values, ref.pvalues[1:], rtol=1e-8)


def test_collinear_dropped_with_warning():
    rng = np.random.default_rng(0)
    x = rng.normal(size=20)
    with pytest.warns(CollinearityWarning, match="twice"):
        screen = spatial_regression_screen(x + rng.normal(size=20), {"x": x, "twice": 2 * x})
    assert screen.names == ["x"] and screen.dropped == ["twice"]


def test_too_few_samples():
    with pytest.raises(ValueError):
        spatial_regression_screen([1.0, 2.0, 3.0], {"a": [1, 2, 3], "b": [3, 1, 2]})


def driven_screen_data(seed, n=80):
    """Concentration driven by wind and location; temperature and humidity are inert."""
    rng = np.random.default_rng(seed)
    cov = {
        "wind": rng.uniform(0.5, 6, n),
        "location": rng.uniform(0, 100, n),
        "temperature": rng.uniform(10, 30, n),
        "humidity": rng.uniform(0.3, 0.9, n),
    }
    beta = {"wind": -6.0, "location": 0.3, "temperature": 0.0, "humidity": 0.0}
    y = 80 + sum(beta[k] * cov[k] for k in cov) + rng.normal(scale=8.0, size=n)
    return y, cov, beta


def test_screen_recovers_split():
    good = 0
    for seed in range(100):
        y, cov, _ = driven_screen_data(seed)
        sig = spatial_regression_screen(y, cov).significant(0.05)
        good += sig["wind"] and sig["location"] and not sig["temperature"] and not sig["humidity"]
    assert good >= 85


def test_known_beta_within_standard_errors():
    covered = total = 0
    for seed in range(100):
        y, cov, beta = driven_screen_data(seed)
        screen = spatial_regression_screen(y, cov)
        for name, b, se in zip(screen.names, screen.coefficients, screen.std_errors):
            covered += abs(b - beta[name]) <= 1.96 * se
            total += 1
    assert covered / total >= 0.93


def test_screen_csv(tmp_path):
    rng = np.random.default_rng(0)
    x = rng.normal(size=20)
    screen = spatial_regression_screen(x + rng.normal(size=20), {"x": x})
    text = screen.to_csv(tmp_path / "screen.csv")
    assert text.splitlines()[0] == "parameter,p_value"
    assert (tmp_path / "screen.csv").read_text() == text
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert 0.0 <= screen.p_value("x") <= 1.0
