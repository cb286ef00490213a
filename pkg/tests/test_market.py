import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fgplab import units
from fgplab.exceptions import DegenerateNumeraireError, ValidationError
from fgplab.market import (MarketSpec, PathSet, TimeGrid, covariance, ensemble_mean, load_price_csv,
                           load_spec_json, realized_covariation, relative_covariance, simulate_paths,
                           to_numeraire)
from fgplab.portfolio import PassivePortfolio


def one_asset(gamma=0.0, sigma=0.2):
    return MarketSpec(gamma=[gamma], sigma=[[sigma]], L0=[0.0])


weights = st.integers(2, 5).flatmap(
    lambda n: arrays(float, n, elements=st.floats(0.01, 1.0)).map(lambda w: w / w.sum()))


# ------------------------------------------------------------------- units

@pytest.mark.parametrize("text, years", [
    ("1y", 1.0), ("1d", 1 / 250), ("6.5h", 1 / 250), ("7.5min", 7.5 / (250 * 6.5 * 60)),
    ("1e-4y", 1e-4), ("90s", 90 / (250 * 6.5 * 3600)),
])
def test_parse_duration(text, years):
    assert units.parse_duration(text) == pytest.approx(years, rel=1e-15)


@pytest.mark.parametrize("bad", [1.0, "1", "3 parsecs", "", None])
def test_parse_duration_requires_units(bad):
    with pytest.raises(ValidationError):
        units.parse_duration(bad, "grid.dt")


def test_minutes_round_trip():
    assert units.to_minutes(units.from_minutes(7.13)) == pytest.approx(7.13)


# -------------------------------------------------------------------- spec

def test_spec_rejects_non_psd_and_nonfinite():
    with pytest.raises(ValidationError):
        MarketSpec.from_covariance([0, 0], [[0.04, 0.05], [0.05, 0.04]], [0, 0])
    with pytest.raises(ValidationError):
        MarketSpec(gamma=[np.nan], sigma=[[0.2]], L0=[0.0])
    with pytest.raises(ValidationError):
        MarketSpec(gamma=[0.0], sigma=[[np.inf]], L0=[0.0])


def test_spec_rejects_volatile_money_market():
    with pytest.raises(ValidationError):
        MarketSpec(gamma=[0, 0], sigma=[[0.1, 0], [0, 0.2]], L0=[0, 0], money_market_index=0)


def test_piecewise_coefficients():
    spec = MarketSpec(gamma=[[0.0], [1.0]], sigma=[[[0.0]], [[0.0]]], L0=[0.0], coef_times=[0.0, 0.5])
    paths = simulate_paths(spec, TimeGrid.uniform(1.0, 10), 1, seed=0)
    assert paths.logs[0, -1, 0] == pytest.approx(0.5, abs=1e-14)


def test_zero_volatility_is_deterministic():
    spec = MarketSpec(gamma=[0.1, -0.2], sigma=np.zeros((2, 2)), L0=[0.3, 0.0])
    paths = simulate_paths(spec, TimeGrid.uniform(2.0, 50), 7, seed=1)
    np.testing.assert_allclose(paths.logs[:, -1], np.broadcast_to([0.5, -0.4], (7, 2)), atol=1e-14)


def test_terminal_variance_matches_sigma_squared():
    paths = simulate_paths(one_asset(), TimeGrid.uniform(1.0, 10), 10_000, seed=2)
    assert np.var(paths.logs[:, -1, 0], ddof=1) == pytest.approx(0.04, rel=0.05)


def test_simulation_is_reproducible_and_path_order_independent():
    spec = MarketSpec.from_covariance([0.05, 0.02], [[0.04, 0.01], [0.01, 0.09]], [0, 0])
    grid = TimeGrid.uniform(1.0, 20)
    a = simulate_paths(spec, grid, 10, seed=3)
    b = simulate_paths(spec, grid, 10, seed=3)
    np.testing.assert_array_equal(a.logs, b.logs)
    tail = simulate_paths(spec, grid, 4, seed=3, first=6)
    np.testing.assert_array_equal(a.logs[6:], tail.logs)
    assert not np.array_equal(a.logs, simulate_paths(spec, grid, 10, seed=4).logs)


def test_simulation_threads_do_not_change_results(monkeypatch):
    spec = one_asset(0.01)
    grid = TimeGrid.uniform(1.0, 30)
    serial = simulate_paths(spec, grid, 12, seed=8).logs
    monkeypatch.setenv("FGPLAB_THREADS", "4")
    np.testing.assert_array_equal(simulate_paths(spec, grid, 12, seed=8).logs, serial)


def test_simulation_requires_seed():
    with pytest.raises(ValidationError) as err:
        simulate_paths(one_asset(), TimeGrid.uniform(1.0, 5), 1, seed=None)
    assert err.value.field == "seed"


def test_time_grid_validation_and_coarsening():
    with pytest.raises(ValidationError):
        TimeGrid(np.array([0.0, 0.2, 0.1]))
    with pytest.raises(ValidationError):
        TimeGrid(np.array([0.1, 0.2]))
    g = TimeGrid.uniform(1.0, 8)
    assert g.T == 1.0 and g.M == 8 and g.is_uniform
    assert g.coarsen(4).M == 2
    with pytest.raises(ValidationError):
        g.coarsen(3)


# -------------------------------------------------------------- covariance

def test_covariance_examples():
    assert np.array_equal(covariance(MarketSpec(gamma=[0, 0], sigma=np.eye(2), L0=[0, 0])), np.eye(2))
    spec = MarketSpec(gamma=[0, 0], sigma=[[0.2, 0], [0.1, 0.1]], L0=[0, 0])
    np.testing.assert_allclose(covariance(spec), [[0.04, 0.02], [0.02, 0.02]], atol=1e-16)
    mm = MarketSpec(gamma=[0, 0], sigma=[[0, 0], [0.1, 0.2]], L0=[0, 0], money_market_index=0)
    a = covariance(mm)
    assert np.all(a[0] == 0) and np.all(a[:, 0] == 0)


def test_relative_covariance_examples():
    a = np.diag([0.04, 0.01])
    ar = relative_covariance(a, [1.0, 0.0])
    np.testing.assert_allclose(ar, [[0, 0], [0, 0.05]], atol=1e-16)
    assert ar[1, 1] == pytest.approx(a[0, 0] + a[1, 1] - 2 * a[0, 1])
    mm = np.zeros((3, 3))
    mm[1:, 1:] = [[0.04, 0.01], [0.01, 0.09]]
    np.testing.assert_allclose(relative_covariance(mm, [1.0, 0.0, 0.0]), mm, atol=1e-16)


def test_relative_covariance_rejects_unnormalized_weights():
    with pytest.raises(ValidationError):
        relative_covariance(np.eye(2), [0.5, 0.6])


@given(weights, st.integers(0, 2 ** 32 - 1))
def test_numeraire_direction_has_zero_relative_variance(rho, seed):
    n = rho.shape[0]
    g = np.random.default_rng(seed).normal(size=(n, n + 1))
    a = g @ g.T
    ar = relative_covariance(a, rho)
    assert abs(rho @ ar @ rho) < 1e-12 * max(1.0, np.abs(a).max())
    np.testing.assert_allclose(ar, ar.T, atol=1e-14)


# ------------------------------------------------------ realized covariation

def test_realized_covariation_of_flat_path_is_zero():
    spec = MarketSpec(gamma=[0.0, 0.0], sigma=np.zeros((2, 2)), L0=[0, 0])
    paths = simulate_paths(spec, TimeGrid.uniform(1.0, 10), 2, seed=0)
    assert np.all(realized_covariation(paths, 1).total == 0)


def test_realized_rate_matches_variance():
    paths = simulate_paths(one_asset(), TimeGrid.uniform(1.0, 250), 10_000, seed=5)
    assert realized_covariation(paths, 1).rate.mean() == pytest.approx(0.04, rel=0.05)


def test_realized_covariation_full_lag():
    spec = MarketSpec.from_covariance([0.05, 0.02], [[0.04, 0.01], [0.01, 0.09]], [0, 0])
    paths = simulate_paths(spec, TimeGrid.uniform(2.0, 40), 3, seed=6)
    rc = realized_covariation(paths, 40)
    d = paths.logs[:, -1] - paths.logs[:, 0]
    np.testing.assert_allclose(rc.rate, d[:, :, None] * d[:, None, :] / 2.0, rtol=1e-14)
    with pytest.raises(ValidationError):
        realized_covariation(paths, 41)


# ------------------------------------------------------------------ numeraire

def test_to_numeraire_examples():
    spec = MarketSpec.from_covariance([0.05, 0.02], [[0.04, 0.01], [0.01, 0.09]], [0.1, 0.2])
    paths = simulate_paths(spec, TimeGrid.uniform(1.0, 20), 3, seed=7)
    np.testing.assert_array_equal(to_numeraire(paths, np.ones((3, 21))), paths.logs)
    own = to_numeraire(paths, paths.logs[:, :, 1], log=True)
    np.testing.assert_allclose(own[:, :, 1], 0.0, atol=1e-15)
    shifted = PathSet(paths.grid, paths.logs + 0.7)
    lw = PassivePortfolio.market(spec.L0).log_wealth(paths.logs)
    np.testing.assert_allclose(to_numeraire(shifted, lw + 0.7, log=True), to_numeraire(paths, lw, log=True),
                               atol=1e-14)


def test_to_numeraire_rejects_nonpositive_wealth():
    spec = one_asset()
    paths = simulate_paths(spec, TimeGrid.uniform(1.0, 4), 1, seed=0)
    wealth = np.ones((1, 5))
    wealth[0, 3] = 0.0
    with pytest.raises(DegenerateNumeraireError):
        to_numeraire(paths, wealth)


# ------------------------------------------------------------------- file I/O

def test_load_price_csv(tmp_path):
    f = tmp_path / "prices.csv"
    f.write_text("time,A,B\n0,1.0,2.0\n60,1.1,1.9\n120,1.2,2.1\n")
    paths = load_price_csv(f)
    assert paths.names == ("A", "B") and paths.origin == "ingested"
    assert paths.grid.times[1] == pytest.approx(units.MINUTE)
    np.testing.assert_allclose(paths.logs[0, 2], np.log([1.2, 2.1]))


def test_load_price_csv_iso_times(tmp_path):
    f = tmp_path / "prices.csv"
    f.write_text("time,A\n2024-01-02T09:30:00,1.0\n2024-01-02T09:31:00,1.5\n")
    assert load_price_csv(f).grid.times[1] == pytest.approx(units.MINUTE)


@pytest.mark.parametrize("body", ["time,A\n0,1.0\n60,-1.0\n", "when,A\n0,1\n1,2\n", "time,A\n0,1.0\n",
                                  "time,A\n0,x\n1,2\n"])
def test_load_price_csv_rejects_bad_input(tmp_path, body):
    f = tmp_path / "prices.csv"
    f.write_text(body)
    with pytest.raises(ValidationError):
        load_price_csv(f)


def test_load_spec_json(tmp_path):
    f = tmp_path / "spec.json"
    f.write_text('{"n": 2, "d": 2, "gamma": [0.05, 0.02], "sigma": [[0.2, 0], [0.1, 0.1]],'
                 ' "L0": [0, 0], "horizon": "1y", "steps": 100, "paths": 5, "seed": 9}')
    spec, grid, n_paths, seed = load_spec_json(f)
    assert spec.n == 2 and grid.M == 100 and n_paths == 5 and seed == 9
    f.write_text('{"n": 3, "gamma": [0.05, 0.02], "sigma": [[0.2, 0], [0.1, 0.1]], "L0": [0, 0],'
                 ' "horizon": "1y", "steps": 100}')
    with pytest.raises(ValidationError) as err:
        load_spec_json(f)
    assert err.value.field == "n"


def test_ensemble_mean_is_order_insensitive():
    x = np.random.default_rng(0).normal(size=1000) * 1e8
    assert ensemble_mean(x) == ensemble_mean(x[::-1])
