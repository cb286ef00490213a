import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fgplab.exceptions import DegenerateNumeraireError, RankError, ValidationError
from fgplab.fgp import master_equation
from fgplab.generating import DiversityGF, QuadraticGF
from fgplab.immunize import (BetaFactors, ImmunizedGF, capm_beta_factor, capm_beta_instantaneous, capm_beta_series,
                             immunization_residual, immunized_gf, load_factors_csv, orthonormalize,
                             price_level_factor, project_orthogonal, save_factors_csv)
from fgplab.market import MarketSpec, PathSet, TimeGrid, covariance, simulate_paths
from fgplab.portfolio import PassivePortfolio, WeightProcess


def fd_hess(func, y, h=1e-4):
    n = y.size
    out = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            ei, ej = np.eye(n)[i] * h, np.eye(n)[j] * h
            out[i, j] = (func(y + ei + ej) - func(y + ei - ej) - func(y - ei + ej) + func(y - ei - ej)) / (4 * h * h)
    return out


def random_factors(seed, n, K):
    raw = np.random.default_rng(seed).normal(size=(K, n))
    return orthonormalize(raw)


# ------------------------------------------------------------------ projection

def test_projection_examples():
    y = np.array([1.0, 2.0])
    np.testing.assert_array_equal(project_orthogonal(y, np.zeros((0, 2))), y)
    np.testing.assert_allclose(project_orthogonal(y, [[1.0, 0.0]]), [0.0, 2.0])
    b = np.array([[0.6, 0.8]])
    np.testing.assert_allclose(project_orthogonal(b[0], b), [0.0, 0.0], atol=1e-16)
    with pytest.raises(ValidationError):
        project_orthogonal(y, [[1.0, 1.0]])


@given(st.integers(0, 2 ** 32 - 1), st.integers(2, 6), st.data())
def test_projection_idempotent_and_orthogonal(seed, n, data):
    K = data.draw(st.integers(1, n))
    b = random_factors(seed, n, K).vectors
    y = np.random.default_rng(seed + 1).normal(size=n)
    z = project_orthogonal(y, b)
    np.testing.assert_allclose(project_orthogonal(z, b), z, atol=1e-13)
    assert np.abs(b @ z).max() < 1e-12


def test_orthonormalize_examples():
    q = np.linalg.qr(np.random.default_rng(0).normal(size=(4, 4)))[0].T[:3]
    np.testing.assert_allclose(orthonormalize(q).vectors, q, atol=1e-14)
    pair = orthonormalize([[1 / np.sqrt(2), 1 / np.sqrt(2)], [1.0, 0.0]]).vectors
    np.testing.assert_allclose(pair @ pair.T, np.eye(2), atol=1e-15)
    assert abs(np.linalg.det(pair)) == pytest.approx(1.0)
    with pytest.raises(RankError) as err:
        orthonormalize([[1.0, 2.0, 3.0], [0.0, 1.0, 0.0], [1.0, 2.0, 3.0]])
    assert err.value.index == 2


def test_orthonormalize_time_varying_rank_error():
    raw = np.tile(np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]), (5, 1, 1))
    raw[3, 1] = [2.0, 0.0, 0.0]
    with pytest.raises(RankError):
        orthonormalize(raw)


def test_beta_factor_validation():
    with pytest.raises(ValidationError):
        BetaFactors(np.array([[1.0, 1.0]]))
    with pytest.raises(ValidationError):
        BetaFactors(np.eye(3)[:, :2])
    assert BetaFactors(np.eye(3)[:2]).orthonormality_error == 0.0


def test_price_level_factor():
    np.testing.assert_allclose(price_level_factor(4).vectors, [[0.5, 0.5, 0.5, 0.5]])
    for n in (1, 3, 7):
        assert np.linalg.norm(price_level_factor(n).vectors) == pytest.approx(1.0)


# ---------------------------------------------------------- immunized function

def test_no_factors_returns_base():
    H = DiversityGF(0.5, 3)
    assert immunized_gf(H, BetaFactors(np.zeros((0, 3)))) is H


@given(st.integers(0, 2 ** 32 - 1))
def test_immunized_gradient_orthogonal_to_factors(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 6))
    beta = random_factors(seed, n, int(rng.integers(1, n + 1)))
    H = immunized_gf(DiversityGF(rng.uniform(0.2, 1.5), n), beta)
    y = rng.normal(size=(5, n))
    g = H.grad(y, beta.vectors.reshape(-1))
    assert np.abs(np.einsum("ki,mi->mk", beta.vectors, g)).max() < 1e-12


def test_price_level_immunization_zeroes_gradient_sum():
    beta = price_level_factor(3)
    H = immunized_gf(DiversityGF(0.5, 3), beta)
    g = H.grad(np.array([0.3, -0.2, 0.5]), beta.vectors.ravel())
    assert abs(g.sum()) < 1e-15


def test_immunized_hessian_matches_finite_differences():
    c = np.array([[2.0, 0.5, 0.1], [0.5, 1.0, 0.2], [0.1, 0.2, 0.7]])
    base = QuadraticGF(c, [0.1, -0.2, 0.3], [0.2, 0.3, 0.5])
    beta = random_factors(3, 3, 1)
    f = beta.vectors.ravel()
    H = ImmunizedGF(base, 1)
    y = np.array([0.4, -0.1, 0.2])
    P = np.eye(3) - beta.vectors.T @ beta.vectors
    oracle = fd_hess(lambda z: base.value(P @ z), y)
    np.testing.assert_allclose(H.hess(y, f), oracle, rtol=1e-6, atol=1e-9)


def test_immunized_aux_gradient_matches_finite_differences():
    base = DiversityGF(0.5, 3)
    H = ImmunizedGF(base, 1)
    y = np.array([0.4, -0.1, 0.2])
    f = random_factors(5, 3, 1).vectors.ravel()
    h = 1e-6
    fd = np.array([(H.value(y, f + h * e) - H.value(y, f - h * e)) / (2 * h) for e in np.eye(3)])
    np.testing.assert_allclose(H.grad_aux(y, f), fd, atol=1e-8)


# --------------------------------------------------------------- on paths

@pytest.fixture(scope="module")
def paths(gbm3):
    return simulate_paths(gbm3, TimeGrid.uniform(1.0, 2000), 10, seed=21)


def test_immunized_portfolio_has_no_exposure(paths):
    beta = price_level_factor(3)
    H = immunized_gf(DiversityGF(0.5, 3), beta)
    rep = master_equation(H, paths, "market", beta.as_aux(paths.logs.shape))
    assert immunization_residual(rep.weights, rep.lam, rep.rho_weights, beta).max() < 1e-10
    plain = master_equation(DiversityGF(0.5, 3), paths, "market")
    assert immunization_residual(plain.weights, plain.lam, plain.rho_weights, beta).max() > 1e-3


def test_full_rank_factors_leave_numeraire(paths):
    beta = BetaFactors(np.eye(3))
    H = immunized_gf(DiversityGF(0.5, 3), beta)
    rep = master_equation(H, paths, "market", beta.as_aux(paths.logs.shape))
    np.testing.assert_allclose(rep.weights, rep.lam[..., None] * rep.rho_weights, atol=1e-15)


def test_constant_factor_has_no_aux_correction(paths):
    beta = price_level_factor(3)
    rep = master_equation(immunized_gf(DiversityGF(0.5, 3), beta), paths, "market",
                          beta.as_aux(paths.logs.shape))
    np.testing.assert_array_equal(rep.aux_correction, 0.0)


# ------------------------------------------------------------------- CAPM beta

def test_capm_instantaneous_examples():
    a = np.array([[0.04, 0.0, 0.01], [0.0, 0.09, 0.0], [0.01, 0.0, 0.05]])
    beta = capm_beta_instantaneous(a, np.array([1.0, 0.0, 0.0]))
    assert beta[0] == 0.0
    assert beta[1] == -1.0
    with pytest.raises(DegenerateNumeraireError):
        capm_beta_instantaneous(np.zeros((2, 2)), np.array([0.5, 0.5]))


def test_capm_series_knot_is_lagged_window_ratio(gbm3, paths):
    rho = PassivePortfolio.market(gbm3.L0)
    series = capm_beta_series(paths, rho, window=100, spec=gbm3)
    a = covariance(gbm3)
    w = rho.weights(paths.logs)[:, 100:200]
    cov = np.einsum("ij,pmj->pi", a, w)
    var = np.einsum("pmi,ij,pmj->p", w, a, w)
    np.testing.assert_allclose(series[:, 300], cov / var[:, None] - 1, rtol=1e-12)


def test_capm_series_constant_weights_model_is_exact():
    spec = MarketSpec.from_covariance([0.0, 0.0], [[0.04, 0.01], [0.01, 0.09]], [0.0, 0.0])
    p = simulate_paths(spec, TimeGrid.uniform(1.0, 1000), 2, seed=0)
    rho = WeightProcess.constant([0.5, 0.5], p)
    series = capm_beta_series(p, rho, window=50, spec=spec)
    inst = capm_beta_instantaneous(covariance(spec), np.array([0.5, 0.5]))
    np.testing.assert_allclose(series, np.broadcast_to(inst, series.shape), atol=1e-13)


def test_capm_series_uses_only_past_data(paths):
    window = 100
    base = capm_beta_series(paths, "market", window)
    m0 = 700
    logs = paths.logs.copy()
    logs[:, m0 + 1:] += np.random.default_rng(0).normal(scale=0.05, size=logs[:, m0 + 1:].shape).cumsum(axis=1)
    changed = capm_beta_series(PathSet(paths.grid, logs), "market", window)
    np.testing.assert_array_equal(changed[:, window:m0 + 1], base[:, window:m0 + 1])


def test_capm_factor_orthonormal_and_finite_variation(paths):
    beta = capm_beta_factor(paths, "market", window=100)
    assert beta.vectors.shape == (10, 2001, 1, 3)
    assert beta.orthonormality_error < 1e-10
    tv = np.abs(np.diff(beta.vectors, axis=1)).sum(axis=1).max()
    assert np.isfinite(tv)


def test_capm_window_validation(paths):
    with pytest.raises(ValidationError):
        capm_beta_series(paths, "market", window=5000)


def test_factors_csv_round_trip(paths, tmp_path):
    beta = orthonormalize(np.stack([np.broadcast_to(np.full(3, 1.0), paths.logs.shape),
                                    capm_beta_series(paths, "market", 100)], axis=-2))
    f = tmp_path / "factors.csv"
    save_factors_csv(f, paths.grid.times, beta, path_index=2)
    times, back = load_factors_csv(f, 3)
    np.testing.assert_array_equal(times, paths.grid.times)
    np.testing.assert_allclose(back.vectors, beta.vectors[2], atol=1e-15)
    f.write_text("time,x\n0,1\n")
    with pytest.raises(ValidationError):
        load_factors_csv(f)
