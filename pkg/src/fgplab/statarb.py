"""Variance-capture statistical arbitrage.

Two discretely rebalanced versions of the same functionally generated
portfolio, one traded at a fast interval and one at a slow interval, differ
mostly through the variance they capture. A position long ``kappa`` units of
the fast one and short ``kappa`` of the slow one then grows at
``A kappa - B kappa^2``. The quadratic generating function strategy exploits
the same effect through the shape of the variogram ``A_t / t``.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import least_squares, minimize_scalar
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import as_finite, check_positive_int
from .exceptions import EstimationError, FitError, UnboundedGrowthWarning, ValidationError
from .generating import GeneratingFunction
from .market import PathSet, realized_covariation
from .units import from_seconds

MIN_REBALANCES = 30
SERIES_SWITCH = 0.1
LIMIT_BAND = 1e-6
FLAT_TOL = 1e-14


@dataclass(frozen=True)
class LongShortInputs:
    """Annualized rates feeding the long-short analysis.

    ``a11`` and ``a22`` are the log-variance rates of the fast and slow
    portfolio values, ``a_diff`` the variance rate of their log ratio and
    ``h1``, ``h2`` their variance-capture rates.
    """

    a11: float
    a22: float
    a_diff: float
    h1: float
    h2: float
    provenance: str = "paper-constants"
    delta_H_gap: float = 0.0
    samples: dict | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        for name in ("a11", "a22", "a_diff", "h1", "h2"):
            v = getattr(self, name)
            if not np.isfinite(v):
                raise ValidationError(f"{name} must be finite", field=name)
            object.__setattr__(self, name, float(v))
        for name in ("a11", "a22", "a_diff"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be nonnegative", field=name)

    def A_standard_error(self):
        """Standard error of ``A`` across paths (estimated inputs only)."""
        if not self.samples:
            return float("nan")
        s = self.samples
        A = s["h1"] - s["h2"] + 0.5 * (s["a11"] - s["a22"])
        return float(np.std(A, ddof=1) / np.sqrt(A.shape[0])) if A.shape[0] > 1 else float("nan")

    def to_dict(self):
        return {k: v for k, v in asdict(self).items() if k != "samples"}


@dataclass(frozen=True)
class LongShortReport:
    A: float
    B: float
    kappa_bar: float
    kappa_check: float
    gamma_check: float

    def growth(self, kappa):
        """Growth rate ``A kappa - B kappa^2`` of the long-short position."""
        kappa = np.asarray(kappa, dtype=float)
        return self.A * kappa - self.B * kappa ** 2

    def to_dict(self):
        return asdict(self)


def long_short_analyze(inp: LongShortInputs) -> LongShortReport:
    A = inp.h1 - inp.h2 + 0.5 * (inp.a11 - inp.a22)
    B = 0.5 * inp.a_diff
    if B == 0:
        if A != 0:
            warnings.warn("B = 0 with A != 0: growth is unbounded in kappa", UnboundedGrowthWarning, stacklevel=2)
            return LongShortReport(A, B, math.copysign(math.inf, A), math.copysign(math.inf, A), math.inf)
        return LongShortReport(A, B, math.nan, math.nan, 0.0)
    return LongShortReport(A, B, A / B, A / (2 * B), A * A / (4 * B))


def _rebalanced_log_wealth(Lhat, H, lag, end):
    """Log wealth (in numeraire units) of the FGP rebalanced every ``lag`` steps."""
    idx = np.arange(0, end + 1, lag)
    y = Lhat[:, idx]
    g = H.grad(y)
    growth = 1.0 + np.einsum("pmi,pmi->pm", g[:, :-1], np.expm1(np.diff(y, axis=1)))
    if np.any(~(growth > 0)):
        raise EstimationError("a rebalanced portfolio went bankrupt in the estimation window", field="H")
    out = np.zeros(y.shape[:2])
    np.cumsum(np.log(growth), axis=1, out=out[:, 1:])
    return out


def long_short_from_paths(paths: PathSet, H: GeneratingFunction, fast_lag, slow_lag, money_market=None):
    """Estimate :class:`LongShortInputs` from simulated or ingested paths.

    The same portfolio ``grad H(L^)`` (remainder in the numeraire) is held
    with rebalancing every ``fast_lag`` and every ``slow_lag`` steps, on
    log prices ``L^`` relative to the money market when ``money_market`` is
    an asset index, or on ``paths`` as given otherwise. Over a common window
    of length ``T``::

        h_i    = (log V_i(T) - (H(L^_T) - H(L^_0))) / T
        a11    = realized variance of log V_1 at the fast lag / T
        a22    = realized variance of log V_2 at the slow lag / T
        a_diff = realized variance of log(V_1 / V_2) at the slow lag / T

    Inputs are ensemble means; per-path values are kept in ``samples``.
    """
    fast_lag = check_positive_int(fast_lag, "fast_lag")
    slow_lag = check_positive_int(slow_lag, "slow_lag")
    if fast_lag > slow_lag or slow_lag % fast_lag:
        raise ValidationError("slow_lag must be a multiple of fast_lag", field="slow_lag")
    M = paths.grid.M
    end = (M // slow_lag) * slow_lag
    if end // slow_lag < MIN_REBALANCES:
        raise EstimationError(f"window holds {end // slow_lag} slow rebalances; at least {MIN_REBALANCES} needed",
                              field="slow_lag")
    logs = paths.logs
    if money_market is not None:
        keep = [i for i in range(paths.n) if i != money_market]
        logs = logs[:, :, keep] - logs[:, :, money_market:money_market + 1]
    if logs.shape[-1] != H.n:
        raise ValidationError("generating function dimension differs from the number of risky assets", field="H")
    T = float(paths.grid.times[end] - paths.grid.times[0])
    lv1 = _rebalanced_log_wealth(logs, H, fast_lag, end)
    lv2 = _rebalanced_log_wealth(logs, H, slow_lag, end)
    dH = H.value(logs[:, end]) - H.value(logs[:, 0])
    h1 = (lv1[:, -1] - dH) / T
    h2 = (lv2[:, -1] - dH) / T
    a11 = (np.diff(lv1, axis=1) ** 2).sum(axis=1) / T
    a22 = (np.diff(lv2, axis=1) ** 2).sum(axis=1) / T
    ratio = lv1[:, ::slow_lag // fast_lag] - lv2
    a_diff = (np.diff(ratio, axis=1) ** 2).sum(axis=1) / T
    samples = {"h1": h1, "h2": h2, "a11": a11, "a22": a22, "a_diff": a_diff}
    return LongShortInputs(float(a11.mean()), float(a22.mean()), float(a_diff.mean()), float(h1.mean()),
                           float(h2.mean()), provenance="estimated", delta_H_gap=0.0, samples=samples)


# --------------------------------------------------------------- variogram

@dataclass(frozen=True)
class VariogramFit:
    """Variance-rate profile ``A_t / t = C + U / (t + B_fit)^k`` (t in years)."""

    C: float
    U: float
    B_fit: float
    k: float
    residual_norm: float = 0.0
    covariance: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        for name in ("C", "U", "B_fit", "k"):
            if not np.isfinite(getattr(self, name)):
                raise ValidationError(f"{name} must be finite", field=name)
        if self.C < 0 or self.B_fit <= 0 or self.k <= 0:
            raise ValidationError("variogram needs C >= 0, B_fit > 0 and k > 0", field="variogram")

    def rate(self, t):
        """``A_t / t``."""
        t = np.asarray(t, dtype=float)
        return self.C + self.U / (t + self.B_fit) ** self.k

    def to_dict(self):
        d = {"C": self.C, "U": self.U, "B_fit": self.B_fit, "k": self.k, "residual_norm": self.residual_norm}
        if self.covariance is not None:
            d["covariance"] = np.asarray(self.covariance).tolist()
        return d


def _model(theta, t):
    C, U, B, k = theta[0], np.exp(theta[1]), np.exp(theta[2]), np.exp(theta[3])
    return C + U / (t + B) ** k


def fit_variogram(lags, rates, restarts=8, seed=0) -> VariogramFit:
    """Least-squares fit of ``C + U / (t + B_fit)^k`` to variance rates.

    Levenberg-Marquardt on relative residuals with ``U``, ``B_fit`` and
    ``k`` log-parameterized, restarted from ``restarts`` seeded
    perturbations of a data-driven initial guess. The parameter covariance
    is the Gauss-Newton estimate ``s^2 (J'J)^-1`` mapped back to natural
    parameters.
    """
    t = as_finite(lags, "lags", ndim=1)
    r = as_finite(rates, "rates", ndim=1)
    if t.shape != r.shape or t.shape[0] < 5:
        raise ValidationError("need at least 5 (lag, rate) pairs", field="lags")
    if np.any(t <= 0) or np.any(np.diff(t) <= 0):
        raise ValidationError("lags must be positive and increasing", field="lags")
    if np.any(r <= 0):
        raise ValidationError("rates must be positive", field="rates")

    def resid(theta):
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            out = (_model(theta, t) - r) / r
        return np.where(np.isfinite(out), out, 1e150)

    C0 = float(r[-1])
    U0 = max(float(r[0] - r[-1]), 1e-6 * C0) * float(t[0] + np.median(t))
    base = np.array([C0, np.log(U0), np.log(np.median(t)), 0.0])
    rng = np.random.default_rng(seed)
    best = None
    for attempt in range(restarts):
        x0 = base if attempt == 0 else base + rng.normal(0.0, [0.2 * C0, 1.0, 1.0, 0.5])
        try:
            sol = least_squares(resid, x0, method="lm", x_scale="jac", max_nfev=4000)
        except (ValueError, FloatingPointError):
            continue
        if not np.all(np.isfinite(sol.x)) or not np.isfinite(sol.cost):
            continue
        if best is None or sol.cost < best.cost:
            best = sol
    with np.errstate(over="ignore", under="ignore"):
        natural = np.exp(best.x[1:]) if best is not None else None
    if best is None or not best.success or best.x[0] < 0 or not np.all(np.isfinite(natural) & (natural > 0)):
        summary = None if best is None else dict(zip(("C", "logU", "logB", "logk"), best.x.tolist()))
        raise FitError(f"variogram fit did not converge after {restarts} restarts", best=summary)
    theta = best.x
    J = best.jac
    dof = max(t.shape[0] - 4, 1)
    s2 = 2 * best.cost / dof
    D = np.diag([1.0, np.exp(theta[1]), np.exp(theta[2]), np.exp(theta[3])])
    try:
        cov = D @ (s2 * np.linalg.pinv(J.T @ J)) @ D
    except np.linalg.LinAlgError:
        cov = np.full((4, 4), np.nan)
    return VariogramFit(float(theta[0]), float(np.exp(theta[1])), float(np.exp(theta[2])),
                        float(np.exp(theta[3])), float(np.sqrt(2 * best.cost)), cov)


class VariogramModel(RegressorMixin, BaseEstimator):
    """Estimator wrapper around :func:`fit_variogram`; ``X`` holds lags in years."""

    def __init__(self, restarts=8, seed=0):
        self.restarts = restarts
        self.seed = seed

    def fit(self, X, y):
        t = np.asarray(X, dtype=float).reshape(-1)
        self.fit_ = fit_variogram(t, y, self.restarts, self.seed)
        return self

    def predict(self, X):
        check_is_fitted(self, "fit_")
        return self.fit_.rate(np.asarray(X, dtype=float).reshape(-1))


def load_variogram_csv(path):
    """Read ``lag_seconds, rate`` rows; lags are returned in years."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    header = [h.strip() for h in rows[0]] if rows else []
    if header != ["lag_seconds", "rate"]:
        raise ValidationError("variogram CSV header must be 'lag_seconds,rate'", field="variogram_csv")
    try:
        data = np.array([[float(x) for x in r] for r in rows[1:]])
    except ValueError as exc:
        raise ValidationError(f"non-numeric variogram entry: {exc}", field="variogram_csv") from exc
    return from_seconds(data[:, 0]), data[:, 1]


def realized_variogram(paths: PathSet, weights, lags):
    """Realized variance rate of ``weights' L`` at each step lag, averaged over paths."""
    w = np.asarray(weights, dtype=float)
    out = []
    for lag in lags:
        rc = realized_covariation(paths, int(lag))
        out.append(float(np.einsum("i,pij,j->p", w, rc.rate, w).mean()))
    return paths.grid.times[np.asarray(lags)] - paths.grid.times[0], np.array(out)


# ------------------------------------------------- quadratic GF strategy

def _partial_integral(U, B, k, T):
    """``int_0^T U t (t + B)^-k dt``."""
    x = T / B
    if x < SERIES_SWITCH:
        total, coef, j = 0.0, 1.0, 0
        while True:
            term = coef * x ** (j + 2) / (j + 2)
            total += term
            if abs(term) <= 1e-18 * abs(total) or j > 200:
                break
            coef *= (-k - j) / (j + 1)
            j += 1
        return U * B ** (2 - k) * total
    # int = B^(2-k) (E(2-k) - E(1-k)) with E(a) = ((1+x)^a - 1) / a
    ell = math.log1p(x)
    return U * B ** (2 - k) * (_power_integral(2 - k, ell) - _power_integral(1 - k, ell))


def _power_integral(alpha, ell):
    """``expm1(alpha ell) / alpha``; a second-order expansion near ``alpha = 0``."""
    if abs(alpha) < LIMIT_BAND:
        z = alpha * ell
        return ell * (1 + z / 2 + z * z / 6)
    return math.expm1(alpha * ell) / alpha


def v_of_T(fit: VariogramFit, T):
    """``v(T) = (1/T) int_0^T A_t dt`` for ``A_t = t (C + U / (t + B_fit)^k)``."""
    T = float(T)
    if not T > 0:
        raise ValidationError("T must be positive", field="T")
    if fit.U == 0:
        return fit.C * T / 2
    return fit.C * T / 2 + _partial_integral(fit.U, fit.B_fit, fit.k, T) / T


def _gap(fit, a, T):
    if not a > 0:
        raise ValidationError("effective rate a must be positive", field="a")
    return 1.0 - float(fit.rate(T)) / a


def optimal_c(fit: VariogramFit, a, T):
    """Log-growth maximizing coefficient ``(1 - A_T / (T a)) / (2 v(T))``."""
    v = v_of_T(fit, T)
    if not v > 0:
        raise ValidationError("v(T) must be positive", field="variogram")
    return _gap(fit, a, T) / (2 * v)


def growth_rate(fit: VariogramFit, a, T):
    """Maximal expected log-growth rate ``a (1 - A_T / (T a))^2 / (8 v(T))``."""
    return a * _gap(fit, a, T) ** 2 / (8 * v_of_T(fit, T))


def expected_log_with_drift(fit: VariogramFit, a, gamma_hat, c, T):
    """Expected log-growth rate of coefficient ``c`` with relative drift ``gamma_hat``."""
    g = _gap(fit, a, T) + gamma_hat * T / 2
    return 0.5 * a * (c * g - c * c * v_of_T(fit, T))


def optimal_c_with_drift(fit: VariogramFit, a, gamma_hat, T):
    return (_gap(fit, a, T) + gamma_hat * T / 2) / (2 * v_of_T(fit, T))


@dataclass(frozen=True)
class HorizonResult:
    T: float
    rate: float
    c: float
    scan_T: float
    scan_rate: float
    grid_spacing: float
    flat: bool = False
    at_boundary: bool = False

    def to_dict(self):
        return asdict(self)


def optimal_horizon(fit: VariogramFit, a, T_range, n_grid=1024) -> HorizonResult:
    """Maximize :func:`growth_rate` over ``T`` in ``T_range``.

    A log-spaced scan of ``n_grid`` points (at least 512) locates the best
    cell; golden-section search in ``log T`` on the neighbouring cells
    refines it. A scan whose total variation is below ``1e-14`` is reported
    as flat, at the lower boundary.
    """
    lo, hi = (float(x) for x in T_range)
    if not 0 < lo < hi:
        raise ValidationError("T_range must be a positive increasing interval", field="T_range")
    n_grid = max(check_positive_int(n_grid, "n_grid"), 512)
    u = np.linspace(math.log(lo), math.log(hi), n_grid)
    vals = np.array([growth_rate(fit, a, math.exp(x)) for x in u])
    i = int(np.argmax(vals))
    spacing = float(u[1] - u[0])
    if vals.max() - vals.min() < FLAT_TOL:
        return HorizonResult(lo, float(vals[0]), optimal_c(fit, a, lo), lo, float(vals[0]), spacing, flat=True)
    if i in (0, n_grid - 1):
        T = math.exp(u[i])
        return HorizonResult(T, float(vals[i]), optimal_c(fit, a, T), T, float(vals[i]), spacing, at_boundary=True)
    res = minimize_scalar(lambda x: -growth_rate(fit, a, math.exp(x)), bracket=(u[i - 1], u[i], u[i + 1]),
                          method="golden", options={"xtol": 1e-12})
    T, best = math.exp(res.x), -float(res.fun)
    if best < vals[i]:
        T, best = math.exp(u[i]), float(vals[i])
    return HorizonResult(T, best, optimal_c(fit, a, T), math.exp(u[i]), float(vals[i]), spacing)
