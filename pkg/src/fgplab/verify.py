"""Numerical verification studies.

Every identity is checked against the discrete self-financing wealth of
the portfolios involved, never against the master equation itself.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ._validation import check_positive_int, check_weights
from .exceptions import ValidationError
from .fgp import master_equation, resolve_numeraire
from .generating import GeneratingFunction, LinearGF, PassiveGF
from .market import MarketSpec, TimeGrid, covariance, ensemble_mean, simulate_paths
from .portfolio import PassivePortfolio, WeightProcess, excess_growth_rate, q_mirror, wealth_from_weights

EXACT_TOL = 1e-10
ORDER_BAND = (0.7, 1.3)


@dataclass
class ConvergenceReport:
    """Residual statistics along a halving ``dt`` ladder (coarse to fine)."""

    dt: list
    max_abs: list
    mean_abs: list
    orders: list
    order: float
    n_bankrupt: list
    passed: bool
    exact: bool
    n_paths: int
    seed: int
    band: tuple = ORDER_BAND
    per_path: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if any(b >= a for a, b in zip(self.dt, self.dt[1:])):
            raise ValidationError("dt ladder must be strictly decreasing", field="dt_ladder")

    @property
    def factors(self):
        m = self.mean_abs
        return [a / b if b > 0 else math.inf for a, b in zip(m, m[1:])]

    def to_dict(self):
        d = asdict(self)
        d.pop("per_path")
        d["factors"] = self.factors
        return d


def _ladder_factors(dt_ladder, horizon):
    dts = [float(x) for x in dt_ladder]
    if len(dts) < 3:
        raise ValidationError("convergence study needs at least 3 dt values", field="dt_ladder")
    dts = sorted(dts, reverse=True)
    for a, b in zip(dts, dts[1:]):
        if abs(a / b - 2.0) > 1e-9:
            raise ValidationError("each dt must halve the previous one", field="dt_ladder")
    steps = horizon / dts[-1]
    if abs(steps - round(steps)) > 1e-6 * steps:
        raise ValidationError("horizon is not a whole number of finest steps", field="dt_ladder")
    return dts, int(round(steps)), [2 ** (len(dts) - 1 - i) for i in range(len(dts))]


def numeraire_from_kind(kind, paths, spec: MarketSpec | None = None):
    """Map a numeraire description onto something :func:`resolve_numeraire` accepts.

    ``kind`` may be ``"market"``, ``"money-market"`` (needs ``spec``), an
    asset index, a :class:`PassivePortfolio`, or constant weights.
    """
    if isinstance(kind, str):
        if kind == "money-market":
            if spec is None or spec.money_market_index is None:
                raise ValidationError("market has no money-market asset", field="numeraire")
            return int(spec.money_market_index)
        return kind
    if isinstance(kind, (int, np.integer, PassivePortfolio, WeightProcess)):
        return kind
    return WeightProcess.constant(kind, paths)


def convergence_study(spec: MarketSpec, H: GeneratingFunction, rho_kind="market", dt_ladder=(4e-4, 2e-4, 1e-4),
                      n_paths=200, seed=0, horizon=1.0, aux=None, covariance_mode="discrete",
                      band=ORDER_BAND) -> ConvergenceReport:
    """Master-equation residuals on one coupled ensemble at every ``dt`` of the ladder.

    Paths are simulated once at the finest step and subsampled, so every
    rung sees the same Brownian paths. ``aux`` builds the auxiliary process
    from ``(paths, Lrho)`` for generating functions that need one. Paths
    that go bankrupt are excluded and counted per rung. The study passes
    when every residual is below ``1e-10`` (exact case) or the fitted slope
    of ``log mean|residual|`` against ``log dt`` lies in ``band``.
    """
    dts, steps, factors = _ladder_factors(dt_ladder, horizon)
    fine = simulate_paths(spec, TimeGrid.uniform(horizon, steps), n_paths, seed)
    max_abs, mean_abs, n_bad, per_path = [], [], [], {}
    for dt, k in zip(dts, factors):
        paths = fine.coarsen(k)
        rho = numeraire_from_kind(rho_kind, paths, spec)
        F = None
        if aux is not None:
            log_vr, _ = resolve_numeraire(rho, paths)
            F = aux(paths, paths.logs - log_vr[..., None])
        rep = master_equation(H, paths, rho, F, covariance_mode, spec, on_bankruptcy="mask")
        r = np.abs(rep.residual[np.isfinite(rep.residual)])
        max_abs.append(float(r.max()) if r.size else math.nan)
        mean_abs.append(ensemble_mean(r) if r.size else math.nan)
        n_bad.append(int(len(rep.bankrupt)))
        per_path[dt] = rep
    exact = bool(np.all(np.asarray(max_abs) < EXACT_TOL))
    m = np.asarray(mean_abs)
    with np.errstate(divide="ignore", invalid="ignore"):
        orders = np.log2(m[:-1] / m[1:]).tolist()
        order = float(np.polyfit(np.log2(dts), np.log2(m), 1)[0]) if np.all(m > 0) else math.nan
    passed = exact or bool(band[0] <= order <= band[1])
    return ConvergenceReport(dts, max_abs, mean_abs, orders, order, n_bad, passed, exact, int(n_paths), int(seed),
                             tuple(band), per_path)


def scenario_compare(spec: MarketSpec, p, horizon=1.0, steps=1000, n_paths=4000, seed=0, eps=(0.2, 0.1, 0.05),
                     tol=5e-3):
    """Constant weights ``p`` against buy-and-hold from ``p`` on each path.

    The discrete wealth gap ``log V^pi_T - log V^pt_T`` is compared with
    ``H(L_T) - H(L_0) - (Ht(L_T) - Ht(L_0)) + T g*_p`` for the linear and
    passive generating functions. On the paths where the passive weights
    stay within ``eps`` of ``p`` throughout, the shortfall
    ``xi = max(0, T g*_p - min excess)`` is reported for each ``eps``.
    """
    if not spec.is_constant:
        raise ValidationError("scenario analysis needs constant coefficients", field="market")
    p = check_weights(np.asarray(p, dtype=float), "p")
    if p.shape != (spec.n,) or np.any(p <= 0):
        raise ValidationError("p must be strictly positive with one entry per asset", field="p")
    a = covariance(spec)
    u = float(np.linalg.eigvalsh(a)[0])
    if not u > 0:
        raise ValidationError("covariance is not uniformly elliptic", field="market")
    paths = simulate_paths(spec, TimeGrid.uniform(horizon, check_positive_int(steps, "steps")), n_paths, seed)
    log_pi = wealth_from_weights(paths, WeightProcess.constant(p, paths))
    passive = PassivePortfolio.from_initial_weights(p, spec.L0)
    log_pt = passive.log_wealth(paths.logs)
    lhs = (log_pi[:, -1] - log_pi[:, 0]) - (log_pt[:, -1] - log_pt[:, 0])
    H, Ht = LinearGF(p), PassiveGF(p, spec.L0)
    L0, LT = paths.logs[:, 0], paths.logs[:, -1]
    g_star = float(excess_growth_rate(p, a))
    rhs = H.value(LT) - H.value(L0) - (Ht.value(LT) - Ht.value(L0)) + horizon * g_star
    residual = lhs - rhs
    dist = np.linalg.norm(passive.weights(paths.logs) - p, axis=-1).max(axis=1)
    cond = []
    for e in sorted(eps, reverse=True):
        mask = dist < e
        count = int(mask.sum())
        if count == 0:
            cond.append({"eps": float(e), "count": 0, "inconclusive": True, "min_excess": math.nan,
                         "xi": math.nan, "bound": horizon * g_star})
            continue
        m = float(lhs[mask].min())
        cond.append({"eps": float(e), "count": count, "inconclusive": False, "min_excess": m,
                     "mean_excess": ensemble_mean(lhs[mask]), "xi": max(0.0, horizon * g_star - m),
                     "bound": horizon * g_star})
    xis = [c["xi"] for c in cond if not c["inconclusive"]]
    report = {
        "horizon": horizon, "dt": horizon / steps, "n_paths": int(n_paths), "seed": int(seed),
        "excess_growth": g_star, "ellipticity": u, "bound": horizon * g_star, "elliptic_bound": horizon * u,
        "identity_max_abs_residual": float(np.abs(residual).max()),
        "identity_passed": bool(np.abs(residual).max() < tol), "tolerance": tol,
        "conditioning": cond,
        "xi_monotone": bool(all(b <= a + 1e-12 for a, b in zip(xis, xis[1:]))),
    }
    per_path = {"path": np.arange(n_paths), "lhs": lhs, "rhs": rhs, "residual": residual, "max_distance": dist}
    return report, per_path


def _discounted_growth(spec: MarketSpec, w):
    """Drift ``g^_pi`` and variance ``sigma_pi^2`` of discounted log wealth for constant weights."""
    a = covariance(spec)
    mm = spec.money_market_index
    gam = spec.gamma - spec.gamma[mm]
    return float(w @ gam + excess_growth_rate(w, a)), float(w @ a @ w)


def mirror_checks(spec: MarketSpec, pi, q=(-1.0, 0.5, 2.0), dt=1e-4, n_paths=200, seed=0, horizon=1.0, tol=5e-3):
    """Pathwise check of ``log V^q = q log V + q(1 - q)/2 <log V>`` against the money market.

    ``pi`` is a vector of constant weights (money market included). Wealth
    of both ``pi`` and each ``q``-mirror comes from the discrete oracle and
    ``<log V>`` from the squared increments of the oracle path of ``pi``.
    """
    if spec.money_market_index is None:
        raise ValidationError("mirror identities need a money-market asset", field="market")
    mm = int(spec.money_market_index)
    w = check_weights(np.asarray(pi, dtype=float), "pi")
    steps = int(round(horizon / dt))
    paths = simulate_paths(spec, TimeGrid.uniform(horizon, steps), n_paths, seed)
    log_mm = paths.logs[:, :, mm]
    wp = WeightProcess.constant(w, paths)
    rho = WeightProcess.money_market(paths, mm)
    lv = wealth_from_weights(paths, wp) - log_mm
    qv = (np.diff(lv, axis=1) ** 2).sum(axis=1)
    g_pi, s2_pi = _discounted_growth(spec, w)
    results, per_path = [], {"path": np.arange(n_paths)}
    for qv_ in np.atleast_1d(q):
        qq = float(qv_)
        lq, bad = wealth_from_weights(paths, q_mirror(wp, rho, qq), on_bankruptcy="mask")
        lq = lq - log_mm
        res = lq[:, -1] - (qq * lv[:, -1] + 0.5 * qq * (1 - qq) * qv)
        ok = np.isfinite(res)
        r = np.abs(res[ok])
        results.append({
            "q": qq, "max_abs_residual": float(r.max()) if r.size else math.nan,
            "mean_abs_residual": ensemble_mean(r) if r.size else math.nan,
            "n_bankrupt": int(len(bad)), "passed": bool(r.size and r.max() < tol),
            "drift_estimate": ensemble_mean(lq[ok, -1]) / horizon if ok.any() else math.nan,
            "drift_theory": qq * g_pi + 0.5 * qq * (1 - qq) * s2_pi,
        })
        per_path[f"residual_q{qq:g}"] = res
    report = {"dt": dt, "horizon": horizon, "n_paths": int(n_paths), "seed": int(seed), "tolerance": tol,
              "pi_drift": g_pi, "pi_variance": s2_pi, "checks": results}
    return report, per_path


def mirror_decay_mc(sigma, gamma, T=200.0, n_paths=1000, seed=0, dt=1.0 / 250.0, chunk=50):
    """Long-horizon Monte Carlo of a stock and its mirror against a zero-rate money market.

    The stock (drift ``gamma`` of its log price, volatility ``sigma``) is
    held directly; its mirror holds ``-1`` in the stock and ``2`` in cash,
    rebalanced every ``dt``. Reports the ensemble mean of
    ``(log V_T + log V~_T) / T`` against ``-sigma^2``, the fraction of paths
    where that statistic is below ``-sigma^2 / 2``, and the fraction where
    at least one of the two has lost wealth (``min(log V_T, log V~_T) < 0``).
    """
    sigma, gamma = float(sigma), float(gamma)
    if sigma < 0:
        raise ValidationError("sigma must be nonnegative", field="sigma")
    spec = MarketSpec.from_covariance([0.0, gamma], [[0.0, 0.0], [0.0, sigma ** 2]], [0.0, 0.0], 0)
    steps = int(round(T / dt))
    grid = TimeGrid.uniform(T, steps)
    stat = np.empty(n_paths)
    lv_pi = np.empty(n_paths)
    lv_m = np.empty(n_paths)
    bankrupt = 0
    for start in range(0, n_paths, chunk):
        m = min(chunk, n_paths - start)
        paths = simulate_paths(spec, grid, m, seed, first=start)
        x = np.diff(paths.logs[:, :, 1], axis=1)
        lv_pi[start:start + m] = paths.logs[:, -1, 1] - paths.logs[:, 0, 1]
        g = 2.0 - np.exp(x)
        broke = ~(g > 0).all(axis=1)
        bankrupt += int(broke.sum())
        with np.errstate(invalid="ignore", divide="ignore"):
            lm = np.where(broke, -np.inf, np.log(np.where(g > 0, g, 1.0)).sum(axis=1))
        lv_m[start:start + m] = lm
    stat = (lv_pi + lv_m) / T
    finite = np.isfinite(stat)
    report = {
        "sigma": sigma, "gamma": gamma, "T": T, "dt": dt, "n_paths": int(n_paths), "seed": int(seed),
        "mean_statistic": ensemble_mean(stat[finite]) if finite.any() else math.nan,
        "limit": -sigma ** 2,
        "fraction_below_half_limit": float(np.mean(stat < -0.5 * sigma ** 2)),
        "fraction_union_event": float(np.mean(np.minimum(lv_pi, lv_m) < 0)),
        "n_bankrupt": bankrupt,
        "hypothesis_violated": bool(sigma == 0),
    }
    per_path = {"path": np.arange(n_paths), "log_V": lv_pi, "log_V_mirror": lv_m, "statistic": stat}
    return report, per_path
