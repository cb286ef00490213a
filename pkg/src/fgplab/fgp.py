"""Functionally generated portfolios and their master-equation decomposition.

Given a numeraire with weights ``rho`` and wealth ``V^rho``, the portfolio
generated by ``H`` is ``pi = lam * rho + grad_l H(L^rho, F)`` with
``lam = 1 - 1' grad_l H``. Its log return relative to the numeraire
decomposes into the change in ``H``, a correction for the auxiliary
argument and the integral of the variance-capture rate ``h``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import as_finite, as_path_array
from .exceptions import EvaluationError, ValidationError
from .generating import GeneratingFunction
from .market import MarketSpec, PathSet, TimeGrid, covariance, relative_covariance
from .portfolio import PassivePortfolio, WeightProcess, excess_growth_rate, wealth_from_weights


@dataclass(frozen=True)
class AuxiliaryProcess:
    """Finite-variation auxiliary argument sampled on the grid, shape (n_paths, M + 1, k)."""

    values: np.ndarray
    finite_variation: bool = True

    def __post_init__(self):
        v = as_finite(self.values, "F")
        if v.ndim == 2:
            v = v[..., None]
        if v.ndim != 3:
            raise ValidationError("auxiliary process must be (paths, M+1, k)", field="F")
        object.__setattr__(self, "values", v)

    @property
    def k(self):
        return self.values.shape[-1]

    @property
    def total_variation(self):
        """Per-path total variation on the grid, summed over components."""
        return np.abs(np.diff(self.values, axis=1)).sum(axis=(1, 2))


@dataclass
class MasterEquationReport:
    """Per-path terms of the master equation (arrays of shape (n_paths,))."""

    lhs: np.ndarray
    delta_H: np.ndarray
    aux_correction: np.ndarray
    drift_integral: np.ndarray
    residual: np.ndarray
    covariance: str = "discrete"
    weights: np.ndarray | None = field(default=None, repr=False)
    lam: np.ndarray | None = field(default=None, repr=False)
    rho_weights: np.ndarray | None = field(default=None, repr=False)
    bankrupt: np.ndarray = field(default_factory=lambda: np.array([], dtype=int))

    @property
    def rhs(self):
        return self.delta_H + self.aux_correction + self.drift_integral

    def summary(self, tol=5e-3):
        r = np.abs(self.residual[np.isfinite(self.residual)])
        return {
            "n_paths": int(self.residual.shape[0]),
            "n_bankrupt": int(len(self.bankrupt)),
            "max_abs_residual": float(r.max()) if r.size else float("nan"),
            "mean_abs_residual": float(r.mean()) if r.size else float("nan"),
            "fraction_within_tol": float(np.mean(r < tol)) if r.size else 0.0,
            "tolerance": tol,
            "covariance": self.covariance,
        }


def resolve_numeraire(rho, paths: PathSet):
    """Return ``(log_wealth, weights)`` of a numeraire on ``paths``.

    ``rho`` may be a :class:`PassivePortfolio`, a :class:`WeightProcess`,
    the string ``"market"``, or an integer asset index (held alone, e.g.
    the money market).
    """
    if isinstance(rho, str):
        if rho != "market":
            raise ValidationError(f"unknown numeraire {rho!r}", field="numeraire")
        rho = PassivePortfolio.market(paths.logs[0, 0])
    if isinstance(rho, (int, np.integer)) and not isinstance(rho, bool):
        rho = WeightProcess.money_market(paths, int(rho))
    if isinstance(rho, PassivePortfolio):
        return rho.log_wealth(paths.logs), rho.weights(paths.logs)
    if isinstance(rho, WeightProcess):
        weights = np.broadcast_to(rho.weights, paths.logs.shape)
        return wealth_from_weights(paths, rho), weights
    raise ValidationError(f"unsupported numeraire {type(rho).__name__}", field="numeraire")


def _aux_values(F, shape):
    if F is None:
        return None
    v = F.values if isinstance(F, AuxiliaryProcess) else AuxiliaryProcess(F).values
    if v.shape[1] != shape[1] or v.shape[0] not in (1, shape[0]):
        raise ValidationError("auxiliary process is on a different grid", field="F")
    return np.broadcast_to(v, shape[:2] + v.shape[2:])


def fgp_weights(H: GeneratingFunction, Lrho, F, rho):
    """Weights ``lam * rho + grad_l H(L^rho, F)`` and the numeraire position ``lam``.

    ``rho`` is a :class:`WeightProcess` or an array broadcastable to ``Lrho``.
    """
    Lrho = as_path_array(Lrho, "Lrho")
    rho_w = rho.weights if isinstance(rho, WeightProcess) else np.asarray(rho, dtype=float)
    rho_w = np.broadcast_to(rho_w, Lrho.shape)
    f = _aux_values(F, Lrho.shape)
    if H.aux_dim and f is None:
        raise ValidationError("generating function needs an auxiliary process", field="F")
    g = H.grad(Lrho, f)
    bad = ~np.isfinite(g).all(axis=-1)
    if np.any(bad):
        step = int(np.argwhere(bad)[0][1])
        raise EvaluationError(f"nonfinite gradient at step {step}", step=step)
    lam = 1.0 - g.sum(axis=-1)
    pi = lam[..., None] * rho_w + g
    return WeightProcess(pi, label=type(H).__name__), lam


def variance_capture(H: GeneratingFunction, pi, lam, rho, a_rho, y, f=None):
    """Variance-capture rate ``h = g*_pi - lam g*_rho - sum_ij D2H_ij a^rho_ij / 2``.

    Excess growth is computed from ``a_rho``, which is legitimate by
    numeraire invariance.
    """
    hess = H.hess(y, f)
    curvature = 0.5 * np.einsum("...ij,...ij->...", hess, a_rho)
    return excess_growth_rate(pi, a_rho) - lam * excess_growth_rate(rho, a_rho) - curvature


def discrete_excess_growth(w, x):
    """One-step excess growth ``log(w' e^x) - w'x`` of weights ``w`` over log increments ``x``."""
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.log(np.einsum("...i,...i->...", w, np.exp(x))) - np.einsum("...i,...i->...", w, x)


def _trapezoid_aux(grad_f, F):
    dF = np.diff(F, axis=1)
    mid = 0.5 * (grad_f[:, 1:] + grad_f[:, :-1])
    return -np.einsum("pmk,pmk->p", mid, dF)


def master_equation(H: GeneratingFunction, paths: PathSet, rho="market", F=None, covariance_mode="discrete",
                    spec: MarketSpec | None = None, on_bankruptcy="raise") -> MasterEquationReport:
    """Evaluate both sides of the master equation on every path.

    The left side comes from the discrete self-financing wealth of the
    generated weights. On the right, ``drift_integral`` sums per-step
    variance capture over the increments ``x = dL^rho``:

    ``"discrete"``
        excess growth taken as ``log(w' e^x) - w'x`` and curvature as
        ``x' D2H x / 2``. The residual is then exactly the third-order
        Taylor remainder of ``H`` and vanishes for linear and quadratic ``H``.
    ``"realized"``
        excess growth from the realized covariance ``x x'``.
    ``"model"``
        model covariance from ``spec``, trapezoidal rule in time.

    The auxiliary correction uses the trapezoidal rule over the increments
    of ``F``.
    """
    log_vr, rho_w = resolve_numeraire(rho, paths)
    Lr = paths.logs - log_vr[..., None]
    f = _aux_values(F, Lr.shape)
    pi, lam = fgp_weights(H, Lr, f, rho_w)
    if on_bankruptcy == "mask":
        log_vpi, bankrupt = wealth_from_weights(paths, pi, on_bankruptcy="mask")
    else:
        log_vpi, bankrupt = wealth_from_weights(paths, pi), np.array([], dtype=int)
    lhs = (log_vpi[:, -1] - log_vpi[:, 0]) - (log_vr[:, -1] - log_vr[:, 0])
    hv = H.value(Lr, f)
    delta_H = hv[:, -1] - hv[:, 0]
    if H.aux_dim:
        aux = _trapezoid_aux(H.grad_aux(Lr, f), f)
    else:
        aux = np.zeros(paths.n_paths)
    w = pi.weights
    if covariance_mode == "discrete":
        x = np.diff(Lr, axis=1)
        fl = None if f is None else f[:, :-1]
        curv = 0.5 * np.einsum("pmi,pmij,pmj->pm", x, H.hess(Lr[:, :-1], fl), x)
        h_dt = (discrete_excess_growth(w[:, :-1], x) - lam[:, :-1] * discrete_excess_growth(rho_w[:, :-1], x)
                - curv)
        drift = h_dt.sum(axis=1)
    elif covariance_mode == "realized":
        x = np.diff(Lr, axis=1)
        a_dt = x[..., :, None] * x[..., None, :]
        fl = None if f is None else f[:, :-1]
        h_dt = variance_capture(H, w[:, :-1], lam[:, :-1], rho_w[:, :-1], a_dt, Lr[:, :-1], fl)
        drift = h_dt.sum(axis=1)
    elif covariance_mode == "model":
        if spec is None:
            raise ValidationError("model covariance needs the market spec", field="spec")
        if spec.is_constant:
            a = covariance(spec)
        else:
            a = np.stack([covariance(spec, t) for t in paths.grid.times])[None]
        a_rho = relative_covariance(a, rho_w)
        h = variance_capture(H, w, lam, rho_w, a_rho, Lr, f)
        drift = np.einsum("pm,m->p", 0.5 * (h[:, 1:] + h[:, :-1]), paths.grid.dt)
    else:
        raise ValidationError(f"unknown covariance mode {covariance_mode!r}", field="covariance")
    residual = lhs - (delta_H + aux + drift)
    return MasterEquationReport(lhs, delta_H, aux, drift, residual, covariance_mode,
                                weights=w, lam=lam, rho_weights=rho_w, bankrupt=bankrupt)


def lemma_residuals(pi: WeightProcess, rho, paths: PathSet):
    """Per-step residuals of the two relative-return identities.

    ``first``: ``d log(V^pi/V^rho) - pi' dL^rho - g*_pi dt`` with ``g*_pi dt``
    from the realized step covariance. ``second``: ``sum_i rho_i dX^rho_i / X^rho_i``.
    Both arrays have shape (n_paths, M).
    """
    log_vr, rho_w = resolve_numeraire(rho, paths)
    Lr = paths.logs - log_vr[..., None]
    x = np.diff(Lr, axis=1)
    w = np.broadcast_to(pi.weights, paths.logs.shape)[:, :-1]
    log_vpi = wealth_from_weights(paths, pi)
    rel = np.diff(log_vpi - log_vr, axis=1)
    a_dt = x[..., :, None] * x[..., None, :]
    first = rel - np.einsum("pmi,pmi->pm", w, x) - excess_growth_rate(w, a_dt)
    second = np.einsum("pmi,pmi->pm", rho_w[:, :-1], np.expm1(x))
    return {"first": first, "second": second}


def hitting_switch(Lrho, level, asset=0):
    """Switch indicator ``1{t <= tau}`` for ``tau`` the first grid time at which
    ``|L^rho_asset - L^rho_asset(0)| >= level``, ramped to zero over one step.

    Returns ``(AuxiliaryProcess, tau_index)``; ``tau_index`` is -1 on paths
    that never hit (those keep the indicator at one).
    """
    Lrho = as_path_array(Lrho, "Lrho")
    dev = np.abs(Lrho[:, :, asset] - Lrho[:, :1, asset]) >= level
    dev[:, -1] = False
    hit = dev.any(axis=1)
    tau = np.where(hit, np.argmax(dev, axis=1), -1)
    m = np.arange(Lrho.shape[1])
    F = np.where(hit[:, None] & (m[None, :] > tau[:, None]), 0.0, 1.0)
    return AuxiliaryProcess(F[..., None]), tau


class FunctionallyGeneratedPortfolio(TransformerMixin, BaseEstimator):
    """Estimator-style wrapper: ``fit`` fixes the numeraire, ``transform``
    maps log-price paths to the generated weights.

    Parameters
    ----------
    generating_function : GeneratingFunction
    numeraire : {"market"}, int, PassivePortfolio or array-like
        ``"market"`` is the capitalization-weighted buy-and-hold portfolio
        fixed from the first observation seen by ``fit``; an int holds
        that asset alone (e.g. the money market); an array gives constant
        rebalanced weights.
    covariance : {"discrete", "realized", "model"}
        How :meth:`master_equation` accumulates the drift term.
    """

    def __init__(self, generating_function=None, numeraire="market", covariance="discrete"):
        self.generating_function = generating_function
        self.numeraire = numeraire
        self.covariance = covariance

    def _paths(self, X, times=None):
        if isinstance(X, PathSet):
            return X
        logs = as_path_array(X, "X")
        grid = TimeGrid(np.asarray(times, dtype=float)) if times is not None else \
            TimeGrid(np.arange(logs.shape[1], dtype=float))
        return PathSet(grid, logs, origin="ingested")

    def _numeraire_for(self, paths):
        nm = self.numeraire_
        if isinstance(nm, np.ndarray):
            return WeightProcess.constant(nm, paths)
        return nm

    def fit(self, X, y=None):
        if not isinstance(self.generating_function, GeneratingFunction):
            raise ValidationError("generating_function must be a GeneratingFunction", field="generating_function")
        paths = self._paths(X)
        if paths.n != self.generating_function.n:
            raise ValidationError("asset count differs from the generating function's", field="X")
        nm = self.numeraire
        if isinstance(nm, str):
            if nm != "market":
                raise ValidationError(f"unknown numeraire {nm!r}", field="numeraire")
            nm = PassivePortfolio.market(paths.logs[0, 0])
        elif not isinstance(nm, (int, np.integer, PassivePortfolio, WeightProcess)):
            nm = np.asarray(nm, dtype=float)
        self.numeraire_ = nm
        self.n_assets_ = paths.n
        return self

    def transform(self, X):
        check_is_fitted(self, "numeraire_")
        squeeze = not isinstance(X, PathSet) and np.ndim(X) == 2
        paths = self._paths(X)
        if self.generating_function.aux_dim:
            raise ValidationError("use master_equation for generating functions with auxiliary arguments",
                                  field="generating_function")
        log_vr, rho_w = resolve_numeraire(self._numeraire_for(paths), paths)
        pi, _ = fgp_weights(self.generating_function, paths.logs - log_vr[..., None], None, rho_w)
        return pi.weights[0] if squeeze else pi.weights

    def master_equation(self, X, F=None, spec=None, times=None):
        check_is_fitted(self, "numeraire_")
        paths = self._paths(X, times)
        return master_equation(self.generating_function, paths, self._numeraire_for(paths), F,
                               self.covariance, spec)
