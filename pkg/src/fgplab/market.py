"""Ito market specification, path simulation and covariance utilities.

Log prices follow ``dL = gamma dt + sigma dW`` with ``a = sigma sigma'``.
Coefficients are either constant or piecewise constant in time.
"""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime
from typing import NamedTuple

import numpy as np

from . import units
from ._validation import as_finite, as_path_array, check_positive_int, check_weights
from .exceptions import DegenerateNumeraireError, ValidationError

PSD_TOL = 1e-12


def _sqrt_psd(a, name="covariance"):
    a = np.asarray(a, dtype=float)
    if not np.allclose(a, np.swapaxes(a, -1, -2), rtol=0, atol=1e-14 * max(1.0, np.abs(a).max())):
        raise ValidationError(f"{name} must be symmetric", field=name)
    evals, evecs = np.linalg.eigh(a)
    if np.min(evals) < -PSD_TOL * max(1.0, np.abs(evals).max()):
        raise ValidationError(f"{name} is not positive semidefinite (min eigenvalue {np.min(evals):.3g})",
                              field=name)
    return evecs * np.sqrt(np.clip(evals, 0.0, None))[..., None, :]


@dataclass(frozen=True)
class MarketSpec:
    """Drift and volatility of an n-asset Ito market on log prices.

    ``gamma`` is (n,) or (K, n) and ``sigma`` is (n, d) or (K, n, d); with K
    pieces, ``coef_times`` gives the left endpoint of each piece (first = 0).
    """

    gamma: np.ndarray
    sigma: np.ndarray
    L0: np.ndarray
    money_market_index: int | None = None
    coef_times: np.ndarray | None = None

    def __post_init__(self):
        gamma = as_finite(self.gamma, "gamma", ndim=(1, 2))
        sigma = as_finite(self.sigma, "sigma", ndim=(2, 3))
        L0 = as_finite(self.L0, "L0", ndim=1)
        n = L0.shape[0]
        if gamma.shape[-1] != n or sigma.shape[-2] != n:
            raise ValidationError("gamma, sigma and L0 disagree on the asset count", field="sigma")
        if sigma.shape[-1] < n:
            raise ValidationError(f"Brownian dimension d={sigma.shape[-1]} must be >= n={n}", field="d")
        pieces = {g.shape[0] for g in (gamma, sigma) if g.ndim == (2 if g is gamma else 3)}
        if pieces:
            if len(pieces) > 1:
                raise ValidationError("gamma and sigma have different numbers of pieces", field="coef_times")
            k = pieces.pop()
            times = as_finite(self.coef_times if self.coef_times is not None else np.zeros(1), "coef_times", 1)
            if times.shape[0] != k or times[0] != 0 or np.any(np.diff(times) <= 0):
                raise ValidationError("coef_times must start at 0, increase, and match the piece count",
                                      field="coef_times")
            if gamma.ndim == 1:
                gamma = np.broadcast_to(gamma, (k, n)).copy()
            if sigma.ndim == 2:
                sigma = np.broadcast_to(sigma, (k,) + sigma.shape).copy()
            object.__setattr__(self, "coef_times", times)
        mm = self.money_market_index
        if mm is not None:
            if not 0 <= mm < n:
                raise ValidationError("money_market_index out of range", field="money_market_index")
            if np.any(sigma[..., mm, :] != 0):
                raise ValidationError("money-market row of sigma must be zero", field="sigma")
        _sqrt_psd(sigma @ np.swapaxes(sigma, -1, -2))
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "L0", L0)

    @classmethod
    def from_covariance(cls, gamma, a, L0, money_market_index=None):
        """Build a spec from a covariance matrix instead of a volatility matrix."""
        a = as_finite(a, "covariance", ndim=2)
        sigma = _sqrt_psd(a)
        if money_market_index is not None:
            sigma[money_market_index] = 0.0
        return cls(gamma=gamma, sigma=sigma, L0=L0, money_market_index=money_market_index)

    @classmethod
    def from_dict(cls, d):
        """Parse the JSON spec-file layout (keys n, d, gamma, sigma, ...)."""
        if "sigma" in d:
            sigma = np.asarray(d["sigma"], dtype=float)
        elif "covariance" in d:
            return cls.from_covariance(d["gamma"], d["covariance"], d["L0"], d.get("money_market_index"))
        else:
            raise ValidationError("market spec needs 'sigma' or 'covariance'", field="sigma")
        spec = cls(gamma=d["gamma"], sigma=sigma, L0=d["L0"],
                   money_market_index=d.get("money_market_index"), coef_times=d.get("coef_times"))
        if "n" in d and d["n"] != spec.n:
            raise ValidationError(f"n={d['n']} but arrays describe {spec.n} assets", field="n")
        if "d" in d and d["d"] != spec.d:
            raise ValidationError(f"d={d['d']} but sigma has {spec.d} columns", field="d")
        return spec

    @property
    def n(self):
        return self.L0.shape[0]

    @property
    def d(self):
        return self.sigma.shape[-1]

    @property
    def is_constant(self):
        return self.gamma.ndim == 1

    def piece_index(self, t):
        """Index of the coefficient piece in force at time(s) ``t``."""
        if self.is_constant:
            return np.zeros(np.shape(t), dtype=int)
        return np.searchsorted(self.coef_times, t, side="right") - 1

    def coefficients(self, t):
        """(gamma_t, sigma_t) in force at time ``t``."""
        if self.is_constant:
            return self.gamma, self.sigma
        k = int(self.piece_index(t))
        return self.gamma[k], self.sigma[k]


def covariance(spec: MarketSpec, t=0.0):
    """Instantaneous covariance ``a_t = sigma_t sigma_t'``."""
    _, sigma = spec.coefficients(t)
    a = sigma @ sigma.T
    return 0.5 * (a + a.T)


def relative_covariance(a, rho):
    """Covariance of log prices relative to the numeraire with weights ``rho``.

    ``a^rho_ij = a_ij - [a rho]_i - [a rho]_j + rho' a rho``. Broadcasts over
    leading axes of ``rho`` (and of ``a`` if it has any).
    """
    rho = check_weights(rho, "rho", tol=1e-12)
    a = np.asarray(a, dtype=float)
    arho = np.einsum("...ij,...j->...i", a, rho)
    arr = np.einsum("...i,...i->...", rho, arho)
    return a - arho[..., :, None] - arho[..., None, :] + arr[..., None, None]


@dataclass(frozen=True)
class TimeGrid:
    """Time points ``t_0 = 0 < t_1 < ... < t_M`` (years)."""

    times: np.ndarray

    def __post_init__(self):
        t = as_finite(self.times, "times", ndim=1)
        if t.shape[0] < 2 or t[0] != 0 or np.any(np.diff(t) <= 0):
            raise ValidationError("time grid must start at 0 and be strictly increasing", field="times")
        object.__setattr__(self, "times", t)

    @classmethod
    def uniform(cls, horizon, steps):
        steps = check_positive_int(steps, "steps")
        if not horizon > 0:
            raise ValidationError("horizon must be positive", field="horizon")
        t = np.linspace(0.0, horizon, steps + 1)
        t[-1] = horizon
        return cls(t)

    @property
    def M(self):
        return self.times.shape[0] - 1

    @property
    def T(self):
        return float(self.times[-1])

    @property
    def dt(self):
        """Per-step increments, shape (M,)."""
        return np.diff(self.times)

    @property
    def is_uniform(self):
        d = self.dt
        return bool(np.allclose(d, d[0], rtol=1e-9, atol=0))

    def coarsen(self, factor):
        factor = check_positive_int(factor, "factor")
        if self.M % factor:
            raise ValidationError(f"step count {self.M} not divisible by {factor}", field="factor")
        return TimeGrid(self.times[::factor])


@dataclass(frozen=True)
class PathSet:
    """Log-price paths, ``logs`` of shape (n_paths, M + 1, n)."""

    grid: TimeGrid
    logs: np.ndarray
    seed: int | None = None
    origin: str = "simulated"
    names: tuple = field(default=())

    def __post_init__(self):
        logs = as_path_array(self.logs)
        if logs.shape[1] != self.grid.M + 1:
            raise ValidationError("logs and grid disagree on the step count", field="logs")
        object.__setattr__(self, "logs", logs)
        if not self.names:
            object.__setattr__(self, "names", tuple(f"asset{i + 1}" for i in range(logs.shape[2])))

    @property
    def n_paths(self):
        return self.logs.shape[0]

    @property
    def n(self):
        return self.logs.shape[2]

    @property
    def prices(self):
        return np.exp(self.logs)

    def coarsen(self, factor):
        """Subsample every ``factor``-th time point (exact for the same Brownian path)."""
        return PathSet(self.grid.coarsen(factor), self.logs[:, ::factor], self.seed, self.origin, self.names)

    def subset(self, assets):
        assets = list(assets)
        return PathSet(self.grid, self.logs[:, :, assets], self.seed, self.origin,
                       tuple(self.names[i] for i in assets))


def path_generator(seed, path_index):
    """Counter-based substream for one path: Philox keyed by (seed, path)."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(path_index),))
    return np.random.Generator(np.random.Philox(ss))


def n_workers():
    """Worker cap from ``FGPLAB_THREADS`` (default 1)."""
    try:
        return max(1, int(os.environ.get("FGPLAB_THREADS", "1")))
    except ValueError:
        return 1


def simulate_paths(spec: MarketSpec, grid: TimeGrid, n_paths, seed, first=0) -> PathSet:
    """Euler-Maruyama on log prices, one Philox substream per path.

    Exact in distribution for constant coefficients. Path ``k`` depends only
    on ``(spec, grid, seed, k)``, never on ``n_paths``, so an ensemble can be
    produced in chunks by advancing ``first``.
    """
    n_paths = check_positive_int(n_paths, "n_paths")
    if seed is None:
        raise ValidationError("seed is required for simulation", field="seed")
    dt = grid.dt
    sqdt = np.sqrt(dt)
    if spec.is_constant:
        drift = np.outer(dt, spec.gamma)
    else:
        k = spec.piece_index(grid.times[:-1])
        drift = spec.gamma[k] * dt[:, None]

    def one(p):
        z = path_generator(seed, p).standard_normal((grid.M, spec.d))
        if spec.is_constant:
            shock = (z * sqdt[:, None]) @ spec.sigma.T
        else:
            shock = np.einsum("mij,mj->mi", spec.sigma[k], z * sqdt[:, None])
        out = np.empty((grid.M + 1, spec.n))
        out[0] = spec.L0
        np.cumsum(drift + shock, axis=0, out=out[1:])
        out[1:] += spec.L0
        return out

    workers = min(n_workers(), n_paths)
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            logs = np.stack(list(ex.map(one, range(first, first + n_paths))))
    else:
        logs = np.stack([one(p) for p in range(first, first + n_paths)])
    return PathSet(grid, logs, seed=int(seed), origin="simulated")


class RealizedCovariation(NamedTuple):
    total: np.ndarray    # (n_paths, n, n) sum of lagged outer products
    rate: np.ndarray     # total / elapsed, per year
    elapsed: float       # years covered by the increments used


def realized_covariation(paths: PathSet, lag) -> RealizedCovariation:
    """Sum of non-overlapping ``lag``-step increments ``dL dL'`` per path."""
    lag = check_positive_int(lag, "lag")
    if lag > paths.grid.M:
        raise ValidationError(f"lag {lag} exceeds step count {paths.grid.M}", field="lag")
    idx = np.arange(0, paths.grid.M + 1, lag)
    inc = np.diff(paths.logs[:, idx], axis=1)
    total = np.einsum("pmi,pmj->pij", inc, inc)
    elapsed = float(paths.grid.times[idx[-1]] - paths.grid.times[0])
    return RealizedCovariation(total, total / elapsed, elapsed)


def to_numeraire(paths: PathSet, rho_wealth, log=False):
    """Relative log prices ``L^rho = L - log V^rho``.

    ``rho_wealth`` is (n_paths, M + 1) or (M + 1,); with ``log=True`` it is
    already log wealth.
    """
    lw = np.asarray(rho_wealth, dtype=float) if log else numeraire_log_wealth_checked(rho_wealth)
    if lw.ndim == 1:
        lw = np.broadcast_to(lw, paths.logs.shape[:2])
    if lw.shape != paths.logs.shape[:2]:
        raise ValidationError("numeraire series must be (n_paths, M+1)", field="rho_wealth")
    if not np.all(np.isfinite(lw)):
        raise DegenerateNumeraireError("numeraire wealth is nonpositive or nonfinite")
    return paths.logs - lw[..., None]


def numeraire_log_wealth_checked(wealth):
    """log of a wealth series, raising on nonpositive entries."""
    w = np.asarray(wealth, dtype=float)
    if np.any(~(w > 0)):
        m = int(np.argwhere(~(w > 0))[0][-1])
        raise DegenerateNumeraireError(f"numeraire wealth nonpositive at step {m}")
    return np.log(w)


# ---------------------------------------------------------------- file I/O

def _parse_time(text):
    try:
        return float(text), "seconds"
    except ValueError:
        pass
    try:
        return datetime.fromisoformat(text.strip()), "iso"
    except ValueError as exc:
        raise ValidationError(f"unparseable time {text!r}", field="time") from exc


def load_price_csv(path) -> PathSet:
    """Ingest ``time,<asset names...>`` rows of strictly positive prices.

    Times are seconds or ISO-8601; elapsed seconds are converted to trading
    years. Logs are taken on load.
    """
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0].strip().lower() != "time" or len(rows[0]) < 2:
        raise ValidationError("price CSV must start with header 'time,<assets...>'", field="input_csv")
    names = tuple(h.strip() for h in rows[0][1:])
    body = [r for r in rows[1:] if r and any(c.strip() for c in r)]
    if len(body) < 2:
        raise ValidationError("price CSV needs at least two rows", field="input_csv")
    parsed = [_parse_time(r[0]) for r in body]
    kinds = {k for _, k in parsed}
    if len(kinds) != 1:
        raise ValidationError("mixed time formats in price CSV", field="time")
    if kinds == {"iso"}:
        secs = np.array([(t - parsed[0][0]).total_seconds() for t, _ in parsed])
    else:
        secs = np.array([t for t, _ in parsed]) - parsed[0][0]
    try:
        prices = np.array([[float(c) for c in r[1:]] for r in body])
    except ValueError as exc:
        raise ValidationError(f"non-numeric price: {exc}", field="input_csv") from exc
    if prices.shape[1] != len(names):
        raise ValidationError("row length does not match header", field="input_csv")
    if not np.all(np.isfinite(prices)) or np.any(prices <= 0):
        raise ValidationError("prices must be finite and strictly positive", field="input_csv")
    grid = TimeGrid(units.from_seconds(secs))
    return PathSet(grid, np.log(prices)[None], seed=None, origin="ingested", names=names)


def load_spec_json(path):
    """Read a market spec file; returns (MarketSpec, TimeGrid, n_paths, seed)."""
    with open(path) as fh:
        d = json.load(fh)
    return spec_from_config(d)


def spec_from_config(d):
    spec = MarketSpec.from_dict(d)
    grid = TimeGrid.uniform(units.parse_duration(d.get("horizon"), "horizon"),
                            check_positive_int(d.get("steps", 0), "steps"))
    return spec, grid, d.get("paths"), d.get("seed")


def ensemble_mean(x, axis=0):
    """Order-insensitive ensemble mean (compensated summation)."""
    x = np.moveaxis(np.asarray(x, dtype=float), axis, -1)
    flat = x.reshape(-1, x.shape[-1])
    out = np.array([math.fsum(row) / row.shape[0] for row in flat])
    return out.reshape(x.shape[:-1]) if x.ndim > 1 else float(out[0])
