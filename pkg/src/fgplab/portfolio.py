"""Weight processes, discrete self-financing wealth and excess growth."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from ._validation import as_finite, check_weights
from .exceptions import BankruptcyError, ValidationError
from .market import PathSet, relative_covariance


@dataclass(frozen=True)
class WeightProcess:
    """Portfolio weights, shape (n_paths, M + 1, n), each row summing to one."""

    weights: np.ndarray
    label: str = ""
    v0: float = 1.0

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim == 2:
            w = w[None]
        if w.ndim != 3:
            raise ValidationError("weights must be (M+1, n) or (paths, M+1, n)", field="weights")
        check_weights(w, "weights")
        if not self.v0 > 0:
            raise ValidationError("initial wealth must be positive", field="v0")
        object.__setattr__(self, "weights", w)

    @classmethod
    def constant(cls, p, paths: PathSet, label="constant"):
        p = check_weights(np.asarray(p, dtype=float), "p")
        w = np.broadcast_to(p, paths.logs.shape).copy()
        return cls(w, label=label)

    @classmethod
    def money_market(cls, paths: PathSet, index):
        e = np.zeros(paths.n)
        e[index] = 1.0
        return cls.constant(e, paths, label="money-market")


@dataclass(frozen=True)
class PassivePortfolio:
    """Buy-and-hold portfolio holding ``shares`` units of each asset."""

    shares: np.ndarray

    def __post_init__(self):
        s = as_finite(self.shares, "shares", ndim=1)
        if np.any(s < 0) or not np.any(s > 0):
            raise ValidationError("shares must be nonnegative and not all zero", field="shares")
        object.__setattr__(self, "shares", s)

    @classmethod
    def from_initial_weights(cls, p, L0):
        """Shares ``s_i = p_i / X_{i,0}`` so that the initial wealth is one."""
        p = check_weights(np.asarray(p, dtype=float), "p")
        return cls(p * np.exp(-np.asarray(L0, dtype=float)))

    @classmethod
    def market(cls, L0):
        """Capitalization-weighted market portfolio starting at wealth one."""
        x0 = np.exp(np.asarray(L0, dtype=float))
        return cls(np.ones_like(x0) / x0.sum())

    def log_wealth(self, logs):
        """``log(s'X)`` along the paths (log-sum-exp, no overflow)."""
        logs = np.asarray(logs, dtype=float)
        with np.errstate(divide="ignore"):
            z = logs + np.log(self.shares)
        zmax = z.max(axis=-1, keepdims=True)
        return (zmax + np.log(np.exp(z - zmax).sum(axis=-1, keepdims=True)))[..., 0]

    def weights(self, logs):
        """Induced weights ``s_i X_i / s'X``."""
        logs = np.asarray(logs, dtype=float)
        with np.errstate(divide="ignore"):
            z = logs + np.log(self.shares)
        z = z - z.max(axis=-1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=-1, keepdims=True)

    def weight_process(self, paths: PathSet):
        return WeightProcess(self.weights(paths.logs), label="passive")

    def hyperplane_residual(self, rel_logs):
        """``s'X^rho - 1``: zero when prices are measured against this portfolio."""
        return np.exp(self.log_wealth(rel_logs)) - 1.0


def wealth_from_weights(paths: PathSet, w, on_bankruptcy="raise"):
    """Log wealth of discretely rebalanced, self-financing investment.

    ``V_{m+1} = V_m * sum_i pi_{i,m} exp(L_{i,m+1} - L_{i,m})`` with weights
    held from ``t_m`` to ``t_{m+1}``. With ``on_bankruptcy="mask"``, paths
    whose wealth hits zero become NaN from that step on and the return value
    is ``(log_wealth, bankrupt_path_indices)``.
    """
    weights = w.weights if isinstance(w, WeightProcess) else check_weights(w)
    v0 = w.v0 if isinstance(w, WeightProcess) else 1.0
    if weights.ndim == 2:
        weights = weights[None]
    if weights.shape[1:] != paths.logs.shape[1:] or weights.shape[0] not in (1, paths.n_paths):
        raise ValidationError("weights and paths are on different grids", field="weights")
    weights = np.broadcast_to(weights, paths.logs.shape)
    growth = np.einsum("pmi,pmi->pm", weights[:, :-1], np.exp(np.diff(paths.logs, axis=1)))
    bad = ~(growth > 0)
    if np.any(bad):
        rows = np.flatnonzero(bad.any(axis=1))
        if on_bankruptcy == "raise":
            p = int(rows[0])
            step = int(np.argmax(bad[p])) + 1
            raise BankruptcyError(f"wealth nonpositive on path {p} at step {step}", step=step, path=p)
        growth = np.where(np.cumsum(bad, axis=1) > 0, np.nan, growth)
    out = np.empty(growth.shape[:1] + (growth.shape[1] + 1,))
    out[:, 0] = np.log(v0)
    with np.errstate(invalid="ignore"):
        np.cumsum(np.log(growth), axis=1, out=out[:, 1:])
    out[:, 1:] += np.log(v0)
    if on_bankruptcy == "mask":
        return out, (rows if np.any(bad) else np.array([], dtype=int))
    return out


def excess_growth_rate(pi, a):
    """``gamma*_pi = (sum_i pi_i a_ii - pi' a pi) / 2``; broadcasts over leading axes."""
    pi = np.asarray(pi, dtype=float)
    a = np.asarray(a, dtype=float)
    diag = np.einsum("...ii->...i", a)
    quad = np.einsum("...i,...ij,...j->...", pi, a, pi)
    return 0.5 * (np.einsum("...i,...i->...", pi, diag) - quad)


def numeraire_invariance_residual(pi, rho, a):
    """Excess growth computed directly minus its value from ``a^rho``."""
    pi = check_weights(np.asarray(pi, dtype=float), "pi", tol=1e-12)
    return excess_growth_rate(pi, a) - excess_growth_rate(pi, relative_covariance(a, rho))


def q_mirror(pi: WeightProcess, rho: WeightProcess, q) -> WeightProcess:
    """Weights ``q pi + (1 - q) rho``."""
    if pi.weights.shape[1:] != rho.weights.shape[1:]:
        raise ValidationError("pi and rho live on different grids", field="rho")
    w = q * pi.weights + (1.0 - q) * rho.weights
    return WeightProcess(w, label=f"{q:g}-mirror of {pi.label or 'pi'}")


def export_weights_csv(path, paths: PathSet, w: WeightProcess, path_index=0):
    """Write ``time, w_1..w_n, logV`` for one path."""
    logv = wealth_from_weights(paths, w)[path_index]
    wts = np.broadcast_to(w.weights, paths.logs.shape)[path_index]
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["time"] + [f"w_{i + 1}" for i in range(wts.shape[1])] + ["logV"])
        for t, row, lv in zip(paths.grid.times, wts, logv):
            out.writerow([repr(float(t))] + [repr(float(x)) for x in row] + [repr(float(lv))])


def load_weights_csv(path, paths: PathSet):
    """Read a weight CSV written by :func:`export_weights_csv` onto ``paths``' grid."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header = [h.strip() for h in rows[0]]
    cols = [i for i, h in enumerate(header) if h.startswith("w_")]
    data = np.array([[float(r[i]) for i in cols] for r in rows[1:] if r])
    if data.shape != (paths.grid.M + 1, paths.n):
        raise ValidationError(f"weight CSV shape {data.shape} does not match the paths", field="numeraire")
    return WeightProcess(np.broadcast_to(data, paths.logs.shape).copy(), label="csv")
