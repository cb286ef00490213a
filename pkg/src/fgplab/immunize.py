"""Immunizing generating functions against factor exposures.

With orthonormal factor directions ``b^1..b^K`` the projection
``P(y, b) = y - sum_k (y'b^k) b^k`` removes the factor components of the
log-price vector. Generating from ``H(P(y, b))`` instead of ``H(y)`` gives a
portfolio whose active part ``pi - lam * rho`` is orthogonal to every factor.
"""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass

import numpy as np

from ._validation import as_finite, check_positive_int
from .exceptions import DegenerateNumeraireError, RankError, ValidationError
from .fgp import AuxiliaryProcess, resolve_numeraire
from .generating import GeneratingFunction
from .market import PathSet, covariance

ORTHO_TOL = 1e-10
PIVOT_TOL = 1e-10
MIN_NUMERAIRE_VARIANCE = 1e-12


def _gram_error(b):
    K = b.shape[-2]
    gram = np.einsum("...ki,...ji->...kj", b, b)
    return float(np.max(np.abs(gram - np.eye(K)))) if gram.size else 0.0


@dataclass(frozen=True)
class BetaFactors:
    """Orthonormal factor directions.

    ``vectors`` has shape (K, n) for constant factors, or (M + 1, K, n) /
    (n_paths, M + 1, K, n) for factors sampled on a time grid.
    ``orthonormality_error`` is the largest entry of ``|b b' - I|`` and serves
    as the certificate.
    """

    vectors: np.ndarray
    finite_variation: bool = True
    orthonormality_error: float = 0.0

    def __post_init__(self):
        b = as_finite(self.vectors, "beta")
        if b.ndim < 2 or b.ndim > 4:
            raise ValidationError("factor array must be (K, n), (M+1, K, n) or (paths, M+1, K, n)", field="beta")
        if b.shape[-2] > b.shape[-1]:
            raise ValidationError("more factors than assets", field="beta")
        err = _gram_error(b)
        if err > ORTHO_TOL:
            raise ValidationError(f"factors are not orthonormal (max |b b' - I| = {err:.3g}); "
                                  "pass them through orthonormalize first", field="beta")
        object.__setattr__(self, "vectors", b)
        object.__setattr__(self, "orthonormality_error", err)

    @property
    def K(self):
        return self.vectors.shape[-2]

    @property
    def n(self):
        return self.vectors.shape[-1]

    @property
    def is_constant(self):
        return self.vectors.ndim == 2

    def on_grid(self, shape):
        """Factor array broadcast to (n_paths, M + 1, K, n) for a path array of ``shape``."""
        b = self.vectors
        if b.ndim == 3:
            b = b[None]
        elif b.ndim == 2:
            b = b[None, None]
        if b.shape[1] not in (1, shape[1]) or b.shape[0] not in (1, shape[0]) or b.shape[-1] != shape[-1]:
            raise ValidationError("factors are on a different grid than the paths", field="beta")
        return np.broadcast_to(b, shape[:2] + b.shape[2:])

    def as_aux(self, shape):
        """Flatten into the auxiliary argument consumed by :class:`ImmunizedGF`."""
        b = self.on_grid(shape)
        return AuxiliaryProcess(b.reshape(shape[:2] + (self.K * self.n,)))


def _project(y, b):
    coef = np.einsum("...i,...ki->...k", y, b)
    return y - np.einsum("...k,...ki->...i", coef, b)


def project_orthogonal(y, b):
    """Remove the components of ``y`` along the orthonormal rows of ``b``.

    Parameters
    ----------
    y : array_like, shape (..., n)
    b : array_like or BetaFactors, shape (..., K, n)

    Returns
    -------
    ndarray, shape (..., n)
    """
    y = as_finite(y, "y")
    if isinstance(b, BetaFactors):
        b = b.vectors
    b = np.asarray(b, dtype=float).reshape(np.shape(b) if np.size(b) else (0, y.shape[-1]))
    if b.shape[-2] == 0:
        return y.copy()
    err = _gram_error(b)
    if err > ORTHO_TOL:
        raise ValidationError(f"factors are not orthonormal (max |b b' - I| = {err:.3g})", field="beta")
    return _project(y, b)


def orthonormalize(raw, finite_variation=True) -> BetaFactors:
    """Modified Gram-Schmidt over the factor axis.

    ``raw`` has shape (..., K, n). A vector whose component orthogonal to
    its predecessors is smaller than ``1e-10`` relative to its own norm
    raises :class:`RankError` naming that vector.
    """
    raw = as_finite(raw, "raw factors")
    if raw.ndim == 1:
        raw = raw[None]
    q = raw.astype(float).copy()
    K = q.shape[-2]
    for k in range(K):
        v = q[..., k, :]
        for j in range(k):
            v = v - np.einsum("...i,...i->...", v, q[..., j, :])[..., None] * q[..., j, :]
        norm = np.linalg.norm(v, axis=-1)
        scale = np.maximum(np.linalg.norm(raw[..., k, :], axis=-1), np.finfo(float).tiny)
        if np.any(norm / scale < PIVOT_TOL) or np.any(norm == 0):
            raise RankError(f"factor {k + 1} is numerically dependent on the previous ones", index=k)
        q[..., k, :] = v / norm[..., None]
    return BetaFactors(q, finite_variation=finite_variation)


class ImmunizedGF(GeneratingFunction):
    """``H~(y, b) = H(P(y, b))`` with the flattened factors as auxiliary argument.

    Derivatives, with ``z = P(y, b)``::

        grad_y       = P grad H(z)
        hess_y       = P D2H(z) P
        d/d b^k_i    = -y_i (b^k' grad H(z)) - (y'b^k) D_i H(z)
    """

    def __init__(self, base: GeneratingFunction, K):
        if base.aux_dim:
            raise ValidationError("the generating function to immunize must not take an auxiliary argument",
                                  field="H")
        self.base = base
        self.n = base.n
        self.K = int(K)
        self.aux_dim = self.K * self.n
        self.has_analytic_derivatives = base.has_analytic_derivatives

    def _split(self, y, f):
        y = np.asarray(y, dtype=float)
        b = self._aux(y, f).reshape(y.shape[:-1] + (self.K, self.n))
        return y, b

    def value(self, y, f=None):
        y, b = self._split(y, f)
        return self.base.value(_project(y, b))

    def grad(self, y, f=None):
        y, b = self._split(y, f)
        return _project(self.base.grad(_project(y, b)), b)

    def hess(self, y, f=None):
        y, b = self._split(y, f)
        d2 = self.base.hess(_project(y, b))
        P = np.eye(self.n) - np.einsum("...ki,...kj->...ij", b, b)
        return P @ d2 @ P

    def grad_aux(self, y, f=None):
        y, b = self._split(y, f)
        g = self.base.grad(_project(y, b))
        bg = np.einsum("...ki,...i->...k", b, g)
        yb = np.einsum("...ki,...i->...k", b, y)
        out = -y[..., None, :] * bg[..., :, None] - yb[..., :, None] * g[..., None, :]
        return out.reshape(y.shape[:-1] + (self.aux_dim,))


def immunized_gf(H: GeneratingFunction, beta: BetaFactors) -> GeneratingFunction:
    """Immunize ``H`` against ``beta``; with no factors ``H`` itself is returned."""
    if beta.n != H.n:
        raise ValidationError("factor dimension differs from the generating function's", field="beta")
    if beta.K == 0:
        return H
    return ImmunizedGF(H, beta.K)


def immunization_residual(pi, lam, rho, beta: BetaFactors):
    """Per-step exposure ``max_k |b^k' (pi - lam rho)|``, shape (n_paths, M + 1)."""
    w = pi.weights if hasattr(pi, "weights") else np.asarray(pi, dtype=float)
    r = rho.weights if hasattr(rho, "weights") else np.asarray(rho, dtype=float)
    if w.ndim == 2:
        w = w[None]
    lam = np.asarray(lam, dtype=float)
    if lam.ndim == 1:
        lam = lam[None]
    active = w - lam[..., None] * np.broadcast_to(r, w.shape)
    if beta.K == 0:
        return np.zeros(active.shape[:-1])
    b = beta.on_grid(active.shape)
    return np.abs(np.einsum("pmki,pmi->pmk", b, active)).max(axis=-1)


def price_level_factor(n) -> BetaFactors:
    """The single constant direction ``1 / sqrt(n)``."""
    n = check_positive_int(n, "n")
    return BetaFactors(np.full((1, n), 1.0 / np.sqrt(n)))


def capm_beta_instantaneous(a, rho):
    """``[a rho]_i / (rho' a rho) - 1`` for covariance ``a`` of log prices."""
    a = np.asarray(a, dtype=float)
    rho = np.asarray(rho, dtype=float)
    arho = np.einsum("...ij,...j->...i", a, rho)
    var = np.einsum("...i,...i->...", rho, arho)
    if np.any(var < MIN_NUMERAIRE_VARIANCE):
        raise DegenerateNumeraireError("numeraire variance rate is (nearly) zero")
    return arho / var[..., None] - 1.0


def capm_beta_series(paths: PathSet, rho="market", window=None, spec=None):
    """Window-averaged beta of each asset against the numeraire, on the grid.

    Over consecutive windows of ``window`` steps the ratio of integrated
    covariations ``int d<L_i, log V^rho> / int d<log V^rho>`` minus one is
    estimated, from realized increments or, when ``spec`` is given, from the
    model covariance. Between window ends the series interpolates linearly
    with a lag of one window, so that it is continuous, of finite variation
    and uses only past data after the first window. Up to the second window
    end it is held at the first estimate (warm-up).

    Returns
    -------
    ndarray, shape (n_paths, M + 1, n)
    """
    window = check_positive_int(window, "window")
    M = paths.grid.M
    if window > M:
        raise ValidationError("window longer than the path", field="window")
    log_vr, rho_w = resolve_numeraire(rho, paths)
    dlv = np.diff(log_vr, axis=1)
    if spec is None:
        cov_i = np.diff(paths.logs, axis=1) * dlv[..., None]
        var = dlv ** 2
    else:
        if spec.is_constant:
            a = np.broadcast_to(covariance(spec), (M, paths.n, paths.n))
        else:
            a = np.stack([covariance(spec, t) for t in paths.grid.times[:-1]])
        dt = paths.grid.dt
        arho = np.einsum("mij,pmj->pmi", a, rho_w[:, :-1])
        cov_i = arho * dt[None, :, None]
        var = np.einsum("pmi,pmi->pm", rho_w[:, :-1], arho) * dt[None]
    n_win = M // window
    ends = window * np.arange(1, n_win + 1)
    cs_cov = np.concatenate([np.zeros(cov_i.shape[:1] + (1,) + cov_i.shape[2:]), np.cumsum(cov_i, axis=1)], axis=1)
    cs_var = np.concatenate([np.zeros(var.shape[:1] + (1,)), np.cumsum(var, axis=1)], axis=1)
    win_cov = cs_cov[:, ends] - cs_cov[:, ends - window]
    win_var = cs_var[:, ends] - cs_var[:, ends - window]
    elapsed = paths.grid.times[ends] - paths.grid.times[ends - window]
    if np.any(win_var / elapsed[None] < MIN_NUMERAIRE_VARIANCE):
        raise DegenerateNumeraireError("numeraire variance rate below 1e-12 over a window")
    est = win_cov / win_var[..., None] - 1.0
    # lagged knots: est_j is reached one window after it is formed
    t = paths.grid.times
    span = t[ends[-1]] - t[ends[-1] - window]
    knot_t = np.concatenate([[t[0]], t[ends[1:]], [t[ends[-1]] + span]])
    knot_v = np.concatenate([est[:, :1], est], axis=1)
    j = np.clip(np.searchsorted(knot_t, t, side="right") - 1, 0, len(knot_t) - 2)
    frac = ((t - knot_t[j]) / (knot_t[j + 1] - knot_t[j]))[None, :, None]
    return (1 - frac) * knot_v[:, j] + frac * knot_v[:, j + 1]


def capm_beta_factor(paths: PathSet, rho="market", window=None, spec=None) -> BetaFactors:
    """Normalized window-averaged beta direction as a single time-varying factor."""
    raw = capm_beta_series(paths, rho, window, spec)
    return orthonormalize(raw[..., None, :])


_FACTOR_COL = re.compile(r"^b\^?(\d+)_(\d+)$")


def load_factors_csv(path, n=None):
    """Read ``time, b^1_1..b^1_n, b^2_1..`` into ``(times, BetaFactors)``.

    Orthonormality is validated at every row.
    """
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows or rows[0][0].strip() != "time":
        raise ValidationError("factor CSV must start with a 'time' column", field="factors")
    idx = []
    for col in rows[0][1:]:
        m = _FACTOR_COL.match(col.strip())
        if m is None:
            raise ValidationError(f"bad factor column {col!r}", field="factors")
        idx.append((int(m.group(1)) - 1, int(m.group(2)) - 1))
    K = max(k for k, _ in idx) + 1
    n_cols = max(i for _, i in idx) + 1
    if n is not None and n_cols != n:
        raise ValidationError(f"factor CSV has {n_cols} assets, expected {n}", field="factors")
    if len(idx) != K * n_cols:
        raise ValidationError("factor CSV is missing columns", field="factors")
    data = np.array([[float(x) for x in r] for r in rows[1:]])
    times = data[:, 0]
    vec = np.empty((len(times), K, n_cols))
    for c, (k, i) in enumerate(idx):
        vec[:, k, i] = data[:, c + 1]
    return times, BetaFactors(vec)


def save_factors_csv(path, times, beta: BetaFactors, path_index=0):
    """Write factors sampled on ``times`` in the layout read by :func:`load_factors_csv`."""
    b = beta.vectors
    if b.ndim == 4:
        b = b[path_index]
    b = np.broadcast_to(b, (len(times),) + b.shape[-2:])
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["time"] + [f"b^{k + 1}_{i + 1}" for k in range(beta.K) for i in range(beta.n)])
        for t, row in zip(times, b):
            out.writerow([repr(float(t))] + [repr(float(x)) for x in row.ravel()])
