"""Generating functions ``H(y, f)`` and their derivatives.

Every evaluator is vectorised over leading axes: ``y`` has shape (..., n)
and the auxiliary argument ``f`` has shape (..., k). Gradients come back as
(..., n), Hessians as (..., n, n) and auxiliary gradients as (..., k).
"""

from __future__ import annotations

import importlib
import warnings

import numpy as np

from ._validation import as_finite
from .exceptions import DomainWarning, EvaluationError, ValidationError

EPS = np.finfo(float).eps
FD_STEP = EPS ** (1.0 / 3.0)
FD_STEP_SECOND = EPS ** 0.25
RICHARDSON_RTOL = 1e-6


def _step(y, base):
    return base * np.maximum(1.0, np.abs(y))


def _logsumexp(z):
    zmax = z.max(axis=-1, keepdims=True)
    return zmax[..., 0] + np.log(np.exp(z - zmax).sum(axis=-1))


def _softmax(z):
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


class GeneratingFunction:
    """Base class. Subclasses override :meth:`value` and, when they can, the
    analytic derivative methods; anything not overridden falls back to
    central finite differences.
    """

    n: int
    aux_dim = 0
    translation_equivariant = False
    has_analytic_derivatives = True

    def _aux(self, y, f):
        if self.aux_dim == 0:
            return np.zeros(np.shape(y)[:-1] + (0,))
        if f is None:
            raise ValidationError(f"{type(self).__name__} needs an auxiliary argument of size {self.aux_dim}",
                                  field="F")
        return np.broadcast_to(np.asarray(f, dtype=float), np.shape(y)[:-1] + (self.aux_dim,))

    def __call__(self, y, f=None):
        return self.value(y, f)

    def value(self, y, f=None):
        raise NotImplementedError

    def grad(self, y, f=None):
        y = np.asarray(y, dtype=float)
        return self._fd_grad(y, f, FD_STEP)

    def hess(self, y, f=None):
        y = np.asarray(y, dtype=float)
        if type(self).grad is not GeneratingFunction.grad:
            return self._fd_hess_from_grad(y, f, FD_STEP)
        return self._fd_hess_from_value(y, f, FD_STEP_SECOND)

    def grad_aux(self, y, f=None):
        y = np.asarray(y, dtype=float)
        f = self._aux(y, f)
        if self.aux_dim == 0:
            return f
        out = np.empty_like(f)
        for j in range(self.aux_dim):
            h = _step(f[..., j], FD_STEP)
            fp, fm = f.copy(), f.copy()
            fp[..., j] += h
            fm[..., j] -= h
            out[..., j] = (self.value(y, fp) - self.value(y, fm)) / (2 * h)
        return out

    # finite-difference machinery ------------------------------------------

    def _fd_grad(self, y, f, base):
        out = np.empty_like(y)
        for i in range(y.shape[-1]):
            h = _step(y[..., i], base)
            yp, ym = y.copy(), y.copy()
            yp[..., i] += h
            ym[..., i] -= h
            out[..., i] = (self.value(yp, f) - self.value(ym, f)) / (2 * h)
        return out

    def _fd_hess_from_grad(self, y, f, base):
        n = y.shape[-1]
        out = np.empty(y.shape + (n,))
        for j in range(n):
            h = _step(y[..., j], base)[..., None]
            yp, ym = y.copy(), y.copy()
            yp[..., j] += h[..., 0]
            ym[..., j] -= h[..., 0]
            out[..., :, j] = (self.grad(yp, f) - self.grad(ym, f)) / (2 * h)
        return 0.5 * (out + np.swapaxes(out, -1, -2))

    def _fd_hess_from_value(self, y, f, base):
        n = y.shape[-1]
        out = np.empty(y.shape + (n,))
        for i in range(n):
            hi = _step(y[..., i], base)
            for j in range(i, n):
                hj = _step(y[..., j], base)

                def shifted(si, sj):
                    z = y.copy()
                    z[..., i] += si * hi
                    z[..., j] += sj * hj
                    return self.value(z, f)

                d = (shifted(1, 1) - shifted(1, -1) - shifted(-1, 1) + shifted(-1, -1)) / (4 * hi * hj)
                out[..., i, j] = out[..., j, i] = d
        return out


class LinearGF(GeneratingFunction):
    """``H(y) = p'y``; with ``sum(p) = 1`` it generates the constant-weight portfolio ``p``."""

    def __init__(self, p):
        self.p = as_finite(p, "p", ndim=1)
        self.n = self.p.shape[0]
        self.translation_equivariant = bool(abs(self.p.sum() - 1.0) < 1e-12)

    def value(self, y, f=None):
        return np.asarray(y, dtype=float) @ self.p

    def grad(self, y, f=None):
        return np.broadcast_to(self.p, np.shape(y)).copy()

    def hess(self, y, f=None):
        return np.zeros(np.shape(y) + (self.n,))


class PassiveGF(GeneratingFunction):
    """``H(y) = log sum_i p_i exp(y_i - l_i)``: buy-and-hold from initial weights ``p`` at prices ``e^l``."""

    translation_equivariant = True

    def __init__(self, p, l):
        self.p = as_finite(p, "p", ndim=1)
        self.l = as_finite(l, "l", ndim=1)
        if np.any(self.p < 0):
            raise ValidationError("passive weights must be nonnegative", field="p")
        self.n = self.p.shape[0]
        with np.errstate(divide="ignore"):
            self._logp = np.log(self.p)

    def value(self, y, f=None):
        return _logsumexp(np.asarray(y, dtype=float) - self.l + self._logp)

    def grad(self, y, f=None):
        return _softmax(np.asarray(y, dtype=float) - self.l + self._logp)

    def hess(self, y, f=None):
        w = self.grad(y)
        return np.einsum("...i,ij->...ij", w, np.eye(self.n)) - w[..., :, None] * w[..., None, :]


class DiversityGF(GeneratingFunction):
    """Diversity-p: ``H(y) = log(sum_i exp(p y_i)) / p``."""

    translation_equivariant = True

    def __init__(self, p, n):
        if not p > 0:
            raise ValidationError("diversity parameter must be positive", field="p")
        self.p = float(p)
        self.n = int(n)

    def value(self, y, f=None):
        return _logsumexp(self.p * np.asarray(y, dtype=float)) / self.p

    def grad(self, y, f=None):
        return _softmax(self.p * np.asarray(y, dtype=float))

    def hess(self, y, f=None):
        w = self.grad(y)
        return self.p * (np.einsum("...i,ij->...ij", w, np.eye(self.n)) - w[..., :, None] * w[..., None, :])


class QuadraticGF(GeneratingFunction):
    """``H(y) = -(y - l)' c (y - l) / 2 + p'y``."""

    def __init__(self, c, l, p=None):
        self.c = np.atleast_2d(as_finite(c, "c"))
        self.c = 0.5 * (self.c + self.c.T)
        self.l = np.atleast_1d(as_finite(l, "l"))
        self.n = self.l.shape[0]
        self.p = np.zeros(self.n) if p is None else np.atleast_1d(as_finite(p, "p"))
        if self.c.shape != (self.n, self.n) or self.p.shape != (self.n,):
            raise ValidationError("c, l and p have inconsistent shapes", field="c")
        self.translation_equivariant = bool(not np.any(self.c) and abs(self.p.sum() - 1.0) < 1e-12)

    def value(self, y, f=None):
        d = np.asarray(y, dtype=float) - self.l
        return -0.5 * np.einsum("...i,ij,...j->...", d, self.c, d) + np.asarray(y, dtype=float) @ self.p

    def grad(self, y, f=None):
        return -(np.asarray(y, dtype=float) - self.l) @ self.c + self.p

    def hess(self, y, f=None):
        return np.broadcast_to(-self.c, np.shape(y) + (self.n,)).copy()


class SwitchingGF(GeneratingFunction):
    """``H(y, i) = i H1(y) + (1 - i) H2(y)``; auxiliary ``i`` moves from 1 to 0 at the switch."""

    aux_dim = 1

    def __init__(self, first: GeneratingFunction, second: GeneratingFunction):
        if first.n != second.n or first.aux_dim or second.aux_dim:
            raise ValidationError("switching needs two plain generating functions on the same n", field="H")
        self.first, self.second = first, second
        self.n = first.n
        self.translation_equivariant = first.translation_equivariant and second.translation_equivariant
        self.has_analytic_derivatives = first.has_analytic_derivatives and second.has_analytic_derivatives

    def _i(self, y, f):
        return self._aux(y, f)[..., 0]

    def value(self, y, f=None):
        i = self._i(y, f)
        return i * self.first.value(y) + (1 - i) * self.second.value(y)

    def grad(self, y, f=None):
        i = self._i(y, f)[..., None]
        return i * self.first.grad(y) + (1 - i) * self.second.grad(y)

    def hess(self, y, f=None):
        i = self._i(y, f)[..., None, None]
        return i * self.first.hess(y) + (1 - i) * self.second.hess(y)

    def grad_aux(self, y, f=None):
        return (self.first.value(y) - self.second.value(y))[..., None]


class FunctionGF(GeneratingFunction):
    """User-supplied ``func(y, f)`` with optional analytic gradient.

    Missing derivatives are taken by central finite differences and checked
    once against a Richardson-refined estimate at ``probe``.
    """

    def __init__(self, func, n, aux_dim=0, grad=None, grad_aux=None, probe=None,
                 translation_equivariant=False):
        self._func, self._grad, self._grad_aux = func, grad, grad_aux
        self.n, self.aux_dim = int(n), int(aux_dim)
        self.translation_equivariant = translation_equivariant
        self.has_analytic_derivatives = False
        if grad is not None:
            self.grad = self._analytic_grad
        if grad_aux is not None:
            self.grad_aux = lambda y, f=None: np.asarray(self._grad_aux(y, self._aux(y, f)), dtype=float)
        probe = np.zeros(self.n) if probe is None else np.asarray(probe, dtype=float)
        self.richardson_gap = self._check(probe)

    def _analytic_grad(self, y, f=None):
        return np.asarray(self._grad(np.asarray(y, dtype=float), self._aux(y, f) if self.aux_dim else None),
                          dtype=float)

    def value(self, y, f=None):
        y = np.asarray(y, dtype=float)
        return np.asarray(self._func(y, self._aux(y, f)) if self.aux_dim else self._func(y), dtype=float)

    def hess(self, y, f=None):
        y = np.asarray(y, dtype=float)
        if self._grad is not None:
            return self._fd_hess_from_grad(y, f, FD_STEP)
        return self._fd_hess_from_value(y, f, FD_STEP_SECOND)

    def _check(self, probe):
        f = np.zeros(self.aux_dim) if self.aux_dim else None
        worst = 0.0
        if self._grad is None:
            g1, g2 = self._fd_grad(probe, f, FD_STEP), self._fd_grad(probe, f, FD_STEP / 2)
            ref = (4 * g2 - g1) / 3
            worst = np.linalg.norm(g1 - ref) / max(1.0, np.linalg.norm(ref))
        h1 = self.hess(probe, f)
        if self._grad is not None:
            h2 = self._fd_hess_from_grad(probe, f, FD_STEP / 2)
        else:
            h2 = self._fd_hess_from_value(probe, f, FD_STEP_SECOND / 2)
        ref = (4 * h2 - h1) / 3
        worst = max(worst, np.linalg.norm(h1 - ref) / max(1.0, np.linalg.norm(ref)))
        if not worst <= RICHARDSON_RTOL:
            raise EvaluationError(f"finite-difference derivatives unstable at probe (relative gap {worst:.3g})")
        return float(worst)


class GaugedGF(GeneratingFunction):
    """``H_f(y) = f(s' e^y) + H(y)``; generates the same portfolio as ``H``
    relative to the passive numeraire with shares ``s``.
    """

    TUBE = 0.5

    def __init__(self, base: GeneratingFunction, f, s, fprime=None, fsecond=None):
        if base.aux_dim:
            raise ValidationError("gauge transform applies to plain generating functions", field="H")
        self.base = base
        self.s = as_finite(s, "shares", ndim=1)
        if self.s.shape != (base.n,) or np.any(self.s < 0) or not np.any(self.s > 0):
            raise ValidationError("shares must be a nonnegative, nonzero n-vector", field="shares")
        self.n = base.n
        self.f, self.fprime, self.fsecond = f, fprime, fsecond
        self.has_analytic_derivatives = base.has_analytic_derivatives and None not in (fprime, fsecond)

    def _level(self, y):
        y = np.asarray(y, dtype=float)
        se = self.s * np.exp(y)
        S = se.sum(axis=-1)
        if np.any(np.abs(S - 1.0) >= self.TUBE):
            warnings.warn("evaluation outside the tube around the passive hyperplane", DomainWarning,
                          stacklevel=3)
        return se, S

    def _scalar_derivs(self, S):
        f1 = self.fprime(S) if self.fprime else _scalar_fd(self.f, S, 1)
        f2 = self.fsecond(S) if self.fsecond else _scalar_fd(self.f, S, 2)
        out = np.asarray(f1, dtype=float), np.asarray(f2, dtype=float)
        if not (np.all(np.isfinite(out[0])) and np.all(np.isfinite(out[1]))):
            raise EvaluationError("gauge function derivative is not finite")
        return out

    def value(self, y, f=None):
        _, S = self._level(y)
        v = np.asarray(self.f(S), dtype=float)
        if not np.all(np.isfinite(v)):
            raise EvaluationError("gauge function evaluation failed")
        return v + self.base.value(y)

    def grad(self, y, f=None):
        se, S = self._level(y)
        f1, _ = self._scalar_derivs(S)
        return f1[..., None] * se + self.base.grad(y)

    def hess(self, y, f=None):
        se, S = self._level(y)
        f1, f2 = self._scalar_derivs(S)
        outer = f2[..., None, None] * se[..., :, None] * se[..., None, :]
        diag = f1[..., None, None] * np.einsum("...i,ij->...ij", se, np.eye(self.n))
        return outer + diag + self.base.hess(y)


def _scalar_fd(f, x, order):
    x = np.asarray(x, dtype=float)
    if order == 1:
        h = _step(x, FD_STEP)
        return (np.asarray(f(x + h)) - np.asarray(f(x - h))) / (2 * h)
    h = _step(x, FD_STEP_SECOND)
    return (np.asarray(f(x + h)) - 2 * np.asarray(f(x)) + np.asarray(f(x - h))) / h ** 2


def gauge_transform(H: GeneratingFunction, f, s, fprime=None, fsecond=None) -> GaugedGF:
    """Add ``f(s' e^y)`` to ``H``. ``f`` must be C^2 on (0, inf)."""
    return GaugedGF(H, f, s, fprime, fsecond)


def check_translation_equivariance(H: GeneratingFunction, n_samples=256, scale=1.0, seed=0, f=None):
    """Sample ``y`` and ``kappa`` and report the equivariance and lambda residuals.

    Returns a dict with ``equivariance_residual`` = max |H(y + kappa 1) - H(y) - kappa|
    and ``lambda_max_abs`` = max |1 - 1' grad H(y)|.
    """
    rng = np.random.default_rng(seed)
    y = scale * rng.standard_normal((n_samples, H.n))
    kappa = scale * rng.standard_normal(n_samples)
    aux = None
    if H.aux_dim:
        aux = rng.uniform(size=(n_samples, H.aux_dim)) if f is None else f
    shifted = H.value(y + kappa[:, None], aux)
    eq = float(np.max(np.abs(shifted - H.value(y, aux) - kappa)))
    lam = float(np.max(np.abs(1.0 - H.grad(y, aux).sum(axis=-1))))
    return {"equivariance_residual": eq, "lambda_max_abs": lam,
            "equivariant": bool(eq < 1e-9 and lam < 1e-9), "n_samples": int(n_samples)}


def load_user_function(ref):
    """Resolve ``"package.module:attribute"`` to a Python object."""
    if not isinstance(ref, str) or ":" not in ref:
        raise ValidationError("user generating function must be 'module:attribute'", field="generating_function")
    mod, attr = ref.split(":", 1)
    try:
        obj = importlib.import_module(mod)
        for part in attr.split("."):
            obj = getattr(obj, part)
    except (ImportError, AttributeError) as exc:
        raise ValidationError(f"cannot load {ref!r}: {exc}", field="generating_function") from exc
    return obj


def from_config(block, n, L0=None):
    """Build a generating function from a ``{"name": ..., params...}`` block."""
    if not isinstance(block, dict) or "name" not in block:
        raise ValidationError("generating_function needs a 'name'", field="generating_function")
    name = block["name"]
    try:
        if name == "linear":
            return LinearGF(block.get("p", np.full(n, 1.0 / n)))
        if name == "passive":
            l = block.get("l", L0)
            return PassiveGF(block.get("p", np.full(n, 1.0 / n)), l)
        if name == "diversity":
            return DiversityGF(block["p"], n)
        if name == "quadratic":
            c = np.asarray(block["c"], dtype=float)
            c = c * np.eye(n) if c.ndim == 0 else c
            return QuadraticGF(c, block.get("l", L0 if L0 is not None else np.zeros(n)), block.get("p"))
        if name == "switching":
            return SwitchingGF(from_config(block["first"], n, L0), from_config(block["second"], n, L0))
        if name == "user":
            if not block.get("finite_difference_hessian"):
                raise ValidationError("user functions require 'finite_difference_hessian': true",
                                      field="generating_function.finite_difference_hessian")
            func = load_user_function(block["function"])
            grad = load_user_function(block["gradient"]) if "gradient" in block else None
            return FunctionGF(func, n, grad=grad)
    except KeyError as exc:
        raise ValidationError(f"generating_function.{exc.args[0]} is required",
                              field=f"generating_function.{exc.args[0]}") from exc
    raise ValidationError(f"unknown generating function {name!r}", field="generating_function.name")
