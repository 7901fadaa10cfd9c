"""Frequentist Weibull and Weibull AFT models fitted by maximum likelihood.

Both models share one likelihood. Plain Weibull is the AFT model whose
design is a single intercept column, with ``log(scale) = beta_0``. All fitting
happens in the unconstrained space ``(log shape, beta)``.
"""

from __future__ import annotations

import csv
import math
import os
import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import optimize

from .dataset import DesignMatrix
from .nonparametric import StepSurvivalCurve

GTOL = 1e-6
MAX_ITER = 500


class ConvergenceError(RuntimeError):
    """Optimizer stopped before meeting the gradient tolerance."""

    def __init__(self, message: str, last_iterate: np.ndarray):
        super().__init__(message)
        self.last_iterate = last_iterate


class RankDeficiencyError(ValueError):
    pass


@dataclass(frozen=True)
class WeibullFit:
    shape: float
    scale: float
    loglik: float
    converged: bool = True
    iterations: int = 0

    def __post_init__(self):
        if not (self.shape > 0 and self.scale > 0):
            raise ValueError("Weibull shape and scale must be positive")


@dataclass(frozen=True)
class AftFit:
    """``beta[0]`` is the intercept; ``beta[1:]`` follow ``columns``."""

    shape: float
    beta: np.ndarray
    loglik: float
    converged: bool = True
    iterations: int = 0
    columns: tuple[str, ...] = ()

    def scale_for(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.beta.size - 1:
            raise ValueError(f"expected {self.beta.size - 1} covariates, got {X.shape[1]}")
        return np.exp(self.beta[0] + X @ self.beta[1:])


# -- likelihood -------------------------------------------------------------

def weibull_loglik(shape: float, scale: float, times, events) -> float:
    """Right-censored Weibull log-likelihood ``sum(d log h + log S)``."""
    if not (shape > 0 and scale > 0):
        raise ValueError("shape and scale must be positive")
    t = np.asarray(times, dtype=float)
    d = np.asarray(events, dtype=float)
    if np.any(t <= 0):
        raise ValueError("times must be positive")
    z = shape * (np.log(t) - math.log(scale))
    log_h = math.log(shape) + z - np.log(t)
    return float(np.sum(d * log_h - np.exp(z)))


def _with_intercept(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    return np.column_stack([np.ones(X.shape[0]), X])


def aft_loglik(params, Z, times, events, *, grad: bool = False, hess: bool = False):
    """Log-likelihood in ``(log shape, beta)`` with ``Z`` including the intercept.

    Returns the value, optionally followed by the gradient and Hessian.
    """
    a = params[0]
    beta = params[1:]
    shape = math.exp(a)
    log_t = np.log(times)
    z = shape * (log_t - Z @ beta)
    ez = np.exp(z)
    d = events
    value = float(np.sum(d * (a + z - log_t) - ez))
    if not (grad or hess):
        return value
    out = [value]
    g = np.empty(params.size)
    g[0] = np.sum(d * (1 + z) - z * ez)
    g[1:] = shape * (Z.T @ (ez - d))
    out.append(g)
    if hess:
        H = np.empty((params.size, params.size))
        H[0, 0] = np.sum(d * z - z * ez - z * z * ez)
        cross = shape * (Z.T @ (ez * (1 + z) - d))
        H[0, 1:] = cross
        H[1:, 0] = cross
        H[1:, 1:] = -(shape ** 2) * (Z.T * ez) @ Z
        out.append(H)
    return tuple(out)


def _maximize(Z, times, events, init, fixed_shape=None):
    """BFGS on the negative log-likelihood, then Newton polishing."""
    times = np.asarray(times, dtype=float)
    events = np.asarray(events, dtype=float)
    free = slice(1, None) if fixed_shape is not None else slice(0, None)

    def full(x):
        if fixed_shape is None:
            return x
        return np.concatenate(([math.log(fixed_shape)], x))

    def neg(x):
        with np.errstate(over="ignore", invalid="ignore"):
            v, g = aft_loglik(full(x), Z, times, events, grad=True)
        if not np.isfinite(v):
            return np.inf, np.zeros_like(x)
        return -v, -g[free]

    x0 = init[free].copy()
    res = optimize.minimize(neg, x0, jac=True, method="BFGS",
                            options={"gtol": GTOL * 1e-2, "maxiter": MAX_ITER})
    x = res.x
    iters = int(res.nit)
    # BFGS often stalls on precision loss just short of the tolerance.
    for _ in range(50):
        v, g, H = aft_loglik(full(x), Z, times, events, hess=True)
        g, H = g[free], H[free, free]
        if np.max(np.abs(g), initial=0.0) < GTOL:
            break
        try:
            step = np.linalg.solve(H, -g)
        except np.linalg.LinAlgError:
            break
        t = 1.0
        while t > 1e-10:
            cand = x + t * step
            with np.errstate(over="ignore", invalid="ignore"):
                cv = aft_loglik(full(cand), Z, times, events)
            if np.isfinite(cv) and cv >= v - 1e-12 * abs(v):
                break
            t *= 0.5
        x = cand
        iters += 1
    v, g = aft_loglik(full(x), Z, times, events, grad=True)
    gnorm = float(np.max(np.abs(g[free]), initial=0.0))
    if not np.isfinite(v) or gnorm >= GTOL:
        raise ConvergenceError(f"MLE did not converge (|grad|_inf={gnorm:.3g} after "
                               f"{iters} iterations)", full(x))
    return full(x), v, iters


def _initial_params(Z, times, events):
    times = np.asarray(times, dtype=float)
    events = np.asarray(events)
    init = np.zeros(Z.shape[1] + 1)
    init[1] = math.log(times[events == 1].mean())
    return init


def fit_weibull_mle(times, events, *, fixed_shape: float | None = None) -> WeibullFit:
    """Maximum-likelihood Weibull fit; ``fixed_shape`` pins the shape."""
    times = np.asarray(times, dtype=float)
    events = np.asarray(events, dtype=float)
    if events.sum() < 2:
        raise ValueError("need at least 2 events to fit a Weibull model")
    Z = np.ones((times.size, 1))
    params, ll, iters = _maximize(Z, times, events, _initial_params(Z, times, events),
                                  fixed_shape)
    return WeibullFit(math.exp(params[0]), math.exp(params[1]), ll, True, iters)


def _collinear_columns(Z, names) -> list[str]:
    bad = []
    kept = np.zeros((Z.shape[0], 0))
    for j in range(Z.shape[1]):
        trial = np.column_stack([kept, Z[:, j]])
        if np.linalg.matrix_rank(trial) < trial.shape[1]:
            bad.append(names[j])
        else:
            kept = trial
    return bad


def fit_weibull_aft_mle(X: DesignMatrix) -> AftFit:
    Z = _with_intercept(X.X)
    if np.linalg.matrix_rank(Z) < Z.shape[1]:
        names = ["intercept", *X.columns]
        raise RankDeficiencyError("design is rank deficient; collinear columns: "
                                  + ", ".join(_collinear_columns(Z, names)))
    if X.events.sum() < X.p + 2:
        raise ValueError(f"need at least {X.p + 2} events for {X.p} covariates")
    params, ll, iters = _maximize(Z, X.times, X.events,
                                  _initial_params(Z, X.times, X.events))
    return AftFit(math.exp(params[0]), params[1:].copy(), ll, True, iters, X.columns)


# -- prediction -------------------------------------------------------------

def weibull_cumhaz(shape: float, scale, t) -> np.ndarray:
    return (np.asarray(t, dtype=float) / scale) ** shape


def weibull_survival(fit: WeibullFit, t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("t must be non-negative")
    return np.exp(-weibull_cumhaz(fit.shape, fit.scale, t))


def aft_predict_survival(fit: AftFit, x, t) -> np.ndarray:
    """``S(t | x)``; a 2-D ``x`` broadcasts against ``t`` as rows x times."""
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("t must be non-negative")
    lam = fit.scale_for(x)
    if x.ndim == 1:
        return np.exp(-weibull_cumhaz(fit.shape, lam[0], t))
    return np.exp(-weibull_cumhaz(fit.shape, lam[:, None], t[None, :]))


class MedianTime(NamedTuple):
    time: float
    restricted: bool  # True when S never fell to 0.5 and the RMST was returned


def curve_median(curve: StepSurvivalCurve, horizon: float) -> MedianTime:
    """First grid time with ``S <= 0.5``, else the RMST over ``[0, horizon]``."""
    hit = np.flatnonzero(curve.survival <= 0.5)
    if hit.size:
        return MedianTime(float(curve.times[hit[0]]), False)
    return MedianTime(restricted_mean(curve, horizon), True)


def restricted_mean(curve: StepSurvivalCurve, horizon: float) -> float:
    t = curve.times[curve.times < horizon]
    s = curve.survival[: t.size]
    edges = np.concatenate(([0.0], t, [horizon]))
    heights = np.concatenate(([1.0], s))
    return float(np.sum(np.diff(edges) * heights))


def predicted_median_time(model, x=None, horizon: float | None = None) -> MedianTime:
    """Median survival time of a fitted Weibull/AFT model or a step curve."""
    if isinstance(model, StepSurvivalCurve):
        if horizon is None:
            horizon = float(model.times[-1]) if len(model) else 0.0
        return curve_median(model, horizon)
    if isinstance(model, WeibullFit):
        return MedianTime(model.scale * math.log(2) ** (1 / model.shape), False)
    if isinstance(model, AftFit):
        lam = model.scale_for(x)
        med = lam * math.log(2) ** (1 / model.shape)
        return MedianTime(float(med[0]) if np.ndim(x) == 1 else med, False)
    raise TypeError(f"cannot compute a median for {type(model).__name__}")


# -- likelihood contours ----------------------------------------------------

@dataclass(frozen=True)
class ContourGrid:
    """``rel_lik[i, j]`` is the relative likelihood at ``(shapes[i], scales[j])``."""

    shapes: np.ndarray
    scales: np.ndarray
    rel_lik: np.ndarray
    mle: WeibullFit
    mle_outside: bool

    def to_csv(self, path: str | os.PathLike) -> None:
        with open(path, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["zeta", "lambda", "rel_lik"])
            for i, z in enumerate(self.shapes):
                for j, lam in enumerate(self.scales):
                    w.writerow([f"{z:.10g}", f"{lam:.10g}", f"{self.rel_lik[i, j]:.10g}"])


def default_ranges(fit: WeibullFit) -> tuple[tuple[float, float], tuple[float, float]]:
    return (0.75 * fit.shape, 1.25 * fit.shape), (0.85 * fit.scale, 1.15 * fit.scale)


def relative_likelihood_grid(times, events, shape_range=None, scale_range=None,
                             resolution: int | tuple[int, int] = 100,
                             mle: WeibullFit | None = None) -> ContourGrid:
    """Likelihood over a shape x scale grid, normalized by the MLE."""
    times = np.asarray(times, dtype=float)
    events = np.asarray(events, dtype=float)
    if mle is None:
        mle = fit_weibull_mle(times, events)
    dz, dl = default_ranges(mle)
    shape_range = shape_range or dz
    scale_range = scale_range or dl
    nz, nl = (resolution, resolution) if np.isscalar(resolution) else resolution
    if nz < 2 or nl < 2:
        raise ValueError("resolution must be at least 2 per axis")
    shapes = np.linspace(*shape_range, nz)
    scales = np.linspace(*scale_range, nl)
    if min(shapes[0], scales[0]) <= 0:
        raise ValueError("grid ranges must be positive")
    log_t = np.log(times)
    n_ev = events.sum()
    sum_dlogt = float(events @ log_t)
    ll = np.empty((nz, nl))
    for i, z in enumerate(shapes):
        # sum(d*(log z - z log lam + (z-1) log t)) - sum((t/lam)^z)
        tz = np.exp(z * log_t).sum()
        ll[i] = (n_ev * (math.log(z) - z * np.log(scales)) + (z - 1) * sum_dlogt
                 - tz * scales ** (-z))
    outside = not (shape_range[0] <= mle.shape <= shape_range[1]
                   and scale_range[0] <= mle.scale <= scale_range[1])
    if outside:
        warnings.warn("likelihood grid does not bracket the MLE", stacklevel=2)
    # Guard against grid points a hair above the optimizer's optimum.
    ref = max(mle.loglik, float(ll.max()))
    return ContourGrid(shapes, scales, np.exp(ll - ref), mle, outside)
