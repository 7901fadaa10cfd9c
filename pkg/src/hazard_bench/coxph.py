"""Cox proportional hazards with Breslow ties."""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np

from .dataset import DesignMatrix
from .nonparametric import StepSurvivalCurve

Z_95 = 1.959963984540054


class DivergenceError(RuntimeError):
    """Coefficients escaped to infinity (monotone likelihood)."""


class SingularHessianError(RuntimeError):
    pass


@dataclass(frozen=True)
class BaselineHazard:
    """Breslow baseline at the distinct event times.

    ``increments`` are the usual cumulative-hazard jumps ``d_j / S0_j``.
    ``xi`` and ``interval_rate`` give the interval form
    ``(1 - xi_j) / (t_{j+1} - t_j)``, where the time after the last event is
    the largest observed time. ``last_interval_degenerate`` marks the case
    where that interval has zero length, which makes the last rate NaN.
    """

    event_times: np.ndarray
    events: np.ndarray
    risk_sums: np.ndarray
    increments: np.ndarray
    cumulative: np.ndarray
    xi: np.ndarray
    interval_rate: np.ndarray
    last_interval_degenerate: bool

    def cumhaz(self, t) -> np.ndarray:
        idx = np.searchsorted(self.event_times, np.asarray(t, dtype=float), side="right")
        return np.concatenate(([0.0], self.cumulative))[idx]


@dataclass(frozen=True)
class CoxFit:
    beta: np.ndarray
    loglik_partial: float
    standard_errors: np.ndarray
    converged: bool
    baseline: BaselineHazard
    columns: tuple[str, ...] = ()
    stds: np.ndarray | None = None
    iterations: int = 0

    def linear_predictor(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.beta.size:
            raise ValueError(f"expected {self.beta.size} covariates, got {x.shape[-1]}")
        return x @ self.beta


def _risk_sets(times, events):
    """Sorted order and, for each distinct event time, first sorted index at risk."""
    times = np.asarray(times, dtype=float)
    events = np.asarray(events)
    order = np.argsort(times, kind="stable")
    st = times[order]
    uniq = np.unique(times[events == 1])
    start = np.searchsorted(st, uniq, side="left")
    ev_sorted = np.sort(times[events == 1])
    d = (np.searchsorted(ev_sorted, uniq, side="right")
         - np.searchsorted(ev_sorted, uniq, side="left")).astype(float)
    return order, uniq, start, d


def _rev_cumsum(a):
    return np.cumsum(a[::-1], axis=0)[::-1]


def partial_loglik_from_risk(eta, times, events, *, grad_eta: bool = False):
    """Breslow partial log-likelihood as a function of per-subject risk scores.

    With ``grad_eta`` also returns the derivative with respect to ``eta``.
    """
    eta = np.asarray(eta, dtype=float)
    events = np.asarray(events, dtype=float)
    order, uniq, start, d = _risk_sets(times, events)
    m = eta.max() if eta.size else 0.0
    w = np.exp(eta - m)
    s0 = _rev_cumsum(w[order])[start]
    value = float(events @ eta - np.sum(d * (np.log(s0) + m)))
    if not grad_eta:
        return value
    # subject i is in risk sets j with u_j <= t_i
    ncum = np.searchsorted(uniq, np.asarray(times, dtype=float), side="right")
    ratio = np.concatenate(([0.0], np.cumsum(d / s0)))
    g = events - w * ratio[ncum]
    return value, g


def cox_partial_loglik(beta, X, times=None, events=None, *, derivatives: bool = False):
    """Partial log-likelihood; ``X`` may be a :class:`DesignMatrix`.

    With ``derivatives`` returns ``(value, gradient, hessian)``.
    """
    if isinstance(X, DesignMatrix):
        times, events, X = X.times, X.events, X.X
    X = np.asarray(X, dtype=float)
    beta = np.asarray(beta, dtype=float)
    events = np.asarray(events, dtype=float)
    eta = X @ beta
    if not derivatives:
        return partial_loglik_from_risk(eta, times, events)
    order, uniq, start, d = _risk_sets(times, events)
    m = eta.max()
    w = np.exp(eta - m)
    Xs, ws = X[order], w[order]
    s0 = _rev_cumsum(ws)[start]
    s1 = _rev_cumsum(ws[:, None] * Xs)[start]
    s2 = _rev_cumsum(ws[:, None, None] * Xs[:, :, None] * Xs[:, None, :])[start]
    value = float(events @ eta - np.sum(d * (np.log(s0) + m)))
    mean = s1 / s0[:, None]
    g = events @ X - d @ mean
    H = -np.einsum("j,jab->ab", d, s2 / s0[:, None, None] - mean[:, :, None] * mean[:, None, :])
    return value, g, H


def breslow_from_risk(eta, times, events) -> BaselineHazard:
    times = np.asarray(times, dtype=float)
    events = np.asarray(events, dtype=float)
    eta = np.asarray(eta, dtype=float)
    order, uniq, start, d = _risk_sets(times, events)
    s0 = _rev_cumsum(np.exp(eta)[order])[start]
    inc = d / s0
    xi = np.exp(-inc)
    nxt = np.concatenate((uniq[1:], [times.max()]))
    width = nxt - uniq
    degenerate = bool(width[-1] <= 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        rate = np.where(width > 0, (1 - xi) / np.where(width > 0, width, 1.0), np.nan)
    return BaselineHazard(uniq, d, s0, inc, np.cumsum(inc), xi, rate, degenerate)


def breslow_baseline(fit_or_beta, X: DesignMatrix) -> BaselineHazard:
    beta = fit_or_beta.beta if isinstance(fit_or_beta, CoxFit) else np.asarray(fit_or_beta)
    return breslow_from_risk(X.X @ beta, X.times, X.events)


def fit_coxph(X: DesignMatrix, *, tol: float = 1e-8, max_iter: int = 200,
              divergence_bound: float = 50.0) -> CoxFit:
    """Newton-Raphson from ``beta = 0`` with step-halving."""
    if X.events.sum() < 1:
        raise ValueError("need at least one event")
    const = [c for j, c in enumerate(X.columns) if np.ptp(X.X[:, j]) == 0]
    if const:
        raise ValueError(f"constant covariate column(s): {', '.join(const)}")
    beta = np.zeros(X.p)
    value, g, H = cox_partial_loglik(beta, X, derivatives=True)
    converged = False
    it = 0
    step = None
    for it in range(1, max_iter + 1):
        try:
            step = np.linalg.solve(H, -g)
        except np.linalg.LinAlgError:
            if step is None:
                raise SingularHessianError("Hessian is singular; check for collinear covariates") from None
            # Information vanished mid-run: one subject dominates its risk sets
            # (monotone likelihood). Keep heading the same way so the bound trips.
        t = 1.0
        while True:
            cand = beta + t * step
            cv = cox_partial_loglik(cand, X)
            if np.isfinite(cv) and cv >= value - 1e-12 * abs(value):
                break
            t *= 0.5
            if t < 1e-12:
                cand, cv = beta, value
                break
        beta = cand
        if np.linalg.norm(beta) > divergence_bound:
            raise DivergenceError(f"|beta| exceeded {divergence_bound} after {it} iterations "
                                  "(monotone likelihood)")
        value, g, H = cox_partial_loglik(beta, X, derivatives=True)
        if np.max(np.abs(g), initial=0.0) < tol and np.max(np.abs(t * step), initial=0.0) < 1e-6:
            converged = True
            break
    if not converged:
        raise RuntimeError(f"Newton-Raphson did not converge in {max_iter} iterations")
    try:
        cov = np.linalg.inv(-H)
    except np.linalg.LinAlgError:
        raise SingularHessianError("information matrix is singular") from None
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    return CoxFit(beta, value, se, converged, breslow_baseline(beta, X), X.columns,
                  X.stds.copy(), it)


def cox_predict_survival(fit: CoxFit, x, t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("t must be non-negative")
    eta = fit.linear_predictor(x)
    H0 = fit.baseline.cumhaz(t)
    if np.ndim(eta) == 0:
        return np.exp(-H0 * np.exp(eta))
    return np.exp(-np.exp(eta)[:, None] * H0[None, :])


def survival_curve_from_baseline(baseline: BaselineHazard, eta: float) -> StepSurvivalCurve:
    return StepSurvivalCurve(baseline.event_times,
                             np.exp(-baseline.cumulative * np.exp(eta)))


def cox_predict_curve(fit: CoxFit, x) -> StepSurvivalCurve:
    return survival_curve_from_baseline(fit.baseline, float(fit.linear_predictor(x)))


@dataclass(frozen=True)
class HazardRatio:
    covariate: str
    ratio: float
    lower: float
    upper: float


def hazard_ratios(fit: CoxFit) -> list[HazardRatio]:
    """Per-raw-unit hazard ratios with Wald 95% intervals."""
    stds = fit.stds if fit.stds is not None else np.ones(fit.beta.size)
    names = fit.columns or tuple(f"x{j}" for j in range(fit.beta.size))
    out = []
    for name, b, se, sd in zip(names, fit.beta, fit.standard_errors, stds):
        out.append(HazardRatio(name, float(np.exp(b / sd)),
                               float(np.exp((b - Z_95 * se) / sd)),
                               float(np.exp((b + Z_95 * se) / sd))))
    return out


def write_hazard_ratios(rows: list[HazardRatio], path: str | os.PathLike) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["covariate", "hazard_ratio", "lower_95", "upper_95"])
        for r in rows:
            w.writerow([r.covariate, f"{r.ratio:.6f}", f"{r.lower:.6f}", f"{r.upper:.6f}"])


def format_hazard_ratios(rows: list[HazardRatio]) -> str:
    lines = [f"{'covariate':<10} {'HR':>8} {'95% CI':>20}"]
    for r in rows:
        lines.append(f"{r.covariate:<10} {r.ratio:8.3f}   [{r.lower:7.3f}, {r.upper:7.3f}]")
    return "\n".join(lines)
