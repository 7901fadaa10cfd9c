"""Product-limit survival curves, Greenwood variance and the log-rank test."""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class StepSurvivalCurve:
    """Right-continuous step function with ``S(t) = 1`` before ``times[0]``.

    ``at_risk`` and ``events_at`` are only meaningful for curves estimated
    directly from data; model-derived curves may leave them as ``None``. An
    empty curve represents ``S ≡ 1``.
    """

    times: np.ndarray
    survival: np.ndarray
    at_risk: np.ndarray | None = None
    events_at: np.ndarray | None = None

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        s = np.asarray(self.survival, dtype=float)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "survival", s)
        if t.shape != s.shape or t.ndim != 1:
            raise ValueError("times and survival must be 1-D and equally long")
        for name in ("at_risk", "events_at"):
            v = getattr(self, name)
            if v is not None:
                v = np.asarray(v)
                if v.shape != t.shape:
                    raise ValueError(f"{name} must align with times")
                object.__setattr__(self, name, v)
        if t.size and np.any(np.diff(t) <= 0):
            raise ValueError("curve times must be strictly increasing")
        if s.size and (np.any(s < -1e-12) or np.any(s > 1 + 1e-12)):
            raise ValueError("survival values must lie in [0, 1]")
        if s.size > 1 and np.any(np.diff(s) > 1e-12):
            raise ValueError("survival must be non-increasing")

    def __len__(self) -> int:
        return self.times.size

    def __call__(self, t) -> np.ndarray:
        """Evaluate the step function, right-continuously, at ``t``."""
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.times, t, side="right") - 1
        padded = np.concatenate(([1.0], self.survival))
        return padded[idx + 1]

    def to_csv(self, path: str | os.PathLike) -> None:
        with open(path, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["time", "survival", "at_risk", "events"])
            for k in range(len(self)):
                w.writerow([f"{self.times[k]:.10g}", f"{self.survival[k]:.10g}",
                            "" if self.at_risk is None else int(self.at_risk[k]),
                            "" if self.events_at is None else int(self.events_at[k])])


def risk_table(times, events) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Distinct event times with risk-set sizes and event counts."""
    times = np.asarray(times, dtype=float)
    events = np.asarray(events)
    uniq = np.unique(times[events == 1])
    sorted_t = np.sort(times)
    n_at = times.size - np.searchsorted(sorted_t, uniq, side="left")
    ev_t = np.sort(times[events == 1])
    d = np.searchsorted(ev_t, uniq, side="right") - np.searchsorted(ev_t, uniq, side="left")
    return uniq, n_at, d


def kaplan_meier(times, events) -> StepSurvivalCurve:
    times = np.asarray(times, dtype=float)
    events = np.asarray(events)
    if times.shape != events.shape:
        raise ValueError("times and events must have the same length")
    if np.any(times <= 0):
        raise ValueError("times must be positive")
    if not np.any(events == 1):
        raise ValueError("no event times")
    uniq, n_at, d = risk_table(times, events)
    surv = np.cumprod((n_at - d) / n_at)
    return StepSurvivalCurve(uniq, surv, n_at, d)


@dataclass(frozen=True)
class GreenwoodVariance:
    variance: np.ndarray
    saturated: np.ndarray

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.variance, dtype=dtype)


def greenwood_variance(curve: StepSurvivalCurve) -> GreenwoodVariance:
    """Greenwood's variance of a product-limit curve at each step time.

    Where the risk set is exhausted (``n_j == d_j``) the sum is undefined;
    the left-limit variance is carried forward and the step is flagged.
    """
    if curve.at_risk is None or curve.events_at is None:
        raise ValueError("Greenwood variance needs risk-set counts")
    n = curve.at_risk.astype(float)
    d = curve.events_at.astype(float)
    saturated = n <= d
    terms = np.where(saturated, 0.0, d / np.where(saturated, 1.0, n * (n - d)))
    acc = np.cumsum(terms)
    var = curve.survival ** 2 * acc
    for k in np.flatnonzero(saturated):
        var[k] = var[k - 1] if k > 0 else 0.0
    return GreenwoodVariance(var, saturated)


def logrank_statistic(times_a, events_a, times_b, events_b) -> float:
    """Two-sample log-rank chi-square statistic."""
    ta = np.asarray(times_a, dtype=float)
    tb = np.asarray(times_b, dtype=float)
    ea = np.asarray(events_a)
    eb = np.asarray(events_b)
    if ta.size == 0 or tb.size == 0:
        raise ValueError("both groups must be non-empty")
    t = np.concatenate([ta, tb])
    e = np.concatenate([ea, eb])
    if not np.any(e == 1):
        raise ValueError("no events in either group")
    uniq = np.unique(t[e == 1])
    n_a = (ta[None, :] >= uniq[:, None]).sum(1).astype(float)
    n = (t[None, :] >= uniq[:, None]).sum(1).astype(float)
    d_a = ((ta[None, :] == uniq[:, None]) & (ea[None, :] == 1)).sum(1)
    d = ((t[None, :] == uniq[:, None]) & (e[None, :] == 1)).sum(1).astype(float)
    o_minus_e = np.sum(d_a - d * n_a / n)
    frac = n_a / n
    with np.errstate(invalid="ignore", divide="ignore"):
        v = np.where(n > 1, d * frac * (1 - frac) * (n - d) / (n - 1), 0.0)
    total_v = v.sum()
    if total_v <= 0:
        return 0.0
    return float(o_minus_e ** 2 / total_v)
