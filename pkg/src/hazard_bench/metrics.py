"""Concordance, RMSE and confidence bands for survival predictions."""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .nonparametric import StepSurvivalCurve


class NoComparablePairsError(ValueError):
    pass


def concordance_index(predicted_times, observed_times, events) -> tuple[float, int]:
    """Harrell's C on predicted survival times.

    A pair is comparable when the shorter observed time is an event; pairs
    with equal observed times are skipped. Longer predicted time for the
    longer survivor is concordant, and tied predictions count one half.
    """
    p = np.asarray(predicted_times, dtype=float)
    t = np.asarray(observed_times, dtype=float)
    e = np.asarray(events)
    if not (p.shape == t.shape == e.shape):
        raise ValueError("inputs must have equal length")
    # rows i = shorter time with event, columns j = strictly longer time
    comparable = (t[:, None] < t[None, :]) & (e[:, None] == 1)
    pairs = int(comparable.sum())
    if pairs == 0:
        raise NoComparablePairsError("no comparable pairs")
    conc = np.sum(comparable & (p[:, None] < p[None, :]))
    ties = np.sum(comparable & (p[:, None] == p[None, :]))
    return float((conc + 0.5 * ties) / pairs), pairs


def rmse_uncensored(predicted_times, observed_times, events) -> float:
    p = np.asarray(predicted_times, dtype=float)
    t = np.asarray(observed_times, dtype=float)
    mask = np.asarray(events) == 1
    if not mask.any():
        raise ValueError("RMSE needs at least one uncensored subject")
    return float(np.sqrt(np.mean((t[mask] - p[mask]) ** 2)))


@dataclass(frozen=True)
class ConfidenceBand:
    """``lower``/``upper`` are NaN where ``skipped`` (S is 0 or 1)."""

    times: np.ndarray
    estimate: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    skipped: np.ndarray


def cloglog_confidence_band(curve: StepSurvivalCurve, variances, alpha: float = 0.05
                            ) -> ConfidenceBand:
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    s = curve.survival
    sd = np.sqrt(np.asarray(variances, dtype=float))
    z = norm.ppf(1 - alpha / 2)
    skipped = (s <= 0) | (s >= 1)
    safe = np.where(skipped, 0.5, s)
    s_cl = sd / (safe * np.abs(np.log(safe)))
    lower = np.where(skipped, np.nan, safe ** np.exp(z * s_cl))
    upper = np.where(skipped, np.nan, safe ** np.exp(-z * s_cl))
    return ConfidenceBand(curve.times, s, lower, upper, skipped)


@dataclass
class EvaluationReport:
    model_name: str
    c_index: float
    rmse: float
    n_pairs_used: int
    n_uncensored_used: int
    predicted_time: np.ndarray = field(repr=False)
    risk_score: np.ndarray = field(repr=False)
    observed_time: np.ndarray = field(repr=False)
    status: np.ndarray = field(repr=False)
    ranked_by: str = "time"

    def write_subjects(self, path: str | os.PathLike) -> None:
        with open(path, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["predicted_time", "risk_score", "observed_time", "status"])
            for row in zip(self.predicted_time, self.risk_score, self.observed_time, self.status):
                w.writerow([f"{row[0]:.6f}", f"{row[1]:.6f}", f"{row[2]:g}", int(row[3])])


def evaluate_model(name: str, predicted_times, risk_scores, observed_times, events,
                   rank_by: str = "time") -> EvaluationReport:
    """Score one model on held-out subjects.

    ``rank_by="risk"`` ranks on negated risk scores instead of predicted
    times for the C-index; RMSE always uses predicted times.
    """
    pred = np.asarray(predicted_times, dtype=float)
    risk = np.asarray(risk_scores, dtype=float)
    obs = np.asarray(observed_times, dtype=float)
    ev = np.asarray(events).astype(int)
    if rank_by == "time":
        c, pairs = concordance_index(pred, obs, ev)
    elif rank_by == "risk":
        c, pairs = concordance_index(-risk, obs, ev)
    else:
        raise ValueError("rank_by must be 'time' or 'risk'")
    rmse = rmse_uncensored(pred, obs, ev)
    return EvaluationReport(name, c, rmse, pairs, int(ev.sum()), pred, risk, obs, ev, rank_by)
