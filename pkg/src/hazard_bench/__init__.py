"""Survival models and a benchmark harness for censored time-to-event data."""

from .dataset import (DesignMatrix, SubjectRecord, SurvivalDataset, load_csv, prepare,
                      split_paper, standardize)
from .metrics import EvaluationReport, concordance_index, evaluate_model, rmse_uncensored
from .nonparametric import StepSurvivalCurve, greenwood_variance, kaplan_meier, logrank_statistic

__version__ = "0.1.0"

__all__ = [
    "DesignMatrix", "EvaluationReport", "StepSurvivalCurve", "SubjectRecord",
    "SurvivalDataset", "concordance_index", "evaluate_model", "greenwood_variance",
    "kaplan_meier", "load_csv", "logrank_statistic", "prepare", "rmse_uncensored",
    "split_paper", "standardize",
]
