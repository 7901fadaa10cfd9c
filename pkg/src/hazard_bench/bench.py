"""Benchmark orchestration: fit every requested model and write the tables."""

from __future__ import annotations

import configparser
import csv
import hashlib
import json
import logging
import math
import os
import time
import traceback
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import bayes, coxph, deepsurv, parametric, rsf
from .dataset import ENCODINGS, PreparedData, prepare
from .metrics import EvaluationReport, evaluate_model
from .nonparametric import kaplan_meier

log = logging.getLogger(__name__)

MODELS = ("weibull", "weibull-aft", "weibull-aft-bayes", "aft-frailty-bayes", "coxph",
          "rsf", "deepsurv")
EXTRA_MODELS = ("weibull-bayes",)
ALIASES = {
    "aft": "weibull-aft",
    "aft-bayes": "weibull-aft-bayes",
    "aft-frailty": "aft-frailty-bayes",
    "frailty": "aft-frailty-bayes",
    "cox": "coxph",
}
DISPLAY = {
    "weibull": "Weibull",
    "weibull-bayes": "Weibull (Bayesian)",
    "weibull-aft": "Weibull AFT",
    "weibull-aft-bayes": "Weibull AFT (Bayesian)",
    "aft-frailty-bayes": "Weibull AFT with Gamma Frailty",
    "coxph": "CoxPH",
    "rsf": "Random Survival Forest",
    "deepsurv": "DeepSurv",
}
DETERMINISTIC = ("weibull", "weibull-aft", "coxph")


def canonical_model(name: str) -> str:
    name = name.strip().lower().replace("_", "-")
    name = ALIASES.get(name, name)
    if name not in MODELS + EXTRA_MODELS:
        raise ValueError(f"unknown model {name!r}; choose from {', '.join(MODELS + EXTRA_MODELS)}")
    return name


# -- configuration ----------------------------------------------------------

@dataclass(frozen=True)
class BayesSettings:
    draws: int = 20_000
    burn: int = 5_000
    chains: int = 4
    target_accept: float = 0.30
    jobs: int = 1


@dataclass(frozen=True)
class RsfSettings:
    trees: int = 500
    mtry: int | None = None
    min_leaf_size: int = 15
    min_split_events: int = 3
    jobs: int = 1


@dataclass(frozen=True)
class DeepSurvSettings:
    hidden: int = 16
    learning_rate: float = 1e-2
    epochs: int = 2000
    weight_decay: float = 1e-4


@dataclass(frozen=True)
class BenchConfig:
    data: str | None = None
    models: tuple[str, ...] = MODELS
    seed: int = 7
    out: str = "bench_out"
    encoding: str = "ordinal"
    standardize_on: str = "train"
    rank_by: str = "time"
    curves: int = 10
    contour_resolution: int = 100
    bayes: BayesSettings = BayesSettings()
    rsf: RsfSettings = RsfSettings()
    deepsurv: DeepSurvSettings = DeepSurvSettings()

    def __post_init__(self):
        if not self.models:
            raise ValueError("at least one model must be requested")
        object.__setattr__(self, "models", tuple(canonical_model(m) for m in self.models))
        if self.encoding not in ENCODINGS:
            raise ValueError(f"encoding must be one of {ENCODINGS}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["models"] = list(self.models)
        return d

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


_SECTIONS = {"bayes": BayesSettings, "rsf": RsfSettings, "deepsurv": DeepSurvSettings}


def _coerce(value: str, current):
    if isinstance(current, bool):
        return value.strip().lower() in ("1", "true", "yes", "on")
    if isinstance(current, int) or current is None:
        if value.strip().lower() in ("", "none", "auto"):
            return None
        return int(value)
    if isinstance(current, float):
        return float(value)
    return value.strip()


def load_config(path: str | os.PathLike, **overrides) -> BenchConfig:
    """Read an INI-style file with a ``[bench]`` section and per-model sections.

    Keyword ``overrides`` (``None`` values ignored) win over the file.
    """
    parser = configparser.ConfigParser()
    if not parser.read(path, encoding="utf-8"):
        raise FileNotFoundError(f"config file not found: {path}")
    base = BenchConfig()
    kwargs: dict = {}
    if parser.has_section("bench"):
        for key, value in parser.items("bench"):
            key = key.replace("-", "_")
            if key == "models":
                kwargs["models"] = tuple(m for m in value.replace(",", " ").split() if m)
            elif key in {f.name for f in fields(BenchConfig)} and key not in _SECTIONS:
                kwargs[key] = _coerce(value, getattr(base, key))
            else:
                raise ValueError(f"unknown [bench] key {key!r}")
    for section, cls in _SECTIONS.items():
        if not parser.has_section(section):
            continue
        current = getattr(base, section)
        sub = {}
        for key, value in parser.items(section):
            key = key.replace("-", "_")
            if not hasattr(current, key):
                raise ValueError(f"unknown [{section}] key {key!r}")
            sub[key] = _coerce(value, getattr(current, key))
        kwargs[section] = replace(current, **sub)
    cfg = BenchConfig(**kwargs)
    return apply_overrides(cfg, **overrides)


def apply_overrides(cfg: BenchConfig, **overrides) -> BenchConfig:
    top, nested = {}, {s: {} for s in _SECTIONS}
    for key, value in overrides.items():
        if value is None:
            continue
        if "." in key:
            section, sub = key.split(".", 1)
            nested[section][sub] = value
        else:
            top[key] = value
    for section, sub in nested.items():
        if sub:
            top[section] = replace(getattr(cfg, section), **sub)
    return replace(cfg, **top) if top else cfg


# -- model runners ----------------------------------------------------------

@dataclass
class ModelResult:
    name: str
    predicted_times: np.ndarray
    risk_scores: np.ndarray
    curves: Callable[[np.ndarray, np.ndarray], dict]
    restricted: np.ndarray | None = None
    artifacts: dict = field(default_factory=dict)


def _step_medians(curves, horizon):
    meds = [parametric.curve_median(c, horizon) for c in curves]
    return np.array([m.time for m in meds]), np.array([m.restricted for m in meds])


def run_model(name: str, data: PreparedData, cfg: BenchConfig) -> ModelResult:
    """Fit ``name`` on the training rows and predict the test rows."""
    train, test = data.train, data.test
    horizon = float(train.times.max())
    name = canonical_model(name)

    if name == "weibull":
        fit = parametric.fit_weibull_mle(train.times, train.events)
        med = parametric.predicted_median_time(fit).time
        pred = np.full(test.n, med)

        def curves(X, grid):
            return {"survival": np.tile(parametric.weibull_survival(fit, grid), (len(X), 1))}
        return ModelResult(name, pred, np.zeros(test.n), curves, artifacts={"fit": fit})

    if name == "weibull-aft":
        fit = parametric.fit_weibull_aft_mle(train)
        pred = np.asarray(parametric.predicted_median_time(fit, test.X).time)
        return ModelResult(name, pred, -np.log(pred),
                           lambda X, grid: {"survival": parametric.aft_predict_survival(fit, X, grid)},
                           artifacts={"fit": fit})

    if name in ("weibull-bayes", "weibull-aft-bayes", "aft-frailty-bayes"):
        kind = {"weibull-bayes": "weibull", "weibull-aft-bayes": "aft",
                "aft-frailty-bayes": "aft_frailty"}[name]
        b = cfg.bayes
        sc = bayes.SamplerConfig(steps=b.draws, burn=b.burn, seed=cfg.seed,
                                 target_accept=b.target_accept, chains=b.chains, jobs=b.jobs)
        fit = bayes.fit_bayes(kind, train, sc)
        pred = fit.predicted_times(test)

        def curves(X, grid):
            out = {"survival": [], "lower": [], "upper": []}
            for x in X:
                pc = fit.curve(x, grid)
                out["survival"].append(pc.curve.survival)
                out["lower"].append(pc.lower)
                out["upper"].append(pc.upper)
            return {k: np.array(v) for k, v in out.items()}
        return ModelResult(name, pred, -np.log(pred), curves, artifacts={"fit": fit})

    if name == "coxph":
        fit = coxph.fit_coxph(train)
        test_curves = [coxph.cox_predict_curve(fit, x) for x in test.X]
        pred, restricted = _step_medians(test_curves, horizon)
        return ModelResult(name, pred, fit.linear_predictor(test.X),
                           lambda X, grid: {"survival": coxph.cox_predict_survival(fit, X, grid)},
                           restricted, {"fit": fit})

    if name == "rsf":
        r = cfg.rsf
        forest = rsf.fit_rsf(train, rsf.ForestConfig(r.trees, r.mtry, r.min_leaf_size,
                                                     r.min_split_events, cfg.seed, r.jobs))
        test_curves = [rsf.rsf_predict_curve(forest, x) for x in test.X]
        pred, restricted = _step_medians(test_curves, horizon)
        risk = np.array([rsf.rsf_risk_score(forest, x) for x in test.X])

        def curves(X, grid):
            return {"survival": np.array([rsf.rsf_predict_curve(forest, x)(grid) for x in X])}
        return ModelResult(name, pred, risk, curves, restricted, {"forest": forest})

    if name == "deepsurv":
        d = cfg.deepsurv
        fit = deepsurv.train_deepsurv(train, deepsurv.TrainConfig(
            d.hidden, d.learning_rate, d.epochs, d.weight_decay, cfg.seed))
        test_curves = [fit.curve(x) for x in test.X]
        pred, restricted = _step_medians(test_curves, horizon)

        def curves(X, grid):
            return {"survival": np.array([fit.curve(x)(grid) for x in X])}
        return ModelResult(name, pred, fit.risk(test.X), curves, restricted, {"fit": fit})

    raise AssertionError(name)


def evaluate(result: ModelResult, data: PreparedData, rank_by: str = "time") -> EvaluationReport:
    return evaluate_model(result.name, result.predicted_times, result.risk_scores,
                          data.test.times, data.test.events, rank_by=rank_by)


# -- output -----------------------------------------------------------------

def curve_grid(data: PreparedData) -> np.ndarray:
    return np.concatenate(([0.0], np.unique(data.train.times[data.train.events == 1])))


def write_curves(result: ModelResult, data: PreparedData, n: int, path: Path) -> None:
    grid = curve_grid(data)
    X = data.test.X[:n]
    ids = data.test.ids[:n]
    cols = result.curves(X, grid)
    keys = [k for k in ("survival", "lower", "upper") if k in cols]
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["subject_id", "time", *keys])
        for i, sid in enumerate(ids):
            for k, t in enumerate(grid):
                w.writerow([sid, f"{t:g}", *(f"{cols[c][i][k]:.8f}" for c in keys)])


def write_probplot(data: PreparedData, path: Path) -> None:
    """KM and fitted-Weibull points on the log(-log S) vs log t scale."""
    km = kaplan_meier(data.train.times, data.train.events)
    fit = parametric.fit_weibull_mle(data.train.times, data.train.events)
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["time", "log_time", "km_survival", "km_loglog", "weibull_loglog"])
        for t, s in zip(km.times, km.survival):
            if not 0 < s < 1:
                continue
            w.writerow([f"{t:g}", f"{math.log(t):.8f}", f"{s:.8f}",
                        f"{math.log(-math.log(s)):.8f}",
                        f"{fit.shape * (math.log(t) - math.log(fit.scale)):.8f}"])


def write_table1(reports: list[EvaluationReport], path: Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["model", "c_index", "rmse"])
        for r in reports:
            w.writerow([DISPLAY[r.model_name], f"{r.c_index:.6f}", f"{r.rmse:.4f}"])


def write_table2(reports: dict[str, EvaluationReport], path: Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["model", "rmse", "c_index"])
        for name in ("weibull-aft-bayes", "weibull-aft"):
            if name in reports:
                r = reports[name]
                w.writerow([DISPLAY[name], f"{r.rmse:.4f}", f"{r.c_index:.6f}"])


def emit_report(reports: list[EvaluationReport]) -> str:
    """Aligned text table sorted by C-index; ``*`` marks the best value."""
    if not reports:
        return "no models run"
    rows = sorted(reports, key=lambda r: (-r.c_index, r.rmse))
    best_c = max(r.c_index for r in reports)
    best_rmse = min(r.rmse for r in reports)
    width = max(len(DISPLAY.get(r.model_name, r.model_name)) for r in rows)
    lines = [f"{'Model':<{width}}  {'C-Index':>9}  {'RMSE':>10}",
             "-" * (width + 24)]
    for r in rows:
        c = f"{r.c_index:.3f}" + ("*" if r.c_index == best_c else " ")
        e = f"{r.rmse:.2f}" + ("*" if r.rmse == best_rmse else " ")
        lines.append(f"{DISPLAY.get(r.model_name, r.model_name):<{width}}  {c:>9}  {e:>10}")
    return "\n".join(lines)


@dataclass
class BenchResult:
    reports: list[EvaluationReport]
    failures: dict[str, str]
    manifest: dict
    out: Path

    @property
    def ok(self) -> bool:
        return not self.failures


def run_benchmark(cfg: BenchConfig, data: PreparedData | None = None) -> BenchResult:
    """Run every requested model, isolating failures, and write all outputs."""
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    if data is None:
        data = prepare(cfg.data, cfg.encoding, cfg.standardize_on)
    files: list[str] = []
    reports: dict[str, EvaluationReport] = {}
    failures: dict[str, str] = {}
    per_model: dict[str, dict] = {}

    def wrote(name: str) -> None:
        files.append(name)

    for name in cfg.models:
        t0 = time.perf_counter()
        entry = {"seed": cfg.seed, "deterministic": name in DETERMINISTIC}
        try:
            result = run_model(name, data, cfg)
            report = evaluate(result, data, cfg.rank_by)
            reports[name] = report
            write_curves(result, data, cfg.curves, out / f"curves_{name}.csv")
            wrote(f"curves_{name}.csv")
            report.write_subjects(out / f"predictions_{name}.csv")
            wrote(f"predictions_{name}.csv")
            if result.restricted is not None:
                entry["restricted_mean_predictions"] = int(result.restricted.sum())
            art = result.artifacts
            if isinstance(art.get("fit"), bayes.BayesFit):
                s = art["fit"].samples
                s.to_csv(out / f"draws_{name}.csv")
                s.write_diagnostics(out / f"diagnostics_{name}.json")
                wrote(f"draws_{name}.csv")
                wrote(f"diagnostics_{name}.json")
                rh = s.rhat()
                entry["max_split_rhat"] = max(rh.values())
                entry["rhat_flagged"] = [k for k, v in rh.items() if not v < 1.05]
                entry["acceptance_rate"] = s.acceptance_rate
            if name == "coxph":
                coxph.write_hazard_ratios(coxph.hazard_ratios(art["fit"]), out / "table3.csv")
                wrote("table3.csv")
            if name == "rsf":
                art["forest"].write_summary(out / "forest_rsf.json")
                wrote("forest_rsf.json")
            if name == "deepsurv":
                art["fit"].write_losses(out / "loss_deepsurv.csv")
                art["fit"].net.save_csv(out / "weights_deepsurv.csv")
                wrote("loss_deepsurv.csv")
                wrote("weights_deepsurv.csv")
            entry["status"] = "ok"
            entry["c_index"] = report.c_index
            entry["rmse"] = report.rmse
        except Exception as exc:  # one model failing must not abort the run
            log.exception("model %s failed", name)
            failures[name] = f"{type(exc).__name__}: {exc}"
            entry["status"] = "failed"
            entry["error"] = failures[name]
            entry["traceback"] = traceback.format_exc()
        entry["wall_time_s"] = round(time.perf_counter() - t0, 3)
        per_model[name] = entry

    ordered = [reports[m] for m in cfg.models if m in reports]
    write_table1(ordered, out / "table1.csv")
    wrote("table1.csv")
    if "weibull-aft" in reports or "weibull-aft-bayes" in reports:
        write_table2(reports, out / "table2.csv")
        wrote("table2.csv")
    try:
        grid = parametric.relative_likelihood_grid(data.train.times, data.train.events,
                                                   resolution=cfg.contour_resolution)
        grid.to_csv(out / "contours.csv")
        wrote("contours.csv")
        write_probplot(data, out / "probplot.csv")
        wrote("probplot.csv")
    except Exception as exc:
        failures["figures"] = f"{type(exc).__name__}: {exc}"

    manifest = {
        "config": cfg.to_dict(),
        "config_hash": cfg.hash(),
        "seed": cfg.seed,
        "n_train": data.train.n,
        "n_test": data.test.n,
        "models": per_model,
        "failures": failures,
        "files": sorted(set(files)),
    }
    with open(out / "manifest.json", "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    return BenchResult(ordered, failures, manifest, out)
