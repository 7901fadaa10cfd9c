"""Bayesian Weibull models sampled with adaptive random-walk Metropolis.

Parameters are sampled on an unconstrained scale:

* ``weibull``      -> ``[log shape, log scale]``
* ``aft``          -> ``[log shape, beta_0, beta_1, ..., beta_p]``
* ``aft_frailty``  -> ``[log shape, beta_0, ..., beta_p, log theta]``

The frailty model gives each subject a Gamma(theta, theta) multiplier on the
hazard, integrated out in closed form, so frailty variance is ``1/theta``.
"""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .dataset import DesignMatrix
from .nonparametric import StepSurvivalCurve
from .parametric import aft_loglik, fit_weibull_aft_mle, fit_weibull_mle

KINDS = ("weibull", "aft", "aft_frailty")
_LOG_2PI = math.log(2 * math.pi)


# -- sampler ----------------------------------------------------------------

@dataclass(frozen=True)
class SamplerConfig:
    steps: int = 20_000
    burn: int = 5_000
    seed: int = 7
    target_accept: float = 0.30
    chains: int = 4
    adapt_every: int = 50
    jobs: int = 1


@dataclass
class PosteriorSamples:
    """Kept draws, chain-major. ``chain_draws`` has shape (chains, kept, params)."""

    chain_draws: np.ndarray
    param_names: list[str]
    log_scale: list[bool]
    acceptance_rate: float
    n_burn: int
    seed: int
    proposal_scales: np.ndarray | None = None

    @property
    def draws(self) -> np.ndarray:
        c, k, p = self.chain_draws.shape
        return self.chain_draws.reshape(c * k, p)

    @property
    def chain_count(self) -> int:
        return self.chain_draws.shape[0]

    def rhat(self) -> dict[str, float]:
        return dict(zip(self.param_names, split_rhat(self.chain_draws)))

    def to_csv(self, path: str | os.PathLike) -> None:
        with open(path, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["chain", *self.param_names])
            for c, chain in enumerate(self.chain_draws):
                for row in chain:
                    w.writerow([c, *(f"{v:.10g}" for v in row)])

    def diagnostics(self) -> dict:
        rh = self.rhat()
        return {
            "param_names": self.param_names,
            "log_scale": self.log_scale,
            "acceptance_rate": self.acceptance_rate,
            "n_burn": self.n_burn,
            "n_kept_per_chain": int(self.chain_draws.shape[1]),
            "chain_count": self.chain_count,
            "seed": self.seed,
            "split_rhat": rh,
            "rhat_flagged": [k for k, v in rh.items() if not v < 1.05],
            "posterior_mean": dict(zip(self.param_names, self.draws.mean(0).tolist())),
            "posterior_sd": dict(zip(self.param_names, self.draws.std(0).tolist())),
        }

    def write_diagnostics(self, path: str | os.PathLike) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.diagnostics(), f, indent=2, sort_keys=True)


def split_rhat(chains: np.ndarray) -> np.ndarray:
    """Split-chain potential scale reduction per parameter."""
    chains = np.asarray(chains, dtype=float)
    n = chains.shape[1] // 2
    halves = np.concatenate([chains[:, :n], chains[:, n:2 * n]], axis=0)
    means = halves.mean(axis=1)
    w = halves.var(axis=1, ddof=1).mean(axis=0)
    b = n * means.var(axis=0, ddof=1)
    var_plus = (n - 1) / n * w + b / n
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.sqrt(var_plus / w)
    return np.where(w > 0, r, 1.0)


def mh_sample(log_posterior: Callable[[np.ndarray], float], init, config: SamplerConfig,
              *, scales=None, seed: int | None = None, param_names=None,
              log_scale=None) -> PosteriorSamples:
    """One adaptive Metropolis-within-Gibbs chain.

    Each sweep proposes a Gaussian move for every coordinate in turn. During
    burn-in the per-coordinate scales are nudged every ``adapt_every`` sweeps
    toward ``config.target_accept``; they are frozen afterward.
    """
    x = np.array(init, dtype=float)
    p = x.size
    if config.steps <= config.burn or config.burn < 0:
        raise ValueError("need steps > burn >= 0")
    cur = log_posterior(x)
    if not np.isfinite(cur):
        raise ValueError("log posterior is not finite at the initial point")
    scale = np.full(p, 0.1) if scales is None else np.array(scales, dtype=float)
    if scale.shape != (p,) or np.any(~(scale > 0)):
        raise ValueError("proposal scales must be positive, one per parameter")
    seed = config.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    kept = np.empty((config.steps - config.burn, p))
    batch_acc = np.zeros(p)
    n_acc_kept = 0
    n_batch = 0
    for step in range(config.steps):
        noise = rng.standard_normal(p)
        logu = np.log(rng.random(p))
        for k in range(p):
            old = x[k]
            x[k] = old + scale[k] * noise[k]
            prop = log_posterior(x)
            if logu[k] < prop - cur:
                cur = prop
                if step < config.burn:
                    batch_acc[k] += 1
                else:
                    n_acc_kept += 1
            else:
                x[k] = old
        if step < config.burn and (step + 1) % config.adapt_every == 0:
            n_batch += 1
            rate = batch_acc / config.adapt_every
            delta = min(0.1, 1.0 / math.sqrt(n_batch))
            scale *= np.exp(np.where(rate > config.target_accept, delta, -delta))
            batch_acc[:] = 0
        if step >= config.burn:
            kept[step - config.burn] = x
    rate = n_acc_kept / (kept.shape[0] * p)
    names = list(param_names) if param_names is not None else [f"p{j}" for j in range(p)]
    flags = list(log_scale) if log_scale is not None else [False] * p
    return PosteriorSamples(kept[None], names, flags, rate, config.burn, seed, scale)


def _chain_job(args):
    log_posterior, init, config, scales, seed = args
    return mh_sample(log_posterior, init, config, scales=scales, seed=seed)


def run_chains(log_posterior, inits: Sequence, config: SamplerConfig, *, scales=None,
               param_names=None, log_scale=None) -> PosteriorSamples:
    """Independent chains seeded ``seed + chain``, merged in chain order."""
    jobs = [(log_posterior, init, config, scales, config.seed + c)
            for c, init in enumerate(inits)]
    if config.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(config.jobs, len(jobs))) as pool:
            results = list(pool.map(_chain_job, jobs))
    else:
        results = [_chain_job(j) for j in jobs]
    draws = np.concatenate([r.chain_draws for r in results], axis=0)
    rate = float(np.mean([r.acceptance_rate for r in results]))
    p = draws.shape[2]
    names = list(param_names) if param_names is not None else [f"p{j}" for j in range(p)]
    flags = list(log_scale) if log_scale is not None else [False] * p
    return PosteriorSamples(draws, names, flags, rate, config.burn, config.seed,
                            np.stack([r.proposal_scales for r in results]))


# -- priors and log posteriors ---------------------------------------------

@dataclass(frozen=True)
class Priors:
    """Normal prior standard deviations; ``None`` makes that prior flat."""

    log_shape_sd: float | None = 1.0
    beta_sd: float | None = 10.0
    log_theta_sd: float | None = 1.5

    @classmethod
    def flat(cls) -> "Priors":
        return cls(None, None, None)


def _normal_logpdf(x, sd) -> float:
    if sd is None:
        return 0.0
    x = np.asarray(x, dtype=float)
    return float(np.sum(-0.5 * (x / sd) ** 2 - math.log(sd) - 0.5 * _LOG_2PI))


def log_prior(params, kind: str, priors: Priors = Priors()) -> float:
    params = np.asarray(params, dtype=float)
    lp = _normal_logpdf(params[0], priors.log_shape_sd)
    if kind == "aft_frailty":
        lp += _normal_logpdf(params[1:-1], priors.beta_sd)
        lp += _normal_logpdf(params[-1], priors.log_theta_sd)
    else:
        lp += _normal_logpdf(params[1:], priors.beta_sd)
    return lp


def frailty_loglik(params, Z, times, events) -> float:
    """Marginal log-likelihood of the Gamma-frailty Weibull AFT model.

    ``Z`` includes the intercept column; ``params = [log shape, beta, log theta]``.
    """
    a = params[0]
    beta = params[1:-1]
    theta = math.exp(params[-1])
    shape = math.exp(a)
    log_t = np.log(times)
    z = shape * (log_t - Z @ beta)
    H = np.exp(z)
    log1p_h = np.log1p(H / theta)
    log_h_unfrail = a + z - log_t
    return float(np.sum(events * (log_h_unfrail - log1p_h) - theta * log1p_h))


def _finite_or_neg_inf(v: float) -> float:
    return v if np.isfinite(v) else -math.inf


def weibull_logposterior(params, times, events, priors: Priors = Priors()) -> float:
    params = np.asarray(params, dtype=float)
    if not np.all(np.isfinite(params)):
        return -math.inf
    t = np.asarray(times, dtype=float)
    Z = np.ones((t.size, 1))
    with np.errstate(over="ignore", invalid="ignore"):
        ll = aft_loglik(params, Z, t, np.asarray(events, dtype=float))
    return _finite_or_neg_inf(ll + log_prior(params, "weibull", priors))


def _design_parts(X):
    """``DesignMatrix`` or raw ``(X, times, events)`` -> (Z with intercept, times, events)."""
    if isinstance(X, DesignMatrix):
        x, times, events = X.X, X.times, X.events
    else:
        x, times, events = X
    x = np.asarray(x, dtype=float)
    return (np.column_stack([np.ones(x.shape[0]), x]), np.asarray(times, dtype=float),
            np.asarray(events, dtype=float))


def aft_logposterior(params, X, priors: Priors = Priors()) -> float:
    """``X`` is a :class:`DesignMatrix` or an ``(X, times, events)`` triple."""
    params = np.asarray(params, dtype=float)
    Z, times, events = _design_parts(X)
    if not (np.all(np.isfinite(params)) and np.all(np.isfinite(Z))):
        return -math.inf
    with np.errstate(over="ignore", invalid="ignore"):
        ll = aft_loglik(params, Z, times, events)
    return _finite_or_neg_inf(ll + log_prior(params, "aft", priors))


def frailty_logposterior(params, X, priors: Priors = Priors()) -> float:
    params = np.asarray(params, dtype=float)
    Z, times, events = _design_parts(X)
    if not (np.all(np.isfinite(params)) and np.all(np.isfinite(Z))):
        return -math.inf
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        ll = frailty_loglik(params, Z, times, events)
    return _finite_or_neg_inf(ll + log_prior(params, "aft_frailty", priors))


class LogPosterior:
    """Picklable log-posterior over a fixed design (intercept included)."""

    def __init__(self, kind: str, Z: np.ndarray, times, events, priors: Priors = Priors()):
        if kind not in KINDS:
            raise ValueError(f"unknown model kind {kind!r}")
        self.kind = kind
        self.Z = np.ascontiguousarray(Z, dtype=float)
        self.times = np.asarray(times, dtype=float)
        self.events = np.asarray(events, dtype=float)
        self.priors = priors

    def __call__(self, params) -> float:
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            if self.kind == "aft_frailty":
                ll = frailty_loglik(params, self.Z, self.times, self.events)
            else:
                ll = aft_loglik(params, self.Z, self.times, self.events)
        return _finite_or_neg_inf(ll + log_prior(params, self.kind, self.priors))


# -- frailty survival -------------------------------------------------------

@dataclass(frozen=True)
class FrailtyModelSpec:
    """``beta[0]`` is the intercept. Frailty variance is ``1 / theta``."""

    shape: float
    beta: np.ndarray
    theta: float

    def __post_init__(self):
        if not (self.shape > 0 and self.theta > 0):
            raise ValueError("shape and theta must be positive")


def frailty_marginal_survival(spec: FrailtyModelSpec, x, t) -> np.ndarray:
    if not spec.theta > 0:
        raise ValueError("theta must be positive")
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    beta = np.asarray(spec.beta, dtype=float)
    lam = math.exp(beta[0] + float(x @ beta[1:]))
    H = (t / lam) ** spec.shape
    return np.exp(-spec.theta * np.log1p(H / spec.theta))


# -- draws -> predictions ---------------------------------------------------

def _unpack(draws: np.ndarray, kind: str, X: np.ndarray):
    """Per-draw shape, per-draw x per-subject log scale, and theta (or None)."""
    shape = np.exp(draws[:, 0])
    if kind == "weibull":
        log_lam = np.repeat(draws[:, 1:2], X.shape[0], axis=1)
        return shape, log_lam, None
    beta = draws[:, 1:-1] if kind == "aft_frailty" else draws[:, 1:]
    log_lam = beta[:, :1] + beta[:, 1:] @ X.T
    theta = np.exp(draws[:, -1]) if kind == "aft_frailty" else None
    return shape, log_lam, theta


def draw_medians(draws: np.ndarray, kind: str, X) -> np.ndarray:
    """Median survival time per (draw, subject)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    shape, log_lam, theta = _unpack(draws, kind, X)
    if theta is None:
        h_half = np.full(shape.shape, math.log(2))
    else:
        # (1 + H/theta)^-theta = 1/2  <=>  H = theta (2^(1/theta) - 1)
        h_half = theta * np.expm1(math.log(2) / theta)
    return np.exp(log_lam + (np.log(h_half) / shape)[:, None])


def draw_survival(draws: np.ndarray, kind: str, x, grid) -> np.ndarray:
    """Survival per (draw, grid time) for a single covariate row."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    grid = np.asarray(grid, dtype=float)
    shape, log_lam, theta = _unpack(draws, kind, x)
    with np.errstate(divide="ignore"):
        log_t = np.log(grid)
    H = np.exp(shape[:, None] * (log_t[None, :] - log_lam[:, :1]))
    if theta is None:
        return np.exp(-H)
    return np.exp(-theta[:, None] * np.log1p(H / theta[:, None]))


@dataclass(frozen=True)
class PosteriorCurve:
    curve: StepSurvivalCurve
    lower: np.ndarray
    upper: np.ndarray


def posterior_predictive_curve(samples: PosteriorSamples | np.ndarray, kind: str, x,
                               grid) -> PosteriorCurve:
    """Pointwise posterior mean survival with a 95% equal-tailed band."""
    draws = samples.draws if isinstance(samples, PosteriorSamples) else np.asarray(samples)
    if draws.shape[0] == 0:
        raise ValueError("no posterior draws")
    S = draw_survival(draws, kind, x, grid)
    mean = S.mean(axis=0)
    lo, hi = np.quantile(S, [0.025, 0.975], axis=0)
    # keep the band ordered around the mean despite float round-off
    lo = np.minimum(lo, mean)
    hi = np.maximum(hi, mean)
    return PosteriorCurve(StepSurvivalCurve(np.asarray(grid, dtype=float), mean), lo, hi)


# -- end-to-end fit ---------------------------------------------------------

@dataclass
class BayesFit:
    kind: str
    samples: PosteriorSamples
    columns: tuple[str, ...]
    priors: Priors = field(default_factory=Priors)

    def _design(self, X) -> np.ndarray:
        if isinstance(X, DesignMatrix):
            X = X.X
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.kind != "weibull" and X.shape[1] != len(self.columns):
            raise ValueError(f"expected {len(self.columns)} covariates, got {X.shape[1]}")
        return X

    def predicted_times(self, X) -> np.ndarray:
        """Posterior mean of each subject's median survival time."""
        return draw_medians(self.samples.draws, self.kind, self._design(X)).mean(axis=0)

    def risk_scores(self, X) -> np.ndarray:
        return -np.log(self.predicted_times(X))

    def curve(self, x, grid) -> PosteriorCurve:
        return posterior_predictive_curve(self.samples, self.kind, self._design(x)[0], grid)


def param_names(kind: str, columns: Sequence[str]) -> tuple[list[str], list[bool]]:
    if kind == "weibull":
        return ["log_shape", "log_scale"], [True, True]
    names = ["log_shape", "intercept", *(f"beta_{c}" for c in columns)]
    flags = [True] + [False] * (len(columns) + 1)
    if kind == "aft_frailty":
        names.append("log_theta")
        flags.append(True)
    return names, flags


def fit_bayes(kind: str, X: DesignMatrix, config: SamplerConfig = SamplerConfig(),
              priors: Priors = Priors()) -> BayesFit:
    """Sample the posterior of one model, chains started near the MLE."""
    if kind not in KINDS:
        raise ValueError(f"unknown model kind {kind!r}; expected one of {KINDS}")
    if kind == "weibull":
        Z = np.ones((X.n, 1))
        mle = fit_weibull_mle(X.times, X.events)
        center = np.array([math.log(mle.shape), math.log(mle.scale)])
        columns: tuple[str, ...] = ()
    else:
        Z = np.column_stack([np.ones(X.n), X.X])
        mle = fit_weibull_aft_mle(X)
        center = np.concatenate(([math.log(mle.shape)], mle.beta))
        columns = X.columns
    _, _, H = aft_loglik(center, Z, X.times, X.events, hess=True)
    sd = np.sqrt(np.clip(np.diag(np.linalg.inv(-H)), 1e-12, None))
    if kind == "aft_frailty":
        center = np.append(center, 1.0)
        sd = np.append(sd, 0.5)
    scales = 1.5 * sd
    rng = np.random.default_rng(config.seed)
    inits = [center + rng.normal(0.0, 2.0, center.size) * sd for _ in range(config.chains)]
    names, flags = param_names(kind, columns)
    samples = run_chains(LogPosterior(kind, Z, X.times, X.events, priors), inits, config,
                         scales=scales, param_names=names, log_scale=flags)
    return BayesFit(kind, samples, columns, priors)


def config_dict(config: SamplerConfig) -> dict:
    return asdict(config)
