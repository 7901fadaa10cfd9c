"""Random survival forest with log-rank splitting and Kaplan-Meier leaves."""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .dataset import DesignMatrix
from .nonparametric import StepSurvivalCurve, kaplan_meier

SURVIVAL_FLOOR = 1e-12


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 500
    mtry: int | None = None  # default ceil(sqrt(p))
    min_leaf_size: int = 15
    min_split_events: int = 3
    seed: int = 7
    jobs: int = 1

    def resolved_mtry(self, p: int) -> int:
        m = self.mtry if self.mtry is not None else math.ceil(math.sqrt(p))
        if not 1 <= m <= p:
            raise ValueError(f"mtry must be in [1, {p}], got {m}")
        return m

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be at least 1")
        if self.min_leaf_size < 1:
            raise ValueError("min_leaf_size must be at least 1")


@dataclass
class Leaf:
    curve: StepSurvivalCurve
    n: int
    grid_values: np.ndarray | None = field(default=None, repr=False)


@dataclass
class Split:
    feature: int
    threshold: float
    left: "SurvivalTreeNode"
    right: "SurvivalTreeNode"


SurvivalTreeNode = Union[Leaf, Split]


def leaf_for(node: SurvivalTreeNode, x) -> Leaf:
    while isinstance(node, Split):
        node = node.left if x[node.feature] <= node.threshold else node.right
    return node


def tree_depth(node: SurvivalTreeNode) -> int:
    if isinstance(node, Leaf):
        return 0
    return 1 + max(tree_depth(node.left), tree_depth(node.right))


def iter_leaves(node: SurvivalTreeNode):
    if isinstance(node, Leaf):
        yield node
    else:
        yield from iter_leaves(node.left)
        yield from iter_leaves(node.right)


# -- splitting --------------------------------------------------------------

def best_split(rows, X, times, events, features, min_leaf_size: int):
    """Highest log-rank split over candidate features and midpoint thresholds.

    Returns ``(feature, threshold, statistic)``, or ``None`` when no split
    leaves ``min_leaf_size`` rows on both sides. Ties go to the lower
    feature index, then the lower threshold.
    """
    rows = np.asarray(rows)
    t = np.asarray(times, dtype=float)[rows]
    e = np.asarray(events)[rows]
    m = rows.size
    if m < 2 * min_leaf_size or not np.any(e == 1):
        return None
    uniq = np.unique(t[e == 1])
    at_risk = (t[:, None] >= uniq[None, :]).astype(float)
    died = ((t[:, None] == uniq[None, :]) & (e[:, None] == 1)).astype(float)
    n = at_risk.sum(0)
    d = died.sum(0)
    var_factor = np.where(n > 1, d * (n - d) / np.maximum(n - 1, 1), 0.0)
    best = None
    for f in sorted(int(f) for f in features):
        xs = np.asarray(X)[rows, f]
        order = np.argsort(xs, kind="stable")
        xs_sorted = xs[order]
        # left child takes the first s sorted rows
        s = np.arange(min_leaf_size, m - min_leaf_size + 1)
        s = s[xs_sorted[s - 1] < xs_sorted[np.minimum(s, m - 1)]]
        if s.size == 0:
            continue
        n_left = np.cumsum(at_risk[order], axis=0)[s - 1]
        d_left = np.cumsum(died[order], axis=0)[s - 1]
        frac = n_left / n
        o_minus_e = np.sum(d_left - d * frac, axis=1)
        v = np.sum(var_factor * frac * (1 - frac), axis=1)
        stat = np.where(v > 0, o_minus_e ** 2 / np.where(v > 0, v, 1.0), 0.0)
        k = int(np.argmax(stat))
        if best is None or stat[k] > best[2]:
            thr = 0.5 * (xs_sorted[s[k] - 1] + xs_sorted[s[k]])
            best = (f, float(thr), float(stat[k]))
    return best


def _leaf(rows, times, events) -> Leaf:
    t = np.asarray(times, dtype=float)[rows]
    e = np.asarray(events)[rows]
    if np.any(e == 1):
        curve = kaplan_meier(t, e)
        # drop at_risk/events for compactness
        curve = StepSurvivalCurve(curve.times, curve.survival)
    else:
        curve = StepSurvivalCurve(np.zeros(0), np.zeros(0))
    return Leaf(curve, int(len(rows)))


def grow_tree(rows, X, times, events, config: ForestConfig, rng: np.random.Generator
              ) -> SurvivalTreeNode:
    """Recursively split in-bag ``rows`` (duplicates allowed)."""
    rows = np.asarray(rows)
    X = np.asarray(X, dtype=float)
    events = np.asarray(events)
    mtry = config.resolved_mtry(X.shape[1])

    def grow(node_rows):
        n_events = int(events[node_rows].sum())
        if node_rows.size < 2 * config.min_leaf_size or n_events < config.min_split_events:
            return _leaf(node_rows, times, events)
        feats = rng.choice(X.shape[1], size=mtry, replace=False)
        split = best_split(node_rows, X, times, events, feats, config.min_leaf_size)
        if split is None:
            return _leaf(node_rows, times, events)
        f, thr, _ = split
        go_left = X[node_rows, f] <= thr
        return Split(f, thr, grow(node_rows[go_left]), grow(node_rows[~go_left]))

    return grow(rows)


def tree_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, index])


def bootstrap_rows(rng: np.random.Generator, n: int) -> np.ndarray:
    return rng.integers(0, n, size=n)


def _grow_one(args):
    X, times, events, config, i = args
    rng = tree_rng(config.seed, i)
    rows = bootstrap_rows(rng, X.shape[0])
    return grow_tree(rows, X, times, events, config, rng)


# -- forest -----------------------------------------------------------------

@dataclass
class RandomSurvivalForest:
    trees: list
    event_times: np.ndarray
    horizon: float
    config: ForestConfig
    columns: tuple[str, ...] = ()

    def __post_init__(self):
        for tree in self.trees:
            for leaf in iter_leaves(tree):
                leaf.grid_values = leaf.curve(self.event_times)

    def leaves(self, x) -> list[Leaf]:
        x = np.asarray(x, dtype=float)
        return [leaf_for(tree, x) for tree in self.trees]

    def summary(self) -> dict:
        depths = [tree_depth(t) for t in self.trees]
        n_leaves = [sum(1 for _ in iter_leaves(t)) for t in self.trees]
        return {"n_trees": len(self.trees), "average_depth": float(np.mean(depths)),
                "max_depth": int(max(depths)), "average_leaves": float(np.mean(n_leaves)),
                "config": {"n_trees": self.config.n_trees, "mtry": self.config.mtry,
                           "min_leaf_size": self.config.min_leaf_size,
                           "min_split_events": self.config.min_split_events,
                           "seed": self.config.seed}}

    def write_summary(self, path: str | os.PathLike) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.summary(), f, indent=2, sort_keys=True)


def fit_rsf(X: DesignMatrix, config: ForestConfig = ForestConfig()) -> RandomSurvivalForest:
    """Bagged survival trees; tree ``i`` draws from ``default_rng([seed, i])``."""
    jobs = [(X.X, X.times, X.events, config, i) for i in range(config.n_trees)]
    if config.jobs > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            trees = list(pool.map(_grow_one, jobs, chunksize=16))
    else:
        trees = [_grow_one(j) for j in jobs]
    event_times = np.unique(X.times[X.events == 1])
    return RandomSurvivalForest(trees, event_times, float(X.times.max()), config, X.columns)


def rsf_predict_curve(forest: RandomSurvivalForest, x) -> StepSurvivalCurve:
    """Mean of per-tree leaf curves on the union of those leaves' step times."""
    leaves = forest.leaves(x)
    grid = np.unique(np.concatenate([leaf.curve.times for leaf in leaves]))
    if grid.size == 0:
        return StepSurvivalCurve(grid, grid.copy())
    surv = np.mean([leaf.curve(grid) for leaf in leaves], axis=0)
    return StepSurvivalCurve(grid, np.minimum.accumulate(surv))


def ensemble_survival_on_event_times(forest: RandomSurvivalForest, x) -> np.ndarray:
    return np.mean([leaf.grid_values for leaf in forest.leaves(x)], axis=0)


def rsf_risk_score(forest: RandomSurvivalForest, x) -> float:
    """Ensemble mortality: summed cumulative hazard over training event times."""
    s = ensemble_survival_on_event_times(forest, x)
    return float(np.sum(-np.log(np.maximum(s, SURVIVAL_FLOOR))))
