"""Random forest on whole-graph descriptors, used as the classical baseline."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .representations import FormatError


@dataclass
class Tree:
    # flat node arrays; leaves have feature == -1 and carry value
    feature: list = field(default_factory=list)
    threshold: list = field(default_factory=list)
    left: list = field(default_factory=list)
    right: list = field(default_factory=list)
    value: list = field(default_factory=list)

    def add(self, feature=-1, threshold=0.0, value=0.0) -> int:
        self.feature.append(int(feature))
        self.threshold.append(float(threshold))
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(float(value))
        return len(self.feature) - 1

    def predict(self, x: np.ndarray) -> np.ndarray:
        out = np.empty(len(x))
        for r, row in enumerate(x):
            k = 0
            while self.feature[k] >= 0:
                k = self.left[k] if row[self.feature[k]] <= self.threshold[k] else self.right[k]
            out[r] = self.value[k]
        return out

    def depth(self) -> int:
        def d(k):
            return 0 if self.feature[k] < 0 else 1 + max(d(self.left[k]), d(self.right[k]))
        return d(0)


@dataclass
class Forest:
    trees: list
    num_trees: int = 50
    max_depth: int = 6
    seed: int = 0
    bootstrap: bool = True


def _best_split(x: np.ndarray, y: np.ndarray, feats: np.ndarray):
    """Lowest weighted Gini over the candidate features; thresholds at midpoints."""
    n = len(y)
    best = (math.inf, -1, 0.0)
    for f in feats:
        order = np.argsort(x[:, f], kind="stable")
        xs, ys = x[order, f], y[order]
        distinct = np.nonzero(xs[1:] > xs[:-1])[0]
        if len(distinct) == 0:
            continue
        pos_left = np.cumsum(ys)[distinct]
        n_left = distinct + 1
        n_right = n - n_left
        pos_right = ys.sum() - pos_left
        p_l = pos_left / n_left
        p_r = pos_right / n_right
        gini = (n_left * 2 * p_l * (1 - p_l) + n_right * 2 * p_r * (1 - p_r)) / n
        k = int(np.argmin(gini))
        if gini[k] < best[0] - 1e-15:
            i = distinct[k]
            best = (float(gini[k]), int(f), 0.5 * (xs[i] + xs[i + 1]))
    return best


def _grow(tree: Tree, x, y, depth, max_depth, rng, m_try) -> int:
    frac = float(y.mean())
    if depth >= max_depth or len(y) < 2 or frac in (0.0, 1.0):
        return tree.add(value=frac)
    feats = rng.choice(x.shape[1], size=m_try, replace=False)
    _, f, thr = _best_split(x, y, feats)
    if f < 0:
        return tree.add(value=frac)
    node = tree.add(feature=f, threshold=thr, value=frac)
    go_left = x[:, f] <= thr
    tree.left[node] = _grow(tree, x[go_left], y[go_left], depth + 1, max_depth, rng, m_try)
    tree.right[node] = _grow(tree, x[~go_left], y[~go_left], depth + 1, max_depth, rng, m_try)
    return node


def fit_forest(features, labels, num_trees: int = 50, max_depth: int = 6, seed: int = 0,
               bootstrap: bool = True) -> Forest:
    """Bootstrap-aggregated Gini trees with sqrt(d) features tried per node.

    ``bootstrap=False`` fits every tree on the full sample (feature sampling
    still varies per tree).
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64).ravel()
    if x.ndim != 2 or len(x) != len(y):
        raise ValueError("features must be (n, d) with one label per row")
    if len(y) < 2:
        raise ValueError("need at least 2 samples")
    if len(np.unique(y)) < 2:
        raise ValueError("both classes must be present")
    if num_trees < 1 or max_depth < 0:
        raise ValueError("num_trees must be >= 1 and max_depth >= 0")
    m_try = max(1, int(math.sqrt(x.shape[1])))
    # one child seed per tree, so trees could be fit independently
    seeds = np.random.SeedSequence(seed).spawn(num_trees)
    trees = []
    for ss in seeds:
        rng = np.random.default_rng(ss)
        idx = rng.integers(0, len(y), size=len(y)) if bootstrap else np.arange(len(y))
        tree = Tree()
        _grow(tree, x[idx], y[idx], 0, max_depth, rng, m_try)
        trees.append(tree)
    return Forest(trees, num_trees, max_depth, seed, bootstrap)


def predict_forest(forest: Forest, features) -> np.ndarray:
    """Mean leaf fraction over trees; classify with ``> 0.5``."""
    x = np.atleast_2d(np.asarray(features, dtype=np.float64))
    return np.mean([t.predict(x) for t in forest.trees], axis=0)


def forest_to_dict(forest: Forest) -> dict:
    return {
        "num_trees": forest.num_trees,
        "max_depth": forest.max_depth,
        "seed": forest.seed,
        "bootstrap": forest.bootstrap,
        "trees": [t.__dict__ for t in forest.trees],
    }


def forest_from_dict(d: dict) -> Forest:
    try:
        trees = [Tree(**t) for t in d["trees"]]
        forest = Forest(trees, int(d["num_trees"]), int(d["max_depth"]), int(d["seed"]), bool(d.get("bootstrap", True)))
    except (KeyError, TypeError) as exc:
        raise FormatError(f"bad forest document: {exc}") from exc
    for t in trees:
        n = len(t.feature)
        if not (n == len(t.threshold) == len(t.left) == len(t.right) == len(t.value)):
            raise FormatError("ragged tree arrays")
        for k in range(n):
            if t.feature[k] >= 0 and not (0 <= t.left[k] < n and 0 <= t.right[k] < n):
                raise FormatError("internal node with missing child")
            if not 0.0 <= t.value[k] <= 1.0:
                raise FormatError("leaf fraction outside [0, 1]")
    return forest


def save_forest(forest: Forest, path) -> None:
    Path(path).write_text(json.dumps(forest_to_dict(forest)))


def load_forest(path) -> Forest:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"bad forest file: {exc}") from exc
    return forest_from_dict(d)
