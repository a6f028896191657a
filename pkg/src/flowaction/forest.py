"""Random Forest classifier over integer count features, written from scratch.

Each tree is grown to purity on a bootstrap resample with Gini splits of
the form ``feature <= threshold`` (midpoints between adjacent observed
values); at each node a random subset of features is examined.  All
randomness comes from one seed, spawned into independent per-tree streams.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .features import ActionInstance

MODEL_FORMAT = "flowaction-forest-model"
MODEL_VERSION = 1


@dataclass(frozen=True)
class ForestParams:
    n_estimators: int = 40
    max_features: Optional[int] = None   # None -> floor(sqrt(n_features))
    bootstrap: bool = True
    max_depth: Optional[int] = None
    seed: int = 0

    def __post_init__(self):
        if self.n_estimators < 1:
            raise ValueError("n_estimators must be >= 1")
        if self.max_features is not None and self.max_features < 1:
            raise ValueError("max_features must be >= 1")

    def features_per_split(self, n_features: int) -> int:
        if self.max_features is not None:
            return min(self.max_features, n_features)
        return max(1, math.isqrt(n_features))


@dataclass
class Tree:
    """Flat binary tree in preorder; leaves have ``feature == -1``."""

    feature: list[int] = field(default_factory=list)
    threshold: list[float] = field(default_factory=list)
    left: list[int] = field(default_factory=list)
    right: list[int] = field(default_factory=list)
    value: list[list[int]] = field(default_factory=list)

    def _add(self, counts) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append([int(c) for c in counts])
        return len(self.feature) - 1

    def leaf(self, x: Sequence[float]) -> int:
        node = 0
        while self.feature[node] >= 0:
            if x[self.feature[node]] <= self.threshold[node]:
                node = self.left[node]
            else:
                node = self.right[node]
        return node


def _gini(counts: np.ndarray) -> np.ndarray:
    total = counts.sum(axis=-1, keepdims=True)
    p = counts / np.where(total == 0, 1, total)
    return 1.0 - (p * p).sum(axis=-1)


def _best_split(col: np.ndarray, y_onehot: np.ndarray):
    """Lowest weighted child Gini over thresholds of one feature column.

    Returns ``(impurity, threshold)`` or ``None`` if the column is constant.
    """
    order = np.argsort(col, kind="stable")
    xs = col[order]
    cuts = np.flatnonzero(xs[:-1] != xs[1:])
    if cuts.size == 0:
        return None
    left = np.cumsum(y_onehot[order], axis=0)[cuts]
    right = y_onehot.sum(axis=0) - left
    nl = left.sum(axis=1)
    nr = right.sum(axis=1)
    weighted = (nl * _gini(left) + nr * _gini(right)) / (nl + nr)
    i = int(np.argmin(weighted))
    return float(weighted[i]), (float(xs[cuts[i]]) + float(xs[cuts[i] + 1])) / 2.0


def grow_tree(
    X: np.ndarray,
    y: np.ndarray,
    n_classes: int,
    max_features: int,
    rng: np.random.Generator,
    max_depth: Optional[int] = None,
) -> Tree:
    """Grow one unpruned tree on rows ``X``/labels ``y`` (class indices).

    Features are visited in a random order; constant features are skipped
    without counting, and the search stops after ``max_features``
    informative ones.  A node becomes a leaf when pure, when every feature
    is constant on it, or at ``max_depth``.
    """
    tree = Tree()
    onehot = np.eye(n_classes, dtype=np.int64)[y]
    n_features = X.shape[1]
    # (sample indices, depth, parent node, is_left)
    stack = [(np.arange(len(y)), 0, -1, False)]
    while stack:
        idx, depth, parent, is_left = stack.pop()
        counts = onehot[idx].sum(axis=0)
        node = tree._add(counts)
        if parent >= 0:
            if is_left:
                tree.left[parent] = node
            else:
                tree.right[parent] = node
        if np.count_nonzero(counts) <= 1 or (max_depth is not None and depth >= max_depth):
            continue

        best = None
        informative = 0
        sub_x, sub_y = X[idx], onehot[idx]
        for f in rng.permutation(n_features):
            found = _best_split(sub_x[:, f], sub_y)
            if found is None:
                continue
            informative += 1
            if best is None or found[0] < best[0]:
                best = (found[0], found[1], int(f))
            if informative == max_features:
                break
        if best is None:
            continue

        _, thr, f = best
        tree.feature[node] = f
        tree.threshold[node] = thr
        go_left = X[idx, f] <= thr
        # right pushed first so the left subtree is numbered first
        stack.append((idx[~go_left], depth + 1, node, False))
        stack.append((idx[go_left], depth + 1, node, True))
    return tree


@dataclass
class ForestModel:
    params: ForestParams
    n_features: int
    labels: list[str]
    trees: list[Tree]

    def _check(self, features: Sequence[int]) -> None:
        if len(features) != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {len(features)}")

    def tree_votes(self, features: Sequence[int]) -> np.ndarray:
        self._check(features)
        votes = np.zeros(len(self.labels), dtype=np.int64)
        for t in self.trees:
            # argmax keeps the earliest label on ties
            votes[int(np.argmax(t.value[t.leaf(features)]))] += 1
        return votes

    def predict(self, features: Sequence[int]) -> str:
        return self.labels[int(np.argmax(self.tree_votes(features)))]

    def predict_proba(self, features: Sequence[int]) -> dict[str, float]:
        self._check(features)
        acc = np.zeros(len(self.labels), dtype=np.float64)
        for t in self.trees:
            counts = np.asarray(t.value[t.leaf(features)], dtype=np.float64)
            acc += counts / counts.sum()
        acc /= len(self.trees)
        return dict(zip(self.labels, acc.tolist()))

    def predict_many(self, rows: Sequence[Sequence[int]]) -> list[str]:
        return [self.predict(r) for r in rows]

    def to_dict(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "params": asdict(self.params),
            "n_features": self.n_features,
            "labels": self.labels,
            "trees": [asdict(t) for t in self.trees],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "ForestModel":
        if d.get("format") != MODEL_FORMAT or d.get("version") != MODEL_VERSION:
            raise ValueError("not a supported forest model file")
        return cls(
            params=ForestParams(**d["params"]),
            n_features=int(d["n_features"]),
            labels=list(d["labels"]),
            trees=[Tree(**t) for t in d["trees"]],
        )

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.dumps())

    @classmethod
    def load(cls, path) -> "ForestModel":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def train(data: Sequence[ActionInstance], params: ForestParams = ForestParams(), jobs: int = 1) -> ForestModel:
    if not data:
        raise ValueError("cannot train a forest on empty data")
    n_features = len(data[0].features)
    if n_features < 1 or any(len(d.features) != n_features for d in data):
        raise ValueError("all instances need the same non-zero feature count")
    labels = sorted({d.label for d in data})
    index = {lab: i for i, lab in enumerate(labels)}
    X = np.asarray([d.features for d in data], dtype=np.float64)
    y = np.asarray([index[d.label] for d in data], dtype=np.int64)
    m = params.features_per_split(n_features)
    streams = [np.random.default_rng(s) for s in np.random.SeedSequence(params.seed).spawn(params.n_estimators)]

    def one(rng: np.random.Generator) -> Tree:
        rows = rng.integers(0, len(y), size=len(y)) if params.bootstrap else np.arange(len(y))
        return grow_tree(X[rows], y[rows], len(labels), m, rng, params.max_depth)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            trees = list(pool.map(one, streams))
    else:
        trees = [one(r) for r in streams]
    return ForestModel(params, n_features, labels, trees)


def predict(model: ForestModel, features: Sequence[int]) -> str:
    return model.predict(features)


def predict_proba(model: ForestModel, features: Sequence[int]) -> dict[str, float]:
    return model.predict_proba(features)
