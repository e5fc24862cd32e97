"""Random forest over sparse binary hashtag-presence features.

Each tree is grown on a bootstrap resample with ceil(sqrt(n_features))
candidate features per node and Gini impurity splits.  A split tests
presence of one hashtag: absent goes left, present goes right.  The
forest's posterior is the average of the trees' votes, where each tree
votes the majority class of its leaf.

Trees are stored flat (parallel arrays) so batches of posts descend all
trees with vectorized index hops; the nested JSON form is only used on
disk.
"""

from __future__ import annotations

import json
import math
import sys
from bisect import bisect_left
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .corpus import Corpus

MODEL_FORMAT_VERSION = 1


@dataclass(frozen=True)
class FeatureVector:
    """Sorted ids of the hashtags present, plus the feature-space size."""

    present: tuple[int, ...]
    dimension: int


def featurize(hashtags: Iterable[int], vocab_dimension: int) -> FeatureVector:
    """Binary presence features for a hashtag set.

    Ids at or beyond ``vocab_dimension`` are unseen by the model (added
    to the vocabulary after training) and are silently dropped.
    """
    if vocab_dimension < 1:
        raise ValueError("vocab_dimension must be >= 1")
    present = sorted(h for h in set(hashtags) if h < vocab_dimension)
    if present and present[0] < 0:
        raise ValueError("negative hashtag id")
    return FeatureVector(tuple(present), vocab_dimension)


def feature_matrix(hashtag_sets: Sequence[Iterable[int]], vocab_dimension: int) -> np.ndarray:
    """Stack featurized sets into a dense uint8 matrix."""
    X = np.zeros((len(hashtag_sets), vocab_dimension), dtype=np.uint8)
    for i, tags in enumerate(hashtag_sets):
        for h in tags:
            if 0 <= h < vocab_dimension:
                X[i, h] = 1
    return X


@dataclass(frozen=True)
class Posterior:
    """Probability vector over a model's classes (sorted location ids)."""

    classes: tuple[int, ...]
    probs: np.ndarray

    def prob_of(self, location: int) -> float:
        i = bisect_left(self.classes, location)
        if i < len(self.classes) and self.classes[i] == location:
            return float(self.probs[i])
        return 0.0

    def top(self) -> int:
        # argmax takes the first maximum; classes are sorted, so ties
        # resolve to the lowest location id
        return self.classes[int(np.argmax(self.probs))]

    def entropy_bits(self) -> float:
        p = self.probs[self.probs > 0]
        return float(-(p * np.log2(p)).sum())


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 100
    min_leaf: int = 1
    max_depth: Optional[int] = None
    seed: int = 0


class FlatTree:
    """One decision tree as parallel node arrays.

    feature[i] is the hashtag id tested at node i, or -1 at a leaf.
    vote[i] is the majority class index at a leaf, -1 otherwise.
    counts[i] maps location id -> training sample count at a leaf.
    """

    __slots__ = ("feature", "left", "right", "vote", "counts")

    def __init__(self, feature, left, right, vote, counts):
        self.feature = np.asarray(feature, dtype=np.int32)
        self.left = np.asarray(left, dtype=np.int32)
        self.right = np.asarray(right, dtype=np.int32)
        self.vote = np.asarray(vote, dtype=np.int32)
        self.counts = counts

    def descend(self, X: np.ndarray) -> np.ndarray:
        """Leaf node index for every row of a uint8 feature matrix."""
        idx = np.zeros(len(X), dtype=np.int32)
        while True:
            f = self.feature[idx]
            active = f >= 0
            if not active.any():
                return idx
            rows = np.nonzero(active)[0]
            at = idx[rows]
            go_right = X[rows, f[rows]] != 0
            idx[rows] = np.where(go_right, self.right[at], self.left[at])

    def depth(self) -> int:
        depths = np.zeros(len(self.feature), dtype=np.int64)
        out = 0
        for i in range(len(self.feature)):  # parents precede children
            out = max(out, int(depths[i]))
            if self.feature[i] >= 0:
                depths[self.left[i]] = depths[i] + 1
                depths[self.right[i]] = depths[i] + 1
        return out


def _majority(counts: dict) -> int:
    """Majority location id, ties to the lowest id."""
    return min(counts.items(), key=lambda kv: (-kv[1], kv[0]))[0]


def _grow_tree(X: np.ndarray, y: np.ndarray, n_classes: int, rng, params: ForestParams) -> FlatTree:
    n, dim = X.shape
    k = math.ceil(math.sqrt(dim))
    boot = rng.integers(0, n, size=n)

    feature: list[int] = []
    left: list[int] = []
    right: list[int] = []
    vote: list[int] = []
    counts: list[Optional[dict]] = []

    def alloc() -> int:
        feature.append(-1)
        left.append(-1)
        right.append(-1)
        vote.append(-1)
        counts.append(None)
        return len(feature) - 1

    def close_leaf(ni: int, class_counts: np.ndarray) -> None:
        vote[ni] = int(np.argmax(class_counts))  # first max = lowest class
        counts[ni] = {c: int(class_counts[c]) for c in np.nonzero(class_counts)[0]}

    root = alloc()
    stack = [(root, boot, 0)]
    while stack:
        ni, idx, depth = stack.pop()
        ylocal = y[idx]
        class_counts = np.bincount(ylocal, minlength=n_classes)
        m = len(idx)
        if (
            (params.max_depth is not None and depth >= params.max_depth)
            or m < params.min_leaf
            or class_counts.max() == m
        ):
            close_leaf(ni, class_counts)
            continue

        feats = rng.choice(dim, size=k, replace=False)
        sub = X[np.ix_(idx, feats)].astype(np.float64)
        onehot = (ylocal[:, None] == np.arange(n_classes)[None, :]).astype(np.float64)
        right_counts = onehot.T @ sub  # n_classes x k
        left_counts = class_counts[:, None] - right_counts
        m_r = sub.sum(axis=0)
        m_l = m - m_r
        sq_r = (right_counts**2).sum(axis=0)
        sq_l = (left_counts**2).sum(axis=0)
        score = np.divide(sq_r, m_r, out=np.zeros_like(sq_r), where=m_r > 0) + np.divide(
            sq_l, m_l, out=np.zeros_like(sq_l), where=m_l > 0
        )
        parent = float((class_counts.astype(np.float64) ** 2).sum()) / m
        gain = score - parent  # Gini impurity decrease, scaled by m
        best = int(np.argmax(gain))
        if gain[best] <= 0.0:
            close_leaf(ni, class_counts)
            continue

        f = int(feats[best])
        mask = X[idx, f] != 0
        li, ri = alloc(), alloc()
        feature[ni] = f
        left[ni] = li
        right[ni] = ri
        stack.append((ri, idx[mask], depth + 1))
        stack.append((li, idx[~mask], depth + 1))

    return FlatTree(feature, left, right, vote, counts)


class RandomForestModel:
    def __init__(self, n_trees, vocab_dimension, classes, seed, trees, degenerate=False):
        self.version = MODEL_FORMAT_VERSION
        self.n_trees = n_trees
        self.vocab_dimension = vocab_dimension
        self.classes: tuple[int, ...] = tuple(classes)
        self.seed = seed
        self.trees: list[FlatTree] = trees
        self.degenerate = degenerate

    def predict_batch(self, X: np.ndarray) -> np.ndarray:
        """Vote-averaged posterior rows for a uint8 feature matrix."""
        if X.shape[1] != self.vocab_dimension:
            raise ValueError(f"feature dimension {X.shape[1]} != model dimension {self.vocab_dimension}")
        n = len(X)
        votes = np.zeros((n, len(self.classes)), dtype=np.int32)
        rows = np.arange(n)
        for tree in self.trees:
            leaf = tree.descend(X)
            votes[rows, tree.vote[leaf]] += 1
        return votes / self.n_trees

    def predict_posterior(self, fv: FeatureVector) -> Posterior:
        if fv.dimension != self.vocab_dimension:
            raise ValueError(f"feature dimension {fv.dimension} != model dimension {self.vocab_dimension}")
        X = np.zeros((1, self.vocab_dimension), dtype=np.uint8)
        if fv.present:
            X[0, list(fv.present)] = 1
        return Posterior(self.classes, self.predict_batch(X)[0])

    def predict_top(self, fv: FeatureVector) -> int:
        return self.predict_posterior(fv).top()

    def features_used(self) -> frozenset:
        used: set[int] = set()
        for tree in self.trees:
            used.update(int(f) for f in tree.feature[tree.feature >= 0])
        return frozenset(used)

    def max_depth(self) -> int:
        return max(tree.depth() for tree in self.trees)

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "n_trees": self.n_trees,
            "vocab_dimension": self.vocab_dimension,
            "classes": list(self.classes),
            "seed": self.seed,
            "degenerate": self.degenerate,
            "trees": [_tree_to_dict(t) for t in self.trees],
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "RandomForestModel":
        if raw.get("version") != MODEL_FORMAT_VERSION:
            raise ValueError(f"unsupported model version {raw.get('version')!r}")
        classes = tuple(int(c) for c in raw["classes"])
        class_index = {c: i for i, c in enumerate(classes)}
        trees = [_tree_from_dict(node, class_index) for node in raw["trees"]]
        if len(trees) != raw["n_trees"]:
            raise ValueError("tree count does not match n_trees")
        return cls(
            n_trees=int(raw["n_trees"]),
            vocab_dimension=int(raw["vocab_dimension"]),
            classes=classes,
            seed=int(raw["seed"]),
            trees=trees,
            degenerate=bool(raw.get("degenerate", False)),
        )

    def save(self, path: str) -> None:
        depth = self.max_depth()
        with _deep_json(depth):
            payload = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(payload)

    @classmethod
    def load(cls, path: str) -> "RandomForestModel":
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
        with _deep_json(_brace_depth(text)):
            raw = json.loads(text)
        return cls.from_dict(raw)


class _deep_json:
    """Temporarily raise the recursion limit for deeply nested trees."""

    def __init__(self, depth: int):
        self.limit = max(sys.getrecursionlimit(), 6 * depth + 500)

    def __enter__(self):
        self.saved = sys.getrecursionlimit()
        sys.setrecursionlimit(self.limit)

    def __exit__(self, *exc):
        sys.setrecursionlimit(self.saved)


def _brace_depth(text: str) -> int:
    depth = peak = 0
    for ch in text:
        if ch == "{" or ch == "[":
            depth += 1
            if depth > peak:
                peak = depth
        elif ch == "}" or ch == "]":
            depth -= 1
    return peak


def _tree_to_dict(tree: FlatTree) -> dict:
    made: dict[int, dict] = {}
    stack = [(0, False)]
    while stack:
        ni, expanded = stack.pop()
        if tree.feature[ni] < 0:
            made[ni] = {"leaf": {"counts": {str(loc): cnt for loc, cnt in sorted(tree.counts[ni].items())}}}
        elif not expanded:
            stack.append((ni, True))
            stack.append((int(tree.left[ni]), False))
            stack.append((int(tree.right[ni]), False))
        else:
            made[ni] = {
                "split": {
                    "feature": int(tree.feature[ni]),
                    "left": made.pop(int(tree.left[ni])),
                    "right": made.pop(int(tree.right[ni])),
                }
            }
    return made[0]


def _tree_from_dict(node: dict, class_index: dict) -> FlatTree:
    feature: list[int] = []
    left: list[int] = []
    right: list[int] = []
    vote: list[int] = []
    counts: list[Optional[dict]] = []

    def alloc() -> int:
        feature.append(-1)
        left.append(-1)
        right.append(-1)
        vote.append(-1)
        counts.append(None)
        return len(feature) - 1

    stack = [(node, alloc())]
    while stack:
        d, ni = stack.pop()
        if "leaf" in d:
            cnts = {int(k): int(v) for k, v in d["leaf"]["counts"].items()}
            if not cnts:
                raise ValueError("leaf with empty counts")
            counts[ni] = cnts
            vote[ni] = class_index[_majority(cnts)]
        elif "split" in d:
            s = d["split"]
            li, ri = alloc(), alloc()
            feature[ni] = int(s["feature"])
            left[ni] = li
            right[ni] = ri
            stack.append((s["left"], li))
            stack.append((s["right"], ri))
        else:
            raise ValueError("tree node must contain 'split' or 'leaf'")
    return FlatTree(feature, left, right, vote, counts)


def train(corpus: Corpus, params: ForestParams = ForestParams()) -> RandomForestModel:
    """Fit a forest on a training view.

    Per-tree seeds are params.seed + tree index, so any tree can be
    rebuilt independently and training order never matters.
    """
    if not corpus.posts:
        raise ValueError("empty training corpus")
    dim = len(corpus.hashtags)
    if dim < 1:
        raise ValueError("empty hashtag vocabulary")
    for p in corpus.posts:
        if p.location is None:
            raise ValueError("training post without location")
        if not any(0 <= h < dim for h in p.hashtags):
            raise ValueError("training post without in-vocabulary hashtags")
    if params.n_trees < 1:
        raise ValueError("n_trees must be >= 1")

    classes = tuple(sorted({p.location for p in corpus.posts}))
    class_index = {c: i for i, c in enumerate(classes)}
    X = feature_matrix([p.hashtags for p in corpus.posts], dim)
    y = np.array([class_index[p.location] for p in corpus.posts], dtype=np.int64)

    base = params.seed % 2**64
    trees = []
    for t in range(params.n_trees):
        rng = np.random.default_rng(base + t)
        trees.append(_grow_tree(X, y, len(classes), rng, params))

    # leaf counts keep class indices internally; persist location ids
    for tree in trees:
        tree.counts = [
            None if c is None else {classes[ci]: n for ci, n in c.items()} for c in tree.counts
        ]
    return RandomForestModel(
        n_trees=params.n_trees,
        vocab_dimension=dim,
        classes=classes,
        seed=params.seed,
        trees=trees,
        degenerate=len(classes) < 2,
    )


class BaselineModel:
    """Predicts the most frequent training location for every post."""

    def __init__(self, classes, top_class):
        self.classes: tuple[int, ...] = tuple(classes)
        self.top_class = top_class
        self._probs = np.zeros(len(self.classes))
        self._probs[self.classes.index(top_class)] = 1.0

    def predict_batch(self, X: np.ndarray) -> np.ndarray:
        return np.tile(self._probs, (len(X), 1))

    def predict_posterior(self, fv: FeatureVector = None) -> Posterior:
        return Posterior(self.classes, self._probs.copy())

    def predict_top(self, fv: FeatureVector = None) -> int:
        return self.top_class


def train_baseline(corpus: Corpus) -> BaselineModel:
    if not corpus.posts:
        raise ValueError("empty training corpus")
    counts: dict[int, int] = {}
    for p in corpus.posts:
        if p.location is None:
            raise ValueError("training post without location")
        counts[p.location] = counts.get(p.location, 0) + 1
    return BaselineModel(tuple(sorted(counts)), _majority(counts))
