"""Hashtag embeddings trained with skip-gram and negative sampling.

The context of a hashtag is every other hashtag of the same post, so
co-posted hashtags end up close in the vector space.  Utility of an
edited hashtag set is measured through its semantic mean (the average of
its member vectors): the utility loss of a candidate is the Euclidean
distance between the semantic means of the original and edited sets.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .corpus import Corpus

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EmbedParams:
    dim: int = 100
    epochs: int = 5
    negatives: int = 5
    lr: float = 0.025
    lr_min: float = 1e-4
    seed: int = 0


class EmbeddingTable:
    """Dense vectors indexed by hashtag id (row i belongs to id i)."""

    def __init__(self, matrix: np.ndarray, isolated: frozenset = frozenset()):
        self.matrix = np.asarray(matrix, dtype=np.float64)
        if self.matrix.ndim != 2:
            raise ValueError("embedding matrix must be 2-dimensional")
        self.isolated = isolated

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def __len__(self) -> int:
        return len(self.matrix)

    def has(self, hashtag: int) -> bool:
        return 0 <= hashtag < len(self.matrix)

    def vector(self, hashtag: int) -> np.ndarray:
        if not self.has(hashtag):
            raise KeyError(f"hashtag {hashtag} missing from the embedding table")
        return self.matrix[hashtag]

    def sme(self, hashtags: Iterable[int]) -> np.ndarray:
        """Semantic mean of a hashtag set; the empty set maps to zero.

        Accumulates in sorted id order so the scalar and batched utility
        paths agree bitwise.
        """
        ids = sorted(set(hashtags))
        v = np.zeros(self.dim)
        for h in ids:
            v += self.vector(h)
        if ids:
            v /= len(ids)
        return v

    def utility_loss(self, original: Iterable[int], candidate: Iterable[int]) -> float:
        """Euclidean distance between the two sets' semantic means."""
        return float(np.linalg.norm(self.sme(original) - self.sme(candidate)))

    def nearest_neighbors(self, hashtag: int, k: int, within: Optional[int] = None) -> list[int]:
        """The k hashtags closest to the given one, excluding itself.

        Distance ties resolve to the lower id.  ``within`` restricts the
        neighbor pool to ids below it (the queried hashtag may lie
        outside), so appended category-token rows can be kept out of
        replacement suggestions.
        """
        if not self.has(hashtag):
            raise KeyError(f"hashtag {hashtag} missing from the embedding table")
        pool = len(self.matrix) if within is None else min(within, len(self.matrix))
        limit = pool - 1 if hashtag < pool else pool
        if limit < 1:
            raise ValueError("neighbor pool is empty")
        if not 1 <= k <= limit:
            raise ValueError(f"k must be in [1, {limit}]")
        diff = self.matrix[:pool] - self.matrix[hashtag]
        d2 = (diff * diff).sum(axis=1)
        order = np.lexsort((np.arange(len(d2)), d2))
        out = [int(i) for i in order if i != hashtag]
        return out[:k]

    def extend_with_tokens(self, token_members: Mapping[int, Sequence[int]]) -> "EmbeddingTable":
        """Append vectors for category tokens new to the vocabulary.

        A token's vector is the semantic mean of the hashtags it
        generalizes; tokens whose id already has a row are left alone.
        """
        new_ids = sorted(i for i in token_members if i >= len(self.matrix))
        if not new_ids:
            return self
        expected = list(range(len(self.matrix), len(self.matrix) + len(new_ids)))
        if new_ids != expected:
            raise ValueError("token ids must extend the vocabulary contiguously")
        rows = np.array([self.sme(token_members[i]) for i in new_ids])
        return EmbeddingTable(np.vstack([self.matrix, rows]), isolated=self.isolated)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def train_embeddings(corpus: Corpus, params: EmbedParams = EmbedParams()) -> EmbeddingTable:
    """Fit skip-gram embeddings with negative sampling on a corpus.

    Negatives are drawn from the unigram distribution raised to 0.75;
    the learning rate decays linearly over all (center, context) pairs.
    Deterministic given params.seed.  Hashtags that never co-occur with
    another keep their random initialization and are flagged on the
    returned table.
    """
    n = len(corpus.hashtags)
    if n < 1:
        raise ValueError("empty hashtag vocabulary")
    if params.dim < 1 or params.epochs < 1 or params.negatives < 0:
        raise ValueError("invalid embedding parameters")

    rng = np.random.default_rng(params.seed % 2**64)
    W_in = (rng.random((n, params.dim)) - 0.5) / params.dim
    W_out = np.zeros((n, params.dim))

    counts = np.zeros(n, dtype=np.int64)
    co_occurring: set[int] = set()
    total_pairs = 0
    for post in corpus.posts:
        for h in post.hashtags:
            counts[h] += 1
        if len(post.hashtags) >= 2:
            co_occurring.update(post.hashtags)
            total_pairs += len(post.hashtags) * (len(post.hashtags) - 1)
    total_pairs *= params.epochs

    isolated = frozenset(range(n)) - frozenset(co_occurring)
    if isolated:
        logger.warning(
            "%d of %d hashtags never co-occur and keep their initialization vectors", len(isolated), n
        )
    if total_pairs == 0:
        return EmbeddingTable(W_in, isolated=isolated)

    neg_ids = np.nonzero(counts)[0]
    weights = counts[neg_ids].astype(np.float64) ** 0.75
    cum = np.cumsum(weights / weights.sum())
    cum[-1] = 1.0

    processed = 0
    for _epoch in range(params.epochs):
        for post in corpus.posts:
            if len(post.hashtags) < 2:
                continue
            tags = sorted(post.hashtags)
            for center in tags:
                ctx = np.array([t for t in tags if t != center])
                alpha = max(params.lr_min, params.lr * (1.0 - processed / total_pairs))
                processed += len(ctx)

                if params.negatives > 0:
                    draws = neg_ids[np.searchsorted(cum, rng.random((len(ctx), params.negatives)))]
                    valid = draws != ctx[:, None]  # drop negatives that hit the positive target
                    targets = np.concatenate([ctx, draws[valid]])
                    labels = np.concatenate([np.ones(len(ctx)), np.zeros(int(valid.sum()))])
                else:
                    targets = ctx
                    labels = np.ones(len(ctx))

                vc = W_in[center]
                rows = W_out[targets]  # copy, so the input gradient uses pre-update rows
                g = (_sigmoid(rows @ vc) - labels) * alpha
                np.add.at(W_out, targets, g[:, None] * vc[None, :])
                W_in[center] = vc - g @ rows

    return EmbeddingTable(W_in, isolated=isolated)


def save_embeddings(table: EmbeddingTable, corpus: Corpus, path: str) -> None:
    """Write vectors as text: a count/dim header, then one row per hashtag.

    Rows follow id order, so the file also records the vocabulary.
    Floats are written with repr for exact round-trips.
    """
    if len(table) != len(corpus.hashtags):
        raise ValueError("table size does not match the corpus vocabulary")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{len(table)} {table.dim}\n")
        for h in corpus.hashtags:
            vals = " ".join(repr(float(x)) for x in table.matrix[h.id])
            fh.write(f"{h.text} {vals}\n")


def read_embeddings(path: str) -> tuple[list[str], np.ndarray]:
    """Low-level reader returning (texts, matrix) in file order."""
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise ValueError(f"{path}: malformed header")
        count, dim = int(header[0]), int(header[1])
        texts: list[str] = []
        matrix = np.zeros((count, dim))
        for i in range(count):
            line = fh.readline()
            if not line:
                raise ValueError(f"{path}: expected {count} rows, found {i}")
            parts = line.split()
            if len(parts) != dim + 1:
                raise ValueError(f"{path}:{i + 2}: expected {dim} values, found {len(parts) - 1}")
            texts.append(parts[0])
            matrix[i] = [float(x) for x in parts[1:]]
        if fh.readline().strip():
            raise ValueError(f"{path}: trailing rows beyond declared count")
    return texts, matrix


def load_embeddings(path: str, corpus: Corpus) -> EmbeddingTable:
    """Read a vector file and align it with a corpus vocabulary.

    Every corpus hashtag must have exactly one row and every row must
    name a known hashtag.
    """
    texts, raw = read_embeddings(path)
    n = len(corpus.hashtags)
    matrix = np.zeros((n, raw.shape[1]))
    seen = np.zeros(n, dtype=bool)
    for text, row in zip(texts, raw):
        if text not in corpus.hashtag_id:
            raise ValueError(f"{path}: unknown hashtag text {text!r}")
        h = corpus.hashtag_id[text]
        if seen[h]:
            raise ValueError(f"{path}: duplicate row for {text!r}")
        seen[h] = True
        matrix[h] = row
    if not seen.all():
        missing = int((~seen).sum())
        raise ValueError(f"{path}: missing vectors for {missing} vocabulary hashtags")
    return EmbeddingTable(matrix)
