"""Obfuscation mechanisms: hiding, semantic replacement, generalization.

Each mechanism enumerates edited hashtag sets for one post as a stream
of candidates in deterministic order: by edit count, then by edited
position, then by option index.  Every stream starts with the unmodified
set (edits=0) and never repeats a set.

Hiding removes hashtags.  Replacement swaps a hashtag for one of its
nearest embedding neighbors, never reusing a member of the original
set.  Generalization lifts a hashtag to its lower- or higher-level
category token; the tokens are interned into the hashtag vocabulary
when the taxonomy is loaded, so candidates stay featurizable and
embeddable.
"""

from __future__ import annotations

import itertools
import logging
import re
from dataclasses import dataclass
from typing import Iterable, Iterator, Optional

from .corpus import Corpus, Hashtag, _normalize_hashtag, _read_jsonl
from .embedding import EmbeddingTable

logger = logging.getLogger(__name__)

MECHANISMS = ("hiding", "replacement", "generalization")


@dataclass(frozen=True)
class Candidate:
    hashtags: frozenset[int]
    edits: int
    mechanism: str


def _token_text(name: str) -> str:
    """Category names become vocabulary-safe tokens."""
    text = re.sub(r"\s+", "_", _normalize_hashtag(name).strip())
    if not text:
        raise ValueError("empty category name")
    return text


class CategoryTaxonomy:
    """Partial map from hashtags to two category levels.

    l2_of/l1_of map a generalizable hashtag id to its category token ids.
    token_members maps each token id to the hashtag ids it generalizes,
    which is what synthesizes embedding vectors for fresh tokens.
    """

    def __init__(self, l2_of, l1_of, token_members):
        self.l2_of: dict[int, int] = dict(l2_of)
        self.l1_of: dict[int, int] = dict(l1_of)
        self.token_members: dict[int, tuple[int, ...]] = {
            t: tuple(sorted(m)) for t, m in token_members.items()
        }

    @property
    def domain(self) -> frozenset:
        return frozenset(self.l2_of)

    def generalizable(self, hashtags: Iterable[int]) -> list[int]:
        return [h for h in sorted(set(hashtags)) if h in self.l2_of]


def load_taxonomy(path: str, corpus: Corpus) -> tuple[CategoryTaxonomy, Corpus]:
    """Read taxonomy rows and intern category tokens into the vocabulary.

    Returns the taxonomy plus a corpus whose hashtag table is extended
    with any token that was not already a known hashtag.  Rows naming
    hashtags outside the corpus vocabulary are skipped.
    """
    hashtags = list(corpus.hashtags)
    text_id = dict(corpus.hashtag_id)

    def intern(text: str) -> int:
        if text not in text_id:
            text_id[text] = len(hashtags)
            hashtags.append(Hashtag(len(hashtags), text))
        return text_id[text]

    l2_of: dict[int, int] = {}
    l1_of: dict[int, int] = {}
    members: dict[int, set[int]] = {}
    l2_parent: dict[str, str] = {}
    skipped = 0
    for lineno, row in _read_jsonl(path):
        try:
            tag_text = _normalize_hashtag(str(row["hashtag"]))
            cat2 = _token_text(str(row["category_l2"]))
            cat1 = _token_text(str(row["category_l1"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"{path}:{lineno}: malformed taxonomy row ({exc})") from exc
        if cat2 in l2_parent and l2_parent[cat2] != cat1:
            raise ValueError(f"{path}:{lineno}: category {cat2!r} maps to conflicting parents")
        l2_parent[cat2] = cat1
        if tag_text not in corpus.hashtag_id:
            skipped += 1
            continue
        h = corpus.hashtag_id[tag_text]
        if h in l2_of:
            raise ValueError(f"{path}:{lineno}: duplicate taxonomy row for {tag_text!r}")
        t2, t1 = intern(cat2), intern(cat1)
        l2_of[h] = t2
        l1_of[h] = t1
        members.setdefault(t2, set()).add(h)
        members.setdefault(t1, set()).add(h)
    if skipped:
        logger.info("taxonomy: skipped %d rows naming unknown hashtags", skipped)

    extended = Corpus.__new__(Corpus)
    extended.posts = corpus.posts
    extended.hashtags = tuple(hashtags)
    extended.locations = corpus.locations
    extended.users = corpus.users
    extended.hashtag_id = text_id
    extended.location_id = corpus.location_id
    extended.by_location = corpus.by_location
    return CategoryTaxonomy(l2_of, l1_of, members), extended


def _check_bound(value: Optional[int], name: str) -> None:
    if value is not None and value < 0:
        raise ValueError(f"{name} must be >= 0")


def enumerate_hiding(hashtags: Iterable[int], t_h: Optional[int] = None) -> Iterator[Candidate]:
    """Every subset reachable by removing up to t_h hashtags.

    Removing all of them (the empty set) is a legal candidate.  Yields
    2^n - 1 strictly modified candidates when t_h is unbounded.
    """
    _check_bound(t_h, "t_h")
    original = frozenset(hashtags)
    items = sorted(original)
    n = len(items)
    if n == 0:
        return
    yield Candidate(original, 0, "hiding")
    bound = n if t_h is None else min(t_h, n)
    for r in range(1, bound + 1):
        for removed in itertools.combinations(items, r):
            yield Candidate(original - frozenset(removed), r, "hiding")


def enumerate_replacement(
    hashtags: Iterable[int],
    table: EmbeddingTable,
    t_s: int = 2,
    t_r: Optional[int] = None,
    within: Optional[int] = None,
) -> Iterator[Candidate]:
    """All combinations of up to t_r semantic replacements.

    Each hashtag's options are its t_s nearest embedding neighbors,
    excluding every member of the original set, so a candidate never
    re-introduces an original hashtag and keeps the set size.  At most
    (t_s + 1)^n - 1 strictly modified candidates.  ``within`` limits
    suggestions to ids below it, keeping appended category tokens out
    of the pool.
    """
    if t_s < 1:
        raise ValueError("t_s must be >= 1")
    _check_bound(t_r, "t_r")
    original = frozenset(hashtags)
    items = sorted(original)
    n = len(items)
    if n == 0:
        return
    pool = len(table) if within is None else min(within, len(table))
    options = []
    for h in items:
        limit = pool - 1 if h < pool else pool
        if limit > 0:
            k = min(t_s + n, limit)
            neigh = [x for x in table.nearest_neighbors(h, k, within) if x not in original][:t_s]
        else:
            table.vector(h)  # surface missing-hashtag errors even for tiny pools
            neigh = []
        options.append(neigh)

    yield Candidate(original, 0, "replacement")
    seen = {original}
    bound = n if t_r is None else min(t_r, n)
    for r in range(1, bound + 1):
        for pos in itertools.combinations(range(n), r):
            for choice in itertools.product(*(options[i] for i in pos)):
                cand = original.difference(items[i] for i in pos).union(choice)
                if len(cand) != n or cand in seen:
                    continue
                seen.add(cand)
                yield Candidate(cand, r, "replacement")


def enumerate_generalization(
    hashtags: Iterable[int],
    tax: CategoryTaxonomy,
    t_g: Optional[int] = None,
) -> Iterator[Candidate]:
    """All combinations of up to t_g category generalizations.

    Only hashtags in the taxonomy domain can be edited; each one may be
    lifted to its l2 or l1 token.  With nothing generalizable the stream
    is empty (the mechanism does not apply).  At most 3^|H_g| - 1
    strictly modified candidates.
    """
    _check_bound(t_g, "t_g")
    original = frozenset(hashtags)
    gen = tax.generalizable(original)
    if not gen:
        return
    yield Candidate(original, 0, "generalization")
    seen = {original}
    bound = len(gen) if t_g is None else min(t_g, len(gen))
    for r in range(1, bound + 1):
        for pos in itertools.combinations(range(len(gen)), r):
            pools = [(tax.l2_of[gen[i]], tax.l1_of[gen[i]]) for i in pos]
            for choice in itertools.product(*pools):
                cand = original.difference(gen[i] for i in pos).union(choice)
                if cand in seen:
                    continue
                seen.add(cand)
                yield Candidate(cand, r, "generalization")
