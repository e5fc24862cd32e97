"""Obfuscation advisor: the cheapest hashtag set that restores privacy.

Given a post and a trained attack model, the advisor enumerates candidate
sets per mechanism, keeps those whose privacy level reaches the configured
threshold, and returns the minimal-utility-loss candidate for each
mechanism plus the best across all of them.  Privacy is judged against the
locally held model: the defense assumes the attacker's classifier is known.
"""

from __future__ import annotations

import itertools
from bisect import bisect_left
from dataclasses import dataclass, replace
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

from .corpus import Location, Post
from .embedding import EmbeddingTable
from .forest import RandomForestModel, feature_matrix, featurize
from .metrics import (
    accuracy_indicator,
    expected_distance_km,
    incorrectness,
    location_distance_km,
    weighted_distance,
)
from .obfuscate import (
    MECHANISMS,
    CategoryTaxonomy,
    enumerate_generalization,
    enumerate_hiding,
    enumerate_replacement,
)

PRIVACY_METRICS = ("inaccuracy", "incorrectness", "expected_distance_km")

_CHUNK = 2048  # candidates scored per forest pass


@dataclass(frozen=True)
class AdvisorConfig:
    """Search knobs: privacy threshold, metric, and enumeration bounds.

    ``max_obfuscated`` caps the edit count across every mechanism; the
    per-mechanism bounds tighten individual searches on top of it.  None
    means unbounded.  ``t_s`` is the number of replacement suggestions
    considered per hashtag, not an edit bound.
    """

    alpha: float = 1.0
    metric: str = "inaccuracy"
    mechanisms: tuple[str, ...] = MECHANISMS
    max_obfuscated: Optional[int] = None
    t_h: Optional[int] = None
    t_s: int = 2
    t_r: Optional[int] = None
    t_g: Optional[int] = None

    def __post_init__(self):
        if self.metric not in PRIVACY_METRICS:
            raise ValueError(f"unknown privacy metric {self.metric!r}")
        if self.metric == "expected_distance_km":
            if self.alpha < 0:
                raise ValueError("alpha must be >= 0 for distance privacy")
        elif not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must be in [0, 1] for probability metrics")
        if not self.mechanisms:
            raise ValueError("at least one mechanism must be enabled")
        if len(set(self.mechanisms)) != len(self.mechanisms):
            raise ValueError("duplicate mechanism")
        for m in self.mechanisms:
            if m not in MECHANISMS:
                raise ValueError(f"unknown mechanism {m!r}")
        if self.t_s < 1:
            raise ValueError("t_s must be >= 1")
        for name in ("max_obfuscated", "t_h", "t_r", "t_g"):
            v = getattr(self, name)
            if v is not None and v < 0:
                raise ValueError(f"{name} must be >= 0 or None")

    def bound_for(self, mechanism: str) -> Optional[int]:
        """Effective edit bound for one mechanism: min of its own bound
        and the global one, None when both are unbounded."""
        per = {"hiding": self.t_h, "replacement": self.t_r, "generalization": self.t_g}[mechanism]
        if per is None:
            return self.max_obfuscated
        if self.max_obfuscated is None:
            return per
        return min(per, self.max_obfuscated)


@dataclass(frozen=True)
class Recommendation:
    mechanism: str
    hashtags: tuple[int, ...]
    privacy_level: float
    utility_loss: float
    edits: int
    satisfiable: bool

    def to_dict(self, texts: Sequence[str]) -> dict:
        return {
            "mechanism": self.mechanism,
            "hashtags": [texts[h] for h in self.hashtags],
            "privacy_level": self.privacy_level,
            "utility_loss": self.utility_loss,
            "edits": self.edits,
            "satisfiable": self.satisfiable,
        }


@dataclass(frozen=True)
class Advice:
    """Full answer of recommend(): the entered set's own status, one
    recommendation per enabled mechanism, and the global optimum."""

    original: Recommendation
    per_mechanism: tuple[Recommendation, ...]
    best: Recommendation
    alpha: float
    metric: str


def privacy_level(
    candidate: Iterable[int],
    model: RandomForestModel,
    true_location: int,
    locations: Optional[Sequence[Location]],
    metric: str,
) -> float:
    """Privacy of publishing ``candidate`` when the truth is known.

    inaccuracy: 1 when the model's top guess misses, else 0.
    incorrectness: posterior mass off the true location.
    expected_distance_km: expected haversine error of the posterior.
    """
    if metric not in PRIVACY_METRICS:
        raise ValueError(f"unknown privacy metric {metric!r}")
    post = model.predict_posterior(featurize(candidate, model.vocab_dimension))
    if metric == "inaccuracy":
        return 1.0 - accuracy_indicator(post, true_location)
    if metric == "incorrectness":
        return incorrectness(post, true_location)
    if locations is None:
        raise ValueError("expected_distance_km privacy needs the location table")
    return expected_distance_km(post, true_location, locations, kind="geographic")


def _chunks(stream: Iterator, size: int):
    it = iter(stream)
    while True:
        block = list(itertools.islice(it, size))
        if not block:
            return
        yield block


def _privacy_rows(probs, classes_arr, true_col, true_location, metric, dists):
    # Mirrors privacy_level arithmetic exactly so batched and scalar
    # evaluation of the same candidate give the same float.
    if metric == "inaccuracy":
        top = classes_arr[np.argmax(probs, axis=1)]
        return (top != true_location).astype(np.float64)
    if metric == "incorrectness":
        if true_col is None:
            return np.ones(len(probs))
        return 1.0 - probs[:, true_col]
    return np.array([weighted_distance(row, dists) for row in probs])


def _best_of_stream(mechanism, stream, cfg, model, table, v0, eval_ctx, original_rec):
    classes_arr, true_col, true_location, dists = eval_ctx
    best_sat = None  # key (loss, edits, seq)
    fallback = None  # key (-privacy, loss, edits, seq)
    seq = 0
    for chunk in _chunks(stream, _CHUNK):
        X = feature_matrix([c.hashtags for c in chunk], model.vocab_dimension)
        priv = _privacy_rows(
            model.predict_batch(X), classes_arr, true_col, true_location, cfg.metric, dists
        )
        for cand, p in zip(chunk, priv):
            p = float(p)
            loss = float(np.linalg.norm(v0 - table.sme(cand.hashtags)))
            if p >= cfg.alpha:
                key = (loss, cand.edits, seq)
                if best_sat is None or key < best_sat[0]:
                    best_sat = (key, cand, p, loss)
            key = (-p, loss, cand.edits, seq)
            if fallback is None or key < fallback[0]:
                fallback = (key, cand, p, loss)
            seq += 1
    if best_sat is not None:
        _, cand, p, loss = best_sat
        return Recommendation(mechanism, tuple(sorted(cand.hashtags)), p, loss, cand.edits, True)
    if fallback is None:
        # mechanism produced no candidates at all (nothing generalizable):
        # report the untouched set so every enabled mechanism gets a row
        return replace(original_rec, mechanism=mechanism, satisfiable=False)
    _, cand, p, loss = fallback
    return Recommendation(mechanism, tuple(sorted(cand.hashtags)), p, loss, cand.edits, False)


def recommend(
    post: Post,
    cfg: AdvisorConfig,
    model: RandomForestModel,
    table: EmbeddingTable,
    tax: Optional[CategoryTaxonomy] = None,
    locations: Optional[Sequence[Location]] = None,
) -> Advice:
    """Optimize the post's hashtag set for privacy at minimal utility loss.

    Returns the original set's status, the per-mechanism optima, and the
    global optimum.  When the original set already clears alpha no
    candidates are enumerated.  A mechanism with no satisfying candidate
    comes back satisfiable=False carrying its best-privacy candidate; if
    no mechanism satisfies, ``best`` is the most private candidate seen.
    Ties on utility loss break by fewer edits, then enumeration order,
    then mechanism order as configured.
    """
    original = frozenset(post.hashtags)
    if not original:
        raise ValueError("post has no hashtags to obfuscate")
    if "generalization" in cfg.mechanisms and tax is None:
        raise ValueError("generalization is enabled but no taxonomy was given")
    if cfg.metric == "expected_distance_km" and locations is None:
        raise ValueError("expected_distance_km privacy needs the location table")

    true_location = post.location
    orig_privacy = privacy_level(original, model, true_location, locations, cfg.metric)
    already = orig_privacy >= cfg.alpha
    original_rec = Recommendation(
        "original", tuple(sorted(original)), float(orig_privacy), 0.0, 0, already
    )
    if already:
        return Advice(original_rec, (), original_rec, cfg.alpha, cfg.metric)

    classes_arr = np.asarray(model.classes)
    i = bisect_left(model.classes, true_location)
    true_col = i if i < len(model.classes) and model.classes[i] == true_location else None
    dists = None
    if cfg.metric == "expected_distance_km":
        true_loc = locations[true_location]
        dists = np.array(
            [location_distance_km(locations[c], true_loc) for c in model.classes]
        )
    eval_ctx = (classes_arr, true_col, true_location, dists)

    v0 = table.sme(original)
    per = []
    for mech in cfg.mechanisms:
        bound = cfg.bound_for(mech)
        if mech == "hiding":
            stream = enumerate_hiding(original, t_h=bound)
        elif mech == "replacement":
            # suggestions come from the trained hashtag vocabulary, not
            # from category-token rows appended for generalization
            stream = enumerate_replacement(
                original, table, t_s=cfg.t_s, t_r=bound, within=model.vocab_dimension
            )
        else:
            stream = enumerate_generalization(original, tax, t_g=bound)
        per.append(
            _best_of_stream(mech, stream, cfg, model, table, v0, eval_ctx, original_rec)
        )

    satisfied = [r for r in per if r.satisfiable]
    if satisfied:
        # min() keeps the first of equals, so mechanism order breaks ties
        best = min(satisfied, key=lambda r: (r.utility_loss, r.edits))
    else:
        best = min(per, key=lambda r: (-r.privacy_level, r.utility_loss, r.edits))
    return Advice(original_rec, tuple(per), best, cfg.alpha, cfg.metric)


def recommend_bounded_profile(
    post: Post,
    cfg: AdvisorConfig,
    bounds: Sequence[Optional[int]],
    model: RandomForestModel,
    table: EmbeddingTable,
    tax: Optional[CategoryTaxonomy] = None,
    locations: Optional[Sequence[Location]] = None,
) -> dict:
    """Global optimum per max_obfuscated bound (None = unbounded).

    Search spaces nest as the bound grows, so among satisfiable results
    utility loss never increases.
    """
    out = {}
    for bound in bounds:
        advice = recommend(post, replace(cfg, max_obfuscated=bound), model, table, tax, locations)
        out[bound] = advice.best
    return out
