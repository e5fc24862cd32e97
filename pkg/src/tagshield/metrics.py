"""Privacy and performance metrics for location posteriors.

The central quantity is the adversary's expected estimation error: the
posterior-weighted distance between each candidate location and the true
one.  With geographic (haversine) distance it is measured in km; with
binary distance it reduces to 1 - correctness, where correctness is the
posterior mass on the true location.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .corpus import Corpus, Location
from .forest import Posterior, feature_matrix

EARTH_RADIUS_KM = 6371.0


def haversine_km(lat1: float, lon1: float, lat2: float, lon2: float) -> float:
    """Great-circle distance between two coordinates, in km."""
    p1, p2 = math.radians(lat1), math.radians(lat2)
    dp = p2 - p1
    dl = math.radians(lon2) - math.radians(lon1)
    a = math.sin(dp / 2.0) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(dl / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_KM * math.asin(math.sqrt(a))


def location_distance_km(a: Location, b: Location) -> float:
    return haversine_km(a.lat, a.lon, b.lat, b.lon)


def distance_matrix(locations: Sequence[Location]) -> np.ndarray:
    """Pairwise haversine distances, vectorized over the location table."""
    lat = np.radians(np.array([loc.lat for loc in locations]))
    lon = np.radians(np.array([loc.lon for loc in locations]))
    dp = lat[:, None] - lat[None, :]
    dl = lon[:, None] - lon[None, :]
    a = np.sin(dp / 2.0) ** 2 + np.cos(lat)[:, None] * np.cos(lat)[None, :] * np.sin(dl / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))


def weighted_distance(probs: np.ndarray, dists: np.ndarray) -> float:
    """Posterior-weighted sum of distances, the expected estimation error."""
    return float(np.dot(probs, dists))


def expected_distance_km(
    posterior: Posterior,
    true_location: int,
    locations: Sequence[Location],
    kind: str = "geographic",
) -> float:
    """Expected estimation error of a posterior against the truth.

    kind="geographic" weighs haversine distances to the true location;
    kind="binary" scores any wrong location as 1, which collapses to
    1 - correctness.
    """
    if kind == "binary":
        return 1.0 - correctness(posterior, true_location)
    if kind != "geographic":
        raise ValueError(f"unknown distance kind {kind!r}")
    true_loc = locations[true_location]
    dists = np.array(
        [location_distance_km(locations[c], true_loc) for c in posterior.classes]
    )
    return weighted_distance(posterior.probs, dists)


def correctness(posterior: Posterior, true_location: int) -> float:
    """Posterior mass assigned to the true location."""
    if true_location < 0:
        raise ValueError("negative location id")
    return posterior.prob_of(true_location)


def incorrectness(posterior: Posterior, true_location: int) -> float:
    return 1.0 - correctness(posterior, true_location)


def accuracy_indicator(posterior: Posterior, true_location: int) -> float:
    """1.0 when the top prediction (ties to lowest id) is the truth."""
    return 1.0 if posterior.top() == true_location else 0.0


@dataclass(frozen=True)
class GroupStats:
    accuracy: float
    correctness: float
    n: int


@dataclass(frozen=True)
class PerformanceReport:
    correctness: float
    expected_distance_km: float
    accuracy: float
    n_test: int
    per_hashtag_count: dict[int, GroupStats] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "correctness": self.correctness,
            "expected_distance_km": self.expected_distance_km,
            "accuracy": self.accuracy,
            "n_test": self.n_test,
            "per_hashtag_count": {
                str(k): {"accuracy": g.accuracy, "correctness": g.correctness, "n": g.n}
                for k, g in sorted(self.per_hashtag_count.items())
            },
        }


def _report_from_rows(probs, classes, true_locs, tag_counts, locations) -> PerformanceReport:
    classes = np.asarray(classes)
    n = len(true_locs)
    D = distance_matrix(locations)
    dists = D[np.ix_(classes, true_locs)]  # class x post
    expected = (probs * dists.T).sum(axis=1)

    class_pos = {c: i for i, c in enumerate(classes.tolist())}
    corr = np.zeros(n)
    for i, t in enumerate(true_locs):
        if t in class_pos:
            corr[i] = probs[i, class_pos[t]]
    top = classes[probs.argmax(axis=1)]
    acc = (top == np.asarray(true_locs)).astype(float)

    groups: dict[int, GroupStats] = {}
    tag_counts = np.asarray(tag_counts)
    for k in sorted(set(tag_counts.tolist())):
        mask = tag_counts == k
        groups[k] = GroupStats(
            accuracy=float(acc[mask].mean()),
            correctness=float(corr[mask].mean()),
            n=int(mask.sum()),
        )
    return PerformanceReport(
        correctness=float(corr.mean()),
        expected_distance_km=float(expected.mean()),
        accuracy=float(acc.mean()),
        n_test=n,
        per_hashtag_count=groups,
    )


def evaluate(model, baseline, test: Corpus) -> tuple[PerformanceReport, PerformanceReport]:
    """Score a model and the majority baseline on a test view.

    Means run over all test posts; the per-hashtag-count groups partition
    the test set by the post's raw hashtag count.  Baseline metrics use a
    one-hot posterior on its top class.
    """
    if not test.posts:
        raise ValueError("empty test corpus")
    true_locs = [p.location for p in test.posts]
    if any(t is None for t in true_locs):
        raise ValueError("test post without location")
    tag_counts = [len(p.hashtags) for p in test.posts]

    X = feature_matrix([p.hashtags for p in test.posts], model.vocab_dimension)
    model_report = _report_from_rows(
        model.predict_batch(X), model.classes, true_locs, tag_counts, test.locations
    )
    Xb = np.zeros((len(test.posts), 1), dtype=np.uint8)
    base_report = _report_from_rows(
        baseline.predict_batch(Xb), baseline.classes, true_locs, tag_counts, test.locations
    )
    return model_report, base_report


def report_csv_rows(report: PerformanceReport) -> list[list]:
    rows = [["hashtag_count", "accuracy", "correctness"]]
    for k, g in sorted(report.per_hashtag_count.items()):
        rows.append([k, g.accuracy, g.correctness])
    return rows


def write_report_csv(report: PerformanceReport, path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        csv.writer(fh).writerows(report_csv_rows(report))
