"""Check-in corpus handling: loading, cleaning, splitting, and synthesis.

A corpus bundles hashtag-annotated posts with the hashtag, location, and
user tables they index into.  All ids are dense integers assigned in first
appearance order, so the tables are plain tuples and a post stores only
ids.  Corpora are treated as immutable after construction; derived views
share the tables and carry their own post subset.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, fields
from typing import Iterable, Optional, Sequence

import numpy as np

# Platform-imposed cap on hashtags per post.
MAX_HASHTAGS_PER_POST = 30


@dataclass(frozen=True)
class Hashtag:
    id: int
    text: str


@dataclass(frozen=True)
class Location:
    id: int
    key: str  # external id from the locations file
    name: str
    lat: float
    lon: float
    category_l2: str
    category_l1: str


@dataclass(frozen=True)
class Post:
    user: int
    location: Optional[int]
    time: int
    hashtags: frozenset[int]


class Corpus:
    """Posts plus the tables their ids point into."""

    def __init__(self, posts, hashtags, locations, users):
        self.posts: tuple[Post, ...] = tuple(posts)
        self.hashtags: tuple[Hashtag, ...] = tuple(hashtags)
        self.locations: tuple[Location, ...] = tuple(locations)
        self.users: tuple[str, ...] = tuple(users)
        self.hashtag_id = {h.text: h.id for h in self.hashtags}
        self.location_id = {loc.key: loc.id for loc in self.locations}
        self.by_location = self._index_by_location()

    def _index_by_location(self) -> dict[int, Counter]:
        index: dict[int, Counter] = {}
        for post in self.posts:
            if post.location is None:
                continue
            bag = index.setdefault(post.location, Counter())
            bag.update(post.hashtags)
        return index

    @property
    def n_posts(self) -> int:
        return len(self.posts)

    def view(self, posts: Sequence[Post]) -> "Corpus":
        """A corpus over a subset of posts, sharing all id tables."""
        sub = Corpus.__new__(Corpus)
        sub.posts = tuple(posts)
        sub.hashtags = self.hashtags
        sub.locations = self.locations
        sub.users = self.users
        sub.hashtag_id = self.hashtag_id
        sub.location_id = self.location_id
        sub.by_location = sub._index_by_location()
        return sub


@dataclass(frozen=True)
class SplitSpec:
    adversary: str  # "A1" (post-level) or "A2" (user-level)
    train_fraction: float = 0.8
    repetitions: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.adversary not in ("A1", "A2"):
            raise ValueError(f"unknown adversary {self.adversary!r}")
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must be in (0, 1)")
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")


@dataclass(frozen=True)
class SynthConfig:
    """Parameters for the planted synthetic corpus.

    Every location gets a disjoint pool of signature hashtags; posts draw
    each slot from their location's signatures with probability
    ``signature_rate`` and from the shared noise pool otherwise.  The
    optional user fields plant per-user idiosyncratic hashtags: each user
    owns a small personal pool, ``user_tag_slots`` slots per post draw
    from it, and ``user_home_locations`` > 0 restricts each user to a
    fixed random subset of locations.
    """

    n_locations: int
    signature_hashtags_per_location: int
    n_noise_hashtags: int
    posts_per_location: int
    hashtags_per_post: int
    signature_rate: float
    n_users: int
    seed: int
    user_tags_per_user: int = 0
    user_tag_slots: int = 0
    user_home_locations: int = 0

    def __post_init__(self):
        if min(self.n_locations, self.posts_per_location, self.hashtags_per_post, self.n_users) < 1:
            raise ValueError("counts must be >= 1")
        if not 0.0 <= self.signature_rate <= 1.0:
            raise ValueError("signature_rate must be in [0, 1]")
        if self.hashtags_per_post > MAX_HASHTAGS_PER_POST:
            raise ValueError(f"hashtags_per_post exceeds the cap of {MAX_HASHTAGS_PER_POST}")
        draw_slots = self.hashtags_per_post - self.user_tag_slots
        if draw_slots < 0:
            raise ValueError("user_tag_slots exceeds hashtags_per_post")
        if draw_slots > self.signature_hashtags_per_location + self.n_noise_hashtags:
            raise ValueError("hashtags_per_post exceeds the available signature and noise pools")
        if self.signature_rate > 0.0 and self.signature_hashtags_per_location < 1:
            raise ValueError("signature_rate > 0 needs at least one signature hashtag per location")
        if self.signature_rate < 1.0 and draw_slots > 0 and self.n_noise_hashtags < 1:
            raise ValueError("signature_rate < 1 needs a non-empty noise pool")
        if self.user_tag_slots > 0 and self.user_tags_per_user < self.user_tag_slots:
            raise ValueError("user_tag_slots exceeds user_tags_per_user")
        if self.user_home_locations > self.n_locations:
            raise ValueError("user_home_locations exceeds n_locations")

    @classmethod
    def from_json(cls, path: str) -> "SynthConfig":
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
        if not isinstance(raw, dict):
            raise ValueError("synthesis config must be a single JSON object")
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**raw)


def _normalize_hashtag(raw: str) -> str:
    return raw.lstrip("#").lower()


def _read_jsonl(path: str):
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                yield lineno, json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc


def load_locations(path: str) -> tuple[Location, ...]:
    """Read the location table, assigning dense ids in file order."""
    locations = []
    seen_keys = {}
    l2_to_l1: dict[str, str] = {}
    for lineno, row in _read_jsonl(path):
        try:
            key = row["id"]
            name = row["name"]
            lat = float(row["lat"])
            lon = float(row["lon"])
            cat2 = row["category_l2"]
            cat1 = row["category_l1"]
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"{path}:{lineno}: malformed location row ({exc})") from exc
        if key in seen_keys:
            raise ValueError(f"{path}:{lineno}: duplicate location id {key!r}")
        if not -90.0 <= lat <= 90.0 or not -180.0 <= lon <= 180.0:
            raise ValueError(f"{path}:{lineno}: coordinates out of range for {key!r}")
        if cat2 in l2_to_l1 and l2_to_l1[cat2] != cat1:
            raise ValueError(f"{path}:{lineno}: category {cat2!r} maps to conflicting parents")
        l2_to_l1[cat2] = cat1
        seen_keys[key] = True
        locations.append(Location(len(locations), key, name, lat, lon, cat2, cat1))
    return tuple(locations)


def load_corpus(posts_path: str, locations_path: str) -> Corpus:
    """Load posts and their location table from JSONL files.

    Hashtags are lowercased, stripped of a leading '#', and deduplicated
    within a post.  Users and hashtags get dense ids in first appearance
    order; location ids follow the location file order.
    """
    locations = load_locations(locations_path)
    location_id = {loc.key: loc.id for loc in locations}

    hashtags: list[Hashtag] = []
    hashtag_id: dict[str, int] = {}
    users: list[str] = []
    user_id: dict[str, int] = {}
    posts: list[Post] = []

    for lineno, row in _read_jsonl(posts_path):
        try:
            user_key = row["user"]
            loc_key = row["location"]
            time = int(row["time"])
            raw_tags = row["hashtags"]
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"{posts_path}:{lineno}: malformed post row ({exc})") from exc
        if not isinstance(raw_tags, list):
            raise ValueError(f"{posts_path}:{lineno}: hashtags must be a list")

        if loc_key is None:
            loc = None
        elif loc_key in location_id:
            loc = location_id[loc_key]
        else:
            raise ValueError(f"{posts_path}:{lineno}: unknown location {loc_key!r}")

        if user_key not in user_id:
            user_id[user_key] = len(users)
            users.append(user_key)

        tag_ids = set()
        for raw in raw_tags:
            text = _normalize_hashtag(str(raw))
            if not text:
                raise ValueError(f"{posts_path}:{lineno}: empty hashtag")
            if any(ch.isspace() for ch in text):
                raise ValueError(f"{posts_path}:{lineno}: hashtag {text!r} contains whitespace")
            if text not in hashtag_id:
                hashtag_id[text] = len(hashtags)
                hashtags.append(Hashtag(len(hashtags), text))
            tag_ids.add(hashtag_id[text])
        if len(tag_ids) > MAX_HASHTAGS_PER_POST:
            raise ValueError(
                f"{posts_path}:{lineno}: {len(tag_ids)} hashtags exceeds the cap of {MAX_HASHTAGS_PER_POST}"
            )
        posts.append(Post(user_id[user_key], loc, time, frozenset(tag_ids)))

    return Corpus(posts, hashtags, locations, users)


def filter_corpus(
    corpus: Corpus,
    min_user_checkins: int = 20,
    min_hashtag_count: int = 20,
    min_location_checkins: int = 50,
) -> Corpus:
    """Iteratively clean a corpus down to its dense core.

    Repeats until stable: drop users with fewer than ``min_user_checkins``
    located posts, strip hashtags occurring fewer than ``min_hashtag_count``
    times, drop locations with fewer than ``min_location_checkins``
    check-ins, and drop posts left with no hashtags.  Posts without a
    location are removed up front; only check-ins feed training and
    evaluation.  Ids are re-densified at the end, preserving the original
    relative order of surviving entries.
    """
    posts = [p for p in corpus.posts if p.location is not None]

    changed = True
    while changed:
        changed = False

        user_counts = Counter(p.user for p in posts)
        bad_users = {u for u, c in user_counts.items() if c < min_user_checkins}
        if bad_users:
            posts = [p for p in posts if p.user not in bad_users]
            changed = True

        tag_counts: Counter = Counter()
        for p in posts:
            tag_counts.update(p.hashtags)
        bad_tags = {h for h, c in tag_counts.items() if c < min_hashtag_count}
        if bad_tags:
            posts = [
                Post(p.user, p.location, p.time, p.hashtags - bad_tags) if p.hashtags & bad_tags else p
                for p in posts
            ]
            changed = True

        loc_counts = Counter(p.location for p in posts)
        bad_locs = {l for l, c in loc_counts.items() if c < min_location_checkins}
        if bad_locs:
            posts = [p for p in posts if p.location not in bad_locs]
            changed = True

        kept = [p for p in posts if p.hashtags]
        if len(kept) != len(posts):
            posts = kept
            changed = True

    # Re-densify ids over the surviving posts.
    live_tags = set()
    live_locs = set()
    live_users = set()
    for p in posts:
        live_tags.update(p.hashtags)
        live_locs.add(p.location)
        live_users.add(p.user)

    tag_map = {}
    new_tags = []
    for h in corpus.hashtags:
        if h.id in live_tags:
            tag_map[h.id] = len(new_tags)
            new_tags.append(Hashtag(len(new_tags), h.text))
    loc_map = {}
    new_locs = []
    for loc in corpus.locations:
        if loc.id in live_locs:
            loc_map[loc.id] = len(new_locs)
            new_locs.append(
                Location(len(new_locs), loc.key, loc.name, loc.lat, loc.lon, loc.category_l2, loc.category_l1)
            )
    user_map = {}
    new_users = []
    for uid, name in enumerate(corpus.users):
        if uid in live_users:
            user_map[uid] = len(new_users)
            new_users.append(name)

    new_posts = [
        Post(user_map[p.user], loc_map[p.location], p.time, frozenset(tag_map[h] for h in p.hashtags))
        for p in posts
    ]
    return Corpus(new_posts, new_tags, new_locs, new_users)


def split(corpus: Corpus, spec: SplitSpec, repetition: int) -> tuple[Corpus, Corpus]:
    """Partition a corpus into train/test views for one repetition.

    A1 partitions posts at random; A2 partitions users, so no post of a
    test user is seen at training time.  Deterministic given
    (spec.seed, repetition).
    """
    if not 0 <= repetition < spec.repetitions:
        raise ValueError(f"repetition {repetition} outside [0, {spec.repetitions})")
    for p in corpus.posts:
        if p.location is None:
            raise ValueError("split requires every post to carry a location")

    rng = np.random.default_rng([spec.seed % 2**64, repetition])

    if spec.adversary == "A1":
        n = corpus.n_posts
        if n < 2:
            raise ValueError("A1 split needs at least 2 posts")
        n_train = min(max(int(round(spec.train_fraction * n)), 1), n - 1)
        perm = rng.permutation(n)
        train_idx = np.sort(perm[:n_train])
        test_idx = np.sort(perm[n_train:])
        train = corpus.view([corpus.posts[i] for i in train_idx])
        test = corpus.view([corpus.posts[i] for i in test_idx])
        return train, test

    n_users = len(corpus.users)
    if n_users < 2:
        raise ValueError("A2 split needs at least 2 users")
    n_train = min(max(int(round(spec.train_fraction * n_users)), 1), n_users - 1)
    perm = rng.permutation(n_users)
    train_users = set(perm[:n_train].tolist())
    train = corpus.view([p for p in corpus.posts if p.user in train_users])
    test = corpus.view([p for p in corpus.posts if p.user not in train_users])
    return train, test


def hashtag_count_histogram(corpus: Corpus) -> dict[int, float]:
    """Fraction of posts per hashtag count."""
    if not corpus.posts:
        raise ValueError("empty corpus")
    counts = Counter(len(p.hashtags) for p in corpus.posts)
    total = corpus.n_posts
    return {k: counts[k] / total for k in sorted(counts)}


# Fixed two-level category scheme for synthetic locations, assigned
# round-robin so nearby ids share nothing.
SYNTH_CATEGORIES = (
    ("museum", "venue"),
    ("shop", "venue"),
    ("cafe", "venue"),
    ("park", "outdoors"),
    ("trail", "outdoors"),
    ("beach", "outdoors"),
    ("bar", "nightlife"),
    ("club", "nightlife"),
    ("music hall", "nightlife"),
)

# Degrees of latitude per kilometre on the reference sphere.
_DEG_PER_KM = 180.0 / (math.pi * 6371.0)


def _synth_tags(cfg: SynthConfig):
    signatures = [
        [f"sig{i}_{j}" for j in range(cfg.signature_hashtags_per_location)]
        for i in range(cfg.n_locations)
    ]
    noise = [f"noise_{k}" for k in range(cfg.n_noise_hashtags)]
    user_tags = [
        [f"utag{u}_{j}" for j in range(cfg.user_tags_per_user)]
        for u in range(cfg.n_users)
    ]
    return signatures, noise, user_tags


def generate_synthetic(cfg: SynthConfig) -> Corpus:
    """Build a planted corpus with location-unique signature hashtags.

    Locations sit on a 1 km grid.  Deterministic given cfg.seed.
    """
    rng = np.random.default_rng(cfg.seed % 2**64)
    signatures, noise, user_tags = _synth_tags(cfg)

    hashtags: list[Hashtag] = []
    hashtag_id: dict[str, int] = {}

    def intern(text: str) -> int:
        if text not in hashtag_id:
            hashtag_id[text] = len(hashtags)
            hashtags.append(Hashtag(len(hashtags), text))
        return hashtag_id[text]

    sig_ids = [[intern(t) for t in pool] for pool in signatures]
    noise_ids = [intern(t) for t in noise]
    user_tag_ids = [[intern(t) for t in pool] for pool in user_tags]

    side = math.ceil(math.sqrt(cfg.n_locations))
    locations = []
    for i in range(cfg.n_locations):
        cat2, cat1 = SYNTH_CATEGORIES[i % len(SYNTH_CATEGORIES)]
        locations.append(
            Location(
                i,
                f"L{i}",
                f"place {i}",
                (i // side) * _DEG_PER_KM,
                (i % side) * _DEG_PER_KM,
                cat2,
                cat1,
            )
        )

    users = [f"user_{u}" for u in range(cfg.n_users)]
    if cfg.user_home_locations > 0:
        homes = [
            set(rng.choice(cfg.n_locations, size=cfg.user_home_locations, replace=False).tolist())
            for _ in range(cfg.n_users)
        ]
        eligible = [
            [u for u in range(cfg.n_users) if loc in homes[u]] or list(range(cfg.n_users))
            for loc in range(cfg.n_locations)
        ]
    else:
        eligible = None

    posts: list[Post] = []
    time = 0
    draw_slots = cfg.hashtags_per_post - cfg.user_tag_slots
    for loc in range(cfg.n_locations):
        for _ in range(cfg.posts_per_location):
            if eligible is None:
                user = int(rng.integers(cfg.n_users))
            else:
                pool = eligible[loc]
                user = pool[int(rng.integers(len(pool)))]

            chosen: set[int] = set()
            if cfg.user_tag_slots > 0:
                picks = rng.choice(len(user_tag_ids[user]), size=cfg.user_tag_slots, replace=False)
                chosen.update(user_tag_ids[user][j] for j in picks)
            for _slot in range(draw_slots):
                use_sig = rng.random() < cfg.signature_rate
                pools = [sig_ids[loc], noise_ids] if use_sig else [noise_ids, sig_ids[loc]]
                for pool in pools:
                    open_tags = [t for t in pool if t not in chosen]
                    if open_tags:
                        chosen.add(open_tags[int(rng.integers(len(open_tags)))])
                        break
                else:
                    raise ValueError("signature and noise pools exhausted; lower hashtags_per_post")
            posts.append(Post(user, loc, time, frozenset(chosen)))
            time += 1

    return Corpus(posts, hashtags, locations, users)


def synthetic_taxonomy(cfg: SynthConfig) -> list[dict]:
    """Taxonomy rows for a synthetic corpus.

    Signature hashtags generalize to their location's categories; noise
    and personal hashtags stay out of the taxonomy on purpose, so not
    every hashtag is generalizable.
    """
    signatures, _, _ = _synth_tags(cfg)
    rows = []
    for i, pool in enumerate(signatures):
        cat2, cat1 = SYNTH_CATEGORIES[i % len(SYNTH_CATEGORIES)]
        for text in pool:
            rows.append({"hashtag": text, "category_l2": cat2, "category_l1": cat1})
    return rows


def save_locations(locations: Iterable[Location], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for loc in locations:
            fh.write(
                json.dumps(
                    {
                        "id": loc.key,
                        "name": loc.name,
                        "lat": loc.lat,
                        "lon": loc.lon,
                        "category_l2": loc.category_l2,
                        "category_l1": loc.category_l1,
                    },
                    sort_keys=True,
                )
                + "\n"
            )


def save_corpus(corpus: Corpus, posts_path: str, locations_path: str) -> None:
    """Write a corpus back to the two JSONL files."""
    save_locations(corpus.locations, locations_path)
    with open(posts_path, "w", encoding="utf-8") as fh:
        for post in corpus.posts:
            fh.write(
                json.dumps(
                    {
                        "user": corpus.users[post.user],
                        "location": None if post.location is None else corpus.locations[post.location].key,
                        "time": post.time,
                        "hashtags": sorted(corpus.hashtags[h].text for h in post.hashtags),
                    },
                    sort_keys=True,
                )
                + "\n"
            )


def save_taxonomy(rows: Iterable[dict], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
