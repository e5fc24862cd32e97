"""End-to-end stages behind the CLI: data prep, training, the attack and
defense evaluations, and serving-bundle persistence.

Every stage is deterministic given its seeds; wall-clock measurements go
to a separate structure so the report files compare bit for bit across
runs.  Manifests record parameters and content digests but no paths or
timestamps for the same reason.
"""

from __future__ import annotations

import hashlib
import json
import os
import shutil
import time
from collections import Counter
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .advisor import AdvisorConfig, recommend
from .corpus import (
    Corpus,
    Hashtag,
    Location,
    Post,
    SplitSpec,
    filter_corpus,
    load_corpus,
    load_locations,
    save_locations,
    split,
)
from .embedding import EmbedParams, EmbeddingTable, read_embeddings, save_embeddings, train_embeddings
from .forest import (
    MODEL_FORMAT_VERSION,
    ForestParams,
    RandomForestModel,
    featurize,
    train,
    train_baseline,
)
from .metrics import PerformanceReport, accuracy_indicator, evaluate
from .obfuscate import CategoryTaxonomy, load_taxonomy

BUNDLE_MODEL = "model.json"
BUNDLE_EMBEDDINGS = "embeddings.txt"
BUNDLE_LOCATIONS = "locations.jsonl"
BUNDLE_TAXONOMY = "taxonomy.jsonl"
BUNDLE_MANIFEST = "manifest.json"

ADVERSARIES = ("A1", "A2")


def config_digest(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode("utf-8")).hexdigest()


def write_manifest(path: str, command: str, config: dict, extra: Optional[dict] = None) -> dict:
    """Persist a reproducibility record: parameters, their digest, format
    versions.  Deliberately free of paths and timestamps so two runs of
    the same command produce identical bytes."""
    manifest = {
        "command": command,
        "config": config,
        "config_sha256": config_digest(config),
        "formats": {"bundle": 1, "model": MODEL_FORMAT_VERSION},
        "tool": {"name": "tagshield", "version": __version__},
    }
    if extra:
        manifest.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return manifest


def prepare_corpus(posts_path: str, locations_path: str) -> Corpus:
    """Load and filter the corpus; error out if nothing survives."""
    corpus = filter_corpus(load_corpus(posts_path, locations_path))
    if not corpus.posts:
        raise ValueError("corpus is empty after filtering")
    return corpus


def train_stage(
    corpus: Corpus,
    forest_params: ForestParams = ForestParams(),
    embed_params: EmbedParams = EmbedParams(),
) -> tuple[RandomForestModel, EmbeddingTable]:
    """Train the attack forest and the utility embeddings on one corpus."""
    return train(corpus, forest_params), train_embeddings(corpus, embed_params)


def _mean(values) -> float:
    values = list(values)
    return float(sum(values) / len(values))


def average_reports(reports: Sequence[PerformanceReport]) -> dict:
    """Arithmetic mean of report fields across split repetitions.

    Per-hashtag-count buckets average over the repetitions where the
    bucket occurs; their sample counts sum.
    """
    out = {
        "accuracy": _mean(r.accuracy for r in reports),
        "correctness": _mean(r.correctness for r in reports),
        "expected_distance_km": _mean(r.expected_distance_km for r in reports),
        "n_test": _mean(r.n_test for r in reports),
        "repetitions": len(reports),
    }
    buckets = {}
    for count in sorted({c for r in reports for c in r.per_hashtag_count}):
        present = [r.per_hashtag_count[count] for r in reports if count in r.per_hashtag_count]
        buckets[str(count)] = {
            "accuracy": _mean(g.accuracy for g in present),
            "correctness": _mean(g.correctness for g in present),
            "n": int(sum(g.n for g in present)),
        }
    out["per_hashtag_count"] = buckets
    return out


def attack_eval(
    corpus: Corpus,
    repetitions: int = 10,
    train_fraction: float = 0.8,
    seed: int = 0,
    params: ForestParams = ForestParams(),
) -> dict:
    """Measure both adversaries over repeated random splits.

    Each repetition retrains forest and baseline on its train side and
    evaluates the test side; the emitted numbers are means over the
    repetitions.  The forest seed advances with the repetition index so
    no two repetitions share bootstrap draws.
    """
    out = {
        "repetitions": repetitions,
        "train_fraction": train_fraction,
        "split_seed": seed,
        "adversaries": {},
    }
    for adversary in ADVERSARIES:
        spec = SplitSpec(adversary, train_fraction, repetitions, seed)
        attack_reports, baseline_reports = [], []
        for rep in range(repetitions):
            train_side, test_side = split(corpus, spec, rep)
            model = train(train_side, replace(params, seed=params.seed + rep))
            baseline = train_baseline(train_side)
            got, base = evaluate(model, baseline, test_side)
            attack_reports.append(got)
            baseline_reports.append(base)
        out["adversaries"][adversary] = {
            "attack": average_reports(attack_reports),
            "baseline": average_reports(baseline_reports),
        }
    return out


def attack_curves_rows(averaged: dict) -> list[list]:
    """Accuracy and correctness per original hashtag count, CSV-shaped."""
    rows = [["hashtag_count", "accuracy", "correctness"]]
    for count in sorted(averaged["per_hashtag_count"], key=int):
        bucket = averaged["per_hashtag_count"][count]
        rows.append([int(count), bucket["accuracy"], bucket["correctness"]])
    return rows


def bound_key(bound: Optional[int]) -> str:
    return "unbounded" if bound is None else str(bound)


def _loss_stats(losses: list) -> dict:
    if not losses:
        return {"n": 0}
    arr = np.sort(np.asarray(losses))
    qs = np.quantile(arr, [0.0, 0.25, 0.5, 0.75, 0.9, 1.0])
    return {
        "n": len(losses),
        "mean": float(arr.mean()),
        "quantiles": {
            "p0": float(qs[0]),
            "p25": float(qs[1]),
            "p50": float(qs[2]),
            "p75": float(qs[3]),
            "p90": float(qs[4]),
            "p100": float(qs[5]),
        },
    }


def _grouped_mean(pairs) -> dict:
    sums: dict[int, list] = {}
    for count, value in pairs:
        agg = sums.setdefault(count, [0.0, 0])
        agg[0] += value
        agg[1] += 1
    return {str(c): sums[c][0] / sums[c][1] for c in sorted(sums)}


def defend_eval(
    model: RandomForestModel,
    table: EmbeddingTable,
    tax: Optional[CategoryTaxonomy],
    posts: Sequence[Post],
    locations: Sequence[Location],
    cfg: AdvisorConfig = AdvisorConfig(),
    bounds: Sequence[Optional[int]] = (1, 2, 3, None),
    max_posts: Optional[int] = None,
) -> tuple[dict, dict]:
    """Sweep the advisor over test posts at each obfuscation bound.

    For every post the globally optimal candidate is "published" and
    re-attacked.  Protected posts are those that needed obfuscation and
    got a satisfying set; mechanism shares and the utility statistics
    are computed over them.  Returns (report, timing) so callers can
    keep nondeterministic wall-clock data out of the report file.
    """
    eval_posts = [p for p in posts if p.hashtags]
    if max_posts is not None:
        eval_posts = eval_posts[:max_posts]
    if not eval_posts:
        raise ValueError("no posts with hashtags to defend")

    report = {
        "alpha": cfg.alpha,
        "metric": cfg.metric,
        "mechanisms": list(cfg.mechanisms),
        "n_posts": len(eval_posts),
        "bounds": {},
    }
    timing: dict = {"bounds": {}}
    for bound in bounds:
        bcfg = replace(cfg, max_obfuscated=bound)
        hits = 0.0
        hit_pairs = []
        mech_losses: dict[str, list] = {m: [] for m in cfg.mechanisms}
        optimal_losses: list[float] = []
        optimal_pairs = []
        wins: Counter = Counter()
        already = protected = unprotected = 0
        seconds: list[float] = []
        second_pairs = []
        for post in eval_posts:
            t0 = time.perf_counter()
            advice = recommend(post, bcfg, model, table, tax, locations)
            elapsed = time.perf_counter() - t0
            n_original = len(post.hashtags)
            seconds.append(elapsed)
            second_pairs.append((n_original, elapsed))

            chosen = advice.best
            posterior = model.predict_posterior(featurize(chosen.hashtags, model.vocab_dimension))
            hit = accuracy_indicator(posterior, post.location)
            hits += hit
            hit_pairs.append((n_original, hit))

            if advice.original.satisfiable:
                already += 1
                continue
            if chosen.satisfiable:
                protected += 1
                wins[chosen.mechanism] += 1
                optimal_losses.append(chosen.utility_loss)
                optimal_pairs.append((n_original, chosen.utility_loss))
                for rec in advice.per_mechanism:
                    if rec.satisfiable:
                        mech_losses[rec.mechanism].append(rec.utility_loss)
            else:
                unprotected += 1

        key = bound_key(bound)
        report["bounds"][key] = {
            "post_defense_accuracy": hits / len(eval_posts),
            "accuracy_by_hashtag_count": _grouped_mean(hit_pairs),
            "already_private": already,
            "protected": protected,
            "unprotected": unprotected,
            "mechanism_share": {
                m: (wins[m] / protected if protected else 0.0) for m in cfg.mechanisms
            },
            "utility": {
                "optimal": _loss_stats(optimal_losses),
                "per_mechanism": {m: _loss_stats(mech_losses[m]) for m in cfg.mechanisms},
                "optimal_mean_by_hashtag_count": _grouped_mean(optimal_pairs),
            },
        }
        timing["bounds"][key] = {
            "mean_seconds": _mean(seconds),
            "by_hashtag_count": _grouped_mean(second_pairs),
        }
    return report, timing


@dataclass
class Bundle:
    """Everything the service needs, reloaded from one directory."""

    model: RandomForestModel
    table: EmbeddingTable
    corpus: Corpus  # vocabulary and locations; carries no posts
    tax: Optional[CategoryTaxonomy]
    manifest: dict


def save_bundle(
    out_dir: str,
    model: RandomForestModel,
    table: EmbeddingTable,
    corpus: Corpus,
    taxonomy_path: Optional[str] = None,
    extra: Optional[dict] = None,
    config: Optional[dict] = None,
) -> dict:
    """Persist model, embeddings, locations, and taxonomy for serving.

    ``corpus`` supplies the vocabulary the embedding rows are labeled
    with, so pass the token-extended corpus when a taxonomy is in play.
    """
    if model.vocab_dimension > len(corpus.hashtags):
        raise ValueError("model dimension exceeds the corpus vocabulary")
    os.makedirs(out_dir, exist_ok=True)
    model.save(os.path.join(out_dir, BUNDLE_MODEL))
    save_embeddings(table, corpus, os.path.join(out_dir, BUNDLE_EMBEDDINGS))
    save_locations(corpus.locations, os.path.join(out_dir, BUNDLE_LOCATIONS))
    if taxonomy_path is not None:
        shutil.copyfile(taxonomy_path, os.path.join(out_dir, BUNDLE_TAXONOMY))
    info = {
        "bundle": {
            "classes": len(model.classes),
            "embedding_dim": table.dim,
            "n_hashtags": len(corpus.hashtags),
            "n_locations": len(corpus.locations),
            "n_trees": model.n_trees,
            "taxonomy": taxonomy_path is not None,
            "vocab_dimension": model.vocab_dimension,
        }
    }
    if extra:
        info.update(extra)
    return write_manifest(
        os.path.join(out_dir, BUNDLE_MANIFEST), "train", config or {}, info
    )


def load_bundle(bundle_dir: str) -> Bundle:
    """Rebuild the serving state written by save_bundle.

    The embedding file's line order is the hashtag id assignment, so the
    vocabulary needs no separate file.  Re-reading the taxonomy against
    that vocabulary reuses the already-interned token ids.
    """
    texts, matrix = read_embeddings(os.path.join(bundle_dir, BUNDLE_EMBEDDINGS))
    if len(set(texts)) != len(texts):
        raise ValueError("bundle embeddings list a hashtag twice")
    locations = load_locations(os.path.join(bundle_dir, BUNDLE_LOCATIONS))
    corpus = Corpus([], [Hashtag(i, t) for i, t in enumerate(texts)], locations, [])
    model = RandomForestModel.load(os.path.join(bundle_dir, BUNDLE_MODEL))
    if model.vocab_dimension > len(corpus.hashtags):
        raise ValueError("bundle model dimension exceeds its vocabulary")
    if model.classes and model.classes[-1] >= len(locations):
        raise ValueError("bundle model predicts locations missing from the table")
    table = EmbeddingTable(matrix)
    tax = None
    tax_path = os.path.join(bundle_dir, BUNDLE_TAXONOMY)
    if os.path.exists(tax_path):
        tax, corpus = load_taxonomy(tax_path, corpus)
        if len(corpus.hashtags) != len(table):
            # save_bundle interned these tokens before writing embeddings
            raise ValueError("bundle taxonomy adds tokens missing from the embeddings")
    manifest_path = os.path.join(bundle_dir, BUNDLE_MANIFEST)
    manifest = {}
    if os.path.exists(manifest_path):
        with open(manifest_path, encoding="utf-8") as fh:
            manifest = json.load(fh)
    return Bundle(model, table, corpus, tax, manifest)
