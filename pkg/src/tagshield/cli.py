"""Command line front end: synthesis, training, evaluations, and serving.

Every command takes a --seed and writes a manifest of its parameters, so
a rerun with the same flags and inputs reproduces its outputs bit for
bit.  Wall-clock numbers go to timing.json, never into reports.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

from .advisor import PRIVACY_METRICS, AdvisorConfig
from .corpus import (
    SplitSpec,
    SynthConfig,
    generate_synthetic,
    save_corpus,
    save_taxonomy,
    split,
    synthetic_taxonomy,
)
from .embedding import EmbedParams, train_embeddings
from .forest import ForestParams, train, train_baseline
from .metrics import evaluate
from .obfuscate import load_taxonomy
from .pipeline import (
    attack_curves_rows,
    attack_eval,
    bound_key,
    defend_eval,
    load_bundle,
    prepare_corpus,
    save_bundle,
    write_manifest,
)

_FOREST = ForestParams()
_EMBED = EmbedParams()


@dataclass
class RunConfig:
    """One command's resolved inputs: paths plus stage parameters."""

    posts_path: str = ""
    locations_path: str = ""
    taxonomy_path: Optional[str] = None
    bundle_dir: str = ""
    out_dir: str = "."
    split: Optional[SplitSpec] = None
    forest: ForestParams = field(default_factory=ForestParams)
    embed: EmbedParams = field(default_factory=EmbedParams)
    advisor: AdvisorConfig = field(default_factory=AdvisorConfig)
    bounds: tuple = (1, 2, 3, None)
    max_posts: Optional[int] = None
    formats: tuple = ("json", "csv")

    def params_dict(self) -> dict:
        """Manifest payload: parameters only, no paths, so reruns into
        different directories still compare bit for bit."""
        return {
            "advisor": asdict(self.advisor),
            "bounds": [bound_key(b) for b in self.bounds],
            "embed": asdict(self.embed),
            "forest": asdict(self.forest),
            "formats": list(self.formats),
            "max_posts": self.max_posts,
            "split": None if self.split is None else asdict(self.split),
        }


def _forest_from(args) -> ForestParams:
    return ForestParams(
        n_trees=args.trees, min_leaf=args.min_leaf, max_depth=args.max_depth, seed=args.seed
    )


def _embed_from(args) -> EmbedParams:
    seed = args.embed_seed if args.embed_seed is not None else args.seed
    return EmbedParams(
        dim=args.dim, epochs=args.epochs, negatives=args.negatives, lr=args.lr, seed=seed
    )


def _parse_bounds(text: str) -> tuple:
    out = []
    for part in text.split(","):
        part = part.strip().lower()
        if not part:
            continue
        if part in ("unbounded", "none"):
            out.append(None)
        else:
            out.append(int(part))
    if not out:
        raise ValueError("no bounds given")
    return tuple(out)


def _write_json(path: str, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _write_csv(path: str, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        csv.writer(fh).writerows(rows)


def cmd_synth(args) -> int:
    cfg = SynthConfig.from_json(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    corpus = generate_synthetic(cfg)
    os.makedirs(args.out_dir, exist_ok=True)
    save_corpus(
        corpus,
        os.path.join(args.out_dir, "posts.jsonl"),
        os.path.join(args.out_dir, "locations.jsonl"),
    )
    save_taxonomy(synthetic_taxonomy(cfg), os.path.join(args.out_dir, "taxonomy.jsonl"))
    write_manifest(os.path.join(args.out_dir, "manifest.json"), "synth", asdict(cfg))
    print(
        f"wrote {corpus.n_posts} posts, {len(corpus.locations)} locations, "
        f"{len(corpus.hashtags)} hashtags to {args.out_dir}"
    )
    return 0


def cmd_train(args) -> int:
    rc = RunConfig(
        posts_path=args.posts,
        locations_path=args.locations,
        taxonomy_path=args.taxonomy,
        out_dir=args.out_dir,
        forest=_forest_from(args),
        embed=_embed_from(args),
    )
    corpus = prepare_corpus(rc.posts_path, rc.locations_path)
    train_corpus = corpus
    extra = {}
    if args.adversary is not None:
        rc.split = SplitSpec(args.adversary, args.train_fraction, args.repetition + 1, args.seed)
        train_side, test_side = split(corpus, rc.split, args.repetition)
        train_corpus = train_side
        extra["split"] = {
            "adversary": rc.split.adversary,
            "train_fraction": rc.split.train_fraction,
            "seed": rc.split.seed,
            "repetition": args.repetition,
            "n_train_posts": train_side.n_posts,
            "n_test_posts": test_side.n_posts,
            "train_users": sorted({p.user for p in train_side.posts}),
            "test_users": sorted({p.user for p in test_side.posts}),
        }
    model = train(train_corpus, rc.forest)
    table = train_embeddings(train_corpus, rc.embed)
    bundle_corpus = corpus
    if rc.taxonomy_path is not None:
        tax, bundle_corpus = load_taxonomy(rc.taxonomy_path, corpus)
        table = table.extend_with_tokens(tax.token_members)
    save_bundle(
        rc.out_dir, model, table, bundle_corpus, rc.taxonomy_path,
        extra=extra, config=rc.params_dict(),
    )
    print(
        f"trained {model.n_trees} trees over {model.vocab_dimension} hashtags, "
        f"{len(model.classes)} locations; bundle in {rc.out_dir}"
    )
    return 0


def cmd_attack_eval(args) -> int:
    rc = RunConfig(
        posts_path=args.posts,
        locations_path=args.locations,
        out_dir=args.out_dir,
        split=SplitSpec("A1", args.train_fraction, args.repetitions, args.seed),
        forest=_forest_from(args),
    )
    corpus = prepare_corpus(rc.posts_path, rc.locations_path)
    started = time.perf_counter()
    report = attack_eval(corpus, args.repetitions, args.train_fraction, args.seed, rc.forest)
    elapsed = time.perf_counter() - started
    os.makedirs(rc.out_dir, exist_ok=True)
    if "json" in rc.formats:
        _write_json(os.path.join(rc.out_dir, "attack_report.json"), report)
    if "csv" in rc.formats:
        for adversary, block in report["adversaries"].items():
            name = f"attack_curves_{adversary.lower()}.csv"
            _write_csv(os.path.join(rc.out_dir, name), attack_curves_rows(block["attack"]))
    _write_json(os.path.join(rc.out_dir, "timing.json"), {"seconds": elapsed})
    write_manifest(os.path.join(rc.out_dir, "manifest.json"), "attack-eval", rc.params_dict())
    for adversary, block in report["adversaries"].items():
        print(
            f"{adversary}: accuracy {block['attack']['accuracy']:.4f} "
            f"(baseline {block['baseline']['accuracy']:.4f}), "
            f"correctness {block['attack']['correctness']:.4f}"
        )
    return 0


def cmd_defend_eval(args) -> int:
    rc = RunConfig(
        posts_path=args.posts,
        locations_path=args.locations,
        taxonomy_path=args.taxonomy,
        out_dir=args.out_dir,
        split=SplitSpec("A1", args.train_fraction, 1, args.seed),
        forest=_forest_from(args),
        embed=_embed_from(args),
        advisor=AdvisorConfig(alpha=args.alpha, metric=args.metric, t_s=args.t_s),
        bounds=_parse_bounds(args.bounds),
        max_posts=args.max_posts,
    )
    corpus = prepare_corpus(rc.posts_path, rc.locations_path)
    train_side, test_side = split(corpus, rc.split, 0)
    model = train(train_side, rc.forest)
    table = train_embeddings(train_side, rc.embed)
    tax, _ = load_taxonomy(rc.taxonomy_path, corpus)
    table = table.extend_with_tokens(tax.token_members)
    attack_report, baseline_report = evaluate(model, train_baseline(train_side), test_side)
    report, timing = defend_eval(
        model, table, tax, test_side.posts, corpus.locations,
        rc.advisor, rc.bounds, rc.max_posts,
    )
    report["attack_accuracy_no_defense"] = attack_report.accuracy
    report["baseline_accuracy"] = baseline_report.accuracy
    os.makedirs(rc.out_dir, exist_ok=True)
    _write_json(os.path.join(rc.out_dir, "defense_report.json"), report)
    _write_json(os.path.join(rc.out_dir, "timing.json"), timing)
    write_manifest(os.path.join(rc.out_dir, "manifest.json"), "defend-eval", rc.params_dict())
    print(
        f"no defense: accuracy {report['attack_accuracy_no_defense']:.4f} "
        f"(baseline {report['baseline_accuracy']:.4f})"
    )
    for bound in rc.bounds:
        block = report["bounds"][bound_key(bound)]
        print(
            f"bound {bound_key(bound)}: post-defense accuracy "
            f"{block['post_defense_accuracy']:.4f}, protected {block['protected']}"
            f"/{report['n_posts']}"
        )
    return 0


def cmd_advise(args) -> int:
    from .service import ModelState, recommend_payload

    state = ModelState(load_bundle(args.bundle))
    body = json.load(sys.stdin)
    out = recommend_payload(state, body)
    json.dump(out, sys.stdout)
    sys.stdout.write("\n")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import build_app

    app = build_app(args.bundle, args.static)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


def _add_forest_flags(p) -> None:
    p.add_argument("--trees", type=int, default=_FOREST.n_trees, help="forest size")
    p.add_argument("--min-leaf", type=int, default=_FOREST.min_leaf)
    p.add_argument("--max-depth", type=int, default=_FOREST.max_depth)


def _add_embed_flags(p) -> None:
    p.add_argument("--dim", type=int, default=_EMBED.dim, help="embedding dimension")
    p.add_argument("--epochs", type=int, default=_EMBED.epochs)
    p.add_argument("--negatives", type=int, default=_EMBED.negatives)
    p.add_argument("--lr", type=float, default=_EMBED.lr)
    p.add_argument("--embed-seed", type=int, default=None, help="defaults to --seed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tagshield",
        description="Hashtag location-privacy toolkit: inference attack, "
        "privacy metrics, and obfuscation advice.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a planted synthetic corpus")
    p.add_argument("--config", required=True, help="SynthConfig JSON file")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train the attack model and embeddings into a bundle")
    p.add_argument("--posts", required=True)
    p.add_argument("--locations", required=True)
    p.add_argument("--taxonomy", default=None)
    p.add_argument("--out-dir", required=True, help="bundle directory")
    p.add_argument("--adversary", choices=["A1", "A2"], default=None,
                   help="train on one split's train side instead of everything")
    p.add_argument("--train-fraction", type=float, default=0.8)
    p.add_argument("--repetition", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    _add_forest_flags(p)
    _add_embed_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("attack-eval", help="attack efficacy over repeated splits")
    p.add_argument("--posts", required=True)
    p.add_argument("--locations", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--repetitions", type=int, default=10)
    p.add_argument("--train-fraction", type=float, default=0.8)
    p.add_argument("--seed", type=int, default=0)
    _add_forest_flags(p)
    p.set_defaults(func=cmd_attack_eval)

    p = sub.add_parser("defend-eval", help="defense sweep over obfuscation bounds")
    p.add_argument("--posts", required=True)
    p.add_argument("--locations", required=True)
    p.add_argument("--taxonomy", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--bounds", default="1,2,3,unbounded")
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--metric", choices=list(PRIVACY_METRICS), default="inaccuracy")
    p.add_argument("--t-s", type=int, default=2, help="replacement suggestions per hashtag")
    p.add_argument("--max-posts", type=int, default=None)
    p.add_argument("--train-fraction", type=float, default=0.8)
    p.add_argument("--seed", type=int, default=0)
    _add_forest_flags(p)
    _add_embed_flags(p)
    p.set_defaults(func=cmd_defend_eval)

    p = sub.add_parser("advise", help="recommend an obfuscated set for a JSON request on stdin")
    p.add_argument("--bundle", required=True)
    p.set_defaults(func=cmd_advise)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--bundle", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--static", default=None, help="directory of UI files to serve at /")
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv: Optional[list] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (OSError, ValueError, KeyError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
