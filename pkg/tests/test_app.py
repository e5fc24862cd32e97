"""Pipeline stages, serving bundles, the CLI, and the HTTP service."""

import io
import json
import os
import shutil
import sys
from types import SimpleNamespace

import pytest
from fastapi.testclient import TestClient

from tagshield import cli, service
from tagshield.advisor import AdvisorConfig
from tagshield.corpus import Post, SynthConfig, filter_corpus, generate_synthetic
from tagshield.forest import ForestParams
from tagshield.metrics import GroupStats, PerformanceReport
from tagshield.pipeline import (
    attack_curves_rows,
    attack_eval,
    average_reports,
    bound_key,
    defend_eval,
    load_bundle,
    prepare_corpus,
    save_bundle,
    write_manifest,
    _loss_stats,
)

SYNTH = {
    "n_locations": 6,
    "signature_hashtags_per_location": 3,
    "n_noise_hashtags": 25,
    "posts_per_location": 80,
    "hashtags_per_post": 3,
    "signature_rate": 0.7,
    "n_users": 16,
    "seed": 9,
}


def run_cli(*argv) -> int:
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def ws(tmp_path_factory):
    """One synthesized dataset and one trained bundle, via the CLI."""
    root = tmp_path_factory.mktemp("ws")
    cfg = root / "synth.json"
    cfg.write_text(json.dumps(SYNTH))
    data = root / "data"
    assert run_cli("synth", "--config", cfg, "--out-dir", data) == 0
    bundle = root / "bundle"
    assert run_cli(
        "train", "--posts", data / "posts.jsonl", "--locations", data / "locations.jsonl",
        "--taxonomy", data / "taxonomy.jsonl", "--out-dir", bundle,
        "--trees", 25, "--dim", 12, "--epochs", 2, "--seed", 4,
    ) == 0
    return SimpleNamespace(root=root, cfg=cfg, data=data, bundle=bundle)


@pytest.fixture(scope="module")
def corpus(ws):
    return prepare_corpus(str(ws.data / "posts.jsonl"), str(ws.data / "locations.jsonl"))


@pytest.fixture(scope="module")
def loaded(ws):
    return load_bundle(str(ws.bundle))


class TestReportAveraging:
    def report(self, accuracy, buckets):
        per = {c: GroupStats(a, 1.0 - a, n) for c, (a, n) in buckets.items()}
        return PerformanceReport(1.0 - accuracy, 0.5, accuracy, sum(n for _, n in buckets.values()), per)

    def test_means_and_bucket_union(self):
        first = self.report(0.8, {1: (0.6, 10), 2: (1.0, 5)})
        second = self.report(0.4, {2: (0.5, 5), 3: (0.0, 2)})
        got = average_reports([first, second])
        assert got["accuracy"] == pytest.approx(0.6)
        assert got["correctness"] == pytest.approx(0.4)
        assert got["repetitions"] == 2
        # bucket 2 averages across both runs, 1 and 3 come from one each
        assert got["per_hashtag_count"]["2"] == {
            "accuracy": pytest.approx(0.75),
            "correctness": pytest.approx(0.25),
            "n": 10,
        }
        assert got["per_hashtag_count"]["1"]["n"] == 10
        assert set(got["per_hashtag_count"]) == {"1", "2", "3"}

    def test_curve_rows_sorted_numerically(self):
        averaged = {
            "per_hashtag_count": {
                "10": {"accuracy": 0.1, "correctness": 0.9},
                "2": {"accuracy": 0.2, "correctness": 0.8},
            }
        }
        rows = attack_curves_rows(averaged)
        assert rows[0] == ["hashtag_count", "accuracy", "correctness"]
        assert [r[0] for r in rows[1:]] == [2, 10]

    def test_loss_stats(self):
        got = _loss_stats([3.0, 1.0, 2.0, 4.0])
        assert got["n"] == 4
        assert got["mean"] == pytest.approx(2.5)
        assert got["quantiles"]["p0"] == 1.0
        assert got["quantiles"]["p100"] == 4.0
        assert _loss_stats([]) == {"n": 0}


class TestAttackEval:
    def test_shape_and_determinism(self, corpus):
        params = ForestParams(n_trees=10, seed=1)
        report = attack_eval(corpus, repetitions=2, train_fraction=0.8, seed=3, params=params)
        assert set(report["adversaries"]) == {"A1", "A2"}
        for block in report["adversaries"].values():
            for side in ("attack", "baseline"):
                assert 0.0 <= block[side]["accuracy"] <= 1.0
                assert block[side]["repetitions"] == 2
                assert block[side]["per_hashtag_count"]
        again = attack_eval(corpus, repetitions=2, train_fraction=0.8, seed=3, params=params)
        assert report == again

    def test_signatures_beat_baseline(self, corpus):
        report = attack_eval(corpus, repetitions=2, seed=3, params=ForestParams(n_trees=15, seed=1))
        a1 = report["adversaries"]["A1"]
        assert a1["attack"]["accuracy"] > a1["baseline"]["accuracy"] + 0.2


class TestDefendEval:
    def test_report_shape(self, loaded, corpus):
        posts = corpus.posts[:40]
        report, timing = defend_eval(
            loaded.model, loaded.table, loaded.tax, posts, corpus.locations,
            AdvisorConfig(), bounds=(1, None), max_posts=None,
        )
        assert report["n_posts"] == 40
        assert set(report["bounds"]) == {"1", "unbounded"}
        for block in report["bounds"].values():
            assert block["already_private"] + block["protected"] + block["unprotected"] == 40
            assert 0.0 <= block["post_defense_accuracy"] <= 1.0
            assert set(block["mechanism_share"]) == set(loaded.tax and ("hiding", "replacement", "generalization"))
            assert block["utility"]["optimal"]["n"] == block["protected"]
        assert set(timing["bounds"]) == {"1", "unbounded"}
        for block in timing["bounds"].values():
            assert block["mean_seconds"] >= 0.0

    def test_unbounded_defends_at_least_as_well(self, loaded, corpus):
        report, _ = defend_eval(
            loaded.model, loaded.table, loaded.tax, corpus.posts, corpus.locations,
            AdvisorConfig(), bounds=(1, None), max_posts=30,
        )
        b1 = report["bounds"]["1"]
        free = report["bounds"]["unbounded"]
        assert free["unprotected"] <= b1["unprotected"]
        assert free["post_defense_accuracy"] <= b1["post_defense_accuracy"] + 1e-12

    def test_deterministic_report(self, loaded, corpus):
        args = (loaded.model, loaded.table, loaded.tax, corpus.posts[:15], corpus.locations)
        first, _ = defend_eval(*args, AdvisorConfig(), bounds=(2,))
        second, _ = defend_eval(*args, AdvisorConfig(), bounds=(2,))
        assert first == second

    def test_rejects_empty_posts(self, loaded, corpus):
        empty = [Post(0, 0, 0, frozenset())]
        with pytest.raises(ValueError, match="no posts"):
            defend_eval(loaded.model, loaded.table, loaded.tax, empty, corpus.locations)

    def test_bound_key(self):
        assert bound_key(None) == "unbounded"
        assert bound_key(2) == "2"


class TestBundle:
    def test_loaded_state_is_consistent(self, loaded):
        assert loaded.model.n_trees == 25
        assert loaded.tax is not None
        # embeddings carry one row per vocabulary entry, tokens included
        assert len(loaded.table) == len(loaded.corpus.hashtags)
        assert loaded.model.vocab_dimension <= len(loaded.corpus.hashtags)
        assert loaded.manifest["bundle"]["n_trees"] == 25
        assert loaded.manifest["config"]["forest"]["n_trees"] == 25

    def test_resave_reproduces_bytes(self, ws, loaded, tmp_path):
        out = tmp_path / "again"
        save_bundle(
            str(out), loaded.model, loaded.table, loaded.corpus,
            str(ws.bundle / "taxonomy.jsonl"), config=loaded.manifest["config"],
        )
        for name in ("model.json", "embeddings.txt", "locations.jsonl", "taxonomy.jsonl"):
            assert (out / name).read_bytes() == (ws.bundle / name).read_bytes(), name

    def test_reintern_is_idempotent(self, ws):
        first = load_bundle(str(ws.bundle))
        second = load_bundle(str(ws.bundle))
        assert first.tax.token_members == second.tax.token_members
        assert [h.text for h in first.corpus.hashtags] == [h.text for h in second.corpus.hashtags]

    def test_rejects_taxonomy_with_unknown_tokens(self, ws, loaded, tmp_path):
        broken = tmp_path / "broken"
        shutil.copytree(ws.bundle, broken)
        # a vocabulary hashtag the taxonomy does not cover yet
        plain = next(
            h.text
            for h in loaded.corpus.hashtags[: loaded.model.vocab_dimension]
            if h.text.startswith("noise_")
        )
        with open(broken / "taxonomy.jsonl", "a", encoding="utf-8") as fh:
            fh.write(json.dumps({"hashtag": plain, "category_l2": "brand_new", "category_l1": "never_seen"}) + "\n")
        with pytest.raises(ValueError, match="tokens missing"):
            load_bundle(str(broken))

    def test_rejects_duplicate_embedding_rows(self, ws, tmp_path):
        broken = tmp_path / "dup"
        shutil.copytree(ws.bundle, broken)
        lines = (broken / "embeddings.txt").read_text().splitlines()
        # first line is the count/dim header; rows start after it
        parts = lines[2].split(" ")
        parts[0] = lines[1].split(" ")[0]
        lines[2] = " ".join(parts)
        (broken / "embeddings.txt").write_text("\n".join(lines) + "\n")
        with pytest.raises(ValueError, match="twice"):
            load_bundle(str(broken))

    def test_save_rejects_short_vocabulary(self, loaded, tmp_path):
        from tagshield.corpus import Corpus

        stub = Corpus([], loaded.corpus.hashtags[:3], loaded.corpus.locations, [])
        with pytest.raises(ValueError, match="vocabulary"):
            save_bundle(str(tmp_path / "x"), loaded.model, loaded.table, stub)

    def test_manifest_has_no_paths_or_timestamps(self, ws):
        text = (ws.bundle / "manifest.json").read_text()
        assert str(ws.bundle) not in text
        assert str(ws.data) not in text
        manifest = json.loads(text)
        assert "config_sha256" in manifest
        assert not any("time" in key for key in manifest)


class TestManifest:
    def test_digest_tracks_config(self, tmp_path):
        path = str(tmp_path / "m.json")
        first = write_manifest(path, "synth", {"seed": 1})
        second = write_manifest(path, "synth", {"seed": 2})
        assert first["config_sha256"] != second["config_sha256"]
        assert first["tool"]["name"] == "tagshield"

    def test_extra_block_merges(self, tmp_path):
        got = write_manifest(str(tmp_path / "m.json"), "train", {}, {"split": {"seed": 5}})
        assert got["split"] == {"seed": 5}


class TestCli:
    def test_synth_outputs(self, ws):
        for name in ("posts.jsonl", "locations.jsonl", "taxonomy.jsonl", "manifest.json"):
            assert (ws.data / name).exists()
        posts = (ws.data / "posts.jsonl").read_text().splitlines()
        assert len(posts) == SYNTH["n_locations"] * SYNTH["posts_per_location"]

    def test_synth_seed_reproducible(self, ws, tmp_path):
        one, two, three = tmp_path / "a", tmp_path / "b", tmp_path / "c"
        for out in (one, two):
            assert run_cli("synth", "--config", ws.cfg, "--out-dir", out, "--seed", 9) == 0
        assert (one / "posts.jsonl").read_bytes() == (two / "posts.jsonl").read_bytes()
        assert (one / "manifest.json").read_bytes() == (two / "manifest.json").read_bytes()
        assert run_cli("synth", "--config", ws.cfg, "--out-dir", three, "--seed", 10) == 0
        assert (one / "posts.jsonl").read_bytes() != (three / "posts.jsonl").read_bytes()

    def test_train_split_a2_users_disjoint(self, ws, tmp_path):
        out = tmp_path / "a2"
        assert run_cli(
            "train", "--posts", ws.data / "posts.jsonl", "--locations", ws.data / "locations.jsonl",
            "--out-dir", out, "--adversary", "A2", "--trees", 5, "--epochs", 1, "--dim", 8,
        ) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        train_users = set(manifest["split"]["train_users"])
        test_users = set(manifest["split"]["test_users"])
        assert train_users and test_users
        assert not train_users & test_users

    def test_train_split_a1_users_overlap(self, ws, tmp_path):
        out = tmp_path / "a1"
        assert run_cli(
            "train", "--posts", ws.data / "posts.jsonl", "--locations", ws.data / "locations.jsonl",
            "--out-dir", out, "--adversary", "A1", "--trees", 5, "--epochs", 1, "--dim", 8,
        ) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert set(manifest["split"]["train_users"]) & set(manifest["split"]["test_users"])

    def test_attack_eval_outputs_and_determinism(self, ws, tmp_path):
        outs = []
        for name in ("r1", "r2"):
            out = tmp_path / name
            assert run_cli(
                "attack-eval", "--posts", ws.data / "posts.jsonl",
                "--locations", ws.data / "locations.jsonl", "--out-dir", out,
                "--repetitions", 2, "--trees", 10, "--seed", 3,
            ) == 0
            outs.append(out)
        for name in ("attack_report.json", "attack_curves_a1.csv", "attack_curves_a2.csv",
                     "timing.json", "manifest.json"):
            assert (outs[0] / name).exists(), name
        header = (outs[0] / "attack_curves_a1.csv").read_text().splitlines()[0]
        assert header == "hashtag_count,accuracy,correctness"
        for name in ("attack_report.json", "manifest.json"):
            assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes(), name

    def test_defend_eval_outputs_and_determinism(self, ws, tmp_path):
        outs = []
        for name in ("d1", "d2"):
            out = tmp_path / name
            assert run_cli(
                "defend-eval", "--posts", ws.data / "posts.jsonl",
                "--locations", ws.data / "locations.jsonl",
                "--taxonomy", ws.data / "taxonomy.jsonl", "--out-dir", out,
                "--bounds", "1,unbounded", "--max-posts", 20,
                "--trees", 10, "--dim", 8, "--epochs", 1, "--seed", 2,
            ) == 0
            outs.append(out)
        report = json.loads((outs[0] / "defense_report.json").read_text())
        assert set(report["bounds"]) == {"1", "unbounded"}
        assert "attack_accuracy_no_defense" in report
        assert "baseline_accuracy" in report
        assert (outs[0] / "timing.json").exists()
        assert (outs[0] / "defense_report.json").read_bytes() == (outs[1] / "defense_report.json").read_bytes()

    def test_advise_matches_service_payload(self, ws, loaded, monkeypatch, capsys):
        body = {
            "hashtags": ["sig0_0", "sig0_1"],
            "true_location": "L0",
            "alpha": 1.0,
            "metric": "inaccuracy",
            "max_obfuscated": None,
        }
        monkeypatch.setattr(sys, "stdin", io.StringIO(json.dumps(body)))
        assert run_cli("advise", "--bundle", ws.bundle) == 0
        got = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        want = service.recommend_payload(service.ModelState(loaded), body)
        assert got == want

    def test_errors_exit_nonzero(self, ws, tmp_path, capsys):
        rc = run_cli(
            "train", "--posts", tmp_path / "missing.jsonl",
            "--locations", ws.data / "locations.jsonl", "--out-dir", tmp_path / "nope",
        )
        assert rc == 2
        assert "error:" in capsys.readouterr().err

    def test_bounds_parsing(self):
        assert cli._parse_bounds("1, 2,unbounded") == (1, 2, None)
        assert cli._parse_bounds("none") == (None,)
        with pytest.raises(ValueError):
            cli._parse_bounds(",")
        with pytest.raises(ValueError):
            cli._parse_bounds("two")


@pytest.fixture(scope="module")
def client(ws):
    app = service.build_app(str(ws.bundle))
    with TestClient(app) as c:
        yield c


class TestService:
    def test_model_info(self, client, loaded):
        info = client.get("/model/info").json()
        assert info["n_trees"] == 25
        assert info["vocab_size"] == len(loaded.corpus.hashtags)
        assert info["n_classes"] == len(loaded.model.classes)
        assert "generalization" in info["mechanisms"]
        assert info["metrics"] == ["inaccuracy", "incorrectness", "expected_distance_km"]
        keys = [loc["key"] for loc in info["locations"]]
        assert keys == [f"L{i}" for i in range(SYNTH["n_locations"])]
        assert {"key", "name", "lat", "lon"} <= set(info["locations"][0])

    def test_predict_shape(self, client):
        got = client.post("/predict", json={"hashtags": ["sig0_0", "sig0_1"]}).json()
        assert len(got["topk"]) == 5
        probs = [e["prob"] for e in got["topk"]]
        assert probs == sorted(probs, reverse=True)
        assert got["topk"][0]["location"] == "L0"
        assert got["posterior_entropy"] >= 0.0

    def test_predict_handles_unknown_tags(self, client):
        got = client.post("/predict", json={"hashtags": ["#NoSuchTag!"]})
        assert got.status_code == 200
        assert len(got.json()["topk"]) == 5

    def test_predict_validates_body(self, client):
        assert client.post("/predict", json={"hashtags": "sig0_0"}).status_code == 422

    def test_recommend_equals_library(self, client, loaded):
        body = {
            "hashtags": ["sig1_0", "sig1_1", "noise_0"],
            "true_location": "L1",
            "alpha": 1.0,
            "metric": "inaccuracy",
            "max_obfuscated": None,
        }
        got = client.post("/recommend", json=body).json()
        want = service.recommend_payload(service.ModelState(loaded), body)
        assert got == want
        assert set(got["original"]) == {
            "mechanism", "hashtags", "privacy_level", "utility_loss", "edits", "satisfiable"
        }
        for rec in got["recommendations"]:
            assert isinstance(rec["hashtags"], list)

    def test_recommend_normalizes_hashtag_text(self, client):
        plain = client.post("/recommend", json={"hashtags": ["sig2_0"], "true_location": "L2"}).json()
        noisy = client.post("/recommend", json={"hashtags": ["#SIG2_0"], "true_location": "L2"}).json()
        assert plain == noisy

    def test_recommend_rejects_unknown_location(self, client):
        got = client.post("/recommend", json={"hashtags": ["sig0_0"], "true_location": "nowhere"})
        assert got.status_code == 422
        assert "unknown location" in got.json()["detail"]

    def test_recommend_rejects_unknown_vocabulary(self, client):
        got = client.post("/recommend", json={"hashtags": ["zzz"], "true_location": "L0"})
        assert got.status_code == 422
        assert "vocabulary" in got.json()["detail"]

    def test_recommend_rejects_empty(self, client):
        got = client.post("/recommend", json={"hashtags": [], "true_location": "L0"})
        assert got.status_code == 422

    def test_reload_keeps_serving(self, client):
        before = client.post("/predict", json={"hashtags": ["sig0_0"]}).json()
        got = client.post("/admin/reload")
        assert got.status_code == 200
        assert got.json()["reloaded"] is True
        after = client.post("/predict", json={"hashtags": ["sig0_0"]}).json()
        assert before == after

    def test_reload_failure_keeps_old_state(self, ws, tmp_path):
        moved = tmp_path / "bundle"
        shutil.copytree(ws.bundle, moved)
        app = service.build_app(str(moved))
        with TestClient(app) as c:
            before = c.post("/predict", json={"hashtags": ["sig0_0"]}).json()
            os.remove(moved / "model.json")
            assert c.post("/admin/reload").status_code == 500
            # old snapshot still answers
            assert c.post("/predict", json={"hashtags": ["sig0_0"]}).json() == before

    def test_static_mount(self, ws, tmp_path):
        static = tmp_path / "ui"
        static.mkdir()
        (static / "index.html").write_text("<h1>advisor</h1>")
        app = service.build_app(str(ws.bundle), static_dir=str(static))
        with TestClient(app) as c:
            got = c.get("/")
            assert got.status_code == 200
            assert "advisor" in got.text
            # API routes still win over the static mount
            assert c.get("/model/info").status_code == 200
