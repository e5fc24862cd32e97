import numpy as np
import pytest

from tagshield.corpus import Corpus, Hashtag, Location, Post
from tagshield.embedding import (
    EmbedParams,
    EmbeddingTable,
    load_embeddings,
    read_embeddings,
    save_embeddings,
    train_embeddings,
)


def tag_corpus(tag_sets, n_tags):
    hashtags = [Hashtag(i, f"t{i}") for i in range(n_tags)]
    locations = [Location(0, "L0", "loc", 0.0, 0.0, "cafe", "venue")]
    posts = [Post(0, 0, t, frozenset(tags)) for t, tags in enumerate(tag_sets)]
    return Corpus(posts, hashtags, locations, ["u0"])


def table_from(rows):
    return EmbeddingTable(np.array(rows, dtype=float))


class TestSemanticMean:
    def test_singleton(self):
        t = table_from([[1.0, 2.0], [3.0, 4.0]])
        assert t.sme([1]).tolist() == [3.0, 4.0]

    def test_mean_oracle(self):
        t = table_from([[1.0, 0.0], [0.0, 1.0], [2.0, 2.0]])
        expect = (t.matrix[0] + t.matrix[1] + t.matrix[2]) / 3.0
        assert t.sme([2, 0, 1]).tolist() == expect.tolist()

    def test_empty_set_is_zero(self):
        t = table_from([[1.0, 2.0]])
        assert t.sme([]).tolist() == [0.0, 0.0]

    def test_duplicates_collapse(self):
        t = table_from([[2.0, 0.0], [0.0, 2.0]])
        assert t.sme([0, 0, 1]).tolist() == [1.0, 1.0]

    def test_missing_id_rejected(self):
        t = table_from([[1.0]])
        with pytest.raises(KeyError, match="missing"):
            t.sme([3])


class TestUtilityLoss:
    def test_identity_zero(self):
        t = table_from([[1.0, 2.0], [3.0, 4.0]])
        assert t.utility_loss([0, 1], [1, 0]) == 0.0

    def test_euclidean_norm_oracle(self):
        t = table_from([[3.0, 0.0], [0.0, 4.0]])
        # sme({0}) = (3,0), sme({1}) = (0,4), distance 5
        assert t.utility_loss([0], [1]) == 5.0

    def test_symmetry(self):
        rng = np.random.default_rng(0)
        t = EmbeddingTable(rng.normal(size=(6, 4)))
        assert t.utility_loss([0, 2], [3, 4]) == t.utility_loss([3, 4], [0, 2])

    def test_empty_candidate(self):
        t = table_from([[3.0, 4.0]])
        assert t.utility_loss([0], []) == 5.0


class TestNearestNeighbors:
    def test_full_scan_oracle(self):
        rng = np.random.default_rng(4)
        t = EmbeddingTable(rng.normal(size=(20, 6)))
        for h in [0, 7, 19]:
            dists = sorted(
                (float(np.linalg.norm(t.matrix[i] - t.matrix[h])), i) for i in range(20) if i != h
            )
            expect = [i for _, i in dists[:5]]
            assert t.nearest_neighbors(h, 5) == expect

    def test_planted_duplicate_tie_breaks_low(self):
        t = table_from([[0.0, 0.0], [1.0, 1.0], [1.0, 1.0], [1.0, 1.0]])
        assert t.nearest_neighbors(3, 2) == [1, 2]
        assert t.nearest_neighbors(0, 3) == [1, 2, 3]

    def test_excludes_self(self):
        t = table_from([[0.0], [1.0], [2.0]])
        assert 1 not in t.nearest_neighbors(1, 2)

    def test_k_bounds(self):
        t = table_from([[0.0], [1.0], [2.0]])
        with pytest.raises(ValueError):
            t.nearest_neighbors(0, 3)
        with pytest.raises(ValueError):
            t.nearest_neighbors(0, 0)

    def test_within_restricts_pool(self):
        t = table_from([[0.0], [1.0], [2.0], [3.0]])
        assert t.nearest_neighbors(3, 2, within=2) == [1, 0]  # query outside pool
        assert t.nearest_neighbors(0, 1, within=2) == [1]
        with pytest.raises(ValueError):
            t.nearest_neighbors(0, 2, within=2)  # only one other row in the pool
        with pytest.raises(ValueError):
            t.nearest_neighbors(0, 1, within=1)  # pool is just the query itself


def cluster_corpus(seed=0):
    # three groups of four hashtags; posts stay within one group
    rng = np.random.default_rng(seed)
    sets = []
    for _ in range(90):
        g = int(rng.integers(3))
        members = rng.choice(4, size=3, replace=False) + 4 * g
        sets.append(members.tolist())
    return tag_corpus(sets, 12)


class TestTraining:
    def test_deterministic(self):
        c = cluster_corpus()
        p = EmbedParams(dim=8, epochs=2, seed=9)
        a = train_embeddings(c, p)
        b = train_embeddings(c, p)
        assert np.array_equal(a.matrix, b.matrix)
        d = train_embeddings(c, EmbedParams(dim=8, epochs=2, seed=10))
        assert not np.array_equal(a.matrix, d.matrix)

    def test_default_dimension(self):
        c = cluster_corpus()
        t = train_embeddings(c, EmbedParams(epochs=1))
        assert t.dim == 100

    def test_co_posted_hashtags_cluster(self):
        c = cluster_corpus(3)
        t = train_embeddings(c, EmbedParams(dim=16, epochs=12, seed=1))
        unit = t.matrix / np.linalg.norm(t.matrix, axis=1, keepdims=True)
        cos = unit @ unit.T
        intra, inter = [], []
        for i in range(12):
            for j in range(i + 1, 12):
                (intra if i // 4 == j // 4 else inter).append(cos[i, j])
        assert np.mean(intra) > np.mean(inter) + 0.2

    def test_isolated_hashtags_flagged(self):
        sets = [[0, 1]] * 10 + [[2]] * 5  # t2 never co-occurs, t3 never appears
        c = tag_corpus(sets, 4)
        t = train_embeddings(c, EmbedParams(dim=4, epochs=1, seed=0))
        assert t.isolated == frozenset({2, 3})

    def test_no_pairs_returns_initialization(self):
        c = tag_corpus([[0]] * 3, 2)
        t = train_embeddings(c, EmbedParams(dim=4, epochs=1, seed=0))
        assert t.isolated == frozenset({0, 1})
        assert t.matrix.shape == (2, 4)


class TestPersistence:
    def test_round_trip_exact(self, tmp_path):
        c = cluster_corpus()
        t = train_embeddings(c, EmbedParams(dim=6, epochs=1, seed=2))
        path = tmp_path / "vectors.txt"
        save_embeddings(t, c, str(path))
        back = load_embeddings(str(path), c)
        assert np.array_equal(back.matrix, t.matrix)

    def test_header_and_row_shape(self, tmp_path):
        c = tag_corpus([[0, 1]], 2)
        t = table_from([[1.5, -2.25], [0.0, 3.125]])
        path = tmp_path / "v.txt"
        save_embeddings(t, c, str(path))
        texts, matrix = read_embeddings(str(path))
        assert texts == ["t0", "t1"]
        assert matrix.tolist() == [[1.5, -2.25], [0.0, 3.125]]

    def test_unknown_text_rejected(self, tmp_path):
        path = tmp_path / "v.txt"
        path.write_text("1 2\nmystery 0.0 1.0\n")
        with pytest.raises(ValueError, match="unknown hashtag"):
            load_embeddings(str(path), tag_corpus([[0]], 1))

    def test_missing_coverage_rejected(self, tmp_path):
        path = tmp_path / "v.txt"
        path.write_text("1 2\nt0 0.0 1.0\n")
        with pytest.raises(ValueError, match="missing vectors"):
            load_embeddings(str(path), tag_corpus([[0, 1]], 2))

    def test_bad_row_length_rejected(self, tmp_path):
        path = tmp_path / "v.txt"
        path.write_text("1 3\nt0 0.0 1.0\n")
        with pytest.raises(ValueError, match="expected 3 values"):
            load_embeddings(str(path), tag_corpus([[0]], 1))


class TestTokenExtension:
    def test_centroid_rows_appended(self):
        t = table_from([[2.0, 0.0], [0.0, 2.0], [4.0, 4.0]])
        out = t.extend_with_tokens({3: [0, 1], 4: [2]})
        assert len(out) == 5
        assert out.matrix[3].tolist() == t.sme([0, 1]).tolist()
        assert out.matrix[4].tolist() == [4.0, 4.0]
        assert np.array_equal(out.matrix[:3], t.matrix)

    def test_existing_ids_left_alone(self):
        t = table_from([[1.0], [2.0]])
        assert t.extend_with_tokens({1: [0]}) is t

    def test_gap_rejected(self):
        t = table_from([[1.0], [2.0]])
        with pytest.raises(ValueError, match="contiguous"):
            t.extend_with_tokens({5: [0]})
