import numpy as np
import pytest

import rrkit as rk
from rrkit.ranking import DistanceMatrix, sort_distance_rows

import bruteforce
from helpers import dist_dict, random_corpus, ranked_ids_by_query


def square_matrix(ids, values):
    return DistanceMatrix(tuple(ids), tuple(ids), np.asarray(values, dtype=float))


class TestCosineDistances:
    def test_identical_vectors(self):
        es = rk.EmbeddingSet(("a", "b"), ("w", "w"), np.array([[1.0, 2.0], [1.0, 2.0]]))
        dm = rk.cosine_distances(es, es)
        assert dm.values[0, 1] == pytest.approx(0.0, abs=1e-12)

    def test_orthogonal_vectors(self):
        es = rk.EmbeddingSet(("a", "b"), ("w", "w"), np.array([[1.0, 0.0], [0.0, 5.0]]))
        dm = rk.cosine_distances(es, es)
        assert dm.values[0, 1] == pytest.approx(1.0, abs=1e-12)

    def test_antiparallel_vectors(self):
        es = rk.EmbeddingSet(("a", "b"), ("w", "w"), np.array([[2.0, 0.0], [-3.0, 0.0]]))
        dm = rk.cosine_distances(es, es)
        assert dm.values[0, 1] == pytest.approx(2.0, abs=1e-12)

    def test_zero_vector_rejected(self):
        es = rk.EmbeddingSet(("a", "zz"), ("w", "w"), np.array([[1.0, 0.0], [0.0, 0.0]]))
        with pytest.raises(ValueError, match="zz"):
            rk.cosine_distances(es, es)

    def test_range(self):
        es = random_corpus(40, 6, seed=1)
        dm = rk.cosine_distances(es, es)
        assert dm.values.min() >= 0.0 and dm.values.max() <= 2.0

    def test_dimension_mismatch(self):
        a = rk.EmbeddingSet(("a",), ("w",), np.ones((1, 3)))
        b = rk.EmbeddingSet(("b",), ("w",), np.ones((1, 4)))
        with pytest.raises(ValueError, match="dimension"):
            rk.cosine_distances(a, b)


class TestRank:
    def test_sorts_ascending(self):
        dm = DistanceMatrix(("q",), ("a", "b"), np.array([[0.2, 0.1]]))
        ranking = rk.rank(dm)
        assert ranking.entries("q") == [("b", 0.1), ("a", 0.2)]

    def test_tie_break_by_id(self):
        dm = DistanceMatrix(("q",), ("b", "a"), np.array([[0.5, 0.5]]))
        ranking = rk.rank(dm)
        assert [c for c, _ in ranking.entries("q")] == ["a", "b"]

    def test_single_candidate(self):
        dm = DistanceMatrix(("q",), ("a",), np.array([[0.3]]))
        ranking = rk.rank(dm)
        assert ranking.entries("q") == [("a", 0.3)]

    def test_self_excluded(self):
        dm = square_matrix(("a", "b", "c"), [[0, 1, 2], [1, 0, 2], [2, 2, 0]])
        ranking = rk.rank(dm)
        for q in ("a", "b", "c"):
            assert q not in [c for c, _ in ranking.entries(q)]
            assert len(ranking.entries(q)) == 2

    def test_permutation_of_candidates(self):
        es = random_corpus(25, 5, seed=2)
        ranking = rk.rank(rk.cosine_distances(es, es))
        for q in ranking.query_ids:
            cands = sorted(c for c, _ in ranking.entries(q))
            assert cands == sorted(s for s in es.sample_ids if s != q)

    def test_matches_bruteforce(self):
        es = random_corpus(15, 4, seed=3)
        dm = rk.cosine_distances(es, es)
        ranking = rk.rank(dm)
        expected = bruteforce.order_rows(list(es.sample_ids), dist_dict(dm))
        assert ranked_ids_by_query(ranking) == expected

    def test_scale_invariance(self):
        es = random_corpus(30, 6, seed=4)
        scaled = es.with_vectors(es.vectors * 3.7)
        r1 = rk.rank(rk.cosine_distances(es, es))
        r2 = rk.rank(rk.cosine_distances(scaled, scaled))
        assert r1.equal_order(r2)

    def test_export_csv(self, tmp_path):
        dm = DistanceMatrix(("q",), ("a", "b"), np.array([[0.2, 0.1]]))
        ranking = rk.rank(dm)
        p = tmp_path / "r.csv"
        ranking.to_csv(p)
        lines = p.read_text().splitlines()
        assert lines[0] == "query_id,rank,candidate_id,distance"
        assert lines[1].startswith("q,1,b,")


class TestRankingValidation:
    def test_self_in_row_rejected(self):
        with pytest.raises(ValueError, match="own ranking"):
            rk.Ranking(
                ("a",), ("a", "b", "c"), (np.array([0, 1]),), (np.array([0.0, 1.0]),)
            )

    def test_non_permutation_rejected(self):
        with pytest.raises(ValueError, match="permutation"):
            rk.Ranking(("a",), ("a", "b", "c"), (np.array([1, 1]),), (np.array([0.0, 1.0]),))

    def test_unsorted_rejected(self):
        with pytest.raises(ValueError, match="ascending"):
            rk.Ranking(("a",), ("a", "b", "c"), (np.array([1, 2]),), (np.array([1.0, 0.5]),))


class TestReciprocalSets:
    def test_mutual_nearest_pair(self):
        dm = square_matrix(("a", "b"), [[0.0, 0.4], [0.4, 0.0]])
        sets = rk.k_reciprocal_sets(rk.rank(dm), 1)
        assert sets["a"].members == frozenset({"b"})
        assert sets["b"].members == frozenset({"a"})

    def test_hand_enumerated_chain(self):
        # b equidistant to a and c; tie-break sends b's top-1 to a
        values = [[0.0, 0.25, 0.8], [0.25, 0.0, 0.25], [0.8, 0.25, 0.0]]
        dm = square_matrix(("a", "b", "c"), values)
        sets = rk.k_reciprocal_sets(rk.rank(dm), 1)
        assert sets["a"].members == frozenset({"b"})
        assert sets["b"].members == frozenset({"a"})
        assert sets["c"].members == frozenset()

    def test_k_covers_everything(self):
        es = random_corpus(12, 4, seed=5)
        ranking = rk.rank(rk.cosine_distances(es, es))
        sets = rk.k_reciprocal_sets(ranking, len(es) - 1)
        for sid in es.sample_ids:
            assert sets[sid].members == frozenset(es.sample_ids) - {sid}

    def test_clamped_with_warning(self, caplog):
        es = random_corpus(6, 4, seed=6)
        ranking = rk.rank(rk.cosine_distances(es, es))
        with caplog.at_level("WARNING"):
            sets = rk.k_reciprocal_sets(ranking, 50)
        assert "clamped" in caplog.text
        assert sets[es.sample_ids[0]].k == 5

    def test_matches_bruteforce(self):
        for seed in range(8):
            es = random_corpus(10, 3, seed=seed)
            dm = rk.cosine_distances(es, es)
            ranking = rk.rank(dm)
            for k in (1, 2, 4, 9):
                got = {q: set(s.members) for q, s in rk.k_reciprocal_sets(ranking, k).items()}
                expected = bruteforce.reciprocal_sets(list(es.sample_ids), dist_dict(dm), k)
                assert got == expected

    def test_reciprocity_and_monotonicity(self):
        rng = np.random.default_rng(7)
        for trial in range(60):
            n = int(rng.integers(4, 14))
            es = random_corpus(n, 3, seed=100 + trial)
            ranking = rk.rank(rk.cosine_distances(es, es))
            k = int(rng.integers(1, n))
            s_k = rk.k_reciprocal_sets(ranking, k)
            s_k1 = rk.k_reciprocal_sets(ranking, k + 1)
            for q in es.sample_ids:
                assert len(s_k[q].members) <= k
                assert s_k[q].members <= s_k1[q].members
                for t in s_k[q].members:
                    assert q in s_k[t].members

    def test_requires_square_coverage(self):
        dm = DistanceMatrix(("q",), ("a", "b"), np.array([[0.2, 0.1]]))
        with pytest.raises(ValueError, match="cover"):
            rk.k_reciprocal_sets(rk.rank(dm), 1)

    def test_k_must_be_positive(self):
        es = random_corpus(5, 3, seed=8)
        ranking = rk.rank(rk.cosine_distances(es, es))
        with pytest.raises(ValueError, match="k must be"):
            rk.k_reciprocal_sets(ranking, 0)


class TestSortDistanceRows:
    def test_query_order_preserved(self):
        values = np.array([[0.0, 0.5, 0.2], [0.5, 0.0, 0.1], [0.2, 0.1, 0.0]])
        ranking = sort_distance_rows(values, ("c", "a", "b"), ("c", "a", "b"))
        assert ranking.query_ids == ("c", "a", "b")
        assert [c for c, _ in ranking.entries("c")] == ["b", "a"]
