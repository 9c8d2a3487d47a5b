import math

import numpy as np
import pytest

import rrkit as rk
from rrkit.corpus import CorpusFormatError


def write_csv(path, rows, header="sample_id,writer_id,f0,f1,f2,f3"):
    path.write_text("\n".join([header] + rows) + "\n", encoding="utf-8")


class TestLoadCsv:
    def test_three_rows(self, tmp_path):
        p = tmp_path / "c.csv"
        write_csv(p, ["a,w1,1,2,3,4", "b,w1,5,6,7,8", "c,w2,9,10,11,12"])
        es = rk.load_embeddings(p)
        assert len(es) == 3 and es.dim == 4
        assert es.sample_ids == ("a", "b", "c")  # row order preserved
        assert es.writer_ids == ("w1", "w1", "w2")
        np.testing.assert_array_equal(es.vectors[0], [1, 2, 3, 4])

    def test_dimension_mismatch_names_row(self, tmp_path):
        p = tmp_path / "c.csv"
        write_csv(p, ["a,w1,1,2,3,4", "b,w1,5,6,7,8,9"])
        with pytest.raises(CorpusFormatError, match="row 3"):
            rk.load_embeddings(p)

    def test_empty_file(self, tmp_path):
        p = tmp_path / "c.csv"
        p.write_text("", encoding="utf-8")
        with pytest.raises(CorpusFormatError, match="empty"):
            rk.load_embeddings(p)

    def test_header_only(self, tmp_path):
        p = tmp_path / "c.csv"
        write_csv(p, [])
        with pytest.raises(CorpusFormatError, match="no data rows"):
            rk.load_embeddings(p)

    def test_duplicate_id_names_row(self, tmp_path):
        p = tmp_path / "c.csv"
        write_csv(p, ["a,w1,1,2,3,4", "a,w2,5,6,7,8"])
        with pytest.raises(CorpusFormatError, match="row 3.*duplicate"):
            rk.load_embeddings(p)

    def test_bad_number_names_row(self, tmp_path):
        p = tmp_path / "c.csv"
        write_csv(p, ["a,w1,1,2,3,4", "b,w1,5,oops,7,8"])
        with pytest.raises(CorpusFormatError, match="row 3"):
            rk.load_embeddings(p)

    def test_missing_file(self, tmp_path):
        with pytest.raises(CorpusFormatError, match="does not exist"):
            rk.load_embeddings(tmp_path / "nope.csv")

    def test_bad_header(self, tmp_path):
        p = tmp_path / "c.csv"
        write_csv(p, ["a,w1,1,2,3,4"], header="id,writer,f0,f1,f2,f3")
        with pytest.raises(CorpusFormatError, match="header"):
            rk.load_embeddings(p)


class TestRoundTrips:
    def test_csv_round_trip_exact(self, tmp_path):
        es = rk.generate_synthetic(3, (3, 5), 7, 0.5, seed=1)
        p = tmp_path / "x.csv"
        rk.save_embeddings(es, p)
        back = rk.load_embeddings(p)
        # 9 significant digits identify a float32 exactly
        assert back.equals(es.with_vectors(es.vectors, split=back.split)) or np.array_equal(
            back.vectors, es.vectors
        )
        assert back.sample_ids == es.sample_ids
        assert back.writer_ids == es.writer_ids
        np.testing.assert_array_equal(back.vectors, es.vectors)

    def test_binary_round_trip_exact(self, tmp_path):
        es = rk.generate_synthetic(3, (3, 5), 7, 0.5, seed=2)
        p = tmp_path / "x.bin"
        rk.save_embeddings(es, p, "binary")
        back = rk.load_embeddings(p, "binary")
        assert back.sample_ids == es.sample_ids
        assert back.writer_ids == es.writer_ids
        np.testing.assert_array_equal(back.vectors, es.vectors)

    def test_binary_truncation_detected(self, tmp_path):
        es = rk.generate_synthetic(2, (2, 2), 4, 0.1, seed=3)
        p = tmp_path / "x.bin"
        rk.save_embeddings(es, p, "binary")
        p.write_bytes(p.read_bytes()[:-3])
        with pytest.raises(CorpusFormatError, match="truncated"):
            rk.load_embeddings(p, "binary")

    def test_binary_bad_magic(self, tmp_path):
        p = tmp_path / "x.bin"
        p.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(CorpusFormatError, match="magic"):
            rk.load_embeddings(p, "binary")


class TestEmbeddingSet:
    def test_duplicate_ids_rejected(self):
        with pytest.raises(ValueError, match="duplicate"):
            rk.EmbeddingSet(("a", "a"), ("w", "w"), np.ones((2, 3)))

    def test_nan_rejected(self):
        bad = np.ones((2, 3))
        bad[1, 2] = np.nan
        with pytest.raises(ValueError, match="non-finite"):
            rk.EmbeddingSet(("a", "b"), ("w", "w"), bad)

    def test_empty_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            rk.EmbeddingSet((), (), np.zeros((0, 3)))

    def test_vectors_read_only(self):
        es = rk.EmbeddingSet(("a", "b"), ("w", "w"), np.ones((2, 3)))
        with pytest.raises(ValueError):
            es.vectors[0, 0] = 7.0

    def test_writer_disjoint_guard(self):
        a = rk.EmbeddingSet(("a",), ("w1",), np.ones((1, 2)), "train")
        b = rk.EmbeddingSet(("b",), ("w1",), np.ones((1, 2)), "test")
        with pytest.raises(ValueError, match="share writers"):
            rk.ensure_writer_disjoint(a, b)

    def test_gallery_profile(self):
        es = rk.EmbeddingSet(
            ("a", "b", "c", "d", "e"),
            ("w1", "w1", "w2", "w2", "w2"),
            np.ones((5, 2)),
        )
        prof = rk.GallerySizeProfile.of(es)
        assert prof.counts == {"w1": 2, "w2": 3}
        assert (prof.min, prof.median, prof.max) == (2, 2.5, 3)


class TestL2Normalize:
    def test_three_four_five(self):
        es = rk.EmbeddingSet(("a",), ("w",), np.array([[3.0, 4.0]]))
        out = rk.l2_normalize(es)
        np.testing.assert_allclose(out.vectors[0], [0.6, 0.8], atol=1e-7)

    def test_idempotent(self):
        es = rk.generate_synthetic(3, (3, 3), 6, 0.4, seed=4)
        once = rk.l2_normalize(es)
        twice = rk.l2_normalize(once)
        np.testing.assert_allclose(once.vectors, twice.vectors, atol=1e-6)

    def test_norms_are_one(self):
        es = rk.generate_synthetic(4, (3, 6), 9, 0.8, seed=5)
        out = rk.l2_normalize(es)
        norms = np.linalg.norm(out.vectors.astype(np.float64), axis=1)
        np.testing.assert_allclose(norms, 1.0, atol=1e-6)

    def test_zero_vector_names_sample(self):
        es = rk.EmbeddingSet(("a", "bad"), ("w", "w"), np.array([[1.0, 0.0], [0.0, 0.0]]))
        with pytest.raises(ValueError, match="bad"):
            rk.l2_normalize(es)


class TestPowerNormalize:
    def test_scalar_examples(self):
        es = rk.EmbeddingSet(("a",), ("w",), np.array([[4.0, -9.0, 0.0]]))
        out = rk.power_normalize(es)
        np.testing.assert_allclose(out.vectors[0], [2.0, -3.0, 0.0], atol=1e-7)

    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(6)
        values = rng.normal(scale=3.0, size=(5, 4))
        es = rk.EmbeddingSet(tuple(f"s{i}" for i in range(5)), ("w",) * 5, values)
        out = rk.power_normalize(es)
        expected = [
            [math.copysign(math.sqrt(abs(v)), v) if v != 0 else 0.0 for v in row]
            for row in es.vectors.tolist()
        ]
        np.testing.assert_allclose(out.vectors, np.array(expected, dtype=np.float32), atol=1e-6)


class TestPcaWhiten:
    def _correlated(self, n=400, seed=7):
        rng = np.random.default_rng(seed)
        base = rng.normal(size=(n, 2))
        mix = np.array([[2.0, 0.0], [1.4, 0.5]])
        return rk.EmbeddingSet(
            tuple(f"s{i}" for i in range(n)), ("w",) * n, base @ mix + 3.0, "train"
        )

    def test_unit_variance_on_train(self):
        train = self._correlated()
        out, _ = rk.pca_whiten(train, train, 2)
        x = out.vectors.astype(np.float64)
        cov = np.cov(x, rowvar=False)
        np.testing.assert_allclose(cov, np.eye(2), atol=1e-3)
        np.testing.assert_allclose(x.var(axis=0, ddof=1), 1.0, atol=1e-4)

    def test_matches_svd_oracle(self):
        train = self._correlated(seed=8)
        out, model = rk.pca_whiten(train, train, 2)
        # independent whitening via SVD of the centered data matrix
        x = train.vectors.astype(np.float64)
        centered = x - x.mean(axis=0)
        u, s, vt = np.linalg.svd(centered, full_matrices=False)
        oracle = centered @ vt.T * (np.sqrt(len(train) - 1) / s)
        got = out.vectors.astype(np.float64)
        for j in range(2):
            sign = np.sign(np.dot(got[:, j], oracle[:, j]))
            np.testing.assert_allclose(got[:, j], sign * oracle[:, j], atol=1e-4)

    def test_on_white_data_covariance_stays_identity(self):
        rng = np.random.default_rng(9)
        es = rk.EmbeddingSet(
            tuple(f"s{i}" for i in range(600)), ("w",) * 600, rng.normal(size=(600, 3)), "train"
        )
        out, _ = rk.pca_whiten(es, es, 3)
        cov = np.cov(out.vectors.astype(np.float64), rowvar=False)
        np.testing.assert_allclose(cov, np.eye(3), atol=2e-2)

    def test_out_dim_too_large(self):
        train = self._correlated()
        with pytest.raises(ValueError, match="out_dim"):
            rk.pca_whiten(train, train, 3)

    def test_too_few_samples(self):
        es = rk.EmbeddingSet(("a",), ("w",), np.ones((1, 4)), "train")
        with pytest.raises(ValueError, match="train samples"):
            rk.pca_whiten(es, es, 2)

    def test_fit_ignores_apply_to(self):
        train = self._correlated(seed=10)
        other_a = self._correlated(n=50, seed=11)
        other_b = self._correlated(n=80, seed=12)
        _, model_a = rk.pca_whiten(train, other_a, 2)
        _, model_b = rk.pca_whiten(train, other_b, 2)
        np.testing.assert_array_equal(model_a.mean, model_b.mean)
        np.testing.assert_array_equal(model_a.basis, model_b.basis)
        np.testing.assert_array_equal(model_a.scales, model_b.scales)


class TestGenerateSynthetic:
    def test_counts(self):
        es = rk.generate_synthetic(5, (5, 5), 8, 0.3, seed=7)
        assert len(es) == 25
        prof = rk.GallerySizeProfile.of(es)
        assert set(prof.counts.values()) == {5}

    def test_deterministic(self):
        a = rk.generate_synthetic(4, (3, 6), 8, 0.3, seed=42)
        b = rk.generate_synthetic(4, (3, 6), 8, 0.3, seed=42)
        assert a.equals(b)

    def test_zero_spread_collapses_writers(self):
        es = rk.generate_synthetic(3, (4, 4), 8, 0.0, seed=1)
        for wid in es.writers:
            rows = es.vectors[[i for i, w in enumerate(es.writer_ids) if w == wid]]
            assert (rows == rows[0]).all()

    def test_zero_spread_perfect_cosine_ranking(self):
        es = rk.generate_synthetic(4, (3, 5), 16, 0.0, seed=2)
        ranking = rk.rank(rk.cosine_distances(es, es))
        assert rk.mean_average_precision(ranking, rk.relevance_from_labels(es)) == 1.0

    def test_invalid_ranges(self):
        with pytest.raises(ValueError):
            rk.generate_synthetic(1, (3, 5), 8, 0.1, seed=0)
        with pytest.raises(ValueError):
            rk.generate_synthetic(3, (1, 5), 8, 0.1, seed=0)
        with pytest.raises(ValueError):
            rk.generate_synthetic(3, (5, 3), 8, 0.1, seed=0)
        with pytest.raises(ValueError):
            rk.generate_synthetic(3, (3, 5), 8, -0.1, seed=0)
