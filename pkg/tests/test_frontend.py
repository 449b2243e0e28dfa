import numpy as np
import pytest
import scipy.linalg

from svbackend.data import EmbeddingSet
from svbackend.errors import DegenerateDataError
from svbackend.frontend import FrontEnd, apply_front, apply_front_matrix, fit_lda


def two_cluster_data(seed=0, n_per=200, sep=4.0):
    rng = np.random.Generator(np.random.PCG64(seed))
    a = rng.standard_normal((n_per, 2)) * [1.0, 3.0]
    b = a + [sep, 0.0]
    X = np.vstack([a, b + rng.standard_normal((n_per, 2)) * 0.01])
    labels = ["a"] * n_per + ["b"] * n_per
    return X, labels


class TestFitLda:
    def test_axis_matches_independent_eigensolver(self):
        X, labels = two_cluster_data()
        fe, _ = fit_lda(X, labels, 1)

        # independent oracle: dense generalized eigensolver on the same
        # scatter definitions
        lab = np.array(labels)
        gmean = X.mean(axis=0)
        Sb = np.zeros((2, 2))
        Sw = np.zeros((2, 2))
        for name in ("a", "b"):
            sub = X[lab == name]
            mu = sub.mean(axis=0)
            Sb += len(sub) * np.outer(mu - gmean, mu - gmean)
            Sw += (sub - mu).T @ (sub - mu)
        Sb /= len(X)
        Sw /= len(X)
        evals, evecs = scipy.linalg.eig(Sb, Sw + 1e-6 * np.trace(Sw) / 2 * np.eye(2))
        top = evecs[:, np.argmax(evals.real)].real

        got = fe.P[0]
        cos = abs(got @ top) / (np.linalg.norm(got) * np.linalg.norm(top))
        assert cos > 0.999

        mean_diff = X[np.array(labels) == "b"].mean(0) - X[np.array(labels) == "a"].mean(0)
        cos_mean = abs(got @ mean_diff) / (np.linalg.norm(got) * np.linalg.norm(mean_diff))
        assert cos_mean > 0.99

    def test_unit_variance_per_output_dim(self):
        X, labels = two_cluster_data(seed=3)
        fe, full = fit_lda(X, labels, 2)
        proj = X @ full.P.T + full.mu
        var = proj.var(axis=0)  # population convention
        assert np.all(np.abs(var - 1.0) < 1e-6)
        assert np.all(np.abs(proj.mean(axis=0)) < 1e-8)

    def test_full_dim_basis_invertible(self):
        rng = np.random.Generator(np.random.PCG64(4))
        X = rng.standard_normal((120, 6))
        labels = [f"s{i % 8}" for i in range(120)]
        fe, full = fit_lda(X, labels, 6)
        assert fe.P.shape == (6, 6)
        assert abs(np.linalg.det(full.P)) > 1e-12

    def test_identical_embeddings_error(self):
        X = np.ones((40, 3))
        labels = [f"s{i % 4}" for i in range(40)]
        with pytest.raises(DegenerateDataError):
            fit_lda(X, labels, 2)

    def test_fewer_than_two_speakers(self):
        rng = np.random.Generator(np.random.PCG64(0))
        X = rng.standard_normal((10, 3))
        with pytest.raises(DegenerateDataError):
            fit_lda(X, ["only"] * 10, 2)

    def test_complement_rows_exist_beyond_speaker_rank(self):
        # 3 speakers in 6-d: rank(Sb) <= 2, but the full basis still has 6
        # usable rows for the trailing-slice warm start
        rng = np.random.Generator(np.random.PCG64(5))
        means = rng.standard_normal((3, 6)) * 3
        X = np.vstack([means[i] + rng.standard_normal((30, 6)) for i in range(3)])
        labels = [f"s{i}" for i in range(3) for _ in range(30)]
        _, full = fit_lda(X, labels, 2)
        assert full.P.shape == (6, 6)
        proj = X @ full.P.T + full.mu
        assert np.all(np.abs(proj.var(axis=0) - 1.0) < 1e-6)

    def test_accepts_embedding_set(self):
        X, labels = two_cluster_data(seed=8)
        emb = EmbeddingSet([f"x{i}" for i in range(len(X))], X)
        fe, _ = fit_lda(emb, labels, 1)
        assert fe.out_dim == 1

    def test_deterministic(self):
        X, labels = two_cluster_data(seed=9)
        fe1, full1 = fit_lda(X, labels, 2)
        fe2, full2 = fit_lda(X, labels, 2)
        assert np.array_equal(full1.P, full2.P)
        assert np.array_equal(full1.mu, full2.mu)


class TestApplyFront:
    def test_unit_norm_output(self):
        rng = np.random.Generator(np.random.PCG64(1))
        fe = FrontEnd(rng.standard_normal((3, 5)), rng.standard_normal(3))
        for _ in range(10):
            y = apply_front(rng.standard_normal(5), fe)
            assert abs(np.linalg.norm(y) - 1.0) < 1e-12

    def test_hand_computed(self):
        fe = FrontEnd(np.eye(2), np.zeros(2))
        assert np.allclose(apply_front(np.array([3.0, 4.0]), fe), [0.6, 0.8])

    def test_scale_invariant_only_when_centered(self):
        rng = np.random.Generator(np.random.PCG64(2))
        P = rng.standard_normal((3, 4))
        x = rng.standard_normal(4)
        fe0 = FrontEnd(P, np.zeros(3))
        assert np.allclose(apply_front(x, fe0), apply_front(2 * x, fe0))
        fe1 = FrontEnd(P, rng.standard_normal(3))
        assert not np.allclose(apply_front(x, fe1), apply_front(2 * x, fe1))

    def test_zero_vector_raises_not_nan(self):
        fe = FrontEnd(np.zeros((2, 3)), np.zeros(2))
        with pytest.raises(DegenerateDataError):
            apply_front(np.ones(3), fe)

    def test_matrix_matches_single(self):
        rng = np.random.Generator(np.random.PCG64(3))
        fe = FrontEnd(rng.standard_normal((3, 5)), rng.standard_normal(3))
        X = rng.standard_normal((7, 5))
        M = apply_front_matrix(X, fe)
        for i in range(7):
            assert np.allclose(M[i], apply_front(X[i], fe), atol=1e-15)

    def test_dim_mismatch(self):
        fe = FrontEnd(np.eye(2), np.zeros(2))
        with pytest.raises(ValueError):
            apply_front(np.ones(3), fe)
