import json
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from geomclass import kernels
from geomclass.shallow import (
    DecisionTree, FittedShallow, KNNClassifier, LogisticRegression, ShallowError, Standardizer,
    fit_dtree, fit_knn, fit_logreg, fit_model, fit_svm_rbf, model_from_dict, predict, rbf_kernel,
)

XOR_X = np.array([[0, 0], [1, 1], [0, 1], [1, 0]], dtype=float)
XOR_Y = np.array([0, 0, 1, 1])


def blobs(rng, n_per=30, k=3, d=2, spread=0.5, sep=4.0):
    centres = rng.normal(size=(k, d)) * sep
    X = np.vstack([c + rng.normal(size=(n_per, d)) * spread for c in centres])
    return X, np.repeat(np.arange(k), n_per)


def separable(rng, n_per=25):
    X = np.vstack([rng.normal(size=(n_per, 2)) * 0.3 + (-2, 0), rng.normal(size=(n_per, 2)) * 0.3 + (2, 0)])
    return X, np.repeat([0, 1], n_per)


def knn_oracle(Xtr, ytr, q, k):
    # exhaustive distances, sorted by (distance, index)
    d = sorted((math.dist(q, x), i) for i, x in enumerate(Xtr))[:k]
    votes, summed = {}, {}
    for dist, i in d:
        c = int(ytr[i])
        votes[c] = votes.get(c, 0) + 1
        summed[c] = summed.get(c, 0.0) + dist
    top = max(votes.values())
    return min((summed[c], c) for c in votes if votes[c] == top)[1]


def gini_oracle(X, y, n_classes):
    # exact rational arithmetic over every midpoint of consecutive unique values
    def mass(labels):
        m = len(labels)
        return Fraction(m) - Fraction(sum(list(labels).count(c) ** 2 for c in range(n_classes)), m)

    parent = mass(y)
    best = (parent, -1, 0.0)
    for f in range(X.shape[1]):
        u = np.unique(X[:, f])
        for a, b in zip(u[:-1], u[1:]):
            thr = (a + b) / 2.0
            left = X[:, f] <= thr
            crit = mass(y[left]) + mass(y[~left])
            if crit < best[0]:
                best = (crit, f, thr)
    return best[1], best[2], best[0]


class TestStandardizer:
    def test_constant_column(self):
        X = np.c_[np.arange(5.0), np.full(5, 3.0)]
        Z = Standardizer.fit(X).transform(X)
        assert np.all(Z[:, 1] == 0)
        assert Z[:, 0].std() == pytest.approx(1.0)

    def test_round_trip(self):
        X = np.random.default_rng(0).normal(size=(10, 3))
        s = Standardizer.fit(X)
        t = Standardizer.from_dict(json.loads(json.dumps(s.to_dict())))
        assert np.array_equal(s.transform(X), t.transform(X))


class TestKNN:
    def test_matches_oracle_continuous(self):
        rng = np.random.default_rng(1)
        X, y = blobs(rng, 20, 4, 3, spread=2.0)
        Q = rng.normal(size=(100, 3)) * 4
        for k in (1, 3, 4, 7):
            m = fit_knn(X, y, k)
            assert list(m.predict(Q)) == [knn_oracle(X, y, q, k) for q in Q]

    def test_matches_oracle_with_ties(self):
        # integer grid: many exact distance and vote ties
        rng = np.random.default_rng(2)
        X = rng.integers(0, 4, size=(40, 2)).astype(float)
        y = rng.integers(0, 3, 40)
        Q = rng.integers(0, 4, size=(100, 2)).astype(float)
        for k in (2, 4, 6):
            assert list(fit_knn(X, y, k).predict(Q)) == [knn_oracle(X, y, q, k) for q in Q]

    def test_equidistant_tie(self):
        # query at 0: one point of each class at distance 1, so votes tie 1:1;
        # summed distances also tie, so the lower class index wins
        X = np.array([[1.0], [-1.0], [5.0], [-5.0]])
        y = np.array([1, 0, 1, 0])
        assert fit_knn(X, y, 2).predict([[0.0]])[0] == knn_oracle(X, y, [0.0], 2) == 0
        # shifted query: class 1 is closer in summed distance
        X2 = np.array([[1.0], [-1.5], [5.0], [-5.0]])
        assert fit_knn(X2, y, 2).predict([[0.0]])[0] == knn_oracle(X2, y, [0.0], 2) == 1

    def test_k1_training_accuracy(self):
        X, y = blobs(np.random.default_rng(3))
        assert np.array_equal(fit_knn(X, y, 1).predict(X), y)

    def test_k_equals_n_majority(self):
        rng = np.random.default_rng(4)
        X = rng.normal(size=(11, 2))
        y = np.array([0] * 3 + [1] * 6 + [2] * 2)
        assert np.all(fit_knn(X, y, 11).predict(rng.normal(size=(5, 2))) == 1)

    def test_k_too_large(self):
        with pytest.raises(ShallowError):
            fit_knn(np.zeros((3, 1)), [0, 1, 0], 4)


class TestLogisticRegression:
    def test_separable(self):
        X, y = separable(np.random.default_rng(5))
        assert np.array_equal(fit_logreg(X, y, 1.0).predict(X), y)

    def test_loss_non_increasing(self):
        X, y = blobs(np.random.default_rng(6), spread=2.0)
        h = fit_logreg(X, y, 10.0).loss_history
        assert len(h) > 2
        assert all(b <= a for a, b in zip(h, h[1:]))

    def test_tiny_C_gives_majority(self):
        rng = np.random.default_rng(7)
        X = rng.normal(size=(60, 3))
        y = np.array([0] * 10 + [1] * 40 + [2] * 10)
        m = fit_logreg(X, y, 1e-6)
        # a sweep over seeds gives ||W|| around 1e-5 at this C
        assert np.linalg.norm(m.W) < 1e-4
        assert np.all(m.predict(rng.normal(size=(20, 3))) == 1)

    def test_converges(self):
        X, y = blobs(np.random.default_rng(8), spread=2.0)
        m = fit_logreg(X, y, 1.0)
        assert m.converged and m.n_iter < 5000

    def test_matches_sklearn(self):
        sk = pytest.importorskip("sklearn.linear_model")
        X, y = blobs(np.random.default_rng(9), spread=2.5)
        ours = fit_logreg(X, y, 0.5)
        ref = sk.LogisticRegression(C=0.5, tol=1e-12, max_iter=20000).fit(X, y)
        assert np.allclose(ours.predict_proba(X), ref.predict_proba(X), atol=1e-5)

    def test_rejects_bad_C(self):
        with pytest.raises(ShallowError):
            LogisticRegression(0.0)

    def test_rejects_nan(self):
        with pytest.raises(ShallowError):
            fit_logreg([[np.nan], [1.0]], [0, 1], 1.0)


class TestDecisionTree:
    def test_gini_matches_oracle(self):
        rng = np.random.default_rng(10)
        for _ in range(25):
            n = int(rng.integers(2, 30))
            X = rng.integers(0, 5, size=(n, 3)).astype(float)
            y = rng.integers(0, 3, n)
            f, thr, crit = kernels.gini_best_split(X, y, 3)
            of, othr, ocrit = gini_oracle(X, y, 3)
            assert (f, thr) == (of, othr)
            assert crit == pytest.approx(float(ocrit), abs=1e-9)

    def test_tie_prefers_lower_feature(self):
        X = np.c_[np.arange(4.0), np.arange(4.0)]
        f, thr, _ = kernels.gini_best_split(X, np.array([0, 0, 1, 1]), 2)
        assert (f, thr) == (0, 1.5)

    def test_one_dimensional_split(self):
        X = np.r_[np.linspace(-3, -0.5, 10), np.linspace(0.5, 3, 10)][:, None]
        y = np.repeat([0, 1], 10)
        t = fit_dtree(X, y, 1)
        assert t.n_splits == 1 and t.threshold[0] == pytest.approx(0.0)
        assert np.array_equal(t.predict(X), y)

    def test_pure_labels(self):
        t = fit_dtree(np.random.default_rng(11).normal(size=(10, 2)), np.full(10, 2), 5)
        assert t.n_splits == 0 and set(t.predict(np.zeros((3, 2)))) == {2}

    def test_accuracy_monotone_in_depth(self):
        rng = np.random.default_rng(12)
        X, y = rng.normal(size=(200, 5)), rng.integers(0, 3, 200)
        acc = [np.mean(fit_dtree(X, y, d).predict(X) == y) for d in range(1, 9)]
        assert all(b >= a for a, b in zip(acc, acc[1:]))

    def test_rejects_depth_zero(self):
        with pytest.raises(ShallowError):
            DecisionTree(0)


class TestSVM:
    def test_xor(self):
        m = fit_svm_rbf(XOR_X, XOR_Y, C=10, gamma=1)
        assert m.converged
        assert np.array_equal(m.predict(XOR_X), XOR_Y)

    def test_separable(self):
        X, y = blobs(np.random.default_rng(13), spread=0.3, sep=6)
        for C, g in ((1, 0.1), (10, 1), (100, 0.5)):
            assert np.array_equal(fit_svm_rbf(X, y, C, g).predict(X), y)

    def test_max_iter_one(self):
        X, y = blobs(np.random.default_rng(14), spread=2.0)
        m = fit_svm_rbf(X, y, 1.0, 0.5, max_iter=1)
        assert not m.converged
        assert m.predict(X).shape == y.shape

    def test_single_class(self):
        with pytest.raises(ShallowError):
            fit_svm_rbf(np.zeros((3, 2)), [1, 1, 1], 1.0, 1.0)

    def test_dual_objective_matches_sklearn(self):
        sk = pytest.importorskip("sklearn.svm")
        rng = np.random.default_rng(15)
        X, y = blobs(rng, 40, 2, spread=2.5, sep=2)
        C, gamma = 2.0, 0.5
        ours = fit_svm_rbf(X, y, C, gamma, tol=1e-6)
        ref = sk.SVC(C=C, gamma=gamma, tol=1e-6).fit(X, y)

        def dual(sv, coef):
            return np.abs(coef).sum() - 0.5 * coef @ rbf_kernel(sv, sv, gamma) @ coef

        m = ours.machines[0]
        assert dual(m.sv, m.coef) == pytest.approx(dual(ref.support_vectors_, ref.dual_coef_[0]), rel=1e-6)
        Q = rng.normal(size=(200, 2)) * 3
        assert np.mean(ours.predict(Q) == ref.predict(Q)) >= 0.99

    def test_standardized_shift_invariance(self):
        X, y = blobs(np.random.default_rng(16), spread=1.5)
        shifted = X + np.array([1e3, 0.0])
        s1, s2 = Standardizer.fit(X), Standardizer.fit(shifted)
        # tight tolerance: the shift perturbs the standardized values in the last bits
        m1 = fit_svm_rbf(s1.transform(X), y, 1.0, 0.5, tol=1e-9)
        m2 = fit_svm_rbf(s2.transform(shifted), y, 1.0, 0.5, tol=1e-9)
        Q = np.random.default_rng(17).normal(size=(50, 2))
        assert np.allclose(m1.decision_values(s1.transform(Q)), m2.decision_values(s2.transform(Q + [1e3, 0])),
                           atol=1e-6)

    def test_multiclass_votes_cover_pairs(self):
        X, y = blobs(np.random.default_rng(18), k=4)
        m = fit_svm_rbf(X, y, 1.0, 0.5)
        votes, _ = m.scores(X)
        assert len(m.machines) == 6 and np.all(votes.sum(axis=1) == 6)


class TestPredictContract:
    @pytest.fixture(params=[("knn", {"k": 3}), ("logreg", {"C": 1.0}), ("dtree", {"max_depth": 4}),
                            ("svm_rbf", {"C": 1.0, "gamma": 0.5})])
    def fitted(self, request):
        kind, hyper = request.param
        X, y = blobs(np.random.default_rng(19), spread=1.5)
        return fit_model(kind, X, y, **hyper), X, y, kind, hyper

    def test_empty(self, fitted):
        m = fitted[0]
        assert predict(m, np.zeros((0, 2))).shape == (0,)

    def test_permutation(self, fitted):
        m, X = fitted[:2]
        p = np.random.default_rng(20).permutation(len(X))
        assert np.array_equal(m.predict(X[p]), m.predict(X)[p])

    def test_dimension_mismatch(self, fitted):
        with pytest.raises(ShallowError):
            fitted[0].predict(np.zeros((2, 3)))

    def test_deterministic_refit(self, fitted):
        m, X, y, kind, hyper = fitted
        assert np.array_equal(fit_model(kind, X, y, **hyper).predict(X), m.predict(X))

    def test_json_round_trip(self, fitted):
        m, X = fitted[:2]
        back = model_from_dict(json.loads(json.dumps(m.to_dict())))
        assert np.array_equal(back.predict(X), m.predict(X))

    def test_bundle_round_trip(self, fitted):
        m, X = fitted[:2]
        b = FittedShallow(m, Standardizer.fit(X), 3, {"class_names": ["a", "b", "c"]})
        back = FittedShallow.from_dict(json.loads(json.dumps(b.to_dict())))
        assert back.extra == b.extra and np.array_equal(back.predict_features(X), b.predict_features(X))

    def test_unknown_kind(self):
        with pytest.raises(ShallowError):
            fit_model("forest", np.zeros((2, 1)), [0, 1])

    def test_bad_version(self):
        d = KNNClassifier(1).fit([[0.0], [1.0]], [0, 1]).to_dict()
        d["format_version"] = 99
        with pytest.raises(ShallowError):
            model_from_dict(d)


class TestBackends:
    """Every available kernel backend must return bit-identical results."""

    @pytest.fixture
    def mods(self):
        mods = kernels.backends()
        assert mods[0].BACKEND == "python"
        return mods

    def test_selected_backend_listed(self, mods):
        assert kernels.BACKEND in [m.BACKEND for m in mods]

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31), st.integers(3, 60), st.floats(0.0, 0.5))
    def test_dp_keep(self, seed, n, eps):
        c = np.random.default_rng(seed).normal(size=(n, 2))
        out = [np.asarray(m.dp_keep(c, eps)) for m in kernels.backends()]
        assert all(np.array_equal(out[0], o) for o in out[1:])

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31), st.integers(1, 40))
    def test_gini(self, seed, n):
        rng = np.random.default_rng(seed)
        X = np.round(rng.normal(size=(n, 4)), 1)
        y = rng.integers(0, 3, n)
        out = [m.gini_best_split(X, y, 3) for m in kernels.backends()]
        assert all(o == out[0] for o in out[1:])

    @pytest.mark.parametrize("seed", range(5))
    def test_smo(self, mods, seed):
        X, y = blobs(np.random.default_rng(seed), 20, 2, spread=2.0, sep=2)
        ys = np.where(y == 0, 1.0, -1.0)
        Q = np.ascontiguousarray(ys[:, None] * ys[None, :] * rbf_kernel(X, X, 0.5))
        out = [m.smo_solve(Q, ys, 1.0, 1e-3, 100000) for m in mods]
        for o in out[1:]:
            assert np.array_equal(np.asarray(o[0]), np.asarray(out[0][0]))
            assert np.array_equal(np.asarray(o[1]), np.asarray(out[0][1]))
            assert o[2:] == out[0][2:]
