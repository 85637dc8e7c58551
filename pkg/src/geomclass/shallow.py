"""The four shallow classifiers trained on descriptor feature vectors.

All learners are deterministic given data order and hyperparameters.
Models serialize to a versioned JSON-compatible dict via ``to_dict`` and
:func:`model_from_dict`.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from typing import Dict, List, Optional

import numpy as np

from . import kernels

MODEL_FORMAT_VERSION = 1
KINDS = ("knn", "logreg", "dtree", "svm_rbf")


class ShallowError(ValueError):
    pass


def _check_X(X, n_features: Optional[int] = None) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        if X.size == 0:
            return X.reshape(0, n_features or 0)
        raise ShallowError(f"expected a 2-D feature matrix, got shape {X.shape}")
    if n_features is not None and X.shape[0] and X.shape[1] != n_features:
        raise ShallowError(f"feature dimension mismatch: model has {n_features}, input has {X.shape[1]}")
    if not np.all(np.isfinite(X)):
        raise ShallowError("non-finite feature values")
    return X


def _check_y(y, n) -> np.ndarray:
    y = np.asarray(y, dtype=np.int64)
    if y.shape != (n,):
        raise ShallowError(f"expected {n} labels, got shape {y.shape}")
    if n and y.min() < 0:
        raise ShallowError("labels must be non-negative class indices")
    return y


@dataclass
class Standardizer:
    """Column z-scoring with train-derived statistics; constant columns get std 1."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, X) -> "Standardizer":
        X = _check_X(X)
        mean = X.mean(axis=0)
        std = X.std(axis=0)
        std = np.where(std > 0, std, 1.0)
        return cls(mean, std)

    def transform(self, X) -> np.ndarray:
        X = _check_X(X, self.mean.shape[0])
        if X.shape[0] == 0:
            return X.reshape(0, self.mean.shape[0])
        return (X - self.mean) / self.std

    def to_dict(self):
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["mean"], dtype=np.float64), np.array(d["std"], dtype=np.float64))


class ShallowModel:
    kind: str = ""
    n_features: int = 0
    n_classes: int = 0

    def hyperparameters(self) -> Dict:
        raise NotImplementedError

    def predict(self, X) -> np.ndarray:
        raise NotImplementedError

    def _state(self) -> Dict:
        raise NotImplementedError

    def to_dict(self) -> Dict:
        return {
            "format_version": MODEL_FORMAT_VERSION,
            "kind": self.kind,
            "hyperparameters": self.hyperparameters(),
            "n_features": self.n_features,
            "n_classes": self.n_classes,
            "state": self._state(),
        }


# --------------------------------------------------------------------------
# k-nearest neighbours
# --------------------------------------------------------------------------

def _sq_distances(A, B):
    # exact-enough pairwise squared euclidean distances, clipped at 0
    d = (A * A).sum(1)[:, None] - 2.0 * A @ B.T + (B * B).sum(1)[None, :]
    return np.maximum(d, 0.0)


class KNNClassifier(ShallowModel):
    kind = "knn"

    def __init__(self, k: int):
        self.k = int(k)

    def fit(self, X, y):
        X = _check_X(X)
        y = _check_y(y, X.shape[0])
        if not 1 <= self.k <= X.shape[0]:
            raise ShallowError(f"k={self.k} must be in [1, n={X.shape[0]}]")
        self.X, self.y = X, y
        self.n_features = X.shape[1]
        self.n_classes = int(y.max()) + 1
        return self

    def hyperparameters(self):
        return {"k": self.k}

    def neighbours(self, X):
        """Indices and distances of the ``k`` nearest training rows (stable on ties)."""
        X = _check_X(X, self.n_features)
        dist = np.sqrt(_sq_distances(X, self.X))
        idx = np.argsort(dist, axis=1, kind="stable")[:, : self.k]
        return idx, np.take_along_axis(dist, idx, axis=1)

    def predict(self, X):
        X = _check_X(X, self.n_features)
        if X.shape[0] == 0:
            return np.zeros(0, dtype=np.int64)
        idx, dist = self.neighbours(X)
        labels = self.y[idx]
        out = np.empty(X.shape[0], dtype=np.int64)
        for r in range(X.shape[0]):
            votes = np.bincount(labels[r], minlength=self.n_classes)
            summed = np.bincount(labels[r], weights=dist[r], minlength=self.n_classes)
            cands = np.flatnonzero(votes == votes.max())
            # fewest summed distance, then lowest class index
            out[r] = cands[np.argmin(summed[cands])]
        return out

    def _state(self):
        return {"X": self.X.tolist(), "y": self.y.tolist()}

    @classmethod
    def _from_state(cls, d):
        m = cls(d["hyperparameters"]["k"])
        m.X = np.array(d["state"]["X"], dtype=np.float64).reshape(-1, d["n_features"])
        m.y = np.array(d["state"]["y"], dtype=np.int64)
        return m


# --------------------------------------------------------------------------
# Multinomial logistic regression
# --------------------------------------------------------------------------

def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


class LogisticRegression(ShallowModel):
    """Softmax regression: summed cross-entropy plus ``||W||^2 / (2C)``, bias free.

    Solved by full-batch gradient descent with an Armijo backtracking line
    search started from a Barzilai-Borwein step.  ``loss_history`` keeps the
    loss after every accepted step.
    """

    kind = "logreg"

    def __init__(self, C: float = 1.0, tol: float = 1e-6, max_iter: int = 5000):
        if not C > 0:
            raise ShallowError("C must be > 0")
        self.C = float(C)
        self.tol = tol
        self.max_iter = max_iter

    def hyperparameters(self):
        return {"C": self.C, "tol": self.tol, "max_iter": self.max_iter}

    def _loss_grad(self, W, b, X, Y):
        P = _softmax(X @ W + b)
        loss = -np.sum(Y * np.log(np.maximum(P, 1e-300))) + (W * W).sum() / (2.0 * self.C)
        R = P - Y
        return loss, X.T @ R + W / self.C, R.sum(axis=0)

    def fit(self, X, y):
        X = _check_X(X)
        y = _check_y(y, X.shape[0])
        n, d = X.shape
        K = int(y.max()) + 1
        self.n_features, self.n_classes = d, K
        Y = np.zeros((n, K))
        Y[np.arange(n), y] = 1.0
        W = np.zeros((d, K))
        b = np.zeros(K)
        loss, gW, gb = self._loss_grad(W, b, X, Y)
        self.loss_history = [loss]
        # 1/L bound for the summed loss
        step = 1.0 / (0.5 * (np.linalg.norm(X, ord=2) ** 2 + n) + 1.0 / self.C)
        self.converged = False
        self.n_iter = 0
        for it in range(self.max_iter):
            gnorm = max(np.abs(gW).max(initial=0.0), np.abs(gb).max(initial=0.0))
            if gnorm < self.tol:
                self.converged = True
                break
            g2 = (gW * gW).sum() + (gb * gb).sum()
            t = step
            while True:
                W1, b1 = W - t * gW, b - t * gb
                loss1, gW1, gb1 = self._loss_grad(W1, b1, X, Y)
                if loss1 <= loss - 0.5 * t * g2 or t < 1e-20:
                    break
                t *= 0.5
            if loss1 > loss:
                break  # no descent possible at machine precision
            # Barzilai-Borwein guess for the next trial step
            sy = ((W1 - W) * (gW1 - gW)).sum() + ((b1 - b) * (gb1 - gb)).sum()
            ss = ((W1 - W) ** 2).sum() + ((b1 - b) ** 2).sum()
            step = ss / sy if sy > 0 else 2.0 * t
            W, b, loss, gW, gb = W1, b1, loss1, gW1, gb1
            self.loss_history.append(loss)
            self.n_iter = it + 1
        self.W, self.b = W, b
        return self

    def decision_function(self, X):
        X = _check_X(X, self.n_features)
        return X @ self.W + self.b

    def predict_proba(self, X):
        return _softmax(self.decision_function(X))

    def predict(self, X):
        X = _check_X(X, self.n_features)
        if X.shape[0] == 0:
            return np.zeros(0, dtype=np.int64)
        return np.argmax(self.decision_function(X), axis=1).astype(np.int64)

    def _state(self):
        return {"W": self.W.tolist(), "b": self.b.tolist(), "converged": self.converged}

    @classmethod
    def _from_state(cls, d):
        hp = d["hyperparameters"]
        m = cls(hp["C"], hp["tol"], hp["max_iter"])
        m.W = np.array(d["state"]["W"], dtype=np.float64).reshape(d["n_features"], d["n_classes"])
        m.b = np.array(d["state"]["b"], dtype=np.float64)
        m.converged = d["state"]["converged"]
        return m


# --------------------------------------------------------------------------
# CART decision tree
# --------------------------------------------------------------------------

class DecisionTree(ShallowModel):
    """CART with Gini impurity, grown depth-first to ``max_depth``.

    Nodes are stored flat: ``feature[i] == -1`` marks a leaf, whose class is
    ``value[i]``.  Samples with ``x[feature] <= threshold`` go left.
    """

    kind = "dtree"

    def __init__(self, max_depth: int):
        if max_depth < 1:
            raise ShallowError("max_depth must be >= 1")
        self.max_depth = int(max_depth)

    def hyperparameters(self):
        return {"max_depth": self.max_depth}

    def fit(self, X, y):
        X = _check_X(X)
        y = _check_y(y, X.shape[0])
        self.n_features = X.shape[1]
        self.n_classes = int(y.max()) + 1
        self.feature: List[int] = []
        self.threshold: List[float] = []
        self.left: List[int] = []
        self.right: List[int] = []
        self.value: List[int] = []
        self._grow(X, y, 0)
        return self

    def _new_node(self, y):
        counts = np.bincount(y, minlength=self.n_classes)
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(int(np.argmax(counts)))
        return len(self.feature) - 1

    def _grow(self, X, y, depth):
        node = self._new_node(y)
        if depth >= self.max_depth or np.all(y == y[0]):
            return node
        f, thr, _ = kernels.gini_best_split(X, y, self.n_classes)
        if f < 0:
            return node
        mask = X[:, f] <= thr
        self.feature[node] = f
        self.threshold[node] = thr
        self.left[node] = self._grow(X[mask], y[mask], depth + 1)
        self.right[node] = self._grow(X[~mask], y[~mask], depth + 1)
        return node

    @property
    def n_splits(self):
        return sum(1 for f in self.feature if f >= 0)

    def predict(self, X):
        X = _check_X(X, self.n_features)
        out = np.empty(X.shape[0], dtype=np.int64)
        for r in range(X.shape[0]):
            i = 0
            while self.feature[i] >= 0:
                i = self.left[i] if X[r, self.feature[i]] <= self.threshold[i] else self.right[i]
            out[r] = self.value[i]
        return out

    def _state(self):
        return {"feature": self.feature, "threshold": self.threshold,
                "left": self.left, "right": self.right, "value": self.value}

    @classmethod
    def _from_state(cls, d):
        m = cls(d["hyperparameters"]["max_depth"])
        for key in ("feature", "threshold", "left", "right", "value"):
            setattr(m, key, list(d["state"][key]))
        return m


# --------------------------------------------------------------------------
# RBF support vector machine
# --------------------------------------------------------------------------

def rbf_kernel(A, B, gamma):
    return np.exp(-gamma * _sq_distances(A, B))


@dataclass
class _BinarySVM:
    pos: int
    neg: int
    sv: np.ndarray
    coef: np.ndarray  # alpha_i * y_i
    b: float
    n_iter: int
    converged: bool


class SVMClassifier(ShallowModel):
    """RBF-kernel SVM; binary problems by SMO, multiclass by one-vs-one voting.

    Vote ties go to the class with the larger summed decision value, then
    the lower class index.
    """

    kind = "svm_rbf"

    def __init__(self, C: float = 1.0, gamma: float = 1.0, max_iter: int = 10_000_000, tol: float = 1e-3):
        if not (C > 0 and gamma > 0):
            raise ShallowError("C and gamma must be > 0")
        self.C = float(C)
        self.gamma = float(gamma)
        self.max_iter = int(max_iter)
        self.tol = tol

    def hyperparameters(self):
        return {"C": self.C, "gamma": self.gamma, "max_iter": self.max_iter, "tol": self.tol}

    @property
    def converged(self) -> bool:
        return all(m.converged for m in self.machines)

    def fit(self, X, y):
        X = _check_X(X)
        y = _check_y(y, X.shape[0])
        classes = np.unique(y)
        if len(classes) < 2:
            raise ShallowError("SVM needs at least two classes in the training data")
        self.n_features = X.shape[1]
        self.n_classes = int(y.max()) + 1
        self.machines: List[_BinarySVM] = []
        for p, q in combinations(classes.tolist(), 2):
            idx = np.flatnonzero((y == p) | (y == q))
            Xs = X[idx]
            ys = np.where(y[idx] == p, 1.0, -1.0)
            K = rbf_kernel(Xs, Xs, self.gamma)
            Q = np.ascontiguousarray(ys[:, None] * ys[None, :] * K)
            alpha, G, n_iter, conv = kernels.smo_solve(Q, ys, self.C, self.tol, self.max_iter)
            alpha = np.asarray(alpha)
            b = -_rho(alpha, np.asarray(G), ys, self.C)
            sv = alpha > 0
            self.machines.append(_BinarySVM(p, q, Xs[sv], alpha[sv] * ys[sv], b, int(n_iter), bool(conv)))
        return self

    def decision_values(self, X):
        """Pairwise decision values, shape ``(n, n_pairs)``; positive favours ``pos``."""
        X = _check_X(X, self.n_features)
        out = np.zeros((X.shape[0], len(self.machines)))
        for k, m in enumerate(self.machines):
            if len(m.sv):
                out[:, k] = rbf_kernel(X, m.sv, self.gamma) @ m.coef + m.b
            else:
                out[:, k] = m.b
        return out

    def scores(self, X):
        """Per-class ``(votes, summed decision value)`` for every row."""
        dv = self.decision_values(X)
        votes = np.zeros((dv.shape[0], self.n_classes))
        conf = np.zeros((dv.shape[0], self.n_classes))
        for k, m in enumerate(self.machines):
            win = dv[:, k] > 0
            votes[win, m.pos] += 1
            votes[~win, m.neg] += 1
            conf[:, m.pos] += dv[:, k]
            conf[:, m.neg] -= dv[:, k]
        return votes, conf

    def predict(self, X):
        X = _check_X(X, self.n_features)
        if X.shape[0] == 0:
            return np.zeros(0, dtype=np.int64)
        votes, conf = self.scores(X)
        out = np.empty(X.shape[0], dtype=np.int64)
        for r in range(X.shape[0]):
            cands = np.flatnonzero(votes[r] == votes[r].max())
            out[r] = cands[np.argmax(conf[r, cands])]
        return out

    def _state(self):
        return {"machines": [
            {"pos": m.pos, "neg": m.neg, "sv": m.sv.tolist(), "coef": m.coef.tolist(),
             "b": m.b, "n_iter": m.n_iter, "converged": m.converged}
            for m in self.machines]}

    @classmethod
    def _from_state(cls, d):
        hp = d["hyperparameters"]
        m = cls(hp["C"], hp["gamma"], hp["max_iter"], hp["tol"])
        m.machines = [
            _BinarySVM(s["pos"], s["neg"], np.array(s["sv"], dtype=np.float64).reshape(-1, d["n_features"]),
                       np.array(s["coef"], dtype=np.float64), s["b"], s["n_iter"], s["converged"])
            for s in d["state"]["machines"]]
        return m


def _rho(alpha, G, y, C):
    # offset from free support vectors, else the midpoint of the feasible interval
    yG = y * G
    free = (alpha > 0) & (alpha < C)
    if free.any():
        return float(yG[free].mean())
    pos = y > 0
    upper_mask = np.where(pos, alpha >= C, alpha <= 0)
    lower_mask = np.where(pos, alpha <= 0, alpha >= C)
    ub = yG[upper_mask].min() if upper_mask.any() else np.inf
    lb = yG[lower_mask].max() if lower_mask.any() else -np.inf
    if np.isinf(ub) or np.isinf(lb):
        return float(ub if np.isfinite(ub) else lb if np.isfinite(lb) else 0.0)
    return float((ub + lb) / 2.0)


# --------------------------------------------------------------------------
# functional entry points
# --------------------------------------------------------------------------

def fit_knn(X, y, k: int) -> KNNClassifier:
    return KNNClassifier(k).fit(X, y)


def fit_logreg(X, y, C: float, **kw) -> LogisticRegression:
    return LogisticRegression(C, **kw).fit(X, y)


def fit_dtree(X, y, max_depth: int) -> DecisionTree:
    return DecisionTree(max_depth).fit(X, y)


def fit_svm_rbf(X, y, C: float, gamma: float, max_iter: int = 10_000_000, **kw) -> SVMClassifier:
    return SVMClassifier(C, gamma, max_iter, **kw).fit(X, y)


def predict(model: ShallowModel, X) -> np.ndarray:
    return model.predict(X)


_BUILDERS = {
    "knn": (fit_knn, ("k",)),
    "logreg": (fit_logreg, ("C",)),
    "dtree": (fit_dtree, ("max_depth",)),
    "svm_rbf": (fit_svm_rbf, ("C", "gamma", "max_iter")),
}


def fit_model(kind: str, X, y, **hyper) -> ShallowModel:
    if kind not in _BUILDERS:
        raise ShallowError(f"unknown model kind {kind!r}; expected one of {KINDS}")
    fn, _ = _BUILDERS[kind]
    return fn(X, y, **hyper)


_CLASSES = {"knn": KNNClassifier, "logreg": LogisticRegression,
            "dtree": DecisionTree, "svm_rbf": SVMClassifier}


def model_from_dict(d: Dict) -> ShallowModel:
    if d.get("format_version") != MODEL_FORMAT_VERSION:
        raise ShallowError(f"unsupported model format version {d.get('format_version')!r}")
    cls = _CLASSES.get(d.get("kind"))
    if cls is None:
        raise ShallowError(f"unknown model kind {d.get('kind')!r}")
    m = cls._from_state(d)
    m.n_features = d["n_features"]
    m.n_classes = d["n_classes"]
    return m


@dataclass
class FittedShallow:
    """A shallow model bundled with its feature order and standardizer."""

    model: ShallowModel
    standardizer: Standardizer
    order: int
    extra: Dict = field(default_factory=dict)

    def predict_features(self, X):
        return self.model.predict(self.standardizer.transform(X))

    def to_dict(self):
        return {"model": self.model.to_dict(), "standardizer": self.standardizer.to_dict(),
                "order": self.order, **self.extra}

    @classmethod
    def from_dict(cls, d):
        extra = {k: v for k, v in d.items() if k not in ("model", "standardizer", "order")}
        return cls(model_from_dict(d["model"]), Standardizer.from_dict(d["standardizer"]), d["order"], extra)
