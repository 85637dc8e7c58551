"""Splits, metrics, shallow-model grid search and the comparison table."""
from __future__ import annotations

import csv
import io
import itertools
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .efd import SEARCH_ORDERS, feature_matrix
from .shallow import FittedShallow, ShallowError, Standardizer, fit_model

TRAIN_FLOOR, VAL_FLOOR, TEST_FLOOR = 10_000, 1_000, 1_000


class HarnessError(ValueError):
    pass


def worker_count() -> int:
    env = os.environ.get("GEOMCLASS_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


# --------------------------------------------------------------------------
# splits
# --------------------------------------------------------------------------

@dataclass
class Split:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    seed: int
    policy: str = "80/10/10"

    def as_dict(self):
        return {"train": self.train, "val": self.val, "test": self.test}


def split_sizes(n: int) -> Tuple[int, int, int]:
    """Train/val/test sizes: the 10,000/1,000/1,000 floors when ``n`` allows, else 80/10/10."""
    val = int(round(0.1 * n))
    test = int(round(0.1 * n))
    if n >= TRAIN_FLOOR + VAL_FLOOR + TEST_FLOOR:
        val, test = max(val, VAL_FLOOR), max(test, TEST_FLOOR)
        if n - val - test < TRAIN_FLOOR:
            val, test = VAL_FLOOR, TEST_FLOOR
    return n - val - test, val, test


def split(n_or_labels, seed: int, stratify: bool = False) -> Split:
    """Seeded shuffle-and-cut split into disjoint train/val/test index arrays.

    Pass labels (an array) together with ``stratify=True`` to cut every class
    separately; otherwise a count or array of any kind is accepted.
    """
    labels = None if np.isscalar(n_or_labels) else np.asarray(n_or_labels)
    n = int(n_or_labels) if labels is None else len(labels)
    if n < 10:
        raise HarnessError(f"dataset too small to split: {n} samples (need >= 10)")
    rng = np.random.default_rng(seed)
    if not stratify:
        perm = rng.permutation(n)
        a, b, _ = split_sizes(n)
        return Split(np.sort(perm[:a]), np.sort(perm[a:a + b]), np.sort(perm[a + b:]), seed)
    if labels is None:
        raise HarnessError("stratified split needs labels")
    parts = ([], [], [])
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        idx = idx[rng.permutation(len(idx))]
        m = len(idx)
        v = int(round(0.1 * m))
        t = int(round(0.1 * m))
        parts[0].append(idx[: m - v - t])
        parts[1].append(idx[m - v - t: m - t])
        parts[2].append(idx[m - t:])
    tr, va, te = (np.sort(np.concatenate(p)) for p in parts)
    return Split(tr, va, te, seed, policy="stratified 80/10/10")


# --------------------------------------------------------------------------
# metrics
# --------------------------------------------------------------------------

def accuracy(pred, truth) -> float:
    pred, truth = np.asarray(pred), np.asarray(truth)
    if pred.shape != truth.shape:
        raise HarnessError("prediction and truth lengths differ")
    if pred.size == 0:
        raise HarnessError("accuracy of an empty evaluation")
    return float(np.mean(pred == truth))


def majority_baseline(train_labels, test_labels) -> float:
    """Share of the training-majority class (lowest index on ties) in the test labels."""
    train_labels = np.asarray(train_labels, dtype=np.int64)
    test_labels = np.asarray(test_labels, dtype=np.int64)
    if train_labels.size == 0 or test_labels.size == 0:
        raise HarnessError("majority baseline needs non-empty labels")
    majority = int(np.argmax(np.bincount(train_labels)))
    return float(np.mean(test_labels == majority))


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # rows = true class, columns = predicted class

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.counts) / self.counts.sum())

    def support(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    def to_csv(self, class_names: Optional[Sequence[str]] = None) -> str:
        k = self.counts.shape[0]
        names = list(class_names) if class_names is not None else [str(i) for i in range(k)]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["true\\pred"] + names)
        for i in range(k):
            w.writerow([names[i]] + [int(v) for v in self.counts[i]])
        return buf.getvalue()


def confusion(pred, truth, num_classes: int) -> ConfusionMatrix:
    pred = np.asarray(pred, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if pred.shape != truth.shape:
        raise HarnessError("prediction and truth lengths differ")
    for name, arr in (("predicted", pred), ("true", truth)):
        if arr.size and (arr.min() < 0 or arr.max() >= num_classes):
            raise HarnessError(f"{name} label out of range [0, {num_classes})")
    counts = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(counts, (truth, pred), 1)
    return ConfusionMatrix(counts)


# --------------------------------------------------------------------------
# grid search
# --------------------------------------------------------------------------

# hyperparameter names per model kind, in tie-break priority order
HYPER_NAMES = {"knn": ("k",), "logreg": ("C",), "dtree": ("max_depth",), "svm_rbf": ("C", "gamma")}


def _pow10(lo, hi):
    return [float(10.0 ** e) for e in range(lo, hi + 1)]


@dataclass
class GridSpec:
    """Hyperparameter lists for one model kind; ``orders`` are descriptor orders."""

    kind: str
    params: Dict[str, List]
    orders: List[int] = field(default_factory=lambda: list(SEARCH_ORDERS))

    def __post_init__(self):
        if self.kind not in HYPER_NAMES:
            raise HarnessError(f"unknown model kind {self.kind!r}")
        if not self.orders or any(not v for v in self.params.values()):
            raise HarnessError("empty grid")
        bad = [o for o in self.orders if o not in SEARCH_ORDERS]
        if bad:
            raise HarnessError(f"orders {bad} are not in {SEARCH_ORDERS}")
        missing = set(HYPER_NAMES[self.kind]) - set(self.params)
        if missing:
            raise HarnessError(f"grid for {self.kind} lacks {sorted(missing)}")

    def combinations(self):
        """Every (order, hyper dict, rank key) of the Cartesian product."""
        names = HYPER_NAMES[self.kind]
        lists = [self.params[n] for n in names]
        for o in self.orders:
            for pos in itertools.product(*[range(len(v)) for v in lists]):
                hyper = {n: lists[i][p] for i, (n, p) in enumerate(zip(names, pos))}
                yield o, hyper, (o,) + pos

    def size(self):
        n = len(self.orders)
        for v in self.params.values():
            n *= len(v)
        return n

    def to_dict(self):
        return {"kind": self.kind, "orders": list(self.orders), "params": {k: list(v) for k, v in self.params.items()}}


# search ranges of the published runs, per task (names follow the benchmark tasks)
PRESETS = {
    "neighbourhoods": {
        "dtree": {"max_depth": list(range(4, 10))},
        "knn": {"k": list(range(21, 31))},
        "svm_rbf": {"C": _pow10(-2, 3), "gamma": _pow10(-3, 3)},
        "logreg": {"C": _pow10(-3, 1)},
    },
    "buildings": {
        "dtree": {"max_depth": list(range(6, 13))},
        "knn": {"k": list(range(21, 31))},
        "svm_rbf": {"C": _pow10(-2, 3), "gamma": _pow10(-2, 3)},
        "logreg": {"C": _pow10(-2, 3)},
    },
    "archaeology": {
        "dtree": {"max_depth": list(range(5, 11))},
        "knn": {"k": list(range(21, 31))},
        "svm_rbf": {"C": _pow10(-1, 3), "gamma": _pow10(-4, 4)},
        "logreg": {"C": _pow10(-2, 3)},
    },
}


def preset_grid(task: str, kind: str, orders: Optional[Sequence[int]] = None) -> GridSpec:
    return GridSpec(kind, {k: list(v) for k, v in PRESETS[task][kind].items()},
                    list(orders) if orders is not None else list(SEARCH_ORDERS))


def cv_folds(n: int, folds: int, seed: int) -> List[np.ndarray]:
    """Seeded partition of ``range(n)`` into ``folds`` validation folds."""
    if folds < 2:
        raise HarnessError("need at least 2 folds")
    if n < folds:
        raise HarnessError(f"cannot make {folds} folds from {n} samples")
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(f) for f in np.array_split(perm, folds)]


@dataclass
class GridResult:
    kind: str
    best_order: int
    best_params: Dict
    best_score: float
    table: List[Dict]  # one row per combination, fold scores included
    model: Optional[FittedShallow] = None
    subset_size: int = 0

    def table_csv(self) -> str:
        names = HYPER_NAMES[self.kind]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        nf = len(self.table[0]["fold_scores"]) if self.table else 0
        w.writerow(["order", *names, "mean_accuracy", *[f"fold{i}" for i in range(nf)]])
        for row in self.table:
            w.writerow([row["order"], *[row["params"][n] for n in names], repr(row["mean"]),
                        *[repr(s) for s in row["fold_scores"]]])
        return buf.getvalue()


def _model_kwargs(kind, hyper, svm_max_iter):
    kw = dict(hyper)
    if kind == "svm_rbf":
        kw["max_iter"] = svm_max_iter
    return kw


def grid_search(kind: str, geometries, labels, grid: GridSpec, folds: int = 5, subset_cap: int = 10_000,
                seed: int = 0, svm_max_iter: int = 10_000_000, refit: bool = True,
                features_by_order: Optional[Dict[int, np.ndarray]] = None,
                threads: Optional[int] = None) -> GridResult:
    """Exhaustive k-fold search over descriptor order and model hyperparameters.

    SVM and k-NN searches use at most ``subset_cap`` training samples; the
    winning combination is refit on all samples.  Ties in mean CV accuracy go
    to the smaller order, then to the earlier-listed hyperparameter values,
    independent of evaluation order.  Standardization is fit per fold.
    """
    if grid.kind != kind:
        raise HarnessError(f"grid is for {grid.kind}, not {kind}")
    labels = np.asarray(labels, dtype=np.int64)
    n = len(labels)
    rng = np.random.default_rng(seed)
    sub = np.arange(n)
    if kind in ("svm_rbf", "knn") and n > subset_cap:
        sub = np.sort(rng.permutation(n)[:subset_cap])
    fold_idx = cv_folds(len(sub), folds, seed)

    feats: Dict[int, np.ndarray] = {}
    for o in grid.orders:
        if features_by_order is not None and o in features_by_order:
            feats[o] = features_by_order[o]
        else:
            feats[o] = feature_matrix(geometries, o)

    combos = list(grid.combinations())

    def evaluate(combo):
        o, hyper, rank = combo
        X = feats[o][sub]
        y = labels[sub]
        scores = []
        for k, val in enumerate(fold_idx):
            tr = np.concatenate([f for j, f in enumerate(fold_idx) if j != k])
            std = Standardizer.fit(X[tr])
            try:
                m = fit_model(kind, std.transform(X[tr]), y[tr], **_model_kwargs(kind, hyper, svm_max_iter))
                pred = m.predict(std.transform(X[val]))
                scores.append(float(np.mean(pred == y[val])))
            except ShallowError:
                scores.append(0.0)  # e.g. k larger than the fold or a single-class fold
        return {"order": o, "params": hyper, "rank": rank, "fold_scores": scores, "mean": float(np.mean(scores))}

    workers = threads if threads is not None else worker_count()
    if workers > 1 and len(combos) > 1:
        with ThreadPoolExecutor(workers) as pool:
            table = list(pool.map(evaluate, combos))
    else:
        table = [evaluate(c) for c in combos]

    best = min(table, key=lambda r: (-r["mean"], r["rank"]))
    result = GridResult(kind, best["order"], best["params"], best["mean"],
                        sorted(table, key=lambda r: r["rank"]), subset_size=len(sub))
    if refit:
        X = feats[best["order"]]
        std = Standardizer.fit(X)
        model = fit_model(kind, std.transform(X), labels, **_model_kwargs(kind, best["params"], svm_max_iter))
        result.model = FittedShallow(model, std, best["order"])
    for row in result.table:
        row.pop("rank", None)
    return result


# --------------------------------------------------------------------------
# reporting
# --------------------------------------------------------------------------

ROW_ORDER = ("majority", "knn", "logreg", "svm_rbf", "dtree", "cnn", "rnn")
ROW_LABELS = {"majority": "Majority class", "knn": "k-NN", "logreg": "Logistic regression",
              "svm_rbf": "SVM RBF", "dtree": "Decision tree", "cnn": "CNN", "rnn": "RNN"}
_LABEL_TO_KEY = {v: k for k, v in ROW_LABELS.items()}


def format_cell(value) -> str:
    """A single accuracy as ``0.683``; a list of repeated runs as ``mean ± std``."""
    if isinstance(value, (list, tuple, np.ndarray)):
        v = np.asarray(value, dtype=np.float64)
        if len(v) == 1:
            return f"{v[0]:.3f}"
        return f"{v.mean():.3f} ± {v.std():.3f}"
    return f"{float(value):.3f}"


@dataclass
class ComparisonTable:
    task: str
    rows: List[Tuple[str, str]]  # (method label, formatted cell)

    def to_text(self) -> str:
        w = max(len(r[0]) for r in self.rows)
        w = max(w, len("Method"))
        cw = max(len(self.task), max(len(r[1]) for r in self.rows))
        lines = [f"{'Method':<{w}}  {self.task:>{cw}}", "-" * (w + 2 + cw)]
        lines += [f"{name:<{w}}  {cell:>{cw}}" for name, cell in self.rows]
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["method", self.task])
        wr.writerows(self.rows)
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "ComparisonTable":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or rows[0][0] != "method":
            raise HarnessError("not a comparison table CSV")
        return cls(rows[0][1], [(r[0], r[1]) for r in rows[1:]])

    def __eq__(self, other):
        return isinstance(other, ComparisonTable) and self.task == other.task and self.rows == other.rows


def report(results: Dict[str, object], task: str = "accuracy") -> ComparisonTable:
    """Build the comparison table from ``{row key: accuracy or list of accuracies}``.

    Keys are ``majority``, ``knn``, ``logreg``, ``svm_rbf``, ``dtree``,
    ``cnn`` and ``rnn``; rows follow that order and absent keys are skipped.
    """
    if not results:
        raise HarnessError("report needs at least one result")
    unknown = set(results) - set(ROW_ORDER)
    if unknown:
        raise HarnessError(f"unknown result keys {sorted(unknown)}")
    rows = [(ROW_LABELS[k], format_cell(results[k])) for k in ROW_ORDER if k in results]
    return ComparisonTable(task, rows)
