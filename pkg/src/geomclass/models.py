"""The convolutional and bidirectional-LSTM geometry classifiers and their training loop."""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .encoding import Batch, GeometrySequence, bin_and_pad
from .neural import (
    Adam, BiLSTM, Conv1D, Dense, GlobalAvgPool, MaxPool1D, NeuralError, ReLU, Tensor,
    softmax, softmax_cross_entropy,
)

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
VERTEX_WIDTH = 5


class TrainingError(RuntimeError):
    pass


class SequenceClassifier:
    """Common plumbing: named parameters, probabilities, checkpoints."""

    arch = ""
    num_classes = 0

    def layers(self) -> List[Tuple[str, object]]:
        raise NotImplementedError

    def parameters(self) -> Dict[str, Tensor]:
        out = {}
        for name, layer in self.layers():
            for k, p in layer.parameters().items():
                out[f"{name}.{k}"] = p
        return out

    def parameter_count(self) -> int:
        return sum(p.data.size for p in self.parameters().values())

    def zero_grad(self):
        for p in self.parameters().values():
            p.zero_grad()

    def logits(self, x, lengths=None):
        raise NotImplementedError

    def backward(self, dlogits):
        raise NotImplementedError

    def predict_proba(self, x, lengths=None):
        return softmax(self.logits(np.asarray(x, dtype=np.float64), lengths))

    def predict(self, x, lengths=None):
        return np.argmax(self.predict_proba(x, lengths), axis=1)

    def state_dict(self) -> Dict:
        return {
            "format_version": CHECKPOINT_VERSION,
            "arch": self.arch,
            "num_classes": self.num_classes,
            "options": self.options(),
            "parameters": {k: {"shape": list(p.shape), "data": p.data.ravel().tolist()}
                           for k, p in self.parameters().items()},
        }

    def load_state_dict(self, state: Dict):
        params = self.parameters()
        if set(state["parameters"]) != set(params):
            raise NeuralError("checkpoint parameter names do not match the model")
        for k, p in params.items():
            entry = state["parameters"][k]
            if tuple(entry["shape"]) != p.shape:
                raise NeuralError(f"shape mismatch for {k}: {entry['shape']} vs {list(p.shape)}")
            p.data = np.array(entry["data"], dtype=np.float64).reshape(p.shape)
            p.grad = np.zeros_like(p.data)

    def get_flat(self) -> Dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.parameters().items()}

    def set_flat(self, values: Dict[str, np.ndarray]):
        for k, p in self.parameters().items():
            p.data = values[k].copy()

    def options(self) -> Dict:
        return {}


class CnnClassifier(SequenceClassifier):
    """conv(32) - maxpool(3) - conv(64) - global average - dense(64) - softmax head."""

    arch = "cnn"

    def __init__(self, num_classes: int, rng=None, exclude_padding: bool = False):
        if num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.num_classes = num_classes
        self.exclude_padding = exclude_padding
        self.conv1 = Conv1D(VERTEX_WIDTH, 32, 5, rng, "conv1")
        self.relu1 = ReLU()
        self.pool = MaxPool1D(3, 3)
        self.conv2 = Conv1D(32, 64, 5, rng, "conv2")
        self.relu2 = ReLU()
        self.gap = GlobalAvgPool(exclude_padding)
        self.dense1 = Dense(64, 64, "relu", rng, "dense1")
        self.head = Dense(64, num_classes, None, rng, "head")

    def options(self):
        return {"exclude_padding": self.exclude_padding}

    def layers(self):
        return [("conv1", self.conv1), ("conv2", self.conv2), ("dense1", self.dense1), ("head", self.head)]

    def logits(self, x, lengths=None):
        h = self.relu1.forward(self.conv1.forward(x))
        h = self.pool.forward(h)
        h = self.relu2.forward(self.conv2.forward(h))
        pooled_len = None if lengths is None else -(-np.asarray(lengths) // 3)
        h = self.gap.forward(h, pooled_len)
        h = self.dense1.forward(h)
        return self.head.forward(h)

    def backward(self, dlogits):
        d = self.head.backward(dlogits)
        d = self.dense1.backward(d)
        d = self.gap.backward(d)
        d = self.conv2.backward(self.relu2.backward(d))
        d = self.pool.backward(d)
        return self.conv1.backward(self.relu1.backward(d))


class RnnClassifier(SequenceClassifier):
    """Bidirectional LSTM (32 + 32) into a softmax head."""

    arch = "rnn"

    def __init__(self, num_classes: int, rng=None, mask_padding: bool = False, units: int = 32):
        if num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.num_classes = num_classes
        self.mask_padding = mask_padding
        self.bilstm = BiLSTM(VERTEX_WIDTH, units, rng, mask_padding)
        self.head = Dense(2 * units, num_classes, None, rng, "head")

    def options(self):
        return {"mask_padding": self.mask_padding}

    def layers(self):
        return [("bilstm", self.bilstm), ("head", self.head)]

    def logits(self, x, lengths=None):
        return self.head.forward(self.bilstm.forward(x, lengths))

    def backward(self, dlogits):
        return self.bilstm.backward(self.head.backward(dlogits))


def build_cnn(num_classes: int, seed: int = 0, exclude_padding: bool = False) -> CnnClassifier:
    return CnnClassifier(num_classes, np.random.default_rng(seed), exclude_padding)


def build_rnn(num_classes: int, seed: int = 0, mask_padding: bool = False) -> RnnClassifier:
    return RnnClassifier(num_classes, np.random.default_rng(seed), mask_padding)


BUILDERS = {"cnn": build_cnn, "rnn": build_rnn}


def model_from_state(state: Dict) -> SequenceClassifier:
    if state.get("format_version") != CHECKPOINT_VERSION:
        raise NeuralError(f"unsupported checkpoint version {state.get('format_version')!r}")
    arch = state["arch"]
    opts = state.get("options", {})
    if arch == "cnn":
        m = build_cnn(state["num_classes"], exclude_padding=opts.get("exclude_padding", False))
    elif arch == "rnn":
        m = build_rnn(state["num_classes"], mask_padding=opts.get("mask_padding", False))
    else:
        raise NeuralError(f"unknown architecture {arch!r}")
    m.load_state_dict(state)
    return m


def save_checkpoint(model: SequenceClassifier, path):
    with open(path, "w") as fh:
        json.dump(model.state_dict(), fh)


def load_checkpoint(path) -> SequenceClassifier:
    with open(path) as fh:
        return model_from_state(json.load(fh))


# --------------------------------------------------------------------------
# training
# --------------------------------------------------------------------------

@dataclass
class TrainConfig:
    batch_size: int = 64
    max_epochs: int = 100
    patience: int = 8
    seed: int = 0
    lr: float = 1e-3
    n_bin: Optional[int] = None

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.patience >= self.max_epochs:
            raise ValueError("patience must be smaller than max_epochs")
        if self.n_bin is None:
            self.n_bin = 8 * self.batch_size

    def to_dict(self):
        return asdict(self)


@dataclass
class History:
    loss: List[float] = field(default_factory=list)
    train_accuracy: List[float] = field(default_factory=list)
    val_accuracy: List[float] = field(default_factory=list)
    val_loss: List[float] = field(default_factory=list)
    best_epoch: int = -1
    stopped_early: bool = False

    def to_dict(self):
        return asdict(self)


def evaluate_batches(model: SequenceClassifier, batches: Sequence[Batch]):
    """Predictions, labels and mean loss over a list of batches."""
    preds, labels, total, n = [], [], 0.0, 0
    for b in batches:
        logits = model.logits(b.x, b.lengths)
        loss, _ = softmax_cross_entropy(logits, b.labels)
        total += loss * len(b)
        n += len(b)
        preds.append(np.argmax(logits, axis=1))
        labels.append(b.labels)
    if n == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64), float("nan")
    return np.concatenate(preds), np.concatenate(labels), total / n


def _reshuffle_bins(batches: Sequence[Batch], rng) -> List[Batch]:
    # rows of one bin share m_bin, so they can be regrouped freely
    by_bin: Dict[int, List[Batch]] = {}
    for b in batches:
        by_bin.setdefault(b.bin_index, []).append(b)
    out = []
    for idx in sorted(by_bin):
        group = by_bin[idx]
        x = np.concatenate([b.x for b in group])
        labels = np.concatenate([b.labels for b in group])
        lengths = np.concatenate([b.lengths for b in group])
        ids = [i for b in group for i in b.ids]
        perm = rng.permutation(len(labels))
        start = 0
        for b in group:
            sel = perm[start:start + len(b)]
            start += len(b)
            out.append(Batch(x[sel], labels[sel], lengths[sel], [ids[i] for i in sel], idx))
    return out


def train(model: SequenceClassifier, train_batches: Sequence[Batch], val_batches: Sequence[Batch],
          cfg: TrainConfig) -> Tuple[SequenceClassifier, History]:
    """Adam on softmax cross-entropy with early stopping on validation accuracy.

    Every epoch the rows of each bin are regrouped into fresh batches and
    the batch order is shuffled, both from ``cfg.seed``.  The parameters
    of the best validation epoch are restored before returning.
    """
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(model.parameters(), lr=cfg.lr)
    hist = History()
    best_acc, best_params, stale = -1.0, model.get_flat(), 0
    for epoch in range(cfg.max_epochs):
        total, count, correct = 0.0, 0, 0
        epoch_batches = _reshuffle_bins(train_batches, rng)
        for k in rng.permutation(len(epoch_batches)):
            b = epoch_batches[k]
            model.zero_grad()
            logits = model.logits(b.x, b.lengths)
            loss, dlogits = softmax_cross_entropy(logits, b.labels)
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {k} "
                                    f"(m_bin={b.m_bin}, size={len(b)})")
            model.backward(dlogits)
            opt.step()
            total += loss * len(b)
            count += len(b)
            correct += int((np.argmax(logits, axis=1) == b.labels).sum())
        pred, lab, vloss = evaluate_batches(model, val_batches)
        vacc = float((pred == lab).mean()) if len(lab) else 0.0
        hist.loss.append(total / max(count, 1))
        hist.train_accuracy.append(correct / max(count, 1))
        hist.val_accuracy.append(vacc)
        hist.val_loss.append(vloss)
        log.debug("epoch %d loss %.4f val_acc %.4f", epoch, hist.loss[-1], vacc)
        if vacc > best_acc:
            best_acc, best_params, stale = vacc, model.get_flat(), 0
            hist.best_epoch = epoch
        else:
            stale += 1
            if stale > cfg.patience:
                hist.stopped_early = True
                break
    model.set_flat(best_params)
    return model, hist


def exact_length_batches(seqs: Sequence[GeometrySequence], batch_size: int) -> List[Batch]:
    """Batches whose members all share one length, so no padding is added.

    A prediction then depends on the sequence alone and not on which other
    sequences happened to be batched with it.
    """
    by_len: Dict[int, List[GeometrySequence]] = {}
    for q in seqs:
        by_len.setdefault(q.length, []).append(q)
    out: List[Batch] = []
    for b, length in enumerate(sorted(by_len, reverse=True)):
        out += [Batch(x.x, x.labels, x.lengths, x.ids, b) for x in bin_and_pad(by_len[length], batch_size)]
    return out


def make_batches(train_seqs: Sequence[GeometrySequence], val_seqs: Sequence[GeometrySequence],
                 test_seqs: Sequence[GeometrySequence], cfg: TrainConfig):
    """Training batches binned with ``cfg.n_bin``; evaluation batches without padding."""
    return (bin_and_pad(train_seqs, cfg.batch_size, cfg.n_bin),
            exact_length_batches(val_seqs, cfg.batch_size),
            exact_length_batches(test_seqs, cfg.batch_size))


@dataclass
class RunResult:
    seed: int
    test_accuracy: float
    history: History
    model: SequenceClassifier = field(repr=False, default=None)
    predictions: np.ndarray = field(repr=False, default=None)
    labels: np.ndarray = field(repr=False, default=None)


def format_mean_std(values) -> str:
    """``"0.624 ± 0.002"``: mean and population standard deviation, 3 decimals."""
    v = np.asarray(values, dtype=np.float64)
    return f"{v.mean():.3f} ± {v.std():.3f}"


def repeated_runs(builder: Callable[[int], SequenceClassifier], data, cfg: TrainConfig,
                  repeats: int = 10, seeds: Optional[Sequence[int]] = None):
    """Train ``repeats`` independently seeded models and test each once.

    ``data`` is ``(train_batches, val_batches, test_batches)``; ``builder``
    maps a seed to a fresh model.  Returns ``(mean, std, runs)`` with the
    population standard deviation.
    """
    if repeats < 2:
        raise ValueError("repeats must be >= 2")
    train_b, val_b, test_b = data
    if seeds is None:
        seeds = [cfg.seed + r for r in range(repeats)]
    if len(seeds) != repeats:
        raise ValueError("need one seed per repeat")
    runs = []
    for s in seeds:
        run_cfg = TrainConfig(**{**cfg.to_dict(), "seed": int(s)})
        model, hist = train(builder(int(s)), train_b, val_b, run_cfg)
        pred, lab, _ = evaluate_batches(model, test_b)
        runs.append(RunResult(int(s), float((pred == lab).mean()), hist, model, pred, lab))
    acc = np.array([r.test_accuracy for r in runs])
    return float(acc.mean()), float(acc.std()), runs
