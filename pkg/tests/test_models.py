import numpy as np
import pytest

from geomclass.datagen import generate_dataset
from geomclass.encoding import compute_scale_factor, encode_dataset
from geomclass.harness import split
from geomclass.models import (
    TrainConfig, build_cnn, build_rnn, evaluate_batches, exact_length_batches, format_mean_std, load_checkpoint,
    make_batches, model_from_state, repeated_runs, save_checkpoint, train,
)
from geomclass.neural import Adam, NeuralError, softmax_cross_entropy


def random_batch(rng, B=4, T=7):
    x = rng.normal(size=(B, T, 5))
    x[:, :, 2:] = 0
    x[:, :-1, 2] = 1
    x[:, -1, 4] = 1
    return x


@pytest.fixture(scope="module")
def pair_data():
    ds = generate_dataset(("ellipse64", "star5"), per_class=60, seed=3)
    sp = split(ds.labels, seed=3, stratify=True)
    tr, va, te = (ds.subset(i) for i in (sp.train, sp.val, sp.test))
    s = compute_scale_factor(tr.geometries)
    enc = [encode_dataset(d.geometries, d.labels, s) for d in (tr, va, te)]
    return enc


class TestArchitecture:
    def test_cnn_parameter_count(self):
        m = build_cnn(9)
        sizes = {k: p.data.size for k, p in m.parameters().items()}
        assert sizes["conv1.W"] + sizes["conv1.b"] == 5 * 5 * 32 + 32 == 832
        assert sizes["conv2.W"] + sizes["conv2.b"] == 5 * 32 * 64 + 64 == 10304
        assert sizes["dense1.W"] + sizes["dense1.b"] == 64 * 64 + 64 == 4160
        assert sizes["head.W"] + sizes["head.b"] == 64 * 9 + 9 == 585
        assert m.parameter_count() == 15881

    def test_rnn_parameter_count(self):
        m = build_rnn(10)
        sizes = {k: p.data.size for k, p in m.parameters().items()}
        per_direction = sum(v for k, v in sizes.items() if k.startswith("bilstm.fwd"))
        assert per_direction == 4 * (32 * (5 + 32) + 32)
        assert sizes["head.W"] + sizes["head.b"] == 650

    def test_cnn_head_width(self):
        assert build_cnn(2).predict_proba(random_batch(np.random.default_rng(0))).shape == (4, 2)

    def test_rnn_feature_width(self):
        m = build_rnn(3)
        assert m.bilstm.forward(random_batch(np.random.default_rng(1))).shape == (4, 64)

    @pytest.mark.parametrize("builder", [build_cnn, build_rnn])
    def test_probabilities(self, builder):
        rng = np.random.default_rng(2)
        for T in (1, 7, 20):
            p = builder(5).predict_proba(random_batch(rng, 3, T))
            assert np.all(np.isfinite(p)) and np.abs(p.sum(axis=1) - 1).max() <= 1e-12

    @pytest.mark.parametrize("builder", [build_cnn, build_rnn])
    def test_no_cross_sample_leakage(self, builder):
        rng = np.random.default_rng(3)
        x = random_batch(rng, 6, 9)
        m = builder(4, seed=5)
        perm = rng.permutation(6)
        assert np.allclose(m.predict_proba(x[perm]), m.predict_proba(x)[perm], atol=1e-14)

    def test_needs_two_classes(self):
        with pytest.raises(ValueError):
            build_cnn(1)

    @pytest.mark.parametrize("builder", [build_cnn, build_rnn])
    def test_checkpoint_bit_exact(self, builder, tmp_path):
        m = builder(3, seed=7)
        save_checkpoint(m, tmp_path / "m.json")
        back = load_checkpoint(tmp_path / "m.json")
        for k, p in m.parameters().items():
            assert np.array_equal(back.parameters()[k].data, p.data)

    def test_checkpoint_mismatch(self):
        state = build_cnn(3).state_dict()
        state["num_classes"] = 4
        with pytest.raises(NeuralError):
            model_from_state(state)


class TestTrainConfig:
    def test_defaults(self):
        cfg = TrainConfig()
        assert (cfg.batch_size, cfg.max_epochs, cfg.patience, cfg.lr, cfg.n_bin) == (64, 100, 8, 1e-3, 512)

    def test_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(batch_size=0)
        with pytest.raises(ValueError):
            TrainConfig(max_epochs=5, patience=5)


class TestTraining:
    @pytest.mark.parametrize("builder", [build_cnn, build_rnn])
    def test_memorizes_32_samples(self, builder):
        ds = generate_dataset(("triangle", "rectangle", "star5", "lshape"), per_class=8, seed=11)
        seqs = encode_dataset(ds.geometries, ds.labels, compute_scale_factor(ds.geometries))
        batches = exact_length_batches(seqs, 32)
        m = builder(4, seed=0)
        opt = Adam(m.parameters(), lr=1e-2)
        for step in range(2000):
            m.zero_grad()
            total = 0.0
            for b in batches:
                loss, d = softmax_cross_entropy(m.logits(b.x, b.lengths), b.labels)
                m.backward(d * len(b) / len(seqs))
                total += loss * len(b) / len(seqs)
            if total < 0.01:
                break
            opt.step()
        assert total < 0.01, (step, total)

    def test_separable_pair(self, pair_data):
        cfg = TrainConfig(batch_size=16, max_epochs=30, patience=29, seed=0, lr=3e-3, n_bin=16)
        tr, va, te = make_batches(*pair_data, cfg)
        _, hist = train(build_cnn(2, 0), tr, va, cfg)
        assert max(hist.val_accuracy) > 0.95

    def test_patience_zero(self, pair_data):
        cfg = TrainConfig(batch_size=16, max_epochs=30, patience=0, seed=0, lr=1e-4, n_bin=16)
        tr, va, _ = make_batches(*pair_data, cfg)
        _, hist = train(build_cnn(2, 0), tr, va, cfg)
        n = len(hist.val_accuracy)
        # stops on the first epoch that fails to improve on the best so far
        assert n == 30 or (hist.stopped_early and hist.val_accuracy[-1] <= max(hist.val_accuracy[:-1]))
        assert all(b > a for a, b in zip(hist.val_accuracy[:-2], hist.val_accuracy[1:-1]))

    def test_restores_best(self, pair_data):
        cfg = TrainConfig(batch_size=16, max_epochs=6, patience=5, seed=1, lr=3e-3, n_bin=16)
        tr, va, _ = make_batches(*pair_data, cfg)
        m, hist = train(build_rnn(2, 1), tr, va, cfg)
        pred, lab, _ = evaluate_batches(m, va)
        assert (pred == lab).mean() == max(hist.val_accuracy) == hist.val_accuracy[hist.best_epoch]

    def test_deterministic(self, pair_data):
        cfg = TrainConfig(batch_size=16, max_epochs=3, patience=2, seed=4, lr=3e-3, n_bin=32)
        tr, va, _ = make_batches(*pair_data, cfg)
        h1 = train(build_cnn(2, 4), tr, va, cfg)[1]
        h2 = train(build_cnn(2, 4), tr, va, cfg)[1]
        assert h1.to_dict() == h2.to_dict()

    def test_non_finite_loss(self, pair_data):
        from geomclass.models import TrainingError
        cfg = TrainConfig(batch_size=16, max_epochs=2, patience=1, n_bin=16)
        tr, va, _ = make_batches(*pair_data, cfg)
        m = build_cnn(2)
        m.head.b.data[:] = np.nan
        with pytest.raises(TrainingError, match="epoch 0"):
            train(m, tr, va, cfg)

    def test_exact_length_batches_have_no_padding(self, pair_data):
        for b in exact_length_batches(pair_data[0], 8):
            assert np.all(b.lengths == b.m_bin)

    def test_evaluation_independent_of_batching(self, pair_data):
        m = build_cnn(2, 2)

        def by_id(batch_size):
            return {i: p for b in exact_length_batches(pair_data[2], batch_size)
                    for i, p in zip(b.ids, m.predict(b.x, b.lengths))}

        assert by_id(4) == by_id(64)


class TestRepeatedRuns:
    def test_format(self):
        assert format_mean_std([0.622, 0.626]) == "0.624 ± 0.002"

    def test_identical_seeds_zero_std(self, pair_data):
        cfg = TrainConfig(batch_size=16, max_epochs=2, patience=1, n_bin=16)
        data = make_batches(*pair_data, cfg)
        mean, std, runs = repeated_runs(lambda s: build_cnn(2, s), data, cfg, repeats=2, seeds=[3, 3])
        assert std == 0.0 and runs[0].test_accuracy == runs[1].test_accuracy == mean

    def test_needs_two(self, pair_data):
        with pytest.raises(ValueError):
            repeated_runs(build_cnn, None, TrainConfig(), repeats=1)
