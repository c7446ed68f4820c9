import numpy as np
import pytest

from cdfl.data import (
    CAPACITY_MAX,
    CAPACITY_MIN,
    LAYER_NAMES,
    Dataset,
    MultiTaskModel,
    Standardizer,
    TaskMetrics,
    dirichlet_partition,
    dump_csv,
    evaluate,
    generate_dataset,
    load_csv,
    local_train,
    train_test_split,
)
from cdfl.errors import ConfigError, TrainingError
from cdfl.rng import RngHub


def dataset(n=1000, seed=42):
    return generate_dataset(n, RngHub(seed).stream("data"))


class TestGenerator:
    def test_deterministic(self):
        a = dataset()
        b = dataset()
        assert np.array_equal(a.features, b.features)
        assert np.array_equal(a.capacity, b.capacity)

    def test_anomaly_rate_monte_carlo(self):
        d = generate_dataset(10_000, RngHub(1).stream("data"))
        rate = float(np.mean(d.anomaly))
        assert 0.15 <= rate <= 0.25

    def test_capacity_within_published_range(self):
        d = generate_dataset(10_000, RngHub(2).stream("data"))
        assert d.capacity.min() >= CAPACITY_MIN
        assert d.capacity.max() <= CAPACITY_MAX

    def test_learnable_by_logistic_model(self):
        from sklearn.linear_model import LogisticRegression

        d = generate_dataset(4000, RngHub(3).stream("data"))
        train, test = train_test_split(d, 0.25, RngHub(3).stream("split"))
        clf = LogisticRegression(max_iter=1000).fit(train.features, train.anomaly)
        assert clf.score(test.features, test.anomaly) >= 0.9


class TestPartition:
    def test_disjoint_cover(self):
        d = dataset(2000)
        parts = dirichlet_partition(d, 42, 0.8, RngHub(4).stream("part"))
        assert len(parts) == 42
        assert sum(len(p.data) for p in parts) == len(d)
        assert all(len(p.data) >= 10 for p in parts)

    def test_high_concentration_approaches_global_ratio(self):
        d = dataset(40_000, seed=5)
        parts = dirichlet_partition(d, 10, 1e6, RngHub(5).stream("part"))
        global_rate = float(np.mean(d.anomaly))
        for p in parts:
            assert float(np.mean(p.data.anomaly)) == pytest.approx(global_rate, abs=0.05)

    def test_too_small_dataset_rejected(self):
        d = dataset(50)
        with pytest.raises(ConfigError):
            dirichlet_partition(d, 20, 0.8, RngHub(6).stream("part"))

    def test_low_alpha_skews_labels(self):
        d = dataset(6000, seed=7)
        parts = dirichlet_partition(d, 12, 0.3, RngHub(7).stream("part"))
        rates = [float(np.mean(p.data.anomaly)) for p in parts]
        assert max(rates) - min(rates) > 0.2  # visible heterogeneity


class TestStandardizer:
    def test_round_trip(self):
        v = RngHub(8).stream("std").normal(30, 5, size=500)
        s = Standardizer.fit(v)
        assert np.allclose(s.inverse(s.transform(v)), v, atol=1e-9)


class TestModel:
    def test_delta_round_trip(self):
        m = MultiTaskModel.init(16, RngHub(9).stream("init"))
        back = MultiTaskModel.from_delta(m.to_delta(), 16)
        for k in LAYER_NAMES:
            assert np.array_equal(m.params[k], back.params[k])

    def test_gradients_match_finite_differences(self):
        rng = RngHub(10).stream("grad")
        m = MultiTaskModel.init(8, rng)
        x = rng.normal(size=(40, 8))
        y_cls = (rng.random(40) < 0.4).astype(np.float64)
        y_reg = rng.normal(size=40)
        ref = MultiTaskModel.init(8, RngHub(11).stream("ref"))
        grads = m.gradients(x, y_cls, y_reg, ref.params, mu=0.2)
        eps = 1e-6
        # 20 random coordinates across the whole parameter vector.
        coords = []
        for k in LAYER_NAMES:
            coords.extend((k, i) for i in range(m.params[k].size))
        picks = rng.choice(len(coords), size=20, replace=False)
        for pick in picks:
            k, idx = coords[int(pick)]
            flat = m.params[k].ravel()
            orig = flat[idx]
            flat[idx] = orig + eps
            up = m.loss(x, y_cls, y_reg, ref.params, 0.2)
            flat[idx] = orig - eps
            down = m.loss(x, y_cls, y_reg, ref.params, 0.2)
            flat[idx] = orig
            numeric = (up - down) / (2 * eps)
            analytic = grads[k].ravel()[idx]
            denom = max(abs(numeric), abs(analytic), 1e-8)
            assert abs(numeric - analytic) / denom < 1e-4


class TestLocalTrain:
    def setup_method(self):
        self.data = dataset(600, seed=12)
        self.std = Standardizer.fit(self.data.capacity)
        self.model = MultiTaskModel.init(16, RngHub(12).stream("init"))

    def test_zero_epochs_rejected(self):
        with pytest.raises(TrainingError):
            local_train(self.model, self.data, self.std, 0, 32, 0.01, 0.0, RngHub(12).stream("t"))

    def test_empty_partition_rejected(self):
        empty = Dataset(np.zeros((0, 8)), np.zeros(0, dtype=np.int64), np.zeros(0))
        with pytest.raises(TrainingError):
            local_train(self.model, empty, self.std, 1, 32, 0.01, 0.0, RngHub(12).stream("t"))

    def test_huge_mu_shrinks_update(self):
        # Learning rate small enough that lr*mu stays in the stable regime.
        delta_free, _ = local_train(
            self.model, self.data, self.std, 3, 32, 1e-7, 0.0, RngHub(13).stream("a")
        )
        delta_tied, _ = local_train(
            self.model, self.data, self.std, 3, 32, 1e-7, 1e6, RngHub(13).stream("a")
        )
        from cdfl.core import flatten, l2_norm

        assert l2_norm(flatten(delta_tied)) < l2_norm(flatten(delta_free))

    def test_full_batch_loss_monotone(self):
        _, losses = local_train(
            self.model, self.data, self.std, 20, len(self.data), 0.05, 0.0,
            RngHub(14).stream("mono"),
        )
        assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))

    def test_deterministic(self):
        d1, _ = local_train(self.model, self.data, self.std, 2, 32, 0.01, 0.2, RngHub(15).stream("x"))
        d2, _ = local_train(self.model, self.data, self.std, 2, 32, 0.01, 0.2, RngHub(15).stream("x"))
        assert d1 == d2


class TestEvaluate:
    def test_perfect_predictor(self):
        d = dataset(400, seed=16)
        std = Standardizer.fit(d.capacity)

        class Perfect(MultiTaskModel):
            def predict(self, x):
                return d.anomaly.astype(np.float64), std.transform(d.capacity)

        m = Perfect({}, 0)
        metrics = evaluate(m, d, std)
        assert metrics.accuracy == metrics.precision == metrics.recall == metrics.f1 == 1.0
        assert metrics.mae == metrics.mse == metrics.rmse == 0.0

    def test_constant_majority_predictor(self):
        feats = np.zeros((100, 8))
        anomaly = np.array([1] * 20 + [0] * 80)
        d = Dataset(feats, anomaly, np.full(100, 37.0))
        std = Standardizer.fit(d.capacity)

        class AlwaysNormal(MultiTaskModel):
            def predict(self, x):
                return np.zeros(len(x)), std.transform(d.capacity)

        metrics = evaluate(AlwaysNormal({}, 0), d, std)
        assert metrics.accuracy == pytest.approx(0.8)
        assert metrics.recall == 0.0
        assert metrics.f1 == 0.0

    def test_matches_confusion_matrix_oracle(self):
        rng = RngHub(17).stream("conf")
        n = 200
        truth = (rng.random(n) < 0.3).astype(np.int64)
        prob = rng.random(n)
        reg = rng.normal(37.0, 2.0, size=n)
        d = Dataset(np.zeros((n, 8)), truth, rng.normal(37.0, 2.0, size=n))
        std = Standardizer(mean=0.0, std=1.0)

        class Fixed(MultiTaskModel):
            def predict(self, x):
                return prob, reg

        metrics = evaluate(Fixed({}, 0), d, std)
        # Brute-force confusion matrix.
        pred = (prob >= 0.5).astype(np.int64)
        tp = sum(1 for p, t in zip(pred, truth) if p == 1 and t == 1)
        fp = sum(1 for p, t in zip(pred, truth) if p == 1 and t == 0)
        fn = sum(1 for p, t in zip(pred, truth) if p == 0 and t == 1)
        tn = sum(1 for p, t in zip(pred, truth) if p == 0 and t == 0)
        assert metrics.accuracy == pytest.approx((tp + tn) / n)
        prec = tp / (tp + fp)
        rec = tp / (tp + fn)
        assert metrics.precision == pytest.approx(prec)
        assert metrics.recall == pytest.approx(rec)
        assert metrics.f1 == pytest.approx(2 * prec * rec / (prec + rec))
        errs = [p - t for p, t in zip(reg, d.capacity)]
        assert metrics.mae == pytest.approx(float(np.mean(np.abs(errs))))
        assert metrics.rmse == pytest.approx(float(np.sqrt(np.mean(np.square(errs)))))


def test_csv_round_trip(tmp_path):
    d = dataset(120, seed=18)
    path = tmp_path / "data.csv"
    dump_csv(d, path)
    back = load_csv(path)
    assert np.array_equal(back.features, d.features)
    assert np.array_equal(back.anomaly, d.anomaly)
    assert np.array_equal(back.capacity, d.capacity)
