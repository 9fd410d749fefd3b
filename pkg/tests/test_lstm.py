import csv
import json
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mmwave_geometry.errors import InputError, ParameterError, TrainingError
from mmwave_geometry.features import FeatureMatrix
from mmwave_geometry.lstm import (
    LstmConfig, MulticlassModel, MultiheadModel, SequenceModel, Windows, make_windows, save_model, sigmoid, softmax,
    train,
)


def feature_matrix(lengths, k=3, seed=0, labels=True):
    r = np.random.default_rng(seed)
    caps = np.concatenate([[f"c{i}"] * n for i, n in enumerate(lengths)]) if lengths else np.zeros(0, dtype=object)
    n = int(sum(lengths))
    X = r.normal(size=(n, k))
    d = np.concatenate([[i % 5] * m for i, m in enumerate(lengths)]).astype(int) if labels else None
    a = np.concatenate([[i % 4] * m for i, m in enumerate(lengths)]).astype(int) if labels else None
    return FeatureMatrix(X, caps, tuple(f"f{j}" for j in range(k)), d, a)


def toy_windows(n_per_class=6, L=4, k=3, seed=0):
    """Windows whose mean level encodes the class pair, so they are easy to learn."""
    r = np.random.default_rng(seed)
    X, d, a = [], [], []
    for di in range(5):
        for ai in range(4):
            level = np.array([di, ai, di - ai], dtype=float)[:k]
            X.append(level + 0.1 * r.normal(size=(n_per_class, L, k)))
            d += [di] * n_per_class
            a += [ai] * n_per_class
    X = np.concatenate(X)
    return Windows(X, np.arange(len(X)).astype(str).astype(object), np.array(d), np.array(a))


class TestWindows:
    @pytest.mark.parametrize("n,L,stride,expected", [(10, 10, 1, 1), (12, 10, 1, 3), (30, 10, 5, 5), (29, 10, 5, 4),
                                                     (10, 1, 1, 10)])
    def test_count(self, n, L, stride, expected):
        w = make_windows(feature_matrix([n]), L, stride)
        assert len(w) == expected == (n - L) // stride + 1

    def test_short_capture_skipped(self):
        with pytest.warns(RuntimeWarning, match="shorter"):
            w = make_windows(feature_matrix([5, 12]), 10, 1)
        assert len(w) == 3 and set(w.capture_ids) == {"c1"}

    def test_all_short_gives_empty(self):
        with pytest.warns(RuntimeWarning):
            w = make_windows(feature_matrix([3]), 10, 1)
        assert len(w) == 0 and w.X.shape == (0, 10, 3)

    @given(st.lists(st.integers(1, 25), min_size=1, max_size=6), st.integers(1, 8), st.integers(1, 4))
    def test_windows_stay_inside_captures(self, lengths, L, stride):
        fm = feature_matrix(lengths)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            w = make_windows(fm, L, stride)
        assert len(w) == sum((n - L) // stride + 1 for n in lengths if n >= L)
        for win, cap in zip(w.X, w.capture_ids):
            rows = fm.X[fm.capture_ids == cap]
            # every window must be a contiguous run of its own capture's rows
            assert any(np.array_equal(rows[s:s + L], win) for s in range(len(rows) - L + 1))

    def test_labels_follow_windows(self):
        w = make_windows(feature_matrix([12, 12]), 10, 1)
        assert w.distance.tolist() == [0, 0, 0, 1, 1, 1]
        assert w.angle.tolist() == [0, 0, 0, 1, 1, 1]

    def test_unlabelled_keeps_none(self):
        w = make_windows(feature_matrix([12], labels=False), 10, 1)
        assert w.distance is None and w.angle is None

    def test_invalid(self):
        with pytest.raises(ParameterError):
            make_windows(feature_matrix([12]), 0, 1)


class TestCell:
    def test_zero_weights_zero_state(self):
        m = MultiheadModel(3, 5)
        for k in m.params:
            m.params[k][:] = 0.0
        h, _ = m.trunk_forward(np.random.default_rng(0).normal(size=(4, 6, 3)))
        assert np.array_equal(h, np.zeros((4, 5)))

    def test_single_step_matches_cell_equations(self):
        m = MulticlassModel(3, 4, np.random.default_rng(2))
        x = np.random.default_rng(3).normal(size=3)
        H = 4
        a = m.params["W"] @ np.concatenate([x, np.zeros(H)]) + m.params["b"]
        i, f, g, o = (1 / (1 + np.exp(-a[:H])), 1 / (1 + np.exp(-a[H:2 * H])), np.tanh(a[2 * H:3 * H]),
                      1 / (1 + np.exp(-a[3 * H:])))
        c = f * 0.0 + i * g
        h_expected = o * np.tanh(c)
        h, _ = m.trunk_forward(x[None, None, :])
        assert np.allclose(h[0], h_expected, atol=1e-14)

    def test_zero_heads_predict_first_classes(self):
        for cls in (MulticlassModel, MultiheadModel):
            m = cls(3, 4, np.random.default_rng(0))
            for k in m.params:
                if k.startswith(("V", "c")):
                    m.params[k][:] = 0.0
            d, a, _ = m.predict(np.random.default_rng(1).normal(size=(5, 3, 3)))
            assert d.tolist() == [0] * 5 and a.tolist() == [0] * 5

    def test_forget_bias_initialised_to_one(self):
        m = MultiheadModel(2, 3)
        assert m.params["b"].tolist() == [0.0] * 3 + [1.0] * 3 + [0.0] * 6

    @given(st.integers(0, 2**32 - 1), st.floats(0.1, 20))
    def test_output_ranges(self, seed, scale):
        r = np.random.default_rng(seed)
        X = r.normal(0, scale, size=(6, 4, 3))
        head = MultiheadModel(3, 5, r)
        for k in head.params:
            head.params[k] *= scale
        p = head.probabilities(X)
        assert np.allclose(p["distance"].sum(axis=1), 1.0, atol=1e-6)
        assert np.allclose(p["angle"].sum(axis=1), 1.0, atol=1e-6)
        mc = MulticlassModel(3, 5, r).probabilities(X)["multiclass"]
        assert mc.shape == (6, 9) and np.all((mc >= 0) & (mc <= 1))

    def test_activation_helpers(self):
        assert sigmoid(np.array([0.0]))[0] == 0.5
        assert np.allclose(softmax(np.array([[1000.0, 1000.0]])), 0.5)

    def test_multiclass_argmax_per_group(self):
        m = MulticlassModel(2, 2)
        for k in m.params:
            m.params[k][:] = 0.0
        m.params["c"][:] = [0, 0, 3, 0, 0, 0, 1, 0, 0]
        d, a, _ = m.predict(np.zeros((1, 2, 2)))
        assert (d[0], a[0]) == (2, 1)

    def test_bad_input(self):
        m = MultiheadModel(3, 4)
        with pytest.raises(InputError):
            m.predict(np.zeros((2, 4, 5)))
        X = np.zeros((1, 4, 3))
        X[0, 1, 1] = np.inf
        with pytest.raises(InputError):
            m.predict(X)


class TestGradients:
    @pytest.mark.parametrize("cls", [MulticlassModel, MultiheadModel])
    def test_analytic_matches_numeric(self, cls):
        r = np.random.default_rng(5)
        m = cls(3, 4, r)
        X = r.normal(size=(3, 4, 3))
        d, a = r.integers(0, 5, 3), r.integers(0, 4, 3)
        _, grads = m.loss_and_grads(X, d, a)
        for k, P in m.params.items():
            for idx in list(np.ndindex(P.shape))[::3]:
                old = P[idx]
                P[idx] = old + 1e-5
                up = m.loss(X, d, a)
                P[idx] = old - 1e-5
                down = m.loss(X, d, a)
                P[idx] = old
                assert grads[k][idx] == pytest.approx((up - down) / 2e-5, rel=1e-4, abs=1e-8)


class TestTraining:
    @pytest.mark.parametrize("arch", ["multiclass", "multihead"])
    def test_single_window_memorised(self, arch):
        r = np.random.default_rng(0)
        w = Windows(np.repeat(r.normal(size=(1, 5, 3)), 8, axis=0), np.array(["c"] * 8, dtype=object),
                    np.full(8, 3), np.full(8, 2))
        cfg = LstmConfig(hidden=8, epochs=200, batch=8, learning_rate=0.01)
        model, log = train(arch, w, cfg)
        assert min(log.train_loss) < 0.05
        d, a, _ = model.predict(w.X[:1])
        assert (d[0], a[0]) == (3, 2)

    @pytest.mark.parametrize("arch", ["multiclass", "multihead"])
    def test_loss_decreases(self, arch):
        w = toy_windows()
        _, log = train(arch, w, LstmConfig(hidden=8, epochs=15, batch=16, learning_rate=0.01))
        loss = log.train_loss
        assert loss[10] < loss[0]
        # smoothed over 5-epoch spans the trend is downward
        spans = [np.mean(loss[i:i + 5]) for i in range(0, 15, 5)]
        assert spans[-1] < spans[0]

    def test_learns_toy_problem(self):
        w = toy_windows(n_per_class=10)
        model, _ = train("multihead", w, LstmConfig(hidden=16, epochs=40, batch=16, learning_rate=0.01))
        d, a, _ = model.predict(w.X)
        assert np.mean(d == w.distance) > 0.9 and np.mean(a == w.angle) > 0.9

    def test_deterministic(self):
        w = toy_windows()
        cfg = LstmConfig(hidden=6, epochs=3, batch=16, seed=4)
        a, la = train("multihead", w, cfg)
        b, lb = train("multihead", w, cfg)
        assert la.train_loss == lb.train_loss
        assert a.to_dict() == b.to_dict()
        c, _ = train("multihead", w, LstmConfig(hidden=6, epochs=3, batch=16, seed=5))
        assert c.to_dict() != a.to_dict()

    def test_validation_log(self, tmp_path):
        w = toy_windows()
        _, log = train("multiclass", w, LstmConfig(hidden=6, epochs=3, batch=16), validation=w.take(slice(0, 20)))
        assert log.epoch == [0, 1, 2, 3]
        assert all(0 <= v <= 1 for v in log.val_distance_acc)
        path = tmp_path / "log.csv"
        log.write_csv(path)
        rows = list(csv.reader(path.open()))
        assert rows[0] == ["epoch", "train_loss", "val_distance_acc", "val_angle_acc"]
        assert len(rows) == 5 and float(rows[1][1]) == log.train_loss[0]

    def test_log_without_validation(self):
        _, log = train("multihead", toy_windows(), LstmConfig(hidden=4, epochs=1, batch=16))
        assert log.val_angle_acc == [None, None]

    def test_divergence_raises(self):
        # an infinite step drives the parameters to inf and the loss to NaN
        with np.errstate(all="ignore"), pytest.raises(TrainingError, match="epoch 1"):
            train("multihead", toy_windows(), LstmConfig(hidden=4, epochs=2, batch=16, learning_rate=float("inf")))

    def test_no_windows(self):
        empty = Windows(np.zeros((0, 4, 3)), np.zeros(0, dtype=object), np.zeros(0, int), np.zeros(0, int))
        with pytest.raises(TrainingError):
            train("multihead", empty, LstmConfig(hidden=4, epochs=1))

    def test_unknown_arch(self):
        with pytest.raises(ParameterError):
            train("gru", toy_windows(), LstmConfig(epochs=1))

    @pytest.mark.parametrize("arch", ["multiclass", "multihead"])
    def test_json_round_trip(self, arch, tmp_path):
        w = toy_windows()
        model, _ = train(arch, w, LstmConfig(hidden=5, epochs=2, batch=16))
        path = tmp_path / "m.json"
        save_model(model, path, {"note": 1})
        back = SequenceModel.from_dict(json.loads(path.read_text()))
        assert back.arch == arch
        for x, y in zip(back.predict(w.X)[:2], model.predict(w.X)[:2]):
            assert np.array_equal(x, y)
        with pytest.raises(InputError):
            SequenceModel.from_dict({"format": "other"})

    def test_heads(self):
        assert set(MultiheadModel(3, 4).params) == {"W", "b", "Vd", "cd", "Va", "ca"}
        assert MulticlassModel(3, 4).params["V"].shape == (9, 4)
