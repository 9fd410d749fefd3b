import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mmwave_geometry.dataset import SynthConfig, normalize_counters, split, synth_generate, synth_heldout
from mmwave_geometry.errors import InputError, LabelError
from mmwave_geometry.evaluation import (
    ANGLE_NAMES, DISTANCE_NAMES, MISSING, REFERENCE_ACCURACY, TABLE_FIELDS, UNIT_SAMPLE, UNIT_WINDOW, ConfusionMatrix,
    EvalReport, Predictions, angle_confusion, confusion, distance_confusion, heldout_probe, merge_reports,
    per_distance_angle_eval, percent, predict_kitsune, predict_lstm, read_confusion_csv, read_table_csv,
    sum_strata, table_csv, table_markdown, table_report, table_rows,
)
from mmwave_geometry.features import apply, fit_pipeline
from mmwave_geometry.kitsune import (
    KitsuneConfig, distance_calibration, ensemble_train, fit_distance_regression, train_angle_by_distance,
)
from mmwave_geometry.lstm import LstmConfig, MultiheadModel, make_windows, train


def report(model, feats, dist_correct=None, dist_total=None, ang_correct=None, ang_total=None, unit=UNIT_SAMPLE):
    def cm(correct, total, n):
        if correct is None:
            return None
        counts = np.zeros((n, n), dtype=int)
        counts[0, 0] = correct
        counts[0, 1] = total - correct
        return ConfusionMatrix(tuple(range(n)), counts)
    return EvalReport(model, feats, unit, cm(dist_correct, dist_total, 5), cm(ang_correct, ang_total, 4))


def preds_from(distance, angle, pred_angle):
    d = np.asarray(distance)
    return Predictions(d, np.asarray(angle), d.copy(), np.asarray(pred_angle), UNIT_SAMPLE)


class TestConfusion:
    def test_hand_count(self):
        cm = confusion(["A", "A", "B"], ["A", "B", "B"], ["A", "B"])
        assert cm.counts.tolist() == [[1, 0], [1, 1]]
        assert cm.accuracy == pytest.approx(2 / 3)

    @given(st.lists(st.tuples(st.integers(0, 4), st.integers(0, 4)), min_size=1, max_size=200))
    def test_rows_sum_to_support(self, pairs):
        truth = [t for t, _ in pairs]
        preds = [p for _, p in pairs]
        cm = distance_confusion(preds, truth)
        assert cm.support.tolist() == np.bincount(truth, minlength=5).tolist()
        assert cm.counts.sum(axis=0).tolist() == np.bincount(preds, minlength=5).tolist()
        assert cm.correct == sum(t == p for t, p in pairs)
        assert cm.accuracy == cm.correct / cm.total

    def test_unknown_labels(self):
        with pytest.raises(LabelError):
            confusion(["A"], ["C"], ["A", "B"])
        with pytest.raises(LabelError):
            angle_confusion([7], [0])

    def test_length_mismatch(self):
        with pytest.raises(InputError):
            confusion([0, 1], [0], [0, 1])

    def test_invalid_counts(self):
        with pytest.raises(InputError):
            ConfusionMatrix((0, 1), np.array([[1, -1], [0, 0]]))
        with pytest.raises(InputError):
            ConfusionMatrix((0, 1), np.zeros((3, 3)))

    def test_empty_matrix_accuracy_undefined(self):
        cm = confusion([], [], [0, 1])
        assert cm.total == 0 and np.isnan(cm.accuracy)
        assert percent(cm) == MISSING

    def test_embed(self):
        cm = confusion([2, 0], [2, 2], [0, 2])
        big = cm.embed(range(4))
        assert big.counts.tolist() == [[0, 0, 0, 0], [0, 0, 0, 0], [1, 0, 1, 0], [0, 0, 0, 0]]
        with pytest.raises(LabelError):
            cm.embed([0, 1])

    def test_csv_round_trip(self, tmp_path):
        cm = distance_confusion([0, 1, 1, 4], [0, 1, 2, 4])
        path = tmp_path / "cm.csv"
        cm.write_csv(path)
        names, counts = read_confusion_csv(path)
        assert names == list(DISTANCE_NAMES) and np.array_equal(counts, cm.counts)
        assert path.read_text().splitlines()[0] == "truth\\predicted,10ft,20ft,30ft,40ft,50ft"

    def test_dict_round_trip(self):
        cm = angle_confusion([0, 3, 3], [0, 3, 1])
        back = ConfusionMatrix.from_dict(cm.to_dict())
        assert back.names == ANGLE_NAMES and np.array_equal(back.counts, cm.counts)

    def test_counts_are_read_only(self):
        cm = confusion([0], [0], [0])
        with pytest.raises(ValueError):
            cm.counts[0, 0] = 5


class TestPercent:
    @pytest.mark.parametrize("correct,total,text", [(1, 3, "33.3"), (2, 3, "66.7"), (1, 8, "12.5"), (1, 16, "6.3"),
                                                    (1, 2000, "0.1"), (0, 5, "0.0"), (5, 5, "100.0"),
                                                    (987, 1000, "98.7")])
    def test_rounding(self, correct, total, text):
        assert percent(report("K", "E", correct, total).distance) == text

    def test_missing(self):
        assert percent(None) == MISSING


class TestTable:
    def test_nine_rows_fixed_order(self):
        rows = table_rows([])
        assert [(r.model, r.features) for r in rows] == list(REFERENCE_ACCURACY)
        assert all(r.distance_pct == MISSING and r.angle_pct == MISSING for r in rows)

    def test_reference_values_carried(self):
        rows = {(r.model, r.features): r for r in table_rows([])}
        for key, (d, a) in REFERENCE_ACCURACY.items():
            assert (float(rows[key].ref_distance_pct), float(rows[key].ref_angle_pct)) == (d, a)
        assert rows["Multihead", "PCA"].ref_distance_pct == "98.7"
        assert rows["Kitsune", "Empirical"].ref_angle_pct == "49.2"

    def test_cells_filled_from_reports(self):
        reps = [report("Multihead", "PCA", 97, 100, 49, 50, unit=UNIT_WINDOW), report("Kitsune", "MRMR", 1, 3)]
        rows = {(r.model, r.features): r for r in table_rows(reps)}
        mh = rows["Multihead", "PCA"]
        assert (mh.distance_pct, mh.angle_pct, mh.unit) == ("97.0", "98.0", UNIT_WINDOW)
        assert (mh.distance_correct, mh.distance_total, mh.angle_correct, mh.angle_total) == ("97", "100", "49", "50")
        k = rows["Kitsune", "MRMR"]
        assert (k.distance_pct, k.angle_pct, k.angle_total) == ("33.3", MISSING, MISSING)

    def test_extra_cells_after_the_nine(self):
        rows = table_rows([report("Kitsune", "Full", 1, 2)])
        assert len(rows) == 10 and (rows[-1].model, rows[-1].features) == ("Kitsune", "Full")
        assert rows[-1].ref_distance_pct == MISSING

    def test_distance_and_angle_reports_merge(self):
        merged = merge_reports([report("Kitsune", "PCA", 1, 2), report("Kitsune", "PCA", ang_correct=3, ang_total=4)])
        assert len(merged) == 1 and merged[0].distance.total == 2 and merged[0].angle.total == 4
        with pytest.raises(InputError):
            merge_reports([report("Kitsune", "PCA", 1, 2), report("Kitsune", "PCA", 1, 2)])
        with pytest.raises(InputError):
            report("Kitsune", "PCA", 1, 2).merge(report("Kitsune", "MRMR", ang_correct=1, ang_total=2))

    def test_csv_round_trip(self):
        rows = table_rows([report("Multiclass", "Empirical", 5, 7, 6, 7, unit=UNIT_WINDOW)])
        text = table_csv(rows)
        assert text.splitlines()[0] == ",".join(TABLE_FIELDS)
        assert read_table_csv(text) == rows

    def test_markdown(self):
        md, csv_text = table_report([report("Multihead", "MRMR", 9, 10)], {"seed": 3})
        lines = md.splitlines()
        assert "- seed: 3" in lines
        body = [ln for ln in lines if ln.startswith("| ") and not ln.startswith("| Model")]
        assert len(body) == 9
        assert "| Multihead | MRMR | 90.0 | — | 88.5 | 92.4 | sample |" in lines
        assert md == table_markdown(read_table_csv(csv_text), {"seed": 3})

    def test_report_dict_round_trip(self):
        r = report("Multihead", "PCA", 3, 4, 1, 4)
        r.metadata["seed"] = 1
        back = EvalReport.from_dict(r.to_dict())
        assert back.to_dict() == r.to_dict()


class TestStrata:
    def test_five_strata_sum_to_global(self):
        r = np.random.default_rng(0)
        d = np.repeat(np.arange(5), 40)
        a = r.integers(0, 4, 200)
        pa = np.where(r.random(200) < 0.7, a, r.integers(0, 4, 200))
        strata = per_distance_angle_eval(preds_from(d, a, pa))
        assert sorted(strata) == [0, 1, 2, 3, 4]
        assert np.array_equal(sum_strata(strata).counts, angle_confusion(pa, a).counts)
        assert sum(cm.total for cm in strata.values()) == 200

    def test_single_angle_stratum_is_one_by_one(self):
        d = [0, 0, 0, 1, 1]
        strata = per_distance_angle_eval(preds_from(d + [2, 3, 4], [2, 2, 2, 0, 1, 0, 0, 0], [2, 2, 2, 0, 0, 0, 0, 0]))
        assert strata[0].classes == (2,) and strata[0].counts.tolist() == [[3]]
        assert strata[0].names == ("90deg",)
        assert strata[1].counts.tolist() == [[1, 0], [1, 0]]

    def test_empty_stratum_warns(self):
        d = [0, 1, 2, 4]
        with pytest.warns(RuntimeWarning, match="40ft"):
            strata = per_distance_angle_eval(preds_from(d, [0, 1, 2, 3], [0, 1, 2, 3]))
        assert sorted(strata) == [0, 1, 2, 4]

    def test_needs_angle_predictions(self):
        p = Predictions(np.zeros(2, int), np.zeros(2, int), np.zeros(2, int), None, UNIT_SAMPLE)
        with pytest.raises(InputError):
            per_distance_angle_eval(p)

    @given(st.lists(st.tuples(st.integers(0, 4), st.integers(0, 3), st.integers(0, 3)), min_size=1, max_size=120))
    def test_aggregation_property(self, triples):
        d, a, pa = (np.array(c) for c in zip(*triples))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            strata = per_distance_angle_eval(preds_from(d, a, pa))
        assert np.array_equal(sum_strata(strata).counts, angle_confusion(pa, a).counts)


@pytest.fixture(scope="module")
def trained():
    cfg = SynthConfig(rows_per_class=150)
    data = normalize_counters(synth_generate(cfg, 5))
    tr, te = split(data, 0.3, 5)
    pipe = fit_pipeline("empirical", tr)
    return cfg, pipe, apply(pipe, tr), apply(pipe, te)


class TestStrataOnTrainedModel:
    @pytest.mark.filterwarnings("ignore:skipped:RuntimeWarning")
    def test_high_separation_near_diagonal(self, desk_split):
        tr, te = desk_split
        pipe = fit_pipeline("pca", tr)
        cfg = LstmConfig(hidden=32, epochs=20, seed=3)
        model, _ = train("multihead", make_windows(apply(pipe, tr), cfg.window, cfg.stride), cfg)
        strata = per_distance_angle_eval(predict_lstm(model, apply(pipe, te), cfg.window, cfg.stride))
        assert sorted(strata) == [0, 1, 2, 3, 4]
        for cm in strata.values():
            assert cm.classes == (0, 1, 2, 3)
            assert cm.accuracy >= 0.9


class TestPredictions:
    def test_joint_split_into_tasks(self, trained):
        _, _, Ftr, Fte = trained
        ens = ensemble_train(Ftr.X, Ftr.joint, KitsuneConfig(fm_prefix=100), target="joint")
        p = predict_kitsune(ens, Fte)
        joint = ens.classify_batch(Fte.X)[0]
        assert np.array_equal(p.pred_distance, joint // 4) and np.array_equal(p.pred_angle, joint % 4)
        assert p.unit == UNIT_SAMPLE and len(p.distance) == len(Fte)

    def test_single_task_ensembles(self, trained):
        _, _, Ftr, Fte = trained
        dist = predict_kitsune(ensemble_train(Ftr.X, Ftr.distance, KitsuneConfig(fm_prefix=100), target="distance"),
                               Fte)
        assert dist.pred_angle is None and dist.pred_distance is not None
        abd = predict_kitsune(train_angle_by_distance(Ftr.X, Ftr.distance, Ftr.angle, KitsuneConfig(fm_prefix=50)),
                              Fte)
        assert abd.pred_distance is None and len(abd.pred_angle) == len(Fte)
        rep = EvalReport.from_predictions("Kitsune", "Empirical", dist).merge(
            EvalReport.from_predictions("Kitsune", "Empirical", abd))
        assert rep.distance.total == rep.angle.total == len(Fte)

    def test_lstm_per_window(self, trained):
        _, _, _, Fte = trained
        model = MultiheadModel(Fte.X.shape[1], 4)
        p = predict_lstm(model, Fte, 20, 5)
        assert p.unit == UNIT_WINDOW and len(p.pred_distance) == len(p.distance) < len(Fte)
        with pytest.warns(RuntimeWarning), pytest.raises(InputError):
            predict_lstm(model, Fte, 10_000, 1)


class TestHeldoutProbe:
    def test_predictions_land_on_neighbours(self):
        cfg = SynthConfig(rows_per_class=250)
        tr, _ = split(normalize_counters(synth_generate(cfg, 5)), 0.3, 5)
        pipe = fit_pipeline("empirical", tr)
        Ftr = apply(pipe, tr)
        ens = ensemble_train(Ftr.X, Ftr.distance, KitsuneConfig(fm_prefix=100), target="distance")
        Fh = apply(pipe, normalize_counters(synth_heldout(cfg, 11)))
        reg = fit_distance_regression(distance_calibration(ens.models[0], Ftr.X, (Ftr.distance + 1) * 10.0))
        results = heldout_probe(ens, Fh, regression=reg)
        assert [r.distance_ft for r in results] == [25.0, 35.0]
        for r, near in zip(results, (("20ft", "30ft"), ("30ft", "40ft"))):
            assert sum(r.histogram.values()) == r.n
            assert (r.histogram[near[0]] + r.histogram[near[1]]) / r.n > 0.9
            assert r.regression_distance_ft == pytest.approx(reg.predict(r.mean_rmse))
            assert 10.0 <= r.regression_distance_ft <= 50.0
        assert sum(r.n for r in results) == len(Fh)

    def test_requires_distances(self, trained):
        _, _, Ftr, Fte = trained
        ens = ensemble_train(Ftr.X, Ftr.distance, KitsuneConfig(fm_prefix=100), target="distance")
        with pytest.raises(InputError):
            heldout_probe(ens, Fte)
