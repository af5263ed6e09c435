import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ubp.errors import UsageError
from ubp.evaluation import (ConfidenceCurve, bhs_grade, compute_report,
                            confidence_curve, mae, mase, mean_regressor,
                            pearson, subgroup_report, suc10, write_curve_csv,
                            write_metrics_csv, write_subgroup_csv)


class TestMae:
    def test_identical_is_zero(self):
        assert mae([1.0, 2.0], [1.0, 2.0]) == 0.0

    def test_hand_mean(self):
        assert mae([100.0, 120.0], [110.0, 110.0]) == 10.0

    def test_matches_elementwise_oracle(self):
        rng = np.random.default_rng(0)
        pred, truth = rng.normal(size=50), rng.normal(size=50)
        oracle = sum(abs(p - t) for p, t in zip(pred, truth)) / 50
        assert mae(pred, truth) == pytest.approx(oracle, rel=1e-12)

    def test_negation_invariance(self):
        rng = np.random.default_rng(1)
        pred, truth = rng.normal(size=20), rng.normal(size=20)
        assert mae(pred, truth) == pytest.approx(mae(-pred, -truth))

    def test_length_mismatch_rejected(self):
        with pytest.raises(UsageError):
            mae([1.0], [1.0, 2.0])


class TestPearson:
    def test_perfect_positive(self):
        x = np.array([1.0, 2.0, 4.0, 9.0])
        assert pearson(x, x) == pytest.approx(1.0)

    def test_perfect_negative(self):
        x = np.array([1.0, 2.0, 4.0, 9.0])
        assert pearson(-x, x) == pytest.approx(-1.0)

    def test_matches_two_pass_oracle(self):
        rng = np.random.default_rng(2)
        pred, truth = rng.normal(size=100), rng.normal(size=100)
        cov = np.mean((pred - pred.mean()) * (truth - truth.mean()))
        oracle = cov / (pred.std() * truth.std())
        assert pearson(pred, truth) == pytest.approx(oracle, abs=1e-12)

    def test_constant_prediction_flagged(self):
        corr = pearson(np.full(10, 5.0), np.arange(10.0))
        assert corr == 0.0
        assert corr.degenerate

    def test_constant_truth_rejected(self):
        with pytest.raises(UsageError):
            pearson(np.arange(10.0), np.full(10, 5.0))


class TestSuc10:
    def test_strictness_at_boundary(self):
        truth = np.zeros(4)
        pred = np.array([5.0, 15.0, 9.0, 10.0])   # errors 5, 15, 9, 10
        assert suc10(pred, truth) == 50.0

    def test_all_within(self):
        assert suc10(np.zeros(5), np.zeros(5)) == 100.0

    def test_none_within(self):
        assert suc10(np.full(5, 20.0), np.zeros(5)) == 0.0

    @given(st.integers(0, 2 ** 31 - 1))
    @settings(max_examples=50, deadline=None)
    def test_permutation_invariance(self, seed):
        rng = np.random.default_rng(seed)
        pred = rng.normal(120, 15, size=30)
        truth = rng.normal(120, 15, size=30)
        perm = rng.permutation(30)
        assert suc10(pred, truth) == suc10(pred[perm], truth[perm])


class TestMase:
    def test_reference_ratio_values(self):
        assert mase(11.05, 14.29) == pytest.approx(77.3, abs=0.05)
        assert mase(7.90, 9.85) == pytest.approx(80.2, abs=0.05)

    def test_equal_maes_give_100(self):
        assert mase(8.8, 8.8) == 100.0

    def test_zero_baseline_rejected(self):
        with pytest.raises(UsageError):
            mase(5.0, 0.0)


class TestBhsGrade:
    @pytest.mark.parametrize("value,grade", [
        (69.0, "C"), (82.9, "B"), (64.999, "D"), (85.0, "A"), (100.0, "A"),
        (75.0, "B"), (65.0, "C"), (0.0, "D"),
    ])
    def test_thresholds(self, value, grade):
        assert bhs_grade(value) == grade

    def test_monotone_in_suc10(self):
        order = {"D": 0, "C": 1, "B": 2, "A": 3}
        grades = [order[bhs_grade(v)] for v in np.linspace(0, 100, 400)]
        assert all(b >= a for a, b in zip(grades, grades[1:]))

    def test_out_of_range_rejected(self):
        with pytest.raises(UsageError):
            bhs_grade(101.0)


class TestMeanRegressor:
    def test_predicts_training_mean(self):
        reg = mean_regressor([100.0, 140.0])
        np.testing.assert_array_equal(reg.predict(3), [120.0, 120.0, 120.0])

    def test_suc10_equals_band_count(self):
        rng = np.random.default_rng(3)
        train = rng.normal(120, 10, size=50)
        test = rng.normal(120, 20, size=200)
        reg = mean_regressor(train)
        expected = 100 * np.mean(np.abs(reg.value - test) < 10)
        assert suc10(reg.predict(200), test) == pytest.approx(expected)

    def test_pearson_degenerate(self):
        reg = mean_regressor([100.0, 120.0])
        corr = pearson(reg.predict(10), np.arange(10.0) + 100)
        assert corr.degenerate

    def test_mase_against_itself_is_100(self):
        rng = np.random.default_rng(4)
        train = rng.normal(120, 10, size=30)
        test = rng.normal(118, 12, size=100)
        baseline_mae = mae(mean_regressor(train).predict(100), test)
        assert mase(baseline_mae, baseline_mae) == 100.0

    def test_empty_rejected(self):
        with pytest.raises(UsageError):
            mean_regressor([])


class TestConfidenceCurve:
    def test_full_fraction_equals_global_suc10(self):
        rng = np.random.default_rng(5)
        pred = rng.normal(120, 12, size=80)
        truth = rng.normal(120, 12, size=80)
        unc = rng.uniform(0, 1, size=80)
        curve = confidence_curve(pred, truth, unc)
        assert curve.fractions[-1] == 1.0
        assert curve.suc10[-1] == suc10(pred, truth)

    def test_error_equals_uncertainty_gives_monotone_curve(self):
        rng = np.random.default_rng(6)
        truth = rng.normal(120, 10, size=200)
        errors = rng.uniform(0, 25, size=200)
        pred = truth + errors * rng.choice([-1, 1], size=200)
        curve = confidence_curve(pred, truth, errors)
        assert all(b <= a + 1e-9 for a, b in zip(curve.suc10, curve.suc10[1:]))

    def test_single_element_flat(self):
        curve = confidence_curve([120.0], [121.0], [0.5], grid=(0.5, 1.0))
        assert curve.suc10 == (100.0, 100.0)

    def test_invalid_grid_rejected(self):
        with pytest.raises(UsageError):
            ConfidenceCurve(fractions=(0.5, 0.4), suc10=(1.0, 1.0))


class TestSubgroupReport:
    def test_single_group_equals_global(self):
        rng = np.random.default_rng(7)
        pred = rng.normal(120, 10, size=40)
        truth = rng.normal(120, 10, size=40)
        unc = rng.uniform(0, 1, size=40)
        report = subgroup_report(pred, truth, unc, ["only"] * 40)
        group_mae, group_unc = report["only"]
        assert group_mae == pytest.approx(mae(pred, truth))
        assert group_unc == pytest.approx(float(unc.mean()))

    def test_groups_split_correctly(self):
        pred = np.array([100.0, 130.0, 100.0, 130.0])
        truth = np.array([110.0, 120.0, 110.0, 120.0])
        unc = np.array([1.0, 2.0, 3.0, 4.0])
        labels = np.array(["a", "b", "a", "b"])
        report = subgroup_report(pred, truth, unc, labels)
        assert report["a"] == (10.0, 2.0)
        assert report["b"] == (10.0, 3.0)

    def test_unknown_label_rejected(self):
        with pytest.raises(UsageError):
            subgroup_report([1.0], [1.0], [0.1], ["mystery"], groups=["known"])

    def test_empty_group_rejected(self):
        with pytest.raises(UsageError):
            subgroup_report([1.0], [1.0], [0.1], ["a"], groups=["a", "empty"])


class TestComputeReport:
    def test_bundles_all_metrics(self):
        rng = np.random.default_rng(8)
        truth = rng.normal(120, 15, size=100)
        pred = truth + rng.normal(0, 5, size=100)
        baseline = mae(np.full(100, truth.mean()), truth)
        report = compute_report(pred, truth, baseline)
        assert report.mae == pytest.approx(mae(pred, truth))
        assert report.mase == pytest.approx(100 * report.mae / baseline)
        assert report.bhs == bhs_grade(report.suc10)


class TestCsvWriters:
    def test_metrics_csv_layout(self, tmp_path):
        rows = [{"fold": 0, "target": "sbp", "method": "rppg", "mae": 9.1234,
                 "corr": 0.5, "suc10": 61.0, "mase": 66.0, "bhs": "D"}]
        path = tmp_path / "metrics.csv"
        write_metrics_csv(rows, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "fold,target,method,mae,corr,suc10,mase,bhs"
        assert lines[1].startswith("0,sbp,rppg,9.1234,")

    def test_curve_csv_layout(self, tmp_path):
        curve = ConfidenceCurve(fractions=(0.5, 1.0), suc10=(80.0, 70.0))
        write_curve_csv(curve, tmp_path / "curve.csv")
        lines = (tmp_path / "curve.csv").read_text().splitlines()
        assert lines == ["x,suc10", "0.50,80.00", "1.00,70.00"]

    def test_subgroup_csv_layout(self, tmp_path):
        write_subgroup_csv({"a": (9.0, 0.5)}, tmp_path / "sub.csv")
        lines = (tmp_path / "sub.csv").read_text().splitlines()
        assert lines[0] == "group,mae,mean_total_uncertainty"
        assert lines[1] == "a,9.0000,0.500000"
