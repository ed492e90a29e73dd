import numpy as np
import pytest

from modelsteal.errors import ShapeError
from modelsteal.metrics import (
    MetricsReport,
    compute_metrics,
    confusion_matrix,
    metrics_from_confusion,
    per_class_f1,
    render_table,
    report_victim_baseline,
)


class TestConfusionMatrix:
    def test_counts(self):
        cm = confusion_matrix([0, 0, 1, 1], [0, 1, 1, 1], 2)
        assert cm.tolist() == [[1, 1], [0, 2]]

    def test_total_equals_n(self):
        rng = np.random.default_rng(0)
        y = rng.integers(0, 4, 50)
        p = rng.integers(0, 4, 50)
        assert confusion_matrix(y, p, 4).sum() == 50

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            confusion_matrix([0, 1], [0], 2)


class TestBinaryExample:
    # rows true neg/pos: [[8,2],[1,9]] -> acc .85, spec .80, sens .90
    CM = np.array([[8, 2], [1, 9]])

    def test_hand_computed_rates(self):
        acc, spec, sens = metrics_from_confusion(self.CM, positive_class=1)
        assert acc == pytest.approx(0.85)
        assert spec == pytest.approx(0.80)
        assert sens == pytest.approx(0.90)

    def test_raw_sequences_agree_with_confusion(self):
        truth = [0] * 10 + [1] * 10
        preds = [0] * 8 + [1] * 2 + [1] * 9 + [0]
        report = compute_metrics(preds, preds, truth, positive_class=1, num_classes=2)
        assert np.array_equal(np.array(report.confusion), confusion_matrix(truth, preds, 2))
        acc, spec, sens = metrics_from_confusion(np.array(report.confusion), 1)
        assert (report.accuracy, report.specificity, report.sensitivity) == (acc, spec, sens)

    def test_sensitivity_specificity_identity(self):
        # sens*P + spec*N == total correct under binary collapse
        acc, spec, sens = metrics_from_confusion(self.CM, 1)
        P, N = self.CM[1].sum(), self.CM[0].sum()
        assert sens * P + spec * N == pytest.approx(np.trace(self.CM))


class TestComputeMetrics:
    def test_agreement_counting(self):
        report = compute_metrics([0, 1, 2, 0], [0, 1, 1, 0], [0, 0, 0, 0], 0, num_classes=3)
        assert report.agreement == pytest.approx(0.75)

    def test_agreement_symmetric(self):
        a, b = [0, 1, 2, 1], [0, 2, 2, 1]
        truth = [0, 1, 2, 0]
        r1 = compute_metrics(a, b, truth, 0, num_classes=3)
        r2 = compute_metrics(b, a, truth, 0, num_classes=3)
        assert r1.agreement == r2.agreement

    def test_perfect_thief(self):
        truth = [0, 1, 2, 1]
        report = compute_metrics(truth, [2, 2, 2, 2], truth, 1, num_classes=3)
        assert report.accuracy == 1.0

    def test_accuracy_is_trace_over_n(self):
        rng = np.random.default_rng(3)
        truth = rng.integers(0, 3, 40)
        preds = rng.integers(0, 3, 40)
        report = compute_metrics(preds, preds, truth, 0, num_classes=3)
        cm = np.array(report.confusion)
        assert report.accuracy == pytest.approx(np.trace(cm) / cm.sum())

    def test_no_positive_support_reports_absent(self):
        report = compute_metrics([0, 0], [0, 0], [0, 0], positive_class=1, num_classes=2)
        assert report.sensitivity is None

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            compute_metrics([0, 1], [0], [0, 1], 0)


class TestPerClassF1:
    def test_all_predicted_one_class_balanced_binary(self):
        # predictions all class 0 on balanced set: F1 = (2/3 + 0) / 2 = 1/3
        cm = confusion_matrix([0, 0, 1, 1], [0, 0, 0, 0], 2)
        f1 = per_class_f1(cm)
        assert f1[0] == pytest.approx(2 / 3)
        assert f1[1] == 0.0
        assert np.mean(f1) == pytest.approx(1 / 3)

    def test_zero_support_is_zero(self):
        cm = confusion_matrix([0, 0], [0, 0], 3)
        assert per_class_f1(cm)[2] == 0.0


class TestVictimBaseline:
    def test_agreement_omitted(self):
        report = report_victim_baseline([0, 1, 1], [0, 1, 0], positive_class=1, num_classes=2)
        assert report.agreement is None
        assert report.accuracy == pytest.approx(2 / 3)

    def test_perfect_victim(self):
        report = report_victim_baseline([0, 1, 2], [0, 1, 2], 1, num_classes=3)
        assert report.accuracy == 1.0


class TestSerialization:
    def test_json_round_trip(self):
        report = compute_metrics([0, 1], [0, 1], [0, 1], 1, num_classes=2)
        again = MetricsReport.from_json(report.to_json())
        assert again == report

    def test_table_render(self):
        r = compute_metrics([0, 1], [0, 1], [0, 1], 1, num_classes=2)
        v = report_victim_baseline([0, 1], [0, 1], 1, num_classes=2)
        text = render_table([("random+student", r), ("victim", v)])
        assert "Acc." in text and "Agr." in text
        assert "random+student" in text
        assert text.strip().splitlines()[-1].endswith("-")  # absent agreement
