from fractions import Fraction

import numpy as np
import pytest

from drnet.errors import DataError, ShapeError
from drnet.metrics import ClassReport, ConfusionMatrix, classification_report

# Published grading results for the full fundus corpus, reordered from the
# report's (NoDR, Moderate, Mild, Proliferative, Severe) layout into severity
# order (NoDR, Mild, Moderate, Severe, Proliferative).
PAPER_ORDER = np.array(
    [
        [2560, 1, 0, 1, 0],
        [2, 500, 15, 6, 3],
        [1, 5, 255, 1, 1],
        [0, 3, 0, 72, 0],
        [1, 2, 0, 1, 83],
    ],
    dtype=np.int64,
)
PERM = [0, 2, 1, 4, 3]
REFERENCE_MATRIX = PAPER_ORDER[np.ix_(PERM, PERM)]


def fraction_report(counts):
    """Independent oracle: exact one-vs-rest metrics with Fractions."""
    counts = [[int(v) for v in row] for row in counts]
    k = len(counts)
    out = []
    for i in range(k):
        tp = counts[i][i]
        fp = sum(counts[r][i] for r in range(k)) - tp
        fn = sum(counts[i]) - tp
        p = Fraction(tp, tp + fp) if tp + fp else Fraction(0)
        r = Fraction(tp, tp + fn) if tp + fn else Fraction(0)
        f = 2 * p * r / (p + r) if p + r else Fraction(0)
        out.append((p, r, f))
    acc = Fraction(sum(counts[i][i] for i in range(k)), sum(map(sum, counts)))
    return out, acc


class TestConfusionMatrix:
    def test_from_predictions_counts(self):
        cm = ConfusionMatrix.from_predictions([0, 0, 1, 2], [0, 1, 1, 2])
        assert cm.counts[0, 0] == 1 and cm.counts[0, 1] == 1
        assert cm.total == 4

    def test_row_sums_equal_supports(self):
        cm = ConfusionMatrix(REFERENCE_MATRIX)
        np.testing.assert_array_equal(cm.supports(), REFERENCE_MATRIX.sum(axis=1))
        assert cm.total == 3513

    def test_negative_counts_rejected(self):
        bad = np.zeros((5, 5), dtype=np.int64)
        bad[0, 0] = -1
        with pytest.raises(ShapeError):
            ConfusionMatrix(bad)

    def test_csv_round_trip(self, tmp_path):
        cm = ConfusionMatrix(REFERENCE_MATRIX)
        cm.write_csv(tmp_path / "cm.csv")
        back = ConfusionMatrix.read_csv(tmp_path / "cm.csv")
        assert back == cm


class TestClassificationReport:
    def test_matches_fraction_oracle_exactly(self):
        report = classification_report(ConfusionMatrix(REFERENCE_MATRIX))
        oracle, acc = fraction_report(REFERENCE_MATRIX)
        for i, (p, r, f) in enumerate(oracle):
            assert report.precision[i] == pytest.approx(float(p), abs=1e-12)
            assert report.recall[i] == pytest.approx(float(r), abs=1e-12)
            assert report.f1[i] == pytest.approx(float(f), abs=1e-12)
        assert report.accuracy == pytest.approx(float(acc), abs=1e-12)

    def test_reference_matrix_headline_values(self):
        report = classification_report(ConfusionMatrix(REFERENCE_MATRIX))
        # NoDR: 2560/2564 and 2560/2562
        assert report.precision[0] == pytest.approx(0.998, abs=1e-3)
        assert report.recall[0] == pytest.approx(0.999, abs=1e-3)
        # accuracy 3470/3513
        assert report.accuracy == pytest.approx(0.987, abs=1e-3)
        # Moderate (severity index 2)
        assert report.precision[2] == pytest.approx(0.978, abs=1e-3)
        assert report.recall[2] == pytest.approx(0.950, abs=1e-3)
        assert report.f1[2] == pytest.approx(0.964, abs=1e-3)

    def test_diagonal_matrix_is_all_ones(self):
        cm = ConfusionMatrix(np.diag([10, 20, 30, 40, 50]))
        report = classification_report(cm)
        np.testing.assert_allclose(report.precision, 1.0)
        np.testing.assert_allclose(report.recall, 1.0)
        np.testing.assert_allclose(report.f1, 1.0)
        assert report.accuracy == 1.0

    def test_zero_denominator_convention(self):
        counts = np.zeros((5, 5), dtype=np.int64)
        counts[0, 0] = 10  # class 0 perfect, classes 1-4 absent and never predicted
        report = classification_report(ConfusionMatrix(counts))
        for i in range(1, 5):
            assert report.precision[i] == 0.0
            assert report.recall[i] == 0.0
            assert report.f1[i] == 0.0

    def test_all_zero_matrix_rejected(self):
        with pytest.raises(DataError):
            classification_report(ConfusionMatrix(np.zeros((5, 5), dtype=np.int64)))

    def test_micro_recall_equals_accuracy(self):
        rng = np.random.default_rng(0)
        counts = rng.integers(0, 50, size=(5, 5)).astype(np.int64)
        report = classification_report(ConfusionMatrix(counts))
        tp = np.diag(counts).sum()
        assert report.accuracy == pytest.approx(tp / counts.sum(), abs=1e-12)

    def test_constant_predictor_mass_in_one_column(self):
        cm = ConfusionMatrix.from_predictions([0, 1, 2, 3, 4] * 10, [0] * 50)
        assert cm.counts[:, 0].sum() == 50
        assert cm.counts[:, 1:].sum() == 0

    def test_text_and_csv_outputs(self, tmp_path):
        report = classification_report(ConfusionMatrix(REFERENCE_MATRIX))
        text = report.as_text()
        assert "No DR" in text and "accuracy" in text
        report.write_csv(tmp_path / "report.csv")
        lines = (tmp_path / "report.csv").read_text().strip().splitlines()
        assert lines[0] == "class,precision,recall,f1,support"
        assert len(lines) == 7  # header + 5 classes + accuracy
