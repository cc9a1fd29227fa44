import pytest

from medrek.diagnostics import OverlapReport, RetrievalOutcome
from medrek.errors import ValidationError
from medrek.evaluation import MetricReport
from medrek.figures import (
    plot_loss_curve,
    plot_metrics_by_batch,
    plot_outcome_scatter,
    plot_overlap_bars,
)

PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


def curve_rows(n):
    return [
        {"epoch": e, "eff": 2.0 / (e + 1), "gen": 1.5 / (e + 1), "loc": 0.1,
         "no": 0.8, "so": 0.9, "total": 5.0 / (e + 1)}
        for e in range(n)
    ]


def fake_report(batch_size, eff=90.0):
    return MetricReport(
        method="medrek", split="test", batch_size=batch_size, n_records=50,
        eff=eff, gen=85.0, loc=95.0, flu=4.2, avg=89.0,
    )


def read_magic(path):
    with open(path, "rb") as fh:
        return fh.read(8)


class TestFigures:
    def test_loss_curve_writes_png(self, tmp_path):
        out = str(tmp_path / "loss.png")
        assert plot_loss_curve(curve_rows(30), out, valid_curve=curve_rows(30)) == out
        assert read_magic(out) == PNG_MAGIC

    def test_loss_curve_without_validation(self, tmp_path):
        out = plot_loss_curve(curve_rows(5), str(tmp_path / "loss.png"))
        assert read_magic(out) == PNG_MAGIC

    def test_metrics_by_batch(self, tmp_path):
        reports = [fake_report(b) for b in (10, 1, 50)]
        out = plot_metrics_by_batch(reports, str(tmp_path / "batch.png"))
        assert read_magic(out) == PNG_MAGIC

    def test_overlap_bars(self, tmp_path):
        reports = [OverlapReport(b, 0.6, 10.0 * i, i) for i, b in enumerate((1, 10, 50))]
        out = plot_overlap_bars(reports, str(tmp_path / "overlap.png"))
        assert read_magic(out) == PNG_MAGIC

    def test_outcome_scatter(self, tmp_path):
        rows = [
            RetrievalOutcome("eff", "correct", 1.4, 1.4, 0),
            RetrievalOutcome("eff", "wrong", 1.2, 0.9, 1),
            RetrievalOutcome("gen", "none", 0.7, 0.6, 0),
            RetrievalOutcome("loc", "none", 1.0, 0.4, 0),
            RetrievalOutcome("loc", "false_positive", 1.3, 0.5, 1),
        ]
        out = plot_outcome_scatter(rows, str(tmp_path / "scatter.png"))
        assert read_magic(out) == PNG_MAGIC

    def test_empty_inputs_raise(self, tmp_path):
        out = str(tmp_path / "x.png")
        with pytest.raises(ValidationError):
            plot_loss_curve([], out)
        with pytest.raises(ValidationError):
            plot_metrics_by_batch([], out)
        with pytest.raises(ValidationError):
            plot_overlap_bars([], out)
        with pytest.raises(ValidationError):
            plot_outcome_scatter([], out)
        assert not (tmp_path / "x.png").exists()
