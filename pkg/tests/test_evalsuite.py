import json

import pytest

from charedit.evalsuite import SUITES, UnknownSuiteError, run_suite


class TestSuites:
    def test_gradients_suite_passes(self, desk_stack):
        report = run_suite("gradients", seed=0, stack=desk_stack)
        assert report.passed
        assert {row["op"] for row in report.metrics} == {
            "prior_loss", "clip_loss", "zlpr_loss", "decode_vjp", "objective_eval",
        }

    def test_strength_suite_passes(self, desk_stack):
        report = run_suite("strength", seed=0, stack=desk_stack)
        assert report.verdicts["strength_law_1e-12"]
        assert report.verdicts["displacement_monotone"]

    def test_dialogue_golden_suite_passes(self, desk_stack):
        report = run_suite("dialogue-golden", seed=0, stack=desk_stack)
        assert report.verdicts["rerun_bit_identical"]
        assert report.verdicts["strength_sequence_0.25_0.40"]

    def test_latency_suite_runs(self, desk_stack):
        report = run_suite("latency", seed=0, stack=desk_stack)
        assert report.verdicts["p95_under_2s"]
        assert report.measurements["p95_ms"] > 0

    def test_unknown_suite_rejected(self, desk_stack):
        with pytest.raises(UnknownSuiteError):
            run_suite("nonsense", stack=desk_stack)


class TestDeterminism:
    def test_metrics_tables_byte_identical(self, desk_stack):
        a = run_suite("gradients", seed=3, stack=desk_stack)
        b = run_suite("gradients", seed=3, stack=desk_stack)
        assert a.metrics_csv() == b.metrics_csv()
        c = run_suite("strength", seed=1, stack=desk_stack)
        d = run_suite("strength", seed=1, stack=desk_stack)
        assert c.metrics_csv() == d.metrics_csv()

    def test_golden_suite_metrics_deterministic(self, desk_stack):
        a = run_suite("dialogue-golden", seed=0, stack=desk_stack)
        b = run_suite("dialogue-golden", seed=0, stack=desk_stack)
        assert a.metrics_csv() == b.metrics_csv()


class TestReportOutput:
    def test_report_files_written(self, desk_stack, tmp_path):
        report = run_suite("strength", seed=0, stack=desk_stack)
        report.write(tmp_path)
        json_path = tmp_path / "strength_seed0.report.json"
        csv_path = tmp_path / "strength_seed0.metrics.csv"
        assert json_path.exists() and csv_path.exists()
        doc = json.loads(json_path.read_text())
        assert doc["verdicts"]["strength_law_1e-12"] is True
        assert doc["environment"]["numpy"]
        assert csv_path.read_text().startswith("s,")

    def test_all_suite_names_spellable(self):
        assert set(SUITES) == {
            "gradients", "masks", "strength", "localizer", "latency", "dialogue-golden",
        }
