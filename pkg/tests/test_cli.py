"""CLI subcommands: outputs byte-identical to module outputs, exit codes."""
from __future__ import annotations

import json

import pytest

from tracemix import cluster as clustering
from tracemix import combine, ingest, profiles
from tracemix.cli import main
from tracemix.ingest import MS_PER_HOUR
from tracemix.model import MetricVector

from .conftest import (
    affine_profile_samples,
    make_job,
    make_request,
    write_jobs_csv,
    write_profiles_csv,
    write_queries_csv,
)


@pytest.fixture
def trace_files(tmp_path):
    jobs = [
        make_job(f"j{i}", ts=(i % 24) * MS_PER_HOUR + i * 1000, tenant=f"t{i % 3}",
                 metrics=MetricVector(10.0 + 0.05 * (i % 7), 2.0, 1.0, 1.2, 0.01))
        for i in range(40)
    ]
    requests = [make_request(ts=(i % 24) * MS_PER_HOUR + i * 333, tenant=f"u{i % 5}", query=f"q{i}") for i in range(60)]
    samples = affine_profile_samples(
        "sort", sizes=[float(s) for s in range(40, 240, 10)], coeffs=((8.0, 0.02), (2.0, 0.0), (1.0, 0.0), (1.2, 0.0), (0.01, 0.0))
    )
    return {
        "jobs": str(write_jobs_csv(tmp_path / "jobs.csv", jobs)),
        "queries": str(write_queries_csv(tmp_path / "queries.csv", requests)),
        "profiles": str(write_profiles_csv(tmp_path / "profiles.csv", samples)),
        "jobs_list": jobs,
        "requests_list": requests,
        "tmp": tmp_path,
    }


def run_cli(capsys, argv):
    code = main(argv)
    captured = capsys.readouterr()
    return code, captured.out, captured.err


class TestStats:
    def test_24_rows_on_24h_fixture(self, capsys, trace_files):
        code, out, _ = run_cli(capsys, ["stats", "--jobs", trace_files["jobs"], "--queries", trace_files["queries"]])
        assert code == 0
        lines = out.strip().split("\n")
        assert len(lines) == 25  # header + 24 rows

    def test_byte_identical_to_module(self, capsys, trace_files):
        code, out, _ = run_cli(capsys, ["stats", "--jobs", trace_files["jobs"], "--queries", trace_files["queries"]])
        assert code == 0
        expected = ingest.stats_to_csv(ingest.hourly_stats(trace_files["jobs_list"], trace_files["requests_list"]))
        assert out == expected

    def test_window_flag(self, capsys, trace_files):
        code, out, _ = run_cli(
            capsys,
            ["stats", "--jobs", trace_files["jobs"], "--queries", trace_files["queries"],
             "--window", f"0:{MS_PER_HOUR}", "--span-hours", "1"],
        )
        assert code == 0
        assert len(out.strip().split("\n")) == 2


class TestFitAndCluster:
    def test_fit_output_parses_back(self, capsys, trace_files):
        code, out, _ = run_cli(capsys, ["fit", "--profiles", trace_files["profiles"]])
        assert code == 0
        models = profiles.catalog_from_json(out)
        expected = profiles.fit_catalog(profiles.load_profiles(trace_files["profiles"]))
        assert models == expected

    def test_cluster_output_equals_module(self, capsys, trace_files):
        code, out, _ = run_cli(capsys, ["cluster", "--jobs", trace_files["jobs"], "--seed", "3"])
        assert code == 0
        result = clustering.ClusteringResult.from_json(out)
        assert result == clustering.cluster_jobs(trace_files["jobs_list"], seed=3)
        assert result.seed == 3


class TestMatch:
    def test_thresholds_honored(self, capsys, trace_files):
        code, out, _ = run_cli(
            capsys,
            ["match", "--jobs", trace_files["jobs"], "--profiles", trace_files["profiles"],
             "--theta1", "0.5", "--theta2", "0.1"],
        )
        assert code == 0
        payload = json.loads(out)
        assert payload["theta1"] == 0.5 and payload["theta2"] == 0.1
        assert payload["seed"] == 0
        matched = [r for r in payload["results"] if r["matched"]]
        assert matched
        for r in matched:
            assert r["cv_before"] < 0.5
            assert r["delta_cv"] < 0.1


class TestPipeline:
    def test_full_pipeline_report_rows_equal_script_events(self, capsys, trace_files, tmp_path):
        script_path = tmp_path / "script.ndjson"
        code, _, _ = run_cli(
            capsys,
            ["script", "--jobs", trace_files["jobs"], "--queries", trace_files["queries"],
             "--profiles", trace_files["profiles"], "--out", str(script_path)],
        )
        assert code == 0
        script = combine.load_script(script_path)
        assert script.events, "pipeline fixture should emit events"

        report_path = tmp_path / "report.csv"
        code, _, _ = run_cli(
            capsys,
            ["replay", "--script", str(script_path), "--executor", "mock",
             "--compression", "1000000", "--out", str(report_path)],
        )
        assert code == 0
        lines = report_path.read_text().strip().split("\n")
        assert lines[0].startswith("# seed=0 ")
        assert lines[1] == "scheduled_ts_ms,actual_ts_ms,tenant,kind,outcome"
        assert len(lines) - 2 == len(script.events)


class TestErrors:
    def test_usage_error_exits_2(self, trace_files):
        with pytest.raises(SystemExit) as exc:
            main(["stats"])  # missing --jobs
        assert exc.value.code == 2

    def test_data_error_exits_1(self, capsys, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("not,a,job,trace\n")
        code, _, err = run_cli(capsys, ["stats", "--jobs", str(bad)])
        assert code == 1
        assert err.startswith("error: ")
        assert json.loads(err.removeprefix("error: "))["code"] == "MissingHeader"

    def test_missing_file_exits_1(self, capsys):
        code, _, err = run_cli(capsys, ["stats", "--jobs", "/nonexistent/jobs.csv"])
        assert code == 1
        assert "error:" in err
