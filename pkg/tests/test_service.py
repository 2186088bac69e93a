"""HTTP endpoints must re-serialize module outputs byte-for-byte."""
from __future__ import annotations

import math
import time

import pytest
from fastapi.testclient import TestClient

from tracemix import cluster as clustering
from tracemix import combine, ingest, profiles
from tracemix.ingest import MS_PER_HOUR
from tracemix.model import MachineClass, MetricVector, TraceWindow
from tracemix.service import ServiceConfig, create_app

from .conftest import (
    affine_profile_samples,
    make_job,
    make_request,
    write_jobs_csv,
    write_machines_csv,
    write_profiles_csv,
    write_queries_csv,
)


def near(value, spread, i):
    return value + spread * ((i % 5) - 2) / 10.0


@pytest.fixture
def env(tmp_path):
    """A small consistent universe: trace, queries, profiles, machines."""
    jobs = []
    for i in range(24):
        metrics = MetricVector(near(12.0, 1.0, i), near(2.0, 0.2, i), near(1.0, 0.1, i), near(1.5, 0.1, i), near(0.02, 0.002, i))
        jobs.append(make_job(f"sortish{i}", ts=(i % 12) * MS_PER_HOUR + 60_000 * i, tenant=f"t{i % 4}", metrics=metrics))
    for i in range(18):
        metrics = MetricVector(near(60.0, 4.0, i), near(4.0, 0.3, i), near(8.0, 0.5, i), near(0.8, 0.05, i), near(0.08, 0.004, i))
        jobs.append(make_job(f"grepish{i}", ts=(i % 12) * MS_PER_HOUR + 90_000 * i + 5_000, tenant=f"t{i % 3}", metrics=metrics))
    requests = [make_request(ts=(i % 24) * MS_PER_HOUR + (i * 911) % MS_PER_HOUR, tenant=f"u{i % 6}", query=f"query {i}") for i in range(240)]

    # catalogs whose prediction at some size lands on each group's center
    sort_samples = affine_profile_samples(
        "sortish", sizes=[float(s) for s in range(50, 250, 10)], coeffs=((2.0, 0.1), (1.0, 0.01), (0.5, 0.005), (1.0, 0.005), (0.0, 0.0002))
    )
    grep_samples = affine_profile_samples(
        "grepish", sizes=[float(s) for s in range(50, 250, 10)], coeffs=((10.0, 0.5), (2.0, 0.02), (3.0, 0.05), (0.3, 0.005), (0.04, 0.0004))
    )
    machines = [MachineClass(f"type-{i + 1}", cores=2 * (i + 1), mem_gb=4.0 * (i + 1), count=50 * (i + 1)) for i in range(6)]

    config = ServiceConfig(
        jobs_path=write_jobs_csv(tmp_path / "jobs.csv", jobs),
        queries_path=write_queries_csv(tmp_path / "queries.csv", requests),
        profiles_path=write_profiles_csv(tmp_path / "profiles.csv", sort_samples + grep_samples),
        machines_path=write_machines_csv(tmp_path / "machines.csv", machines),
        data_dir=tmp_path / "data",
    )
    return config, jobs, requests, machines


@pytest.fixture
def client(env):
    config, *_ = env
    return TestClient(create_app(config))


class TestMachines:
    def test_six_classes(self, client, env):
        _, _, _, machines = env
        body = client.get("/machines").json()
        assert body == {"machines": [m.to_dict() for m in machines]}

    def test_empty_file(self, tmp_path, env):
        config, *_ = env
        config.machines_path = write_machines_csv(tmp_path / "none.csv", [])
        with TestClient(create_app(config)) as c:
            assert c.get("/machines").json() == {"machines": []}

    def test_counts_equal_csv_sums(self, client, env):
        config, *_ = env
        total = sum(m.count for m in ingest.load_machine_classes(config.machines_path))
        body = client.get("/machines").json()
        assert sum(m["count"] for m in body["machines"]) == total


class TestStats:
    def test_full_day_gives_24_rows(self, client):
        body = client.get("/stats", params={"start_ms": 0, "end_ms": 24 * MS_PER_HOUR}).json()
        assert len(body["rows"]) == 24
        assert body["window"] == {"start_ms": 0, "end_ms": 24 * MS_PER_HOUR}

    def test_single_hour_window_gives_one_row(self, client):
        body = client.get("/stats", params={"start_ms": 12 * MS_PER_HOUR, "end_ms": 13 * MS_PER_HOUR}).json()
        assert len(body["rows"]) == 1
        assert body["rows"][0]["hour_index"] == 0

    def test_rows_equal_module_output(self, client, env):
        _, jobs, requests, _ = env
        start, end = 12 * MS_PER_HOUR, 13 * MS_PER_HOUR
        body = client.get("/stats", params={"start_ms": start, "end_ms": end}).json()
        window = TraceWindow(start, end)
        jobs_in = [
            type(j)(j.job_id, j.submit_ts_ms - start, j.tenant_id, j.metrics, j.machine_class)
            for j in ingest.filter_window(jobs, window)
        ]
        reqs_in = [type(r)(r.ts_ms - start, r.tenant_id, r.query) for r in ingest.filter_window(requests, window)]
        expected = ingest.hourly_stats(jobs_in, reqs_in, span_hours=1)
        assert body["rows"] == [row.to_dict() for row in expected]

    def test_invalid_window_is_400(self, client):
        response = client.get("/stats", params={"start_ms": 5, "end_ms": 5})
        assert response.status_code == 400
        body = response.json()
        assert body["code"] == "invalid_window"
        assert set(body) == {"code", "message", "detail"}


class TestMatch:
    def test_endpoint_equals_module_pipeline(self, client, env):
        config, jobs, requests, _ = env
        payload = {"start_ms": 0, "end_ms": 24 * MS_PER_HOUR, "seed": 0}
        body = client.post("/match", json=payload).json()

        window = TraceWindow(0, 24 * MS_PER_HOUR)
        jobs_in = ingest.filter_window(jobs, window)
        samples = profiles.load_profiles(config.profiles_path)
        result = clustering.cluster_jobs(jobs_in, seed=0)
        matches = combine.match_clusters(
            result.clusters, profiles.fit_catalog(samples), profiles.training_size_grid(samples)
        )
        assert body["k"] == result.k
        assert body["matches"] == [m.to_dict() for m in matches]
        assert body["bic"] == (result.bic if math.isfinite(result.bic) else None)
        script = combine.build_replay_script(jobs_in, result.clusters, matches, ingest.filter_window(requests, window))
        assert body["coverage"] == script.coverage.to_dict()
        assert body["event_count"] == len(script.events)

        # the script artifact exists and parses back to the same script
        stored = combine.load_script(config.data_dir / "scripts" / f"{body['script_id']}.ndjson")
        assert stored == script

    def test_matched_clusters_exist(self, client):
        body = client.post("/match", json={"start_ms": 0, "end_ms": 24 * MS_PER_HOUR}).json()
        matched = [m for m in body["matches"] if m["matched"]]
        assert matched, "fixture should produce at least one matched cluster"
        for m in matched:
            assert m["cv_before"] < 0.5
            assert m["delta_cv"] < 0.1

    def test_invalid_window_is_400(self, client):
        assert client.post("/match", json={"start_ms": 9, "end_ms": 0}).status_code == 400

    def test_empty_catalog_is_422(self, tmp_path, env):
        config, *_ = env
        config.profiles_path = write_profiles_csv(tmp_path / "empty.csv", [])
        with TestClient(create_app(config)) as c:
            response = c.post("/match", json={"start_ms": 0, "end_ms": MS_PER_HOUR})
            assert response.status_code == 422
            assert response.json()["code"] == "empty_catalog"

    def test_validation_error_shape(self, client):
        response = client.post("/match", json={"start_ms": "not-a-number", "end_ms": 10})
        assert response.status_code == 400
        assert response.json()["code"] == "validation_error"


def wait_for_run(client, run_id, timeout_s=30.0):
    deadline = time.monotonic() + timeout_s
    while time.monotonic() < deadline:
        body = client.get(f"/replay/{run_id}").json()
        if body["state"] != "running":
            return body
        time.sleep(0.05)
    raise AssertionError("replay run did not finish in time")


class TestReplay:
    def test_mock_run_completes_with_correct_count(self, client):
        match = client.post("/match", json={"start_ms": 0, "end_ms": 24 * MS_PER_HOUR}).json()
        response = client.post(
            "/replay",
            json={"script_id": match["script_id"], "compression": 100000.0, "executor": "mock"},
        )
        assert response.status_code == 200
        run_id = response.json()["run_id"]
        body = wait_for_run(client, run_id)
        assert body["state"] == "done"
        assert body["summary"]["count"] == match["event_count"]

    def test_unknown_script_is_404(self, client):
        assert client.post("/replay", json={"script_id": "missing"}).status_code == 404

    def test_unknown_run_is_404(self, client):
        response = client.get("/replay/nope")
        assert response.status_code == 404
        assert response.json()["code"] == "unknown_run"

    def test_double_trigger_gives_independent_runs(self, client):
        match = client.post("/match", json={"start_ms": 0, "end_ms": 24 * MS_PER_HOUR}).json()
        payload = {"script_id": match["script_id"], "compression": 100000.0}
        first = client.post("/replay", json=payload).json()["run_id"]
        second = client.post("/replay", json=payload).json()["run_id"]
        assert first != second
        a, b = wait_for_run(client, first), wait_for_run(client, second)
        assert a["summary"]["count"] == b["summary"]["count"] == match["event_count"]
        assert a["report_path"] != b["report_path"]

    def test_unknown_executor_is_400(self, client):
        match = client.post("/match", json={"start_ms": 0, "end_ms": 24 * MS_PER_HOUR}).json()
        response = client.post("/replay", json={"script_id": match["script_id"], "executor": "carrier-pigeon"})
        assert response.status_code == 400
