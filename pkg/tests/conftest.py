"""Shared fixture builders: synthetic traces, profiles and CSV writers."""
from __future__ import annotations

import csv

import pytest

from tracemix.model import AnonymousJob, MetricVector, ProfileSample, ServiceRequest, WorkloadType


def mv(exec_time_s=1.0, cpu_usage=1.0, mem_gb=1.0, cpi=1.0, mai=1.0) -> MetricVector:
    return MetricVector(exec_time_s, cpu_usage, mem_gb, cpi, mai)


def flat(v: float) -> MetricVector:
    """All five dimensions equal to v (handy for 1-D style cases)."""
    return MetricVector(v, v, v, v, v)


def make_job(job_id, ts=0, tenant="t0", metrics=None, machine_class=None) -> AnonymousJob:
    return AnonymousJob(
        job_id=str(job_id),
        submit_ts_ms=ts,
        tenant_id=tenant,
        metrics=metrics if metrics is not None else mv(),
        machine_class=machine_class,
    )


def make_request(ts=0, tenant="u0", query="q") -> ServiceRequest:
    return ServiceRequest(ts_ms=ts, tenant_id=tenant, query=query)


def make_sample(workload="sort", size=100.0, metrics=None) -> ProfileSample:
    return ProfileSample(
        workload=WorkloadType(name=workload),
        input_size_mb=size,
        metrics=metrics if metrics is not None else mv(),
    )


def write_jobs_csv(path, jobs, machine_column=False):
    header = ["job_id", "submit_ts_ms", "tenant_id", "exec_time_s", "cpu_usage", "mem_gb", "cpi", "mai"]
    if machine_column:
        header.append("machine_class")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for job in jobs:
            row = [job.job_id, job.submit_ts_ms, job.tenant_id, *(repr(v) for v in job.metrics.as_tuple())]
            if machine_column:
                row.append(job.machine_class or "")
            writer.writerow(row)
    return path


def write_queries_csv(path, requests):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["ts_ms", "tenant_id", "query"])
        for req in requests:
            writer.writerow([req.ts_ms, req.tenant_id, req.query])
    return path


def write_profiles_csv(path, samples):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["workload", "input_size_mb", "exec_time_s", "cpu_usage", "mem_gb", "cpi", "mai"])
        for sample in samples:
            writer.writerow(
                [sample.workload.name, repr(sample.input_size_mb), *(repr(v) for v in sample.metrics.as_tuple())]
            )
    return path


def write_machines_csv(path, classes):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["class_id", "cores", "mem_gb", "count"])
        for cls in classes:
            writer.writerow([cls.class_id, cls.cores, repr(cls.mem_gb), cls.count])
    return path


def affine_profile_samples(workload="sort", sizes=None, coeffs=None):
    """Samples lying exactly on per-metric affine laws metric = a + b*size."""
    if sizes is None:
        sizes = [float(s) for s in range(10, 210, 10)]  # 20 sizes
    if coeffs is None:
        coeffs = ((2.0, 0.5), (1.0, 0.01), (0.5, 0.02), (1.2, 0.0), (0.05, 0.001))
    samples = []
    for size in sizes:
        values = [a + b * size for a, b in coeffs]
        samples.append(make_sample(workload, size, MetricVector(*values)))
    return samples


@pytest.fixture
def tight_cluster_jobs():
    """Jobs forming two well-separated gaussian groups in metric space."""
    import numpy as np

    rng = np.random.default_rng(1234)
    jobs = []
    for i in range(12):
        jobs.append(make_job(f"a{i}", ts=i * 1000, tenant=f"t{i % 3}", metrics=MetricVector(*(10.0 + rng.normal(0, 0.4, size=5)))))
    for i in range(12):
        jobs.append(make_job(f"b{i}", ts=i * 1500, tenant=f"t{i % 5}", metrics=MetricVector(*(50.0 + rng.normal(0, 0.4, size=5)))))
    return jobs
