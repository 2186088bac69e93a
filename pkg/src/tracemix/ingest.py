"""Trace-file ingestion: CSV parsing, window filtering, hourly statistics.

Malformed input fails the whole parse rather than skipping rows: replayed
benchmarks must be reproducible, and silently dropped rows would distort the
arrival patterns the toolkit exists to preserve.
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass
from typing import Sequence, TypeVar, Union

import csv

from .model import (
    AnonymousJob,
    MachineClass,
    MetricVector,
    ServiceRequest,
    TraceToolError,
    TraceWindow,
)

JOB_TRACE_HEADER = ("job_id", "submit_ts_ms", "tenant_id", "exec_time_s", "cpu_usage", "mem_gb", "cpi", "mai")
#: Optional trailing column carrying the machine class that ran the job.
JOB_TRACE_HEADER_EXT = JOB_TRACE_HEADER + ("machine_class",)
QUERY_LOG_HEADER = ("ts_ms", "tenant_id", "query")
MACHINE_CLASS_HEADER = ("class_id", "cores", "mem_gb", "count")

MS_PER_HOUR = 3_600_000
MS_PER_SECOND = 1_000
SECONDS_PER_HOUR = 3_600


class IngestError(TraceToolError):
    pass


class MissingHeader(IngestError):
    def __init__(self, path, expected: Sequence[str]):
        self.path = path
        self.expected = tuple(expected)
        super().__init__(f"{path}: missing or wrong header, expected {','.join(expected)}")


class MalformedRow(IngestError):
    def __init__(self, line: int, reason: str):
        self.line = line
        self.reason = reason
        super().__init__(f"line {line}: {reason}")


def _open_rows(path, expected_headers: Sequence[Sequence[str]]):
    """Yield (line_number, row) pairs after validating the header line."""
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MissingHeader(path, expected_headers[0]) from None
        header = tuple(header)
        if header not in tuple(tuple(h) for h in expected_headers):
            raise MissingHeader(path, expected_headers[0])
        rows = [(reader.line_num, tuple(row)) for row in reader]
    return header, rows


def _parse_float(value: str, name: str, line: int) -> float:
    try:
        parsed = float(value)
    except ValueError:
        raise MalformedRow(line, f"{name} is not a number: {value!r}") from None
    if not math.isfinite(parsed):
        raise MalformedRow(line, f"{name} must be finite, got {value!r}")
    return parsed


def _parse_int(value: str, name: str, line: int) -> int:
    try:
        return int(value)
    except ValueError:
        raise MalformedRow(line, f"{name} is not an integer: {value!r}") from None


def parse_job_trace(path) -> list[AnonymousJob]:
    """Parse a job-trace CSV into jobs, preserving row order.

    The whole file is rejected on the first malformed row (negative metric,
    bad timestamp, duplicate job id, wrong column count).
    """
    header, rows = _open_rows(path, [JOB_TRACE_HEADER, JOB_TRACE_HEADER_EXT])
    has_machine = header == JOB_TRACE_HEADER_EXT
    jobs: list[AnonymousJob] = []
    seen: set[str] = set()
    for line, row in rows:
        if len(row) != len(header):
            raise MalformedRow(line, f"expected {len(header)} fields, got {len(row)}")
        job_id, ts_raw, tenant = row[0], row[1], row[2]
        if not job_id:
            raise MalformedRow(line, "empty job_id")
        if job_id in seen:
            raise MalformedRow(line, f"duplicate job_id {job_id!r}")
        seen.add(job_id)
        ts = _parse_int(ts_raw, "submit_ts_ms", line)
        values = [_parse_float(row[3 + i], name, line) for i, name in enumerate(("exec_time_s", "cpu_usage", "mem_gb", "cpi", "mai"))]
        try:
            metrics = MetricVector(*values)
            job = AnonymousJob(
                job_id=job_id,
                submit_ts_ms=ts,
                tenant_id=tenant,
                metrics=metrics,
                machine_class=row[8] if has_machine else None,
            )
        except ValueError as exc:
            raise MalformedRow(line, str(exc)) from None
        jobs.append(job)
    return jobs


def parse_query_log(path) -> list[ServiceRequest]:
    """Parse a query-log CSV into service requests, preserving row order."""
    _, rows = _open_rows(path, [QUERY_LOG_HEADER])
    requests: list[ServiceRequest] = []
    for line, row in rows:
        if len(row) != len(QUERY_LOG_HEADER):
            raise MalformedRow(line, f"expected {len(QUERY_LOG_HEADER)} fields, got {len(row)}")
        ts = _parse_int(row[0], "ts_ms", line)
        try:
            req = ServiceRequest(ts_ms=ts, tenant_id=row[1], query=row[2])
        except ValueError as exc:
            raise MalformedRow(line, str(exc)) from None
        requests.append(req)
    return requests


def load_machine_classes(path) -> list[MachineClass]:
    """Parse the machine-class CSV used by the portal's first step."""
    _, rows = _open_rows(path, [MACHINE_CLASS_HEADER])
    classes: list[MachineClass] = []
    for line, row in rows:
        if len(row) != len(MACHINE_CLASS_HEADER):
            raise MalformedRow(line, f"expected {len(MACHINE_CLASS_HEADER)} fields, got {len(row)}")
        try:
            cls = MachineClass(
                class_id=row[0],
                cores=_parse_int(row[1], "cores", line),
                mem_gb=_parse_float(row[2], "mem_gb", line),
                count=_parse_int(row[3], "count", line),
            )
        except ValueError as exc:
            raise MalformedRow(line, str(exc)) from None
        classes.append(cls)
    return classes


Record = TypeVar("Record", AnonymousJob, ServiceRequest)


def record_ts(record: Union[AnonymousJob, ServiceRequest]) -> int:
    """Submission timestamp of a job or request, in trace milliseconds."""
    if isinstance(record, AnonymousJob):
        return record.submit_ts_ms
    return record.ts_ms


def filter_window(records: Sequence[Record], window: TraceWindow) -> list[Record]:
    """Keep records with start_ms <= ts < end_ms, in their original order.

    When the window names a machine class, jobs carrying a different class are
    dropped too; jobs without class information and service requests are never
    machine-filtered (the plain trace schema has no machine field).
    """
    kept = []
    for record in records:
        if not window.contains(record_ts(record)):
            continue
        if window.machine_class is not None:
            cls = getattr(record, "machine_class", None)
            if cls is not None and cls != window.machine_class:
                continue
        kept.append(record)
    return kept


@dataclass(frozen=True)
class HourlyStats:
    """Per-hour summary of both workload classes, as shown in the portal."""

    hour_index: int
    requests_per_sec: float
    users_per_sec: float
    job_count: int
    avg_cpu: float
    avg_mem_gb: float

    def to_dict(self) -> dict:
        return {
            "hour_index": self.hour_index,
            "requests_per_sec": self.requests_per_sec,
            "users_per_sec": self.users_per_sec,
            "job_count": self.job_count,
            "avg_cpu": self.avg_cpu,
            "avg_mem_gb": self.avg_mem_gb,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "HourlyStats":
        return cls(
            hour_index=int(data["hour_index"]),
            requests_per_sec=float(data["requests_per_sec"]),
            users_per_sec=float(data["users_per_sec"]),
            job_count=int(data["job_count"]),
            avg_cpu=float(data["avg_cpu"]),
            avg_mem_gb=float(data["avg_mem_gb"]),
        )


def hourly_stats(
    jobs: Sequence[AnonymousJob],
    requests: Sequence[ServiceRequest],
    span_hours: int = 24,
) -> list[HourlyStats]:
    """Summarize both workload classes per hour.

    Hours are half-open buckets [h*3600000, (h+1)*3600000) ms. The report
    covers at least ``span_hours`` rows and grows to cover the latest
    timestamp. ``users_per_sec`` is the mean, over the hour's 3600 seconds,
    of the number of distinct tenants that issued a request in that second.
    """
    if span_hours < 1:
        raise ValueError(f"span_hours must be >= 1, got {span_hours}")
    max_ts = -1
    for job in jobs:
        max_ts = max(max_ts, job.submit_ts_ms)
    for req in requests:
        max_ts = max(max_ts, req.ts_ms)
    hours = max(span_hours, (max_ts // MS_PER_HOUR) + 1 if max_ts >= 0 else 0)

    request_counts = [0] * hours
    tenants_by_second: dict[int, set[str]] = {}
    for req in requests:
        request_counts[req.ts_ms // MS_PER_HOUR] += 1
        second = req.ts_ms // MS_PER_SECOND
        tenants_by_second.setdefault(second, set()).add(req.tenant_id)

    job_counts = [0] * hours
    cpu_sums = [0.0] * hours
    mem_sums = [0.0] * hours
    for job in jobs:
        hour = job.submit_ts_ms // MS_PER_HOUR
        job_counts[hour] += 1
        cpu_sums[hour] += job.metrics.cpu_usage
        mem_sums[hour] += job.metrics.mem_gb

    distinct_user_sums = [0] * hours
    for second, tenants in tenants_by_second.items():
        distinct_user_sums[second // SECONDS_PER_HOUR] += len(tenants)

    rows = []
    for h in range(hours):
        n_jobs = job_counts[h]
        rows.append(
            HourlyStats(
                hour_index=h,
                requests_per_sec=request_counts[h] / SECONDS_PER_HOUR,
                users_per_sec=distinct_user_sums[h] / SECONDS_PER_HOUR,
                job_count=n_jobs,
                avg_cpu=cpu_sums[h] / n_jobs if n_jobs else 0.0,
                avg_mem_gb=mem_sums[h] / n_jobs if n_jobs else 0.0,
            )
        )
    return rows


STATS_CSV_HEADER = "hour_index,requests_per_sec,users_per_sec,job_count,avg_cpu,avg_mem_gb"


def stats_to_csv(rows: Sequence[HourlyStats]) -> str:
    """Serialize hourly stats as CSV, the CLI and service wire format."""
    out = io.StringIO()
    out.write(STATS_CSV_HEADER + "\n")
    for row in rows:
        out.write(
            f"{row.hour_index},{row.requests_per_sec!r},{row.users_per_sec!r},"
            f"{row.job_count},{row.avg_cpu!r},{row.avg_mem_gb!r}\n"
        )
    return out.getvalue()
