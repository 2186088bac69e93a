"""Match job clusters to cataloged workloads and assemble replay scripts.

A cluster is matched to the (workload, input size) candidate whose predicted
metric vector disturbs the cluster's dispersion the least: the cluster's
aggregate coefficient of variation must already be below ``theta1``, and
adding the candidate must change it by less than ``theta2``. Jobs in
unmatched clusters are dropped from the script and counted, never silently
substituted: inventing a workload would fabricate semantics the trace does
not support.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

from .cluster import Cluster
from .model import (
    METRIC_NAMES,
    AnonymousJob,
    MetricVector,
    ServiceRequest,
    WorkloadType,
)
from .profiles import RegressionModel, predict_metrics

DEFAULT_CV_THRESHOLD = 0.5
DEFAULT_DELTA_CV_THRESHOLD = 0.1

REASON_DISPERSION_TOO_HIGH = "dispersion_too_high"
REASON_NO_FEASIBLE_CANDIDATE = "no_feasible_candidate"

SCRIPT_SCHEMA = "replay-script/1"
EPOCH_NOTE = "ms since trace start"

KIND_ANALYSIS = "analysis_job"
KIND_SERVICE = "service_request"


@dataclass(frozen=True)
class CvReport:
    """Per-dimension and aggregate dispersion of a cluster.

    A dimension with zero mean but positive spread has no defined CV; it is
    reported as ``None`` and excluded from the aggregate. The aggregate is
    the arithmetic mean of the defined per-dimension CVs.
    """

    per_dim_cv: tuple[Optional[float], ...]
    aggregate_cv: float

    @property
    def undefined_dims(self) -> tuple[str, ...]:
        return tuple(name for name, cv in zip(METRIC_NAMES, self.per_dim_cv) if cv is None)


def cluster_cv(cluster: Cluster, extra: Optional[MetricVector] = None) -> CvReport:
    """Coefficient of variation (sigma/mu) per raw dimension, plus aggregate.

    With ``extra`` given, the statistics describe the cluster's members plus
    that one additional point; the update is exact, via the population moment
    identities, so no member vectors are needed.
    """
    n = cluster.size
    means = list(cluster.per_dim_mean)
    stds = list(cluster.per_dim_std)
    if extra is not None:
        x = extra.as_tuple()
        updated_means = []
        updated_stds = []
        for mean, std, value in zip(means, stds, x):
            second_moment = n * (std * std + mean * mean) + value * value
            new_mean = (n * mean + value) / (n + 1)
            variance = max(0.0, second_moment / (n + 1) - new_mean * new_mean)
            updated_means.append(new_mean)
            updated_stds.append(math.sqrt(variance))
        means, stds = updated_means, updated_stds

    per_dim: list[Optional[float]] = []
    defined: list[float] = []
    for mean, std in zip(means, stds):
        if mean > 0:
            cv = std / mean
        elif std == 0:
            cv = 0.0
        else:
            per_dim.append(None)
            continue
        per_dim.append(cv)
        defined.append(cv)
    aggregate = sum(defined) / len(defined) if defined else 0.0
    return CvReport(per_dim_cv=tuple(per_dim), aggregate_cv=aggregate)


@dataclass(frozen=True)
class MatchedWorkload:
    workload: WorkloadType
    input_size_mb: float

    def to_dict(self) -> dict:
        return {"workload": self.workload.to_dict(), "input_size_mb": self.input_size_mb}

    @classmethod
    def from_dict(cls, data: dict) -> "MatchedWorkload":
        return cls(workload=WorkloadType.from_dict(data["workload"]), input_size_mb=float(data["input_size_mb"]))


@dataclass(frozen=True)
class MatchResult:
    """Outcome of matching one cluster against the candidate grid.

    For unmatched clusters, ``cv_after``/``delta_cv`` describe the best
    (smallest-delta) candidate that was evaluated, or repeat ``cv_before``
    when none was.
    """

    cluster_id: int
    matched: Optional[MatchedWorkload]
    cv_before: float
    cv_after: float
    delta_cv: float
    candidates_evaluated: int
    reason: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "cluster_id": self.cluster_id,
            "matched": self.matched.to_dict() if self.matched else None,
            "cv_before": self.cv_before,
            "cv_after": self.cv_after,
            "delta_cv": self.delta_cv,
            "candidates_evaluated": self.candidates_evaluated,
            "reason": self.reason,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MatchResult":
        matched = data.get("matched")
        return cls(
            cluster_id=int(data["cluster_id"]),
            matched=MatchedWorkload.from_dict(matched) if matched else None,
            cv_before=float(data["cv_before"]),
            cv_after=float(data["cv_after"]),
            delta_cv=float(data["delta_cv"]),
            candidates_evaluated=int(data["candidates_evaluated"]),
            reason=data.get("reason"),
        )


def match_clusters(
    clusters: Sequence[Cluster],
    catalog: Sequence[RegressionModel],
    size_grid: Sequence[float],
    theta1: float = DEFAULT_CV_THRESHOLD,
    theta2: float = DEFAULT_DELTA_CV_THRESHOLD,
) -> list[MatchResult]:
    """Match each cluster to the candidate causing the smallest CV change.

    A cluster with aggregate CV >= ``theta1`` is too dispersed to match at
    all. Otherwise every (model, size) pair is evaluated; a candidate is
    feasible when the CV change stays below ``theta2``, and ties are broken
    by workload name, then smaller size. Unmatched clusters are ordinary
    results, not errors.
    """
    if not catalog:
        raise ValueError("catalog must be non-empty")
    sizes = sorted(set(size_grid))
    if not sizes:
        raise ValueError("size_grid must be non-empty")
    if sizes[0] <= 0:
        raise ValueError(f"sizes must be positive, got {sizes[0]}")

    results = []
    for cluster in clusters:
        cv_before = cluster_cv(cluster).aggregate_cv
        if cv_before >= theta1:
            results.append(
                MatchResult(
                    cluster_id=cluster.cluster_id,
                    matched=None,
                    cv_before=cv_before,
                    cv_after=cv_before,
                    delta_cv=0.0,
                    candidates_evaluated=0,
                    reason=REASON_DISPERSION_TOO_HIGH,
                )
            )
            continue

        evaluated = 0
        best_key = None
        best: Optional[tuple[MatchedWorkload, float, float]] = None
        closest: Optional[tuple[float, float]] = None  # (delta, cv_after) of best infeasible
        for model in catalog:
            for size in sizes:
                evaluated += 1
                predicted = predict_metrics(model, size)
                cv_after = cluster_cv(cluster, extra=predicted).aggregate_cv
                delta = cv_after - cv_before
                if closest is None or delta < closest[0]:
                    closest = (delta, cv_after)
                if delta >= theta2:
                    continue
                key = (delta, model.workload.name, size)
                if best_key is None or key < best_key:
                    best_key = key
                    best = (MatchedWorkload(model.workload, size), cv_after, delta)

        if best is not None:
            matched, cv_after, delta = best
            results.append(
                MatchResult(
                    cluster_id=cluster.cluster_id,
                    matched=matched,
                    cv_before=cv_before,
                    cv_after=cv_after,
                    delta_cv=delta,
                    candidates_evaluated=evaluated,
                )
            )
        else:
            assert closest is not None
            results.append(
                MatchResult(
                    cluster_id=cluster.cluster_id,
                    matched=None,
                    cv_before=cv_before,
                    cv_after=closest[1],
                    delta_cv=closest[0],
                    candidates_evaluated=evaluated,
                    reason=REASON_NO_FEASIBLE_CANDIDATE,
                )
            )
    return results


@dataclass(frozen=True)
class ReplayEvent:
    """One timestamped submission: a typed analysis job or a search query."""

    ts_ms: int
    tenant_id: str
    kind: str
    workload_name: Optional[str] = None
    input_size_mb: Optional[float] = None
    query: Optional[str] = None

    def __post_init__(self):
        if self.ts_ms < 0:
            raise ValueError(f"ts_ms must be >= 0, got {self.ts_ms}")
        if self.kind == KIND_ANALYSIS:
            if not self.workload_name or self.input_size_mb is None or self.query is not None:
                raise ValueError("analysis_job events carry workload_name and input_size_mb only")
        elif self.kind == KIND_SERVICE:
            if not self.query or self.workload_name is not None or self.input_size_mb is not None:
                raise ValueError("service_request events carry a query only")
        else:
            raise ValueError(f"unknown event kind: {self.kind!r}")

    @classmethod
    def analysis_job(cls, ts_ms: int, tenant_id: str, workload_name: str, input_size_mb: float) -> "ReplayEvent":
        return cls(ts_ms=ts_ms, tenant_id=tenant_id, kind=KIND_ANALYSIS, workload_name=workload_name, input_size_mb=input_size_mb)

    @classmethod
    def service_request(cls, ts_ms: int, tenant_id: str, query: str) -> "ReplayEvent":
        return cls(ts_ms=ts_ms, tenant_id=tenant_id, kind=KIND_SERVICE, query=query)

    def to_dict(self) -> dict:
        base = {"ts_ms": self.ts_ms, "tenant": self.tenant_id, "kind": self.kind}
        if self.kind == KIND_ANALYSIS:
            base["workload"] = self.workload_name
            base["input_size_mb"] = self.input_size_mb
        else:
            base["query"] = self.query
        return base

    @classmethod
    def from_dict(cls, data: dict) -> "ReplayEvent":
        kind = data["kind"]
        if kind == KIND_ANALYSIS:
            return cls.analysis_job(int(data["ts_ms"]), data["tenant"], data["workload"], float(data["input_size_mb"]))
        if kind == KIND_SERVICE:
            return cls.service_request(int(data["ts_ms"]), data["tenant"], data["query"])
        raise ValueError(f"unknown event kind: {kind!r}")


@dataclass(frozen=True)
class CoverageReport:
    """How much of the trace the script reproduces."""

    total_jobs: int
    matched_jobs: int
    dropped_jobs: int
    service_requests: int
    unmatched_clusters: tuple[int, ...]

    def to_dict(self) -> dict:
        return {
            "total_jobs": self.total_jobs,
            "matched_jobs": self.matched_jobs,
            "dropped_jobs": self.dropped_jobs,
            "service_requests": self.service_requests,
            "unmatched_clusters": list(self.unmatched_clusters),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CoverageReport":
        return cls(
            total_jobs=int(data["total_jobs"]),
            matched_jobs=int(data["matched_jobs"]),
            dropped_jobs=int(data["dropped_jobs"]),
            service_requests=int(data["service_requests"]),
            unmatched_clusters=tuple(int(c) for c in data["unmatched_clusters"]),
        )


@dataclass(frozen=True)
class ReplayScript:
    epoch_note: str
    events: tuple[ReplayEvent, ...]
    coverage: CoverageReport


def build_replay_script(
    jobs: Sequence[AnonymousJob],
    clusters: Sequence[Cluster],
    matches: Sequence[MatchResult],
    requests: Sequence[ServiceRequest],
) -> ReplayScript:
    """Fuse matched analysis jobs and raw service requests into one timeline.

    Each job in a matched cluster becomes an analysis event at its original
    timestamp and tenant; every request passes through unchanged. Events are
    stably sorted by timestamp (ties keep analysis-before-service, each in
    trace order). Jobs in unmatched clusters are dropped and counted.
    """
    membership: dict[str, int] = {}
    for cluster in clusters:
        for job_id in cluster.member_job_ids:
            membership[job_id] = cluster.cluster_id
    matched_by_cluster: dict[int, MatchedWorkload] = {
        m.cluster_id: m.matched for m in matches if m.matched is not None
    }
    unmatched_ids = sorted(m.cluster_id for m in matches if m.matched is None)

    events: list[ReplayEvent] = []
    matched_jobs = 0
    dropped_jobs = 0
    for job in jobs:
        cluster_id = membership.get(job.job_id)
        if cluster_id is None:
            raise ValueError(f"job {job.job_id!r} is not covered by the clustering")
        assignment = matched_by_cluster.get(cluster_id)
        if assignment is None:
            dropped_jobs += 1
            continue
        matched_jobs += 1
        events.append(
            ReplayEvent.analysis_job(
                ts_ms=job.submit_ts_ms,
                tenant_id=job.tenant_id,
                workload_name=assignment.workload.name,
                input_size_mb=assignment.input_size_mb,
            )
        )
    for request in requests:
        events.append(ReplayEvent.service_request(request.ts_ms, request.tenant_id, request.query))
    events.sort(key=lambda e: e.ts_ms)

    coverage = CoverageReport(
        total_jobs=len(jobs),
        matched_jobs=matched_jobs,
        dropped_jobs=dropped_jobs,
        service_requests=len(requests),
        unmatched_clusters=tuple(unmatched_ids),
    )
    return ReplayScript(epoch_note=EPOCH_NOTE, events=tuple(events), coverage=coverage)


def dump_script(script: ReplayScript) -> str:
    """Serialize a script as newline-delimited JSON, one event per line."""
    header = {
        "schema": SCRIPT_SCHEMA,
        "epoch": script.epoch_note,
        "coverage": script.coverage.to_dict(),
    }
    lines = [json.dumps(header, separators=(",", ":"))]
    lines.extend(json.dumps(event.to_dict(), separators=(",", ":")) for event in script.events)
    return "\n".join(lines) + "\n"


def parse_script(text: str) -> ReplayScript:
    lines = [line for line in text.splitlines() if line.strip()]
    if not lines:
        raise ValueError("empty replay script")
    header = json.loads(lines[0])
    if header.get("schema") != SCRIPT_SCHEMA:
        raise ValueError(f"unsupported script schema: {header.get('schema')!r}")
    events = tuple(ReplayEvent.from_dict(json.loads(line)) for line in lines[1:])
    return ReplayScript(
        epoch_note=header["epoch"],
        events=events,
        coverage=CoverageReport.from_dict(header["coverage"]),
    )


def write_script(script: ReplayScript, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dump_script(script))


def load_script(path) -> ReplayScript:
    with open(path, encoding="utf-8") as fh:
        return parse_script(fh.read())
