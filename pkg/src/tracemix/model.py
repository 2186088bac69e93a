"""Core domain types shared by every pipeline stage.

All types are immutable value objects: safe to share between threads, hashable
where useful, and round-trippable through ``to_dict`` / ``from_dict`` without
loss. Timestamps are integer milliseconds relative to the start of the trace;
input sizes are megabytes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Optional

#: Canonical order of the five workload-characteristic metrics. Serialization
#: and clustering both rely on this order being stable.
METRIC_NAMES = ("exec_time_s", "cpu_usage", "mem_gb", "cpi", "mai")

METRIC_DIMS = len(METRIC_NAMES)


class TraceToolError(Exception):
    """Base class for errors raised by this package."""


@dataclass(frozen=True)
class MetricVector:
    """A job's workload characteristics as a point in 5-D metric space.

    ``cpu_usage`` is total CPU-seconds consumed per wall-clock second, i.e.
    average core occupancy.
    """

    exec_time_s: float
    cpu_usage: float
    mem_gb: float
    cpi: float
    mai: float

    def __post_init__(self):
        for name in METRIC_NAMES:
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {value!r}")

    def as_tuple(self) -> tuple[float, float, float, float, float]:
        return (self.exec_time_s, self.cpu_usage, self.mem_gb, self.cpi, self.mai)

    def to_dict(self) -> dict:
        return {name: getattr(self, name) for name in METRIC_NAMES}

    @classmethod
    def from_dict(cls, data: dict) -> "MetricVector":
        return cls(*(float(data[name]) for name in METRIC_NAMES))

    @classmethod
    def from_sequence(cls, values: Iterable[float]) -> "MetricVector":
        vals = tuple(float(v) for v in values)
        if len(vals) != METRIC_DIMS:
            raise ValueError(f"expected {METRIC_DIMS} components, got {len(vals)}")
        return cls(*vals)


def metric_distance(a: MetricVector, b: MetricVector) -> float:
    """Euclidean distance between two metric vectors."""
    return math.dist(a.as_tuple(), b.as_tuple())


class WorkloadKind(str, Enum):
    ANALYSIS = "analysis"
    SERVICE = "service"


@dataclass(frozen=True)
class WorkloadType:
    """A runnable workload in the catalog, e.g. ("sort", analysis)."""

    name: str
    kind: WorkloadKind = WorkloadKind.ANALYSIS

    def __post_init__(self):
        if not self.name:
            raise ValueError("workload name must be non-empty")

    def to_dict(self) -> dict:
        return {"name": self.name, "kind": self.kind.value}

    @classmethod
    def from_dict(cls, data: dict) -> "WorkloadType":
        return cls(name=data["name"], kind=WorkloadKind(data["kind"]))


@dataclass(frozen=True)
class AnonymousJob:
    """A trace job whose workload type and input data are unknown.

    ``machine_class`` is an optional extension carried by traces that record
    which machine class ran the job; it is ``None`` for the plain schema.
    """

    job_id: str
    submit_ts_ms: int
    tenant_id: str
    metrics: MetricVector
    machine_class: Optional[str] = None

    def __post_init__(self):
        if not self.job_id:
            raise ValueError("job_id must be non-empty")
        if self.submit_ts_ms < 0:
            raise ValueError(f"submit_ts_ms must be >= 0, got {self.submit_ts_ms}")

    def to_dict(self) -> dict:
        return {
            "job_id": self.job_id,
            "submit_ts_ms": self.submit_ts_ms,
            "tenant_id": self.tenant_id,
            "metrics": self.metrics.to_dict(),
            "machine_class": self.machine_class,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "AnonymousJob":
        return cls(
            job_id=data["job_id"],
            submit_ts_ms=int(data["submit_ts_ms"]),
            tenant_id=data["tenant_id"],
            metrics=MetricVector.from_dict(data["metrics"]),
            machine_class=data.get("machine_class"),
        )


@dataclass(frozen=True)
class ServiceRequest:
    """One timestamped search query issued by an end user."""

    ts_ms: int
    tenant_id: str
    query: str

    def __post_init__(self):
        if self.ts_ms < 0:
            raise ValueError(f"ts_ms must be >= 0, got {self.ts_ms}")
        if not self.query:
            raise ValueError("query must be non-empty")

    def to_dict(self) -> dict:
        return {"ts_ms": self.ts_ms, "tenant_id": self.tenant_id, "query": self.query}

    @classmethod
    def from_dict(cls, data: dict) -> "ServiceRequest":
        return cls(ts_ms=int(data["ts_ms"]), tenant_id=data["tenant_id"], query=data["query"])


@dataclass(frozen=True)
class ProfileSample:
    """One measured run of a cataloged workload at a given input size."""

    workload: WorkloadType
    input_size_mb: float
    metrics: MetricVector

    def __post_init__(self):
        if not (self.input_size_mb > 0):
            raise ValueError(f"input_size_mb must be > 0, got {self.input_size_mb}")

    def to_dict(self) -> dict:
        return {
            "workload": self.workload.to_dict(),
            "input_size_mb": self.input_size_mb,
            "metrics": self.metrics.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ProfileSample":
        return cls(
            workload=WorkloadType.from_dict(data["workload"]),
            input_size_mb=float(data["input_size_mb"]),
            metrics=MetricVector.from_dict(data["metrics"]),
        )


@dataclass(frozen=True)
class TraceWindow:
    """Half-open time window [start_ms, end_ms) with an optional machine filter."""

    start_ms: int
    end_ms: int
    machine_class: Optional[str] = None

    def __post_init__(self):
        if not (self.start_ms < self.end_ms):
            raise ValueError(f"window must satisfy start_ms < end_ms, got [{self.start_ms}, {self.end_ms})")

    def contains(self, ts_ms: int) -> bool:
        return self.start_ms <= ts_ms < self.end_ms

    def to_dict(self) -> dict:
        return {"start_ms": self.start_ms, "end_ms": self.end_ms, "machine_class": self.machine_class}

    @classmethod
    def from_dict(cls, data: dict) -> "TraceWindow":
        return cls(
            start_ms=int(data["start_ms"]),
            end_ms=int(data["end_ms"]),
            machine_class=data.get("machine_class"),
        )


@dataclass(frozen=True)
class MachineClass:
    """A homogeneous group of machines in the tested data center."""

    class_id: str
    cores: int
    mem_gb: float
    count: int

    def __post_init__(self):
        if self.cores <= 0:
            raise ValueError(f"cores must be positive, got {self.cores}")
        if not (self.mem_gb > 0):
            raise ValueError(f"mem_gb must be positive, got {self.mem_gb}")
        if self.count < 1:
            raise ValueError(f"count must be >= 1, got {self.count}")

    def to_dict(self) -> dict:
        return {"class_id": self.class_id, "cores": self.cores, "mem_gb": self.mem_gb, "count": self.count}

    @classmethod
    def from_dict(cls, data: dict) -> "MachineClass":
        return cls(
            class_id=data["class_id"],
            cores=int(data["cores"]),
            mem_gb=float(data["mem_gb"]),
            count=int(data["count"]),
        )
