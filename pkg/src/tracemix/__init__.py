"""tracemix: turn anonymized data-center traces into executable mixed workload replays."""

from .model import (
    AnonymousJob,
    MachineClass,
    MetricVector,
    ProfileSample,
    ServiceRequest,
    TraceToolError,
    TraceWindow,
    WorkloadKind,
    WorkloadType,
    metric_distance,
)

__all__ = [
    "AnonymousJob",
    "MachineClass",
    "MetricVector",
    "ProfileSample",
    "ServiceRequest",
    "TraceToolError",
    "TraceWindow",
    "WorkloadKind",
    "WorkloadType",
    "metric_distance",
]

__version__ = "0.1.0"
