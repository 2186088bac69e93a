"""Workload profile catalog and per-metric size regression.

Each cataloged workload gets its own model: five independent ordinary
least-squares fits of metric against input size (intercept + slope). Separate
models per workload type keep the categorical variable out of the design
matrix; polynomial feature expansion is a possible extension, not the default.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .ingest import MalformedRow, MissingHeader, _parse_float
from .model import (
    METRIC_NAMES,
    MetricVector,
    ProfileSample,
    TraceToolError,
    WorkloadKind,
    WorkloadType,
)

PROFILE_HEADER = ("workload", "input_size_mb", "exec_time_s", "cpu_usage", "mem_gb", "cpi", "mai")

CATALOG_SCHEMA = "regression-catalog/1"


class ProfileError(TraceToolError):
    pass


class InsufficientSamples(ProfileError):
    pass


class DegenerateDesign(ProfileError):
    pass


@dataclass(frozen=True)
class RegressionModel:
    """Affine size->metric model for one workload.

    ``coefficients`` holds one (intercept, slope) pair per metric, in
    ``METRIC_NAMES`` order. ``residual_variance`` is the mean squared training
    residual per metric (population convention, divisor n).
    """

    workload: WorkloadType
    coefficients: tuple[tuple[float, float], ...]
    residual_variance: tuple[float, ...]
    sample_count: int

    def __post_init__(self):
        if len(self.coefficients) != len(METRIC_NAMES):
            raise ValueError("expected one (intercept, slope) pair per metric")
        if self.sample_count < 2:
            raise ValueError(f"sample_count must be >= 2, got {self.sample_count}")

    def to_dict(self) -> dict:
        return {
            "workload": self.workload.to_dict(),
            "coefficients": {
                name: {"intercept": pair[0], "slope": pair[1]}
                for name, pair in zip(METRIC_NAMES, self.coefficients)
            },
            "residual_variance": {name: v for name, v in zip(METRIC_NAMES, self.residual_variance)},
            "sample_count": self.sample_count,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RegressionModel":
        coeffs = data["coefficients"]
        return cls(
            workload=WorkloadType.from_dict(data["workload"]),
            coefficients=tuple((float(coeffs[n]["intercept"]), float(coeffs[n]["slope"])) for n in METRIC_NAMES),
            residual_variance=tuple(float(data["residual_variance"][n]) for n in METRIC_NAMES),
            sample_count=int(data["sample_count"]),
        )


def load_profiles(path) -> list[ProfileSample]:
    """Parse a profile CSV; repeated (workload, size) measurements are fine."""
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = tuple(next(reader))
        except StopIteration:
            raise MissingHeader(path, PROFILE_HEADER) from None
        if header != PROFILE_HEADER:
            raise MissingHeader(path, PROFILE_HEADER)
        samples: list[ProfileSample] = []
        for row in reader:
            line = reader.line_num
            if len(row) != len(PROFILE_HEADER):
                raise MalformedRow(line, f"expected {len(PROFILE_HEADER)} fields, got {len(row)}")
            if not row[0]:
                raise MalformedRow(line, "empty workload name")
            size = _parse_float(row[1], "input_size_mb", line)
            values = [_parse_float(row[2 + i], name, line) for i, name in enumerate(METRIC_NAMES)]
            try:
                sample = ProfileSample(
                    workload=WorkloadType(name=row[0], kind=WorkloadKind.ANALYSIS),
                    input_size_mb=size,
                    metrics=MetricVector(*values),
                )
            except ValueError as exc:
                raise MalformedRow(line, str(exc)) from None
            samples.append(sample)
    return samples


def group_by_workload(samples: Sequence[ProfileSample]) -> dict[str, list[ProfileSample]]:
    """Group samples by workload name, preserving first-appearance order."""
    groups: dict[str, list[ProfileSample]] = {}
    for sample in samples:
        groups.setdefault(sample.workload.name, []).append(sample)
    return groups


def training_size_grid(samples: Sequence[ProfileSample]) -> list[float]:
    """Sorted distinct input sizes in the catalog, the default match grid."""
    return sorted({s.input_size_mb for s in samples})


def fit_regression(samples: Sequence[ProfileSample]) -> RegressionModel:
    """Fit per-metric OLS of metric against input size for one workload.

    Samples are canonicalized (sorted) before fitting so the result is exactly
    invariant to input order.
    """
    if len(samples) < 2:
        raise InsufficientSamples(f"need >= 2 samples, got {len(samples)}")
    names = {s.workload for s in samples}
    if len(names) != 1:
        raise ValueError(f"samples span multiple workloads: {sorted(w.name for w in names)}")
    ordered = sorted(samples, key=lambda s: (s.input_size_mb, s.metrics.as_tuple()))
    sizes = np.array([s.input_size_mb for s in ordered], dtype=float)
    if np.unique(sizes).size < 2:
        raise DegenerateDesign("all samples share one input size")

    design = np.column_stack([np.ones_like(sizes), sizes])
    targets = np.array([s.metrics.as_tuple() for s in ordered], dtype=float)
    solution, _, _, _ = np.linalg.lstsq(design, targets, rcond=None)
    residuals = targets - design @ solution
    variance = np.mean(residuals**2, axis=0)

    return RegressionModel(
        workload=ordered[0].workload,
        coefficients=tuple((float(solution[0, m]), float(solution[1, m])) for m in range(len(METRIC_NAMES))),
        residual_variance=tuple(float(v) for v in variance),
        sample_count=len(ordered),
    )


def fit_catalog(samples: Sequence[ProfileSample]) -> list[RegressionModel]:
    """Fit one model per workload present in the samples."""
    return [fit_regression(group) for group in group_by_workload(samples).values()]


def predict_metrics(model: RegressionModel, input_size_mb: float) -> MetricVector:
    """Predict the metric vector at a given input size, clamped at zero."""
    if not (input_size_mb > 0):
        raise ValueError(f"input_size_mb must be > 0, got {input_size_mb}")
    values = [max(0.0, intercept + slope * input_size_mb) for intercept, slope in model.coefficients]
    return MetricVector(*values)


def catalog_to_json(models: Sequence[RegressionModel]) -> str:
    return json.dumps(
        {"schema": CATALOG_SCHEMA, "models": [m.to_dict() for m in models]},
        indent=2,
        sort_keys=False,
    )


def catalog_from_json(text: str) -> list[RegressionModel]:
    data = json.loads(text)
    if data.get("schema") != CATALOG_SCHEMA:
        raise ValueError(f"unsupported catalog schema: {data.get('schema')!r}")
    return [RegressionModel.from_dict(m) for m in data["models"]]
