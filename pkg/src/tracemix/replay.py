"""Multi-tenant open-loop workload generator.

Each tenant schedule gets its own logical client; submissions fire at their
scheduled (compressed) times regardless of how long earlier submissions take
to complete, so the trace's arrival pattern survives slow targets. Scaling
the tenant population clones or samples whole schedules with their exact
timestamps, which keeps the per-second submission distribution a faithful
multiple of the original.
"""
from __future__ import annotations

import io
import math
import random
import shlex
import subprocess
import threading
import time
import urllib.error
import urllib.parse
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

from .combine import KIND_ANALYSIS, KIND_SERVICE, ReplayEvent, ReplayScript
from .model import TraceToolError

OUTCOME_OK = "ok"

DEFAULT_START_DELAY_MS = 250
DEFAULT_EXECUTOR_WORKERS = 64

REPORT_CSV_HEADER = "scheduled_ts_ms,actual_ts_ms,tenant,kind,outcome"


class ReplayError(TraceToolError):
    pass


class EmptyResult(ReplayError):
    pass


class ExecutorFailure(ReplayError):
    pass


@dataclass(frozen=True)
class TenantSchedule:
    """One tenant's time-ordered submissions."""

    tenant_id: str
    events: tuple[ReplayEvent, ...]

    def __post_init__(self):
        last = -1
        for event in self.events:
            if event.tenant_id != self.tenant_id:
                raise ValueError(f"event tenant {event.tenant_id!r} != schedule tenant {self.tenant_id!r}")
            if event.ts_ms < last:
                raise ValueError("schedule events must be time-ordered")
            last = event.ts_ms


def extract_tenants(script: ReplayScript) -> list[TenantSchedule]:
    """Partition script events by tenant, in order of first appearance."""
    grouped: dict[str, list[ReplayEvent]] = {}
    for event in script.events:
        grouped.setdefault(event.tenant_id, []).append(event)
    return [TenantSchedule(tenant_id=tid, events=tuple(events)) for tid, events in grouped.items()]


def _round_half_up(value: float) -> int:
    return math.floor(value + 0.5)


@dataclass(frozen=True)
class ScalePlan:
    """A seeded, reproducible change of the tenant population size."""

    factor: float
    seed: int
    resulting_count: int

    def __post_init__(self):
        if not (self.factor > 0):
            raise ValueError(f"scale factor must be > 0, got {self.factor}")

    @classmethod
    def plan(cls, factor: float, seed: int, tenant_count: int) -> "ScalePlan":
        if not (factor > 0):
            raise ValueError(f"scale factor must be > 0, got {factor}")
        return cls(factor=factor, seed=seed, resulting_count=_round_half_up(factor * tenant_count))


def _clone_schedule(source: TenantSchedule, ordinal: int) -> TenantSchedule:
    clone_id = f"{source.tenant_id}+{ordinal}"
    events = tuple(
        ReplayEvent(
            ts_ms=e.ts_ms,
            tenant_id=clone_id,
            kind=e.kind,
            workload_name=e.workload_name,
            input_size_mb=e.input_size_mb,
            query=e.query,
        )
        for e in source.events
    )
    return TenantSchedule(tenant_id=clone_id, events=events)


def scale_tenants(schedules: Sequence[TenantSchedule], plan: ScalePlan) -> list[TenantSchedule]:
    """Grow or shrink the tenant population per the plan.

    Integer factors are exact and seed-independent: every schedule is kept
    and cloned (factor - 1) times, so aggregate per-second submission counts
    are exactly factor times the original. Fractional factors >= 1 keep all
    originals and add seeded uniform clones; factors < 1 keep a seeded
    uniform sample. Clones reuse their source's exact event timestamps under
    a fresh tenant id (suffix ``+n``).
    """
    n = len(schedules)
    target = plan.resulting_count
    expected = _round_half_up(plan.factor * n)
    if target != expected:
        raise ValueError(f"plan resulting_count={target} does not match round({plan.factor} * {n})={expected}")
    if target == 0:
        raise EmptyResult(f"scaling {n} tenants by {plan.factor} leaves none")

    if plan.factor >= 1 and float(plan.factor).is_integer():
        factor = int(plan.factor)
        result = list(schedules)
        for source in schedules:
            result.extend(_clone_schedule(source, ordinal) for ordinal in range(1, factor))
        return result

    rng = random.Random(plan.seed)
    if plan.factor >= 1:
        result = list(schedules)
        clone_counts: dict[int, int] = {}
        for index in (rng.randrange(n) for _ in range(target - n)):
            clone_counts[index] = clone_counts.get(index, 0) + 1
            result.append(_clone_schedule(schedules[index], clone_counts[index]))
        return result

    kept = sorted(rng.sample(range(n), target))
    return [schedules[i] for i in kept]


class MockExecutor:
    """Records every submission; optional per-event sleep to emulate work."""

    def __init__(self, sleep_s: float = 0.0):
        self.sleep_s = sleep_s
        self._lock = threading.Lock()
        self.invocations: list[tuple[ReplayEvent, float]] = []

    def execute(self, event: ReplayEvent) -> None:
        with self._lock:
            self.invocations.append((event, time.monotonic()))
        if self.sleep_s > 0:
            time.sleep(self.sleep_s)


def _event_substitutions(event: ReplayEvent) -> dict[str, str]:
    subs = {"tenant": event.tenant_id, "ts": str(event.ts_ms)}
    if event.kind == KIND_ANALYSIS:
        subs["workload"] = event.workload_name or ""
        subs["size"] = repr(event.input_size_mb)
    if event.kind == KIND_SERVICE:
        subs["query"] = event.query or ""
    return subs


def expand_shell_template(template: str, event: ReplayEvent) -> list[str]:
    """Split the template, then substitute placeholders token by token.

    Splitting first keeps queries with spaces as single arguments.
    """
    subs = _event_substitutions(event)
    argv = []
    try:
        tokens = shlex.split(template)
    except ValueError as exc:
        raise ExecutorFailure(f"bad template: {exc}") from None
    for token in tokens:
        try:
            argv.append(token.format(**subs))
        except (KeyError, IndexError) as exc:
            raise ExecutorFailure(f"template placeholder not available for {event.kind}: {exc}") from None
    if not argv:
        raise ExecutorFailure("template expands to an empty command")
    return argv


class ShellExecutor:
    """Runs one subprocess per event, e.g. template ``run.sh {workload} {size}``."""

    def __init__(self, template: str, timeout_s: float = 600.0):
        self.template = template
        self.timeout_s = timeout_s

    def execute(self, event: ReplayEvent) -> None:
        argv = expand_shell_template(self.template, event)
        try:
            proc = subprocess.run(argv, capture_output=True, timeout=self.timeout_s)
        except (OSError, subprocess.TimeoutExpired) as exc:
            raise ExecutorFailure(str(exc)) from None
        if proc.returncode != 0:
            raise ExecutorFailure(f"command exited {proc.returncode}")


class HttpExecutor:
    """Issues one GET per event; placeholders are substituted URL-encoded."""

    def __init__(self, url_template: str, timeout_s: float = 30.0):
        self.url_template = url_template
        self.timeout_s = timeout_s

    def url_for(self, event: ReplayEvent) -> str:
        subs = {key: urllib.parse.quote(value, safe="") for key, value in _event_substitutions(event).items()}
        try:
            return self.url_template.format(**subs)
        except (KeyError, IndexError) as exc:
            raise ExecutorFailure(f"template placeholder not available for {event.kind}: {exc}") from None

    def execute(self, event: ReplayEvent) -> None:
        url = self.url_for(event)
        try:
            with urllib.request.urlopen(url, timeout=self.timeout_s) as response:
                response.read()
        except urllib.error.HTTPError as exc:
            raise ExecutorFailure(f"HTTP {exc.code}") from None
        except (urllib.error.URLError, OSError) as exc:
            raise ExecutorFailure(str(exc)) from None


@dataclass(frozen=True)
class DispatchRecord:
    """Scheduled vs actual dispatch of one event, both on the trace timeline."""

    scheduled_ts_ms: int
    actual_ts_ms: float
    tenant_id: str
    kind: str
    outcome: str
    lateness_ms: float  # wall-clock milliseconds; negative means early


def _nearest_rank(sorted_values: Sequence[float], fraction: float) -> float:
    if not sorted_values:
        return 0.0
    rank = max(1, math.ceil(fraction * len(sorted_values)))
    return sorted_values[rank - 1]


@dataclass
class ReplayReport:
    """One record per scheduled event, sorted by (scheduled_ts, tenant)."""

    records: list[DispatchRecord]

    @property
    def count(self) -> int:
        return len(self.records)

    def lateness_percentiles(self) -> tuple[float, float]:
        """(p50, p99) of absolute dispatch lateness in wall milliseconds."""
        lateness = sorted(abs(r.lateness_ms) for r in self.records)
        return _nearest_rank(lateness, 0.50), _nearest_rank(lateness, 0.99)

    def summary(self) -> dict:
        p50, p99 = self.lateness_percentiles()
        failures = sum(1 for r in self.records if r.outcome != OUTCOME_OK)
        return {"count": self.count, "p50_lateness_ms": p50, "p99_lateness_ms": p99, "failures": failures}

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write(REPORT_CSV_HEADER + "\n")
        for r in self.records:
            out.write(f"{r.scheduled_ts_ms},{r.actual_ts_ms:.3f},{r.tenant_id},{r.kind},{r.outcome}\n")
        return out.getvalue()


def run_replay(
    schedules: Sequence[TenantSchedule],
    executor,
    time_compression: float,
    start_delay_ms: int = DEFAULT_START_DELAY_MS,
    max_workers: int = DEFAULT_EXECUTOR_WORKERS,
    clock: Callable[[], float] = time.monotonic,
    sleeper: Callable[[float], None] = time.sleep,
) -> ReplayReport:
    """Replay all schedules open-loop through the executor.

    One dispatcher thread per tenant sleeps until each event's due time
    (trace time divided by ``time_compression``), records the dispatch, and
    hands the invocation to a worker pool without waiting for completion.
    Executor failures are recorded per event and never abort the run. The
    function returns once every dispatched invocation has finished, so the
    report always holds one outcome per scheduled event.
    """
    if not (time_compression > 0):
        raise ValueError(f"time_compression must be > 0, got {time_compression}")
    if not schedules:
        return ReplayReport(records=[])

    records: list[DispatchRecord] = []
    records_lock = threading.Lock()

    pool = ThreadPoolExecutor(max_workers=max_workers)
    # Force all worker threads into existence before the clock starts, so
    # lazy thread creation never shows up as dispatch lateness.
    warmup = threading.Barrier(max_workers + 1)
    for _ in range(max_workers):
        pool.submit(warmup.wait)
    warmup.wait()

    epoch = clock() + start_delay_ms / 1000.0

    def invoke(event: ReplayEvent, actual_ts_ms: float, lateness_ms: float) -> None:
        try:
            executor.execute(event)
            outcome = OUTCOME_OK
        except Exception as exc:  # noqa: BLE001 - every failure becomes a record
            outcome = f"error: {exc}"
        record = DispatchRecord(
            scheduled_ts_ms=event.ts_ms,
            actual_ts_ms=actual_ts_ms,
            tenant_id=event.tenant_id,
            kind=event.kind,
            outcome=outcome,
            lateness_ms=lateness_ms,
        )
        with records_lock:
            records.append(record)

    def client(schedule: TenantSchedule) -> None:
        for event in schedule.events:
            due = epoch + event.ts_ms / 1000.0 / time_compression
            while True:
                now = clock()
                if now >= due:
                    break
                sleeper(due - now)
            lateness_ms = (now - due) * 1000.0
            actual_ts_ms = event.ts_ms + lateness_ms * time_compression
            pool.submit(invoke, event, actual_ts_ms, lateness_ms)

    clients = [threading.Thread(target=client, args=(s,), name=f"tenant-{s.tenant_id}") for s in schedules]
    for thread in clients:
        thread.start()
    for thread in clients:
        thread.join()
    pool.shutdown(wait=True)

    records.sort(key=lambda r: (r.scheduled_ts_ms, r.tenant_id))
    return ReplayReport(records=records)
