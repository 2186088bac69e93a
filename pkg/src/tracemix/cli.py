"""Command-line front door: every service capability, scriptable.

Each subcommand reads files, runs exactly one pipeline stage, and writes the
stage's serialized output (stdout by default, ``--out`` to a file). Usage
errors exit 2; data errors exit 1 with a structured error line on stderr.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

from . import cluster as clustering
from . import combine, ingest, profiles, replay
from .model import TraceToolError, TraceWindow

MATCH_SCHEMA = "match-results/1"


def _parse_window(text: str, machine_class=None) -> TraceWindow:
    try:
        start_raw, end_raw = text.split(":", 1)
        return TraceWindow(start_ms=int(start_raw), end_ms=int(end_raw), machine_class=machine_class)
    except ValueError as exc:
        raise TraceToolError(f"bad --window {text!r} (expected START_MS:END_MS): {exc}") from None


def _load_inputs(args, want_queries: bool = True):
    jobs = ingest.parse_job_trace(args.jobs)
    requests = ingest.parse_query_log(args.queries) if want_queries and args.queries else []
    if args.window:
        window = _parse_window(args.window, getattr(args, "machine_class", None))
        jobs = ingest.filter_window(jobs, window)
        requests = ingest.filter_window(requests, window)
    return jobs, requests


def _emit(args, text: str) -> None:
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _cmd_stats(args) -> int:
    jobs, requests = _load_inputs(args)
    rows = ingest.hourly_stats(jobs, requests, span_hours=args.span_hours)
    _emit(args, ingest.stats_to_csv(rows))
    return 0


def _cmd_fit(args) -> int:
    samples = profiles.load_profiles(args.profiles)
    models = profiles.fit_catalog(samples)
    _emit(args, profiles.catalog_to_json(models) + "\n")
    return 0


def _cmd_cluster(args) -> int:
    jobs, _ = _load_inputs(args, want_queries=False)
    result = clustering.cluster_jobs(jobs, k_max=args.k_max, seed=args.seed)
    _emit(args, result.to_json() + "\n")
    return 0


def _match_pipeline(args):
    jobs, requests = _load_inputs(args)
    samples = profiles.load_profiles(args.profiles)
    if not samples:
        raise TraceToolError("the profile catalog has no samples")
    result = clustering.cluster_jobs(jobs, k_max=args.k_max, seed=args.seed)
    catalog = profiles.fit_catalog(samples)
    size_grid = profiles.training_size_grid(samples)
    matches = combine.match_clusters(result.clusters, catalog, size_grid, theta1=args.theta1, theta2=args.theta2)
    return jobs, requests, result, matches


def _cmd_match(args) -> int:
    _, _, result, matches = _match_pipeline(args)
    payload = {
        "schema": MATCH_SCHEMA,
        "seed": args.seed,
        "theta1": args.theta1,
        "theta2": args.theta2,
        "k": result.k,
        "bic": result.bic if math.isfinite(result.bic) else None,
        "results": [m.to_dict() for m in matches],
    }
    _emit(args, json.dumps(payload, indent=2) + "\n")
    return 0


def _cmd_script(args) -> int:
    jobs, requests, result, matches = _match_pipeline(args)
    script = combine.build_replay_script(jobs, result.clusters, matches, requests)
    _emit(args, combine.dump_script(script))
    return 0


def _make_executor(args):
    if args.executor == "mock":
        return replay.MockExecutor()
    if args.executor == "shell":
        if not args.template:
            raise TraceToolError("--template is required for the shell executor")
        return replay.ShellExecutor(args.template)
    if args.executor == "http":
        if not args.template:
            raise TraceToolError("--template is required for the http executor")
        return replay.HttpExecutor(args.template)
    raise TraceToolError(f"unknown executor {args.executor!r}")


def _cmd_replay(args) -> int:
    script = combine.load_script(args.script)
    schedules = replay.extract_tenants(script)
    if schedules:
        plan = replay.ScalePlan.plan(args.scale_factor, args.seed, len(schedules))
        schedules = replay.scale_tenants(schedules, plan)
    executor = _make_executor(args)
    report = replay.run_replay(schedules, executor, time_compression=args.compression)
    summary = report.summary()
    header = (
        f"# seed={args.seed} scale_factor={args.scale_factor!r} compression={args.compression!r}"
        f" events={summary['count']} p50_lateness_ms={summary['p50_lateness_ms']:.3f}"
        f" p99_lateness_ms={summary['p99_lateness_ms']:.3f} failures={summary['failures']}\n"
    )
    _emit(args, header + report.to_csv())
    return 0


def _cmd_serve(args) -> int:
    import uvicorn

    from .service import ServiceConfig, create_app

    host, _, port = args.listen.rpartition(":")
    config = ServiceConfig(
        jobs_path=Path(args.jobs),
        queries_path=Path(args.queries),
        profiles_path=Path(args.profiles),
        machines_path=Path(args.machines),
        data_dir=Path(args.data_dir),
        portal_dir=Path(args.portal_dir) if args.portal_dir else None,
    )
    uvicorn.run(create_app(config), host=host or "127.0.0.1", port=int(port))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tracemix", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, queries: bool = True, seeded: bool = False, thresholds: bool = False):
        p.add_argument("--jobs", required=True, help="job-trace CSV")
        if queries:
            p.add_argument("--queries", default=None, help="query-log CSV")
        p.add_argument("--window", default=None, help="START_MS:END_MS half-open filter")
        p.add_argument("--machine-class", default=None, dest="machine_class")
        p.add_argument("--out", default=None, help="write output to this file instead of stdout")
        if seeded:
            p.add_argument("--k-max", type=int, default=None, dest="k_max")
            p.add_argument("--seed", type=int, default=0)
        if thresholds:
            p.add_argument("--profiles", required=True, help="profile CSV")
            p.add_argument("--theta1", type=float, default=combine.DEFAULT_CV_THRESHOLD)
            p.add_argument("--theta2", type=float, default=combine.DEFAULT_DELTA_CV_THRESHOLD)

    p_stats = sub.add_parser("stats", help="per-hour trace statistics as CSV")
    add_common(p_stats)
    p_stats.add_argument("--span-hours", type=int, default=24, dest="span_hours")
    p_stats.set_defaults(func=_cmd_stats)

    p_fit = sub.add_parser("fit", help="fit the regression catalog from profiles")
    p_fit.add_argument("--profiles", required=True)
    p_fit.add_argument("--out", default=None)
    p_fit.set_defaults(func=_cmd_fit)

    p_cluster = sub.add_parser("cluster", help="cluster anonymous jobs (BIC-selected k)")
    add_common(p_cluster, queries=False, seeded=True)
    p_cluster.set_defaults(func=_cmd_cluster)

    p_match = sub.add_parser("match", help="match clusters to cataloged workloads")
    add_common(p_match, seeded=True, thresholds=True)
    p_match.set_defaults(func=_cmd_match)

    p_script = sub.add_parser("script", help="emit the combined replay script (NDJSON)")
    add_common(p_script, seeded=True, thresholds=True)
    p_script.set_defaults(func=_cmd_script)

    p_replay = sub.add_parser("replay", help="replay a script through an executor")
    p_replay.add_argument("--script", required=True, help="replay script NDJSON")
    p_replay.add_argument("--scale-factor", type=float, default=1.0, dest="scale_factor")
    p_replay.add_argument("--seed", type=int, default=0)
    p_replay.add_argument("--compression", type=float, default=60.0)
    p_replay.add_argument("--executor", choices=("mock", "shell", "http"), default="mock")
    p_replay.add_argument("--template", default=None, help="command or URL template for shell/http executors")
    p_replay.add_argument("--out", default=None)
    p_replay.set_defaults(func=_cmd_replay)

    p_serve = sub.add_parser("serve", help="run the HTTP service")
    p_serve.add_argument("--listen", default="127.0.0.1:8000")
    p_serve.add_argument("--jobs", required=True)
    p_serve.add_argument("--queries", required=True)
    p_serve.add_argument("--profiles", required=True)
    p_serve.add_argument("--machines", required=True)
    p_serve.add_argument("--data-dir", required=True, dest="data_dir")
    p_serve.add_argument("--portal-dir", default=None, dest="portal_dir", help="static portal assets to serve at /")
    p_serve.set_defaults(func=_cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except TraceToolError as exc:
        error = {"code": type(exc).__name__, "message": str(exc)}
        print(f"error: {json.dumps(error)}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {json.dumps({'code': 'OSError', 'message': str(exc)})}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
