"""Command line front end.

Subcommands: predict (analytic + simulated iteration time from a trace),
simulate (one scheduling run, summarized), speedup (weak-scaling sweep over
GPU counts), gantt (per-task schedule as CSV or SVG), validate (trace
linting and summary). Exit codes: 0 success, 1 bad input, 2 internal
invariant violation.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, replace

from .analytic import (
    DivisionDegenerate,
    PreconditionViolated,
    io_overlap_time,
    overlap_time,
    sgd_iteration_time,
    ssgd_naive_time,
)
from .dag import BuildOptions, CycleDetected, MismatchedLayerCount, build_iteration_dag
from .model import (
    ALL_GPUS_RESOURCE,
    ClusterSpec,
    CommTrigger,
    InvalidProfile,
    InvalidSpec,
    InvalidTimeline,
    IterationProfile,
    Strategy,
    StrategyKind,
    TaskKind,
    WorkloadSpec,
)
from .sim import (
    MismatchedProvenance,
    ResourceMap,
    SimResult,
    UnmappedResource,
    gantt_export,
    nonoverlapped_comm,
    simulate,
)
from .trace import (
    EmptyAfterWarmup,
    InconsistentBlocks,
    MalformedRow,
    TraceSet,
    average_profile,
    derive_transfer_times,
    parse_trace,
    trace_warnings,
)


class _UsageError(Exception):
    pass


_INPUT_ERRORS = (
    _UsageError,
    OSError,
    json.JSONDecodeError,
    MalformedRow,
    InconsistentBlocks,
    EmptyAfterWarmup,
    InvalidSpec,
    InvalidProfile,
    MismatchedLayerCount,
)
_INTERNAL_ERRORS = (
    CycleDetected,
    UnmappedResource,
    InvalidTimeline,
    MismatchedProvenance,
    PreconditionViolated,
    DivisionDegenerate,
)


@dataclass
class RunConfig:
    command: str
    trace: str | None = None
    cluster: str | None = None
    workload: str | None = None
    strategy: Strategy = Strategy(StrategyKind.WFBP)
    gpus: int | None = None
    iterations: int = 5
    warmup: int = 0
    io_source: str = "trace"
    out_format: str = "json"
    measured: str | None = None
    out: str | None = None
    gpu_counts: tuple[int, ...] = ()


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); bad flags are input errors
        raise _UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="sgdsim", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, needs_trace in (
        ("predict", True),
        ("simulate", True),
        ("speedup", True),
        ("gantt", True),
        ("validate", True),
    ):
        p = sub.add_parser(name)
        p.add_argument("--trace", required=needs_trace, help="trace file, or - for stdin")
        if name != "validate":
            p.add_argument("--cluster", required=True, help="cluster spec JSON")
            p.add_argument("--workload", required=True, help="workload spec JSON")
            p.add_argument(
                "--strategy",
                choices=[k.value for k in StrategyKind],
                default=StrategyKind.WFBP.value,
            )
            p.add_argument("--comm-trigger", choices=[t.value for t in CommTrigger])
            p.add_argument("--gpus", type=int, help="override the cluster's GPU count")
            p.add_argument("--iterations", type=int, default=5)
            p.add_argument("--io-source", choices=["trace", "bandwidth"], default="trace")
            p.add_argument("--measured", help="JSON sidecar of measured times per GPU count")
        p.add_argument("--warmup", type=int, default=0)
        default_format = "csv" if name == "gantt" else "json"
        choices = ["csv", "svg"] if name == "gantt" else ["json", "csv"]
        p.add_argument("--format", dest="out_format", choices=choices, default=default_format)
        p.add_argument("--out", help="output path (default stdout)")
        if name == "speedup":
            p.add_argument("--gpu-counts", default="1,2,4,8", help="comma separated, e.g. 1,2,4")
    return parser


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig(command=args.command)
    for name in ("trace", "cluster", "workload", "gpus", "iterations", "warmup",
                 "io_source", "out_format", "measured", "out"):
        if hasattr(args, name):
            setattr(cfg, name, getattr(args, name))
    if hasattr(args, "strategy"):
        trigger = getattr(args, "comm_trigger", None)
        cfg.strategy = Strategy(
            StrategyKind(args.strategy),
            CommTrigger(trigger) if trigger else None,
        )
    if hasattr(args, "gpu_counts"):
        try:
            counts = tuple(int(c) for c in args.gpu_counts.split(",") if c.strip())
        except ValueError:
            raise _UsageError(f"bad --gpu-counts {args.gpu_counts!r}") from None
        if not counts or any(c < 1 for c in counts):
            raise _UsageError("--gpu-counts needs positive integers")
        cfg.gpu_counts = counts
    if cfg.warmup < 0:
        raise _UsageError("--warmup must be >= 0")
    if cfg.iterations < 1:
        raise _UsageError("--iterations must be >= 1")
    return cfg


# ---------------------------------------------------------------------------
# input loading


def _read_text(path: str) -> str:
    if path == "-":
        return sys.stdin.read()
    with open(path, "r", encoding="utf-8") as handle:
        return handle.read()


def _read_json(path: str) -> dict:
    try:
        return json.loads(_read_text(path))
    except json.JSONDecodeError as err:
        raise _UsageError(f"{path}: not valid JSON ({err})") from None


def _shape_cluster(base: ClusterSpec, gpus: int) -> ClusterSpec:
    """Cluster holding `gpus` GPUs: fill one machine, then whole machines."""
    per = base.gpus_per_machine
    if gpus <= per:
        machines, per = 1, gpus
    elif gpus % per == 0:
        machines = gpus // per
    else:
        raise _UsageError(
            f"--gpus {gpus} is neither <= {per} nor a multiple of {per} GPUs/machine"
        )
    return ClusterSpec(
        machines=machines,
        gpus_per_machine=per,
        disk_bandwidth=base.disk_bandwidth,
        h2d_bandwidth=base.h2d_bandwidth,
        network_bandwidth=base.network_bandwidth,
        intra_bandwidth=base.intra_bandwidth,
    )


@dataclass
class _Inputs:
    cluster: ClusterSpec
    workload: WorkloadSpec
    traces: TraceSet
    profile: IterationProfile        # what the scheduler runs on (per-GPU io)
    analytic_profile: IterationProfile  # io grown by GPUs sharing a disk
    io_source_used: str


def _resolve(cfg: RunConfig) -> _Inputs:
    cluster = ClusterSpec.from_json(_read_json(cfg.cluster))
    workload = WorkloadSpec.from_json(_read_json(cfg.workload))
    if cfg.gpus is not None:
        cluster = _shape_cluster(cluster, cfg.gpus)
    traces = parse_trace(_read_text(cfg.trace))
    base = average_profile(traces, cfg.warmup)
    if base.layers != workload.layers:
        raise _UsageError(
            f"trace has {base.layers} layers but workload declares {workload.layers}"
        )
    derived_io, derived_h2d = derive_transfer_times(workload, cluster)
    if cfg.io_source == "trace" and base.io_time > 0:
        io_time, source = base.io_time, "trace"
    else:
        io_time, source = derived_io, "bandwidth"
    profile = replace(
        base, io_time=io_time, h2d_time=derived_h2d, update_time=workload.update_time
    )
    analytic_profile = replace(profile, io_time=cluster.gpus_per_machine * io_time)
    return _Inputs(cluster, workload, traces, profile, analytic_profile, source)


def _load_measured(cfg: RunConfig) -> dict[int, float]:
    if not cfg.measured:
        return {}
    raw = _read_json(cfg.measured)
    if not isinstance(raw, dict):
        raise _UsageError(f"{cfg.measured}: expected an object of gpu count -> microseconds")
    try:
        return {int(k): float(v) for k, v in raw.items()}
    except (TypeError, ValueError):
        raise _UsageError(f"{cfg.measured}: keys must be GPU counts, values times") from None


def _run(inputs: _Inputs, cfg: RunConfig, iterations: int) -> SimResult:
    options = BuildOptions.for_strategy(cfg.strategy, iterations=iterations)
    dag = build_iteration_dag(inputs.workload, inputs.cluster, inputs.profile, options)
    return simulate(dag, ResourceMap.from_cluster(inputs.cluster), inputs.profile)


# ---------------------------------------------------------------------------
# output helpers


def _emit(text: str, out: str | None) -> None:
    if out:
        with open(out, "w", encoding="utf-8") as handle:
            handle.write(text)
    else:
        sys.stdout.write(text)


def _as_json(payload: dict) -> str:
    return json.dumps(payload, indent=2) + "\n"


def _flatten(payload: dict, prefix: str = "") -> list[tuple[str, object]]:
    rows = []
    for key, value in payload.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            rows.extend(_flatten(value, name + "."))
        elif isinstance(value, list):
            rows.append((name, ";".join(str(v) for v in value)))
        else:
            rows.append((name, value))
    return rows


def _as_kv_csv(payload: dict) -> str:
    lines = ["key,value"] + [f"{k},{v}" for k, v in _flatten(payload)]
    return "\n".join(lines) + "\n"


def _render(payload: dict, cfg: RunConfig) -> str:
    return _as_kv_csv(payload) if cfg.out_format == "csv" else _as_json(payload)


# ---------------------------------------------------------------------------
# commands


def cmd_predict(cfg: RunConfig) -> int:
    if cfg.iterations < 2:
        raise _UsageError("predict needs --iterations >= 2 to measure a steady period")
    inputs = _resolve(cfg)
    result = _run(inputs, cfg, cfg.iterations)
    exposed = nonoverlapped_comm(result, inputs.profile)
    ap = inputs.analytic_profile
    payload = {
        "inputs": {
            "trace": cfg.trace,
            "machines": inputs.cluster.machines,
            "gpus_per_machine": inputs.cluster.gpus_per_machine,
            "gpus": inputs.cluster.total_gpus,
            "strategy": cfg.strategy.kind.value,
            "comm_trigger": cfg.strategy.comm_trigger.value,
            "iterations": cfg.iterations,
            "io_source": inputs.io_source_used,
        },
        "profile": {
            "layers": inputs.profile.layers,
            "io_time_us": inputs.profile.io_time,
            "effective_io_time_us": ap.io_time,
            "h2d_time_us": inputs.profile.h2d_time,
            "forward_total_us": inputs.profile.total_forward,
            "backward_total_us": inputs.profile.total_backward,
            "comm_total_us": inputs.profile.total_comm,
            "update_time_us": inputs.profile.update_time,
            "parameter_bytes": inputs.profile.total_gradient_bytes,
        },
        "analytic_us": {
            "single_gpu": sgd_iteration_time(ap),
            "naive": ssgd_naive_time(ap),
            "io_overlap": io_overlap_time(ap),
            "overlap": overlap_time(ap, exposed),
        },
        "simulated": {
            "iteration_time_us": result.avg_iteration_time,
            "nonoverlapped_comm_us": exposed,
            "makespan_us": result.makespan,
            "comm_efficiency": result.comm_efficiency,
        },
        "notes": [
            "analytic io_overlap/overlap values exclude the update time "
            f"({inputs.profile.update_time} us); simulated times include it"
        ],
    }
    measured = _load_measured(cfg).get(inputs.cluster.total_gpus)
    if measured is not None:
        predicted = result.avg_iteration_time
        payload["measured"] = {
            "iteration_time_us": measured,
            "relative_error": abs(predicted - measured) / measured if measured else None,
        }
    _emit(_render(payload, cfg), cfg.out)
    return 0


def cmd_simulate(cfg: RunConfig) -> int:
    inputs = _resolve(cfg)
    result = _run(inputs, cfg, cfg.iterations)
    payload = {
        "tasks": len(result.timeline.entries),
        "makespan_us": result.makespan,
        "iteration_time_us": result.avg_iteration_time,
        "nonoverlapped_comm_us": nonoverlapped_comm(result, inputs.profile),
        "comm_efficiency": result.comm_efficiency,
        "per_resource_busy_us": dict(sorted(result.per_resource_busy.items())),
    }
    _emit(_render(payload, cfg), cfg.out)
    return 0


def cmd_speedup(cfg: RunConfig) -> int:
    if cfg.iterations < 2:
        raise _UsageError("speedup needs --iterations >= 2 to measure steady periods")
    measured = _load_measured(cfg)
    base_cfg = replace(cfg, gpus=1)
    single = _resolve(base_cfg)
    # One worker exchanges nothing: zero out the comm column for the baseline.
    solo_layers = tuple(replace(lp, comm_time=0.0) for lp in single.profile.layer_profiles)
    solo = replace(single.profile, layer_profiles=solo_layers)
    solo_inputs = replace(single, profile=solo)
    baseline = _run(solo_inputs, cfg, cfg.iterations).avg_iteration_time

    rows = []
    for count in cfg.gpu_counts:
        scaled = _resolve(replace(cfg, gpus=count))
        if count == 1:
            scaled = replace(scaled, profile=solo)
        result = _run(scaled, cfg, cfg.iterations)
        iter_time = result.avg_iteration_time
        if iter_time == 0.0:
            raise DivisionDegenerate(f"iteration time collapsed to zero at {count} GPUs")
        ratio = count * baseline / iter_time
        row = {
            "gpus": count,
            "iter_time_us": iter_time,
            "speedup": ratio,
            "efficiency": ratio / count,
        }
        if count in measured:
            row["measured_us"] = measured[count]
            row["relative_error"] = abs(iter_time - measured[count]) / measured[count]
        rows.append(row)

    if cfg.out_format == "csv":
        cols = ["gpus", "iter_time_us", "speedup", "efficiency"]
        if measured:
            cols += ["measured_us", "relative_error"]
        lines = [",".join(cols)]
        for row in rows:
            lines.append(",".join(str(row.get(c, "")) for c in cols))
        _emit("\n".join(lines) + "\n", cfg.out)
    else:
        _emit(_as_json({"baseline_iter_time_us": baseline, "rows": rows}), cfg.out)
    return 0


def cmd_gantt(cfg: RunConfig) -> int:
    inputs = _resolve(cfg)
    result = _run(inputs, cfg, cfg.iterations)
    if cfg.out_format == "svg":
        _emit(render_gantt_svg(result), cfg.out)
    else:
        _emit(gantt_export(result), cfg.out)
    return 0


def cmd_validate(cfg: RunConfig) -> int:
    traces = parse_trace(_read_text(cfg.trace))
    warnings = trace_warnings(traces)
    blocks = traces.iterations[cfg.warmup:]
    if not blocks:
        raise EmptyAfterWarmup(
            f"warmup {cfg.warmup} discards all {len(traces.iterations)} iterations"
        )
    count = len(blocks)
    first = blocks[0]
    data_rows = [r for r in first if r.layer_id == 0]
    payload = {
        "records_per_iteration": len(first),
        "iterations": len(traces.iterations),
        "iterations_after_warmup": count,
        "data_layer_present": bool(data_rows),
        "parameter_bytes": sum(r.size_bytes for r in first),
        "io_time_us": sum(
            sum(r.forward_us for r in block if r.layer_id == 0) for block in blocks
        ) / count,
        "forward_total_us": sum(
            sum(r.forward_us for r in block if r.layer_id != 0) for block in blocks
        ) / count,
        "backward_total_us": sum(sum(r.backward_us for r in block) for block in blocks) / count,
        "comm_total_us": sum(sum(r.comm_us for r in block) for block in blocks) / count,
        "warnings": warnings,
    }
    _emit(_render(payload, cfg), cfg.out)
    return 0


# ---------------------------------------------------------------------------
# SVG rendering


_KIND_COLORS = {
    TaskKind.IO: "#7fb3d5",
    TaskKind.H2D: "#a9cce3",
    TaskKind.FORWARD: "#7dcea0",
    TaskKind.BACKWARD: "#f7dc6f",
    TaskKind.ALLREDUCE: "#ec7063",
    TaskKind.UPDATE: "#bb8fce",
}

_LANE_CLASS_ORDER = {"gpu": 0, "disk": 1, "h2d": 2, "net": 3}


def _lane_key(label: str) -> tuple[int, int]:
    for prefix in ("disk", "h2d", "gpu"):
        if label.startswith(prefix) and label[len(prefix):].isdigit():
            return (_LANE_CLASS_ORDER[prefix], int(label[len(prefix):]))
    return (_LANE_CLASS_ORDER.get(label, 9), 0)


def _svg_num(value: float) -> str:
    return f"{value:.2f}".rstrip("0").rstrip(".")


def render_gantt_svg(result: SimResult) -> str:
    """One horizontal lane per resource, one rectangle per scheduled task."""
    entries = result.timeline.entries
    # The collective update paints onto every GPU lane instead of owning one.
    lanes = sorted(
        {e.resource for e in entries if e.resource != ALL_GPUS_RESOURCE}, key=_lane_key
    )
    lane_index = {label: i for i, label in enumerate(lanes)}
    left, top, lane_h, width = 70.0, 24.0, 22.0, 900.0
    height = top + lane_h * len(lanes) + 12.0
    span = result.makespan if result.makespan > 0 else 1.0
    scale = width / span

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_svg_num(left + width + 20)}" '
        f'height="{_svg_num(height)}" font-family="monospace" font-size="10">',
        f'<text x="4" y="14">makespan {_svg_num(result.makespan)} us</text>',
    ]
    for label in lanes:
        y = top + lane_index[label] * lane_h
        parts.append(f'<g class="lane" data-resource="{label}">')
        parts.append(f'<text x="4" y="{_svg_num(y + lane_h * 0.7)}">{label}</text>')
        parts.append(
            f'<line x1="{_svg_num(left)}" y1="{_svg_num(y + lane_h)}" '
            f'x2="{_svg_num(left + width)}" y2="{_svg_num(y + lane_h)}" stroke="#ccc"/>'
        )
        parts.append("</g>")
    gpu_lanes = [lane for lane in lanes if _lane_key(lane)[0] == _LANE_CLASS_ORDER["gpu"]]
    for e in sorted(entries, key=lambda e: (e.start, e.task_id)):
        targets = [e.resource] if e.resource != ALL_GPUS_RESOURCE else gpu_lanes
        for lane in targets:
            y = top + lane_index[lane] * lane_h + 2
            x = left + e.start * scale
            w = max((e.end - e.start) * scale, 0.5)
            parts.append(
                f'<rect class="{e.kind.value}" x="{_svg_num(x)}" y="{_svg_num(y)}" '
                f'width="{_svg_num(w)}" height="{_svg_num(lane_h - 4)}" '
                f'fill="{_KIND_COLORS[e.kind]}"><title>T{e.task_id} {e.kind.value}'
                f' {_svg_num(e.start)}-{_svg_num(e.end)} us</title></rect>'
            )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


# ---------------------------------------------------------------------------
# entry point


_COMMANDS = {
    "predict": cmd_predict,
    "simulate": cmd_simulate,
    "speedup": cmd_speedup,
    "gantt": cmd_gantt,
    "validate": cmd_validate,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        cfg = _config_from_args(parser.parse_args(argv))
        return _COMMANDS[cfg.command](cfg)
    except _INTERNAL_ERRORS as err:
        print(f"internal error: {err}", file=sys.stderr)
        return 2
    except _INPUT_ERRORS as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
