"""Deterministic list-scheduling simulator for training task graphs.

Each task occupies one resource (the collective update occupies every GPU's
compute slot at once): forward/backward/update run on per-GPU compute slots,
input reads serialize on their machine's disk, device copies use a per-GPU
copy engine, and all gradient exchanges share a single collective channel.
A task starts at the earliest instant when all predecessors have finished
and its resources are free; ties are broken by iteration, then descending
layer for exchanges, then ascending node id. The same inputs always produce
the same schedule.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass
from typing import Mapping

from .analytic import PreconditionViolated
from .dag import BuildOptions, CycleDetected, build_iteration_dag
from .model import (
    ALL_GPUS_RESOURCE,
    ClusterSpec,
    IterationProfile,
    Strategy,
    TaskDag,
    TaskKind,
    Timeline,
    TimelineEntry,
    WorkloadSpec,
)


class UnmappedResource(ValueError):
    """A task references a GPU or machine the cluster does not have."""


class MismatchedProvenance(ValueError):
    """A timeline and a profile describe different networks."""


@dataclass(frozen=True)
class ResourceMap:
    """Names the scheduling resources a cluster offers and maps tasks to them."""

    compute: tuple[str, ...]
    io: tuple[str, ...]
    h2d: tuple[str, ...]
    comm: str
    gpu_machine: tuple[int, ...]
    cluster: ClusterSpec

    @classmethod
    def from_cluster(cls, cluster: ClusterSpec) -> "ResourceMap":
        gpus = cluster.total_gpus
        return cls(
            compute=tuple(f"gpu{i}" for i in range(gpus)),
            io=tuple(f"disk{m}" for m in range(cluster.machines)),
            h2d=tuple(f"h2d{i}" for i in range(gpus)),
            comm="net",
            gpu_machine=tuple(cluster.machine_of(g) for g in range(gpus)),
            cluster=cluster,
        )

    def labels(self) -> tuple[str, ...]:
        return self.compute + self.io + self.h2d + (self.comm,)

    def resources_for(self, node) -> tuple[str, ...]:
        """All resource labels a task holds while it runs."""
        if node.kind is TaskKind.ALLREDUCE:
            return (self.comm,)
        if node.kind is TaskKind.UPDATE:
            return self.compute
        gpu = node.gpu
        if gpu is None or not 0 <= gpu < len(self.compute):
            raise UnmappedResource(f"task {node.id} targets gpu {gpu!r} outside this cluster")
        if node.kind is TaskKind.IO:
            return (self.io[self.gpu_machine[gpu]],)
        if node.kind is TaskKind.H2D:
            return (self.h2d[gpu],)
        return (self.compute[gpu],)

    def entry_label(self, node) -> str:
        if node.kind is TaskKind.UPDATE:
            return ALL_GPUS_RESOURCE
        return self.resources_for(node)[0]


@dataclass(frozen=True)
class SimResult:
    timeline: Timeline
    makespan: float
    avg_iteration_time: float
    per_resource_busy: Mapping[str, float]
    comm_efficiency: float


def simulate(
    dag: TaskDag,
    resources: ResourceMap,
    profile: IterationProfile | None = None,
) -> SimResult:
    """Schedule every task in the graph; returns the full timeline.

    `profile` is only needed to report communication efficiency (it carries
    the gradient byte counts); scheduling itself uses task durations alone.
    """
    nodes = dag.nodes
    n = len(nodes)
    if n == 0:
        timeline = Timeline((), 0.0, {}, {}, 0.0)
        return SimResult(timeline, 0.0, 0.0, {}, 0.0)

    ix_of = {node.id: i for i, node in enumerate(nodes)}
    label_ix = {label: i for i, label in enumerate(resources.labels())}
    need = []
    for node in nodes:
        need.append(tuple(label_ix[r] for r in resources.resources_for(node)))

    succ: list[list[int]] = [[] for _ in range(n)]
    indeg = [0] * n
    for a, b in dag.edges:
        succ[ix_of[a]].append(ix_of[b])
        indeg[ix_of[b]] += 1

    def prio(node) -> tuple:
        if node.kind is TaskKind.ALLREDUCE:
            return (node.iteration, 0, -node.layer, node.id)
        return (node.iteration, 1, 0, node.id)

    keys = [prio(node) for node in nodes]
    durations = [node.duration for node in nodes]
    busy = [0.0] * len(label_ix)
    start = [0.0] * n
    end = [0.0] * n
    done = [False] * n
    pool: list[tuple[tuple, int]] = sorted((keys[i], i) for i in range(n) if indeg[i] == 0)
    events: list[tuple[float, int]] = []
    finished = 0

    def try_start(now: float) -> None:
        remaining = []
        for key, ix in pool:
            if all(busy[r] <= now for r in need[ix]):
                start[ix] = now
                end[ix] = now + durations[ix]
                for r in need[ix]:
                    busy[r] = end[ix]
                heapq.heappush(events, (end[ix], ix))
            else:
                remaining.append((key, ix))
        pool[:] = remaining

    try_start(0.0)
    while events:
        now, ix = heapq.heappop(events)
        completed = [ix]
        while events and events[0][0] == now:
            completed.append(heapq.heappop(events)[1])
        fresh = []
        for c in completed:
            done[c] = True
            finished += 1
            for s in succ[c]:
                indeg[s] -= 1
                if indeg[s] == 0:
                    fresh.append((keys[s], s))
        if fresh:
            pool.extend(fresh)
            pool.sort()
        try_start(now)

    if finished < n:
        raise CycleDetected(f"{n - finished} tasks never became ready")

    entries = tuple(
        TimelineEntry(
            task_id=node.id,
            kind=node.kind,
            layer=node.layer,
            gpu=node.gpu,
            iteration=node.iteration,
            resource=resources.entry_label(node),
            start=start[i],
            end=end[i],
        )
        for i, node in enumerate(nodes)
    )
    timeline = _build_timeline(entries)
    makespan = timeline.makespan

    per_busy: dict[str, float] = {}
    for i, node in enumerate(nodes):
        for r in need[i]:
            label = resources.labels()[r]
            per_busy[label] = per_busy.get(label, 0.0) + durations[i]

    updates = sorted(
        (e for e in entries if e.kind is TaskKind.UPDATE), key=lambda e: e.iteration
    )
    if len(updates) >= 2:
        avg = (updates[-1].end - updates[0].end) / (len(updates) - 1)
    else:
        avg = makespan

    efficiency = _comm_efficiency(entries, resources, profile)
    return SimResult(timeline, makespan, avg, per_busy, efficiency)


def _build_timeline(entries: tuple[TimelineEntry, ...]) -> Timeline:
    makespan = max((e.end for e in entries), default=0.0)
    comm_windows: dict[tuple[int, int], tuple[float, float]] = {}
    backward_windows: dict[tuple[int, int], tuple[float, float]] = {}
    for e in entries:
        if e.kind is TaskKind.ALLREDUCE:
            comm_windows[e.iteration, e.layer] = (e.start, e.end)
        elif e.kind is TaskKind.BACKWARD:
            key = (e.iteration, e.layer)
            prev = backward_windows.get(key)
            if prev is None:
                backward_windows[key] = (e.start, e.end)
            else:
                backward_windows[key] = (min(prev[0], e.start), max(prev[1], e.end))
    exposed = _exposed_comm_by_iteration(entries)
    steady = exposed[max(exposed)] if exposed else 0.0
    return Timeline(entries, makespan, comm_windows, backward_windows, steady)


def _exposed_comm_by_iteration(entries) -> dict[int, float]:
    """Per iteration: exchange time spent while no backward task runs.

    Computed per learnable layer (exchange duration minus its overlap with
    the merged backward intervals, clamped to [0, duration]) and summed in
    ascending layer order, so an exchange fully outside every backward
    window contributes exactly its duration.
    """
    backward = sorted(
        (e.start, e.end) for e in entries if e.kind is TaskKind.BACKWARD and e.end > e.start
    )
    merged: list[tuple[float, float]] = []
    for s, e in backward:
        if merged and s <= merged[-1][1]:
            merged[-1] = (merged[-1][0], max(merged[-1][1], e))
        else:
            merged.append((s, e))

    per_iter_layers: dict[int, list[tuple[int, float]]] = {}
    for e in entries:
        if e.kind is not TaskKind.ALLREDUCE:
            continue
        overlap = 0.0
        for bs, be in merged:
            if be <= e.start:
                continue
            if bs >= e.end:
                break
            overlap += min(e.end, be) - max(e.start, bs)
        duration = e.end - e.start
        exposed = min(duration, max(0.0, duration - overlap))
        per_iter_layers.setdefault(e.iteration, []).append((e.layer, exposed))

    totals: dict[int, float] = {}
    for iteration, pairs in per_iter_layers.items():
        totals[iteration] = sum(v for _, v in sorted(pairs))
    return totals


def _comm_efficiency(entries, resources: ResourceMap, profile) -> float:
    """Achieved exchange throughput over the network bandwidth, in [0, 1].

    Uses the ring-collective traffic model: each layer moves
    2 * gradient_bytes * (G - 1) / G bytes per exchange.
    """
    if profile is None:
        return 0.0
    gpus = resources.cluster.total_gpus
    if gpus < 2:
        return 0.0
    busy_us = 0.0
    moved_bytes = 0.0
    for e in entries:
        if e.kind is TaskKind.ALLREDUCE:
            busy_us += e.end - e.start
            moved_bytes += 2.0 * profile.layer(e.layer).gradient_bytes * (gpus - 1) / gpus
    if busy_us <= 0.0:
        return 0.0
    rate = moved_bytes / (busy_us / 1e6)
    return min(1.0, rate / resources.cluster.network_bandwidth)


def nonoverlapped_comm(result: SimResult, profile: IterationProfile) -> float:
    """Steady-state exchange time left exposed outside backward compute.

    Requires the result to come from a graph built from `profile`; the value
    is clamped into [0, profile.total_comm] so it can feed overlap_time.
    """
    timeline = result.timeline
    layers = {e.layer for e in timeline.entries if e.kind is TaskKind.BACKWARD}
    if layers and max(layers) != profile.layers:
        raise MismatchedProvenance(
            f"timeline covers {max(layers)} layers, profile has {profile.layers}"
        )
    return min(timeline.nonoverlapped_comm, profile.total_comm)


def average_iteration_time(
    workload: WorkloadSpec,
    cluster: ClusterSpec,
    profile: IterationProfile,
    strategy: Strategy,
    iterations: int,
) -> float:
    """Steady-state iteration period from a chained multi-iteration run.

    Simulates `iterations` chained iterations and returns
    (finish of last - finish of first) / (iterations - 1), which sheds the
    pipeline fill-in of the first iteration.
    """
    if iterations < 2:
        raise PreconditionViolated("need at least 2 iterations to measure a period")
    options = BuildOptions.for_strategy(strategy, iterations=iterations)
    dag = build_iteration_dag(workload, cluster, profile, options)
    result = simulate(dag, ResourceMap.from_cluster(cluster), profile)
    return result.avg_iteration_time


def _fmt_us(value: float) -> str:
    """Plain decimal with up to six fractional digits, never exponent form."""
    text = f"{value:.6f}".rstrip("0").rstrip(".")
    return text if text not in ("", "-0") else "0"


GANTT_HEADER = "task_id,kind,layer,gpu,resource,start_us,end_us"


def gantt_export(result: SimResult) -> str:
    """CSV of every scheduled interval, ordered by start time then task id."""
    lines = [GANTT_HEADER]
    for e in sorted(result.timeline.entries, key=lambda e: (e.start, e.task_id)):
        layer = "" if e.layer is None else str(e.layer)
        gpu = "" if e.gpu is None else str(e.gpu)
        lines.append(
            f"{e.task_id},{e.kind.value},{layer},{gpu},{e.resource},"
            f"{_fmt_us(e.start)},{_fmt_us(e.end)}"
        )
    return "\n".join(lines) + "\n"
