"""Builds the per-iteration task graph for synchronous data-parallel training.

Each training iteration expands to: one input-read and one host-to-device
copy per GPU, forward tasks per (layer, gpu) ascending, backward tasks
descending, one collective gradient-exchange task per learnable layer, and a
single model-update task shared by all GPUs. Node ids are assigned in exactly
that order, iteration by iteration, so the layout is reproducible.

Cross-iteration wiring encodes the overlap strategy. Without input prefetch
the next read waits for the update. With prefetch the next read may start as
soon as the previous read has finished *and* its host buffer has been drained
by the device copy (reads reuse a single staging buffer per GPU, so read k+1
also waits on copy k). The early_h2d flag additionally lets the next device
copy run before the update finishes, modeling runtimes that stage the next
batch into spare device memory.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass

from .model import (
    ClusterSpec,
    InvalidSpec,
    IterationProfile,
    Strategy,
    CommTrigger,
    TaskDag,
    TaskKind,
    TaskNode,
    WorkloadSpec,
)


class MismatchedLayerCount(ValueError):
    """Profile and workload disagree on the number of layers."""


class CycleDetected(ValueError):
    """The graph contains a dependency cycle."""


@dataclass(frozen=True)
class BuildOptions:
    """How many iterations to chain and which overlaps to wire in."""

    iterations: int
    strategy: Strategy
    prefetch_io: bool = False
    early_h2d: bool = False

    def __post_init__(self):
        if not isinstance(self.iterations, int) or self.iterations < 1:
            raise InvalidSpec(f"iterations must be >= 1, got {self.iterations!r}")

    @classmethod
    def for_strategy(cls, strategy: Strategy, iterations: int = 1) -> "BuildOptions":
        # Strategies that overlap input with compute prefetch both the read
        # and the device copy; that is what makes the input path a pipeline
        # stage instead of a serial prefix.
        return cls(
            iterations=iterations,
            strategy=strategy,
            prefetch_io=strategy.overlaps_io,
            early_h2d=strategy.overlaps_io,
        )


def build_iteration_dag(
    workload: WorkloadSpec,
    cluster: ClusterSpec,
    profile: IterationProfile,
    options: BuildOptions,
) -> TaskDag:
    """Expand `options.iterations` training iterations into a task graph."""
    if profile.layers != workload.layers:
        raise MismatchedLayerCount(
            f"profile has {profile.layers} layers, workload declares {workload.layers}"
        )
    gpus = cluster.total_gpus
    layers = profile.layers
    learnable = [lp.layer_id for lp in profile.layer_profiles if lp.learnable]

    nodes: list[TaskNode] = []
    edges: list[tuple[int, int]] = []
    next_id = 0

    def add(kind, layer, gpu, iteration, duration) -> int:
        nonlocal next_id
        nodes.append(TaskNode(next_id, kind, layer, gpu, iteration, duration))
        next_id += 1
        return next_id - 1

    prev = None
    for it in range(options.iterations):
        ids = {
            "io": [add(TaskKind.IO, None, g, it, profile.io_time) for g in range(gpus)],
            "h2d": [add(TaskKind.H2D, None, g, it, profile.h2d_time) for g in range(gpus)],
            "fwd": {},
            "bwd": {},
            "ar": {},
        }
        for layer in range(1, layers + 1):
            for g in range(gpus):
                ids["fwd"][layer, g] = add(
                    TaskKind.FORWARD, layer, g, it, profile.layer(layer).forward_time
                )
        for layer in range(layers, 0, -1):
            for g in range(gpus):
                ids["bwd"][layer, g] = add(
                    TaskKind.BACKWARD, layer, g, it, profile.layer(layer).backward_time
                )
        for layer in sorted(learnable, reverse=True):
            ids["ar"][layer] = add(TaskKind.ALLREDUCE, layer, None, it, profile.layer(layer).comm_time)
        ids["update"] = add(TaskKind.UPDATE, None, None, it, profile.update_time)

        for g in range(gpus):
            edges.append((ids["io"][g], ids["h2d"][g]))
            edges.append((ids["h2d"][g], ids["fwd"][1, g]))
            for layer in range(1, layers):
                edges.append((ids["fwd"][layer, g], ids["fwd"][layer + 1, g]))
            edges.append((ids["fwd"][layers, g], ids["bwd"][layers, g]))
            for layer in range(layers, 1, -1):
                edges.append((ids["bwd"][layer, g], ids["bwd"][layer - 1, g]))

        for layer in learnable:
            trigger_layer = (
                layer
                if options.strategy.comm_trigger is CommTrigger.AFTER_LAYER_BACKWARD
                else 1
            )
            for g in range(gpus):
                edges.append((ids["bwd"][trigger_layer, g], ids["ar"][layer]))
            edges.append((ids["ar"][layer], ids["update"]))
        if not learnable:
            for g in range(gpus):
                edges.append((ids["bwd"][1, g], ids["update"]))

        if prev is not None:
            for g in range(gpus):
                if options.prefetch_io:
                    edges.append((prev["io"][g], ids["io"][g]))
                    edges.append((prev["h2d"][g], ids["io"][g]))
                else:
                    edges.append((prev["update"], ids["io"][g]))
                if not options.early_h2d:
                    edges.append((prev["update"], ids["h2d"][g]))
                edges.append((prev["update"], ids["fwd"][1, g]))
        prev = ids

    if options.prefetch_io:
        for g in range(gpus):
            tail = add(TaskKind.IO, None, g, options.iterations, profile.io_time)
            edges.append((prev["io"][g], tail))
            edges.append((prev["h2d"][g], tail))

    return TaskDag(nodes=tuple(nodes), edges=tuple(edges))


def topological_order(dag: TaskDag) -> list[int]:
    """Kahn's algorithm; ties broken by ascending node id."""
    indeg = {n.id: 0 for n in dag.nodes}
    succ: dict[int, list[int]] = {n.id: [] for n in dag.nodes}
    for a, b in dag.edges:
        succ[a].append(b)
        indeg[b] += 1
    heap = [i for i, d in indeg.items() if d == 0]
    heapq.heapify(heap)
    order = []
    while heap:
        node = heapq.heappop(heap)
        order.append(node)
        for nxt in succ[node]:
            indeg[nxt] -= 1
            if indeg[nxt] == 0:
                heapq.heappush(heap, nxt)
    if len(order) != len(dag.nodes):
        raise CycleDetected(f"{len(dag.nodes) - len(order)} tasks are stuck in a cycle")
    return order


def critical_path(dag: TaskDag) -> tuple[list[int], float]:
    """Heaviest path by summed task duration.

    Returns (node ids along the path, total duration). Among equally heavy
    paths the lexicographically smallest id sequence wins, which keeps the
    result stable across runs.
    """
    if not dag.nodes:
        return [], 0.0
    order = topological_order(dag)
    preds: dict[int, list[int]] = {n.id: [] for n in dag.nodes}
    for a, b in dag.edges:
        preds[b].append(a)
    best: dict[int, tuple[float, tuple[int, ...]]] = {}
    for node_id in order:
        duration = dag.by_id[node_id].duration
        candidate = (duration, (node_id,))
        for p in preds[node_id]:
            p_len, p_path = best[p]
            option = (p_len + duration, p_path + (node_id,))
            if _better(option, candidate):
                candidate = option
        best[node_id] = candidate
    top = None
    for length, path in best.values():
        if top is None or _better((length, path), top):
            top = (length, path)
    return list(top[1]), top[0]


def _better(a: tuple[float, tuple[int, ...]], b: tuple[float, tuple[int, ...]]) -> bool:
    # Longer duration wins; exact ties prefer the smaller id sequence.
    if a[0] != b[0]:
        return a[0] > b[0]
    return a[1] < b[1]


def dag_to_json(dag: TaskDag) -> dict:
    return {
        "nodes": [
            {
                "id": n.id,
                "kind": n.kind.value,
                "layer": n.layer,
                "gpu": n.gpu,
                "iteration": n.iteration,
                "duration": n.duration,
            }
            for n in dag.nodes
        ],
        "edges": [list(e) for e in dag.edges],
    }


def dag_to_dot(dag: TaskDag) -> str:
    """Graphviz rendering with one color per task kind."""
    colors = {
        TaskKind.IO: "lightblue",
        TaskKind.H2D: "lightcyan",
        TaskKind.FORWARD: "palegreen",
        TaskKind.BACKWARD: "khaki",
        TaskKind.ALLREDUCE: "salmon",
        TaskKind.UPDATE: "plum",
    }
    lines = ["digraph tasks {", "  rankdir=TB;"]
    for n in dag.nodes:
        detail = n.kind.value
        if n.layer is not None:
            detail += f" L{n.layer}"
        if n.gpu is not None:
            detail += f" g{n.gpu}"
        lines.append(
            f'  t{n.id} [label="T{n.id}\\n{detail}" style=filled fillcolor={colors[n.kind]}];'
        )
    for a, b in dag.edges:
        lines.append(f"  t{a} -> t{b};")
    lines.append("}")
    return "\n".join(lines) + "\n"
