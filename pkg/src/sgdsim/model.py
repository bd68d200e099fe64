"""Core types for modeling synchronous data-parallel training iterations.

Conventions used everywhere in this package: times are microseconds held in
floats, data sizes are bytes, bandwidths are bytes per second. GPUs are
homogeneous, so one per-layer timing profile describes every worker. Values
are immutable once validated.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Mapping


class InvalidSpec(ValueError):
    """Cluster, workload, or strategy configuration that cannot be used."""


class InvalidProfile(ValueError):
    """Per-iteration timing profile with inconsistent layers or times."""


class InvalidTimeline(ValueError):
    """Schedule that violates precedence, resource, or window rules."""


def _positive(value, name, exc=InvalidSpec):
    if not isinstance(value, (int, float)) or not value > 0:
        raise exc(f"{name} must be > 0, got {value!r}")


def _nonnegative(value, name, exc=InvalidSpec):
    if not isinstance(value, (int, float)) or not value >= 0:
        raise exc(f"{name} must be >= 0, got {value!r}")


# ---------------------------------------------------------------------------
# cluster and workload configuration


@dataclass(frozen=True)
class ClusterSpec:
    """Homogeneous GPU cluster: N machines, each with the same GPU count.

    Bandwidths are bytes/second: disk_bandwidth feeds input data,
    h2d_bandwidth is the host-to-device copy path, network_bandwidth the
    inter-machine link, intra_bandwidth the intra-machine GPU interconnect.
    """

    machines: int
    gpus_per_machine: int
    disk_bandwidth: float
    h2d_bandwidth: float
    network_bandwidth: float
    intra_bandwidth: float
    total_gpus: int | None = None

    def __post_init__(self):
        if not isinstance(self.machines, int) or self.machines < 1:
            raise InvalidSpec(f"machines must be a positive count, got {self.machines!r}")
        if not isinstance(self.gpus_per_machine, int) or self.gpus_per_machine < 1:
            raise InvalidSpec(
                f"gpus_per_machine must be a positive count, got {self.gpus_per_machine!r}"
            )
        for name in ("disk_bandwidth", "h2d_bandwidth", "network_bandwidth", "intra_bandwidth"):
            _positive(getattr(self, name), name)
        derived = self.machines * self.gpus_per_machine
        if self.total_gpus is None:
            object.__setattr__(self, "total_gpus", derived)
        elif self.total_gpus != derived:
            raise InvalidSpec(
                f"total_gpus={self.total_gpus} but machines*gpus_per_machine={derived}"
            )

    def machine_of(self, gpu: int) -> int:
        if not 0 <= gpu < self.total_gpus:
            raise InvalidSpec(f"gpu index {gpu} outside cluster of {self.total_gpus}")
        return gpu // self.gpus_per_machine

    def to_json(self) -> dict:
        return {
            "machines": self.machines,
            "gpus_per_machine": self.gpus_per_machine,
            "total_gpus": self.total_gpus,
            "disk_bandwidth": self.disk_bandwidth,
            "h2d_bandwidth": self.h2d_bandwidth,
            "network_bandwidth": self.network_bandwidth,
            "intra_bandwidth": self.intra_bandwidth,
        }

    @classmethod
    def from_json(cls, data: Mapping) -> "ClusterSpec":
        try:
            return cls(
                machines=data["machines"],
                gpus_per_machine=data["gpus_per_machine"],
                disk_bandwidth=float(data["disk_bandwidth"]),
                h2d_bandwidth=float(data["h2d_bandwidth"]),
                network_bandwidth=float(data["network_bandwidth"]),
                intra_bandwidth=float(data["intra_bandwidth"]),
                total_gpus=data.get("total_gpus"),
            )
        except KeyError as missing:
            raise InvalidSpec(f"cluster spec missing field {missing}") from None


@dataclass(frozen=True)
class WorkloadSpec:
    """Model/input description: layer count, per-GPU batch, sample size."""

    layers: int
    batch_per_gpu: int
    bytes_per_sample: float
    update_time: float = 0.0

    def __post_init__(self):
        if not isinstance(self.layers, int) or self.layers < 1:
            raise InvalidSpec(f"layers must be a positive count, got {self.layers!r}")
        if not isinstance(self.batch_per_gpu, int) or self.batch_per_gpu < 1:
            raise InvalidSpec(f"batch_per_gpu must be a positive count, got {self.batch_per_gpu!r}")
        _nonnegative(self.bytes_per_sample, "bytes_per_sample")
        _nonnegative(self.update_time, "update_time")

    @property
    def input_bytes_per_gpu(self) -> float:
        return self.batch_per_gpu * self.bytes_per_sample

    def to_json(self) -> dict:
        return {
            "layers": self.layers,
            "batch_per_gpu": self.batch_per_gpu,
            "bytes_per_sample": self.bytes_per_sample,
            "update_time": self.update_time,
        }

    @classmethod
    def from_json(cls, data: Mapping) -> "WorkloadSpec":
        try:
            return cls(
                layers=data["layers"],
                batch_per_gpu=data["batch_per_gpu"],
                bytes_per_sample=float(data["bytes_per_sample"]),
                update_time=float(data.get("update_time", 0.0)),
            )
        except KeyError as missing:
            raise InvalidSpec(f"workload spec missing field {missing}") from None


# ---------------------------------------------------------------------------
# timing profiles


@dataclass(frozen=True)
class LayerProfile:
    """Measured per-layer times for one GPU plus the gradient payload size."""

    layer_id: int
    name: str
    forward_time: float
    backward_time: float
    comm_time: float
    gradient_bytes: int

    def __post_init__(self):
        if not isinstance(self.layer_id, int) or self.layer_id < 1:
            raise InvalidProfile(f"layer_id must be >= 1, got {self.layer_id!r}")
        for field_name in ("forward_time", "backward_time", "comm_time"):
            _nonnegative(getattr(self, field_name), field_name, InvalidProfile)
        _nonnegative(self.gradient_bytes, "gradient_bytes", InvalidProfile)
        if self.comm_time > 0 and self.gradient_bytes == 0:
            raise InvalidProfile(
                f"layer {self.layer_id} ({self.name}): comm_time > 0 with no gradient payload"
            )

    @property
    def learnable(self) -> bool:
        return self.gradient_bytes > 0


@dataclass(frozen=True)
class IterationProfile:
    """One iteration's timing inputs: input read, host copy, layers, update."""

    io_time: float
    h2d_time: float
    layer_profiles: tuple[LayerProfile, ...]
    update_time: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "layer_profiles", tuple(self.layer_profiles))
        _nonnegative(self.io_time, "io_time", InvalidProfile)
        _nonnegative(self.h2d_time, "h2d_time", InvalidProfile)
        _nonnegative(self.update_time, "update_time", InvalidProfile)
        if not self.layer_profiles:
            raise InvalidProfile("profile needs at least one layer")
        ids = [lp.layer_id for lp in self.layer_profiles]
        if ids != list(range(1, len(ids) + 1)):
            raise InvalidProfile(f"layer ids must be contiguous from 1, got {ids}")

    @property
    def layers(self) -> int:
        return len(self.layer_profiles)

    @cached_property
    def total_forward(self) -> float:
        return sum(lp.forward_time for lp in self.layer_profiles)

    @cached_property
    def total_backward(self) -> float:
        return sum(lp.backward_time for lp in self.layer_profiles)

    @cached_property
    def total_comm(self) -> float:
        return sum(lp.comm_time for lp in self.layer_profiles)

    @cached_property
    def total_gradient_bytes(self) -> int:
        return sum(lp.gradient_bytes for lp in self.layer_profiles)

    def layer(self, layer_id: int) -> LayerProfile:
        if not 1 <= layer_id <= len(self.layer_profiles):
            raise InvalidProfile(f"no layer {layer_id} in a {len(self.layer_profiles)}-layer profile")
        return self.layer_profiles[layer_id - 1]


# ---------------------------------------------------------------------------
# execution strategy


class StrategyKind(str, Enum):
    NAIVE = "naive"
    IO_OVERLAP = "io-overlap"
    WFBP = "wfbp"
    IO_WFBP = "io-wfbp"


class CommTrigger(str, Enum):
    """When a layer's gradient exchange may start relative to backward."""

    AFTER_LAYER_BACKWARD = "per-layer"
    AFTER_ALL_BACKWARD = "after-all"


def _default_trigger(kind: StrategyKind) -> CommTrigger:
    if kind in (StrategyKind.WFBP, StrategyKind.IO_WFBP):
        return CommTrigger.AFTER_LAYER_BACKWARD
    return CommTrigger.AFTER_ALL_BACKWARD


@dataclass(frozen=True)
class Strategy:
    """Which overlaps the runtime exploits, and the gradient-exchange trigger."""

    kind: StrategyKind
    comm_trigger: CommTrigger | None = None

    def __post_init__(self):
        if self.comm_trigger is None:
            object.__setattr__(self, "comm_trigger", _default_trigger(self.kind))
        if self.kind is StrategyKind.NAIVE and self.comm_trigger is not CommTrigger.AFTER_ALL_BACKWARD:
            raise InvalidSpec("naive execution exchanges gradients only after the full backward pass")

    @property
    def overlaps_io(self) -> bool:
        return self.kind in (StrategyKind.IO_OVERLAP, StrategyKind.IO_WFBP)


# ---------------------------------------------------------------------------
# task graph


class TaskKind(str, Enum):
    IO = "io"
    H2D = "h2d"
    FORWARD = "forward"
    BACKWARD = "backward"
    ALLREDUCE = "allreduce"
    UPDATE = "update"


_NEEDS_GPU = {TaskKind.IO, TaskKind.H2D, TaskKind.FORWARD, TaskKind.BACKWARD}
_NEEDS_LAYER = {TaskKind.FORWARD, TaskKind.BACKWARD, TaskKind.ALLREDUCE}


@dataclass(frozen=True)
class TaskNode:
    id: int
    kind: TaskKind
    layer: int | None
    gpu: int | None
    iteration: int
    duration: float

    def __post_init__(self):
        _nonnegative(self.duration, f"duration of task {self.id}")
        if self.iteration < 0:
            raise InvalidSpec(f"task {self.id}: iteration must be >= 0")
        needs_gpu = self.kind in _NEEDS_GPU
        needs_layer = self.kind in _NEEDS_LAYER
        if needs_gpu != (self.gpu is not None):
            raise InvalidSpec(f"task {self.id} ({self.kind.value}): gpu field mismatch")
        if needs_layer != (self.layer is not None):
            raise InvalidSpec(f"task {self.id} ({self.kind.value}): layer field mismatch")


@dataclass(frozen=True)
class TaskDag:
    """Directed task graph; edges are (predecessor id, successor id)."""

    nodes: tuple[TaskNode, ...]
    edges: tuple[tuple[int, int], ...]

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "edges", tuple(tuple(e) for e in self.edges))
        ids = [n.id for n in self.nodes]
        if len(set(ids)) != len(ids):
            raise InvalidSpec("duplicate task ids")
        known = set(ids)
        seen = set()
        for a, b in self.edges:
            if a not in known or b not in known:
                raise InvalidSpec(f"edge ({a}, {b}) references unknown task")
            if a == b:
                raise InvalidSpec(f"self edge on task {a}")
            if (a, b) in seen:
                raise InvalidSpec(f"duplicate edge ({a}, {b})")
            seen.add((a, b))

    @cached_property
    def by_id(self) -> Mapping[int, TaskNode]:
        return {n.id: n for n in self.nodes}


# ---------------------------------------------------------------------------
# schedules


#: Resource label a collective parameter update occupies: every GPU at once.
ALL_GPUS_RESOURCE = "gpu*"


@dataclass(frozen=True)
class TimelineEntry:
    task_id: int
    kind: TaskKind
    layer: int | None
    gpu: int | None
    iteration: int
    resource: str
    start: float
    end: float


@dataclass(frozen=True)
class Timeline:
    """Scheduled intervals for one simulation run.

    comm_windows and backward_windows are keyed by (iteration, layer).
    A backward window spans the earliest start to the latest end across GPUs.
    nonoverlapped_comm is the steady-state per-iteration time the collective
    channel is busy while no backward task runs anywhere.
    """

    entries: tuple[TimelineEntry, ...]
    makespan: float
    comm_windows: Mapping[tuple[int, int], tuple[float, float]]
    backward_windows: Mapping[tuple[int, int], tuple[float, float]]
    nonoverlapped_comm: float

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))


def validate_timeline(dag: TaskDag, timeline: Timeline) -> Timeline:
    """Check a timeline against its task graph; returns it unchanged if valid.

    Raises InvalidTimeline when durations, edge precedence, resource
    exclusivity, window ordering, or the makespan do not hold.
    """
    eps = 1e-9 * max(1.0, timeline.makespan)
    by_task = {e.task_id: e for e in timeline.entries}
    if set(by_task) != set(dag.by_id):
        raise InvalidTimeline("timeline does not cover exactly the dag's tasks")

    for entry in timeline.entries:
        node = dag.by_id[entry.task_id]
        if entry.start < -eps:
            raise InvalidTimeline(f"task {entry.task_id} starts before time zero")
        if abs((entry.end - entry.start) - node.duration) > eps:
            raise InvalidTimeline(
                f"task {entry.task_id}: interval {entry.end - entry.start} != duration {node.duration}"
            )

    for a, b in dag.edges:
        if by_task[b].start < by_task[a].end - eps:
            raise InvalidTimeline(f"task {b} starts before its predecessor {a} finishes")

    gpu_resources = sorted(
        {e.resource for e in timeline.entries if e.resource.startswith("gpu") and e.resource != ALL_GPUS_RESOURCE}
    )
    per_resource: dict[str, list[tuple[float, float, int]]] = {}
    for entry in timeline.entries:
        targets = gpu_resources if entry.resource == ALL_GPUS_RESOURCE else [entry.resource]
        for res in targets:
            per_resource.setdefault(res, []).append((entry.start, entry.end, entry.task_id))
    for res, intervals in per_resource.items():
        intervals.sort()
        for (s1, e1, t1), (s2, e2, t2) in zip(intervals, intervals[1:]):
            if s2 < e1 - eps:
                raise InvalidTimeline(f"tasks {t1} and {t2} overlap on resource {res}")

    for key, (start, end) in timeline.comm_windows.items():
        if end < start - eps:
            raise InvalidTimeline(f"comm window {key} ends before it starts")
        bwd = timeline.backward_windows.get(key)
        if bwd is not None and start < bwd[1] - eps:
            raise InvalidTimeline(f"comm window {key} opens before its gradients are ready")

    max_end = max((e.end for e in timeline.entries), default=0.0)
    if abs(timeline.makespan - max_end) > eps:
        raise InvalidTimeline(f"makespan {timeline.makespan} != latest finish {max_end}")
    if timeline.nonoverlapped_comm < -eps:
        raise InvalidTimeline("nonoverlapped_comm is negative")
    return timeline


# ---------------------------------------------------------------------------
# scaling report


@dataclass(frozen=True)
class SpeedupReport:
    """Weak-scaling comparison of one-GPU and N-GPU iteration times."""

    baseline_gpus: int
    scaled_gpus: int
    baseline_iter_time: float
    scaled_iter_time: float
    io_time_baseline: float
    io_time_scaled: float
    speedup: float

    def __post_init__(self):
        if self.baseline_gpus < 1 or self.scaled_gpus < 1:
            raise InvalidSpec("gpu counts must be >= 1")
        expected = self.scaled_gpus * self.baseline_iter_time / self.scaled_iter_time
        if abs(self.speedup - expected) > 1e-9 * max(1.0, abs(expected)):
            raise InvalidSpec("speedup inconsistent with iteration times")

    @property
    def efficiency(self) -> float:
        return self.speedup / self.scaled_gpus


def validate_cluster(spec: ClusterSpec) -> ClusterSpec:
    """Re-run construction checks; identity on an already-valid spec."""
    ClusterSpec(
        machines=spec.machines,
        gpus_per_machine=spec.gpus_per_machine,
        disk_bandwidth=spec.disk_bandwidth,
        h2d_bandwidth=spec.h2d_bandwidth,
        network_bandwidth=spec.network_bandwidth,
        intra_bandwidth=spec.intra_bandwidth,
        total_gpus=spec.total_gpus,
    )
    return spec


def validate_profile(profile: IterationProfile) -> IterationProfile:
    """Re-run construction checks; identity on an already-valid profile."""
    IterationProfile(
        io_time=profile.io_time,
        h2d_time=profile.h2d_time,
        layer_profiles=profile.layer_profiles,
        update_time=profile.update_time,
    )
    return profile
