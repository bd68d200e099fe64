"""Task-graph simulator and closed-form predictor for synchronous
data-parallel training iteration time."""

from .analytic import (
    DivisionDegenerate,
    PreconditionViolated,
    io_overlap_time,
    overlap_time,
    sgd_iteration_time,
    speedup,
    ssgd_naive_time,
    wfbp_time_detailed,
)
from .dag import (
    BuildOptions,
    CycleDetected,
    MismatchedLayerCount,
    build_iteration_dag,
    critical_path,
    dag_to_dot,
    dag_to_json,
    topological_order,
)
from .model import (
    ClusterSpec,
    CommTrigger,
    InvalidProfile,
    InvalidSpec,
    InvalidTimeline,
    IterationProfile,
    LayerProfile,
    SpeedupReport,
    Strategy,
    StrategyKind,
    TaskDag,
    TaskKind,
    TaskNode,
    Timeline,
    TimelineEntry,
    WorkloadSpec,
    validate_cluster,
    validate_profile,
    validate_timeline,
)
from .sim import (
    MismatchedProvenance,
    ResourceMap,
    SimResult,
    UnmappedResource,
    average_iteration_time,
    gantt_export,
    nonoverlapped_comm,
    simulate,
)
from .trace import (
    EmptyAfterWarmup,
    InconsistentBlocks,
    MalformedRow,
    TraceRecord,
    TraceSet,
    average_profile,
    derive_transfer_times,
    parse_trace,
    trace_warnings,
    write_trace,
)

__version__ = "0.1.0"
