"""Closed-form iteration-time estimates for synchronous data-parallel SGD.

These mirror what the simulator computes for the standard pipelines, without
building a task graph. All inputs and results are microseconds. The overlap
forms (io_overlap_time, wfbp_time_detailed, overlap_time) describe the
steady-state period between consecutive iteration finishes and deliberately
exclude the model-update time; callers that compare against simulated runs
should use profiles with update_time = 0 or account for the difference.
"""

from __future__ import annotations

from .model import IterationProfile, SpeedupReport


class PreconditionViolated(ValueError):
    """An input fell outside the domain a formula is valid on."""


class DivisionDegenerate(ValueError):
    """A speedup denominator collapsed to zero."""


def sgd_iteration_time(profile: IterationProfile) -> float:
    """Single-device iteration: read, copy, forward, backward, update."""
    return (
        profile.io_time
        + profile.h2d_time
        + profile.total_forward
        + profile.total_backward
        + profile.update_time
    )


def ssgd_naive_time(profile: IterationProfile) -> float:
    """Fully serial synchronous iteration: gradient exchange hides nothing."""
    return sgd_iteration_time(profile) + profile.total_comm


def io_overlap_time(profile: IterationProfile) -> float:
    """Input pipeline hidden behind compute; exchange still serialized.

    The iteration period becomes the slower of the input stage (read + copy)
    and the compute stage (forward + backward + all exchanges).
    """
    input_stage = profile.io_time + profile.h2d_time
    compute_stage = profile.total_forward + profile.total_backward + profile.total_comm
    return max(input_stage, compute_stage)


def wfbp_time_detailed(
    io_time: float,
    h2d_time: float,
    forward_time: float,
    backward_last: float,
    comm_start_first: float,
    comm_start_last: float,
    comm_first: float,
) -> float:
    """Layer-wise exchange overlap, written in terms of observed start times.

    backward_last is the backward duration of the layer computed first (the
    output layer); comm_start_first/comm_start_last are the start instants of
    the first (input-side) and last (output-side) layers' exchanges taken
    from the same iteration; comm_first is the input-side exchange duration.
    """
    if comm_start_first < comm_start_last:
        raise PreconditionViolated(
            "input-side exchange cannot start before the output-side exchange"
        )
    compute_stage = (
        forward_time + backward_last + (comm_start_first - comm_start_last) + comm_first
    )
    return max(io_time + h2d_time, compute_stage)


def overlap_time(profile: IterationProfile, nonoverlapped_comm: float) -> float:
    """Steady-state period given the exchange time left exposed.

    nonoverlapped_comm is the part of the total exchange time that cannot
    hide behind backward computation; it must lie in [0, total_comm].
    """
    if not 0.0 <= nonoverlapped_comm <= profile.total_comm:
        raise PreconditionViolated(
            f"nonoverlapped comm {nonoverlapped_comm} outside [0, {profile.total_comm}]"
        )
    input_stage = profile.io_time + profile.h2d_time
    compute_stage = profile.total_forward + profile.total_backward + nonoverlapped_comm
    return max(input_stage, compute_stage)


def speedup(
    baseline: IterationProfile,
    scaled: IterationProfile,
    nonoverlapped_comm: float,
    n_gpus: int,
) -> SpeedupReport:
    """Weak-scaling speedup of n_gpus workers over one worker.

    `baseline` carries the single-worker input-read time and no exchange;
    `scaled` carries the per-worker profile at n_gpus workers, including the
    grown input-read time. Per-GPU compute is assumed unchanged (same batch
    per GPU), so forward/backward come from the scaled profile.
    """
    if n_gpus < 1:
        raise PreconditionViolated(f"n_gpus must be >= 1, got {n_gpus}")
    baseline_time = max(
        baseline.io_time + baseline.h2d_time,
        scaled.total_forward + scaled.total_backward,
    )
    scaled_time = overlap_time(scaled, nonoverlapped_comm)
    if scaled_time == 0.0:
        raise DivisionDegenerate("scaled iteration time is zero")
    return SpeedupReport(
        baseline_gpus=1,
        scaled_gpus=n_gpus,
        baseline_iter_time=baseline_time,
        scaled_iter_time=scaled_time,
        io_time_baseline=baseline.io_time,
        io_time_scaled=scaled.io_time,
        speedup=n_gpus * baseline_time / scaled_time,
    )
