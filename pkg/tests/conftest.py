"""Shared fixtures, generators, and independent oracles for the suite."""

from __future__ import annotations

import random

import pytest

from sgdsim.model import ClusterSpec, IterationProfile, LayerProfile, TaskDag

# Reference per-layer measurements (AlexNet, batch 1024, K80 node), frozen:
# (layer_id, name, forward_us, backward_us, comm_us, size_bytes)
GOLDEN_ROWS = (
    (0, "data", 1.20e06, 0.0, 0.0, 0),
    (1, "conv1", 3.27e06, 288202.0, 123.424, 139776),
    (2, "relu1", 17234.5, 27650.9, 0.0, 0),
    (3, "pool1", 32175.7, 60732.6, 0.0, 0),
    (4, "conv2", 3.14e06, 1.03216e06, 292.032, 1229824),
    (5, "relu2", 11507.5, 18422.5, 0.0, 0),
    (6, "pool2", 19831.2, 32459.0, 0.0, 0),
    (7, "conv3", 3.886e06, 791825.0, 288214.0, 3540480),
    (8, "relu3", 4770.3, 10996.3, 0.0, 0),
    (9, "conv4", 1.87e06, 510405.0, 1.03218e06, 2655744),
    (10, "relu4", 4760.26, 7872.45, 0.0, 0),
    (11, "conv5", 1.13e06, 306129.0, 275772.0, 1770496),
    (12, "relu5", 3201.22, 4939.42, 0.0, 0),
    (13, "pool5", 5812.0, 18666.2, 0.0, 0),
    (14, "fc6", 44689.7, 73935.0, 311170.0, 151011328),
    (15, "relu6", 295.168, 1092.83, 0.0, 0),
    (16, "drop6", 359.744, 131247.0, 0.0, 0),
    (17, "fc7", 19787.8, 34423.8, 610376.0, 67125248),
    (18, "relu7", 295.04, 451.904, 0.0, 0),
    (19, "drop7", 358.048, 317.312, 0.0, 0),
    (20, "fc8", 8033.12, 9922.72, 130964.0, 16388000),
    (21, "loss", 1723.49, 293.024, 0.0, 0),
)

GOLDEN_SIZE_SUM = 243_860_896


def make_cluster(machines=1, gpus_per_machine=1, **overrides) -> ClusterSpec:
    kwargs = dict(
        machines=machines,
        gpus_per_machine=gpus_per_machine,
        disk_bandwidth=1e9,
        h2d_bandwidth=1e9,
        network_bandwidth=1e9,
        intra_bandwidth=1e9,
    )
    kwargs.update(overrides)
    return ClusterSpec(**kwargs)


def make_profile(io=0.0, h2d=0.0, layers=((1.0, 1.0, 1.0, 4),), update=0.0) -> IterationProfile:
    """layers: sequence of (forward, backward, comm, gradient_bytes)."""
    profiles = tuple(
        LayerProfile(i, f"l{i}", f, b, c, size)
        for i, (f, b, c, size) in enumerate(layers, start=1)
    )
    return IterationProfile(io_time=io, h2d_time=h2d, layer_profiles=profiles, update_time=update)


def random_profile(
    rng: random.Random,
    max_layers: int = 60,
    tmax: float = 1e7,
    all_learnable: bool = False,
    strictly_positive: bool = False,
    update: float = 0.0,
) -> IterationProfile:
    n_layers = rng.randint(1, max_layers)
    low = 1.0 if strictly_positive else 0.0
    layers = []
    for _ in range(n_layers):
        learnable = True if all_learnable else rng.random() < 0.7
        layers.append(
            (
                rng.uniform(low, tmax),
                rng.uniform(low, tmax),
                rng.uniform(low, tmax) if learnable else 0.0,
                rng.randrange(1, 1 << 30) if learnable else 0,
            )
        )
    return make_profile(
        io=rng.uniform(low, tmax),
        h2d=rng.uniform(low, tmax),
        layers=layers,
        update=update,
    )


def brute_force_longest_path(dag: TaskDag) -> tuple[list[int], float]:
    """Exhaustive longest-path search for small graphs.

    Enumerates every simple path (any start, every prefix counts) and picks
    the heaviest; exact duration ties prefer the smaller id sequence.
    """
    succ: dict[int, list[int]] = {n.id: [] for n in dag.nodes}
    for a, b in dag.edges:
        succ[a].append(b)
    duration = {n.id: n.duration for n in dag.nodes}
    best: tuple[float, tuple[int, ...]] | None = None

    def consider(length: float, path: tuple[int, ...]) -> None:
        nonlocal best
        if best is None or length > best[0] or (length == best[0] and path < best[1]):
            best = (length, path)

    def walk(node: int, length: float, path: tuple[int, ...]) -> None:
        consider(length, path)
        for nxt in succ[node]:
            walk(nxt, length + duration[nxt], path + (nxt,))

    for node in succ:
        walk(node, duration[node], (node,))
    if best is None:
        return [], 0.0
    return list(best[1]), best[0]


@pytest.fixture
def golden_trace_text() -> str:
    lines = [
        f"{lid} {name} {fwd:.6g} {bwd:.6g} {comm:.6g} {size}"
        for lid, name, fwd, bwd, comm, size in GOLDEN_ROWS
    ]
    return "\n".join(lines) + "\n"
