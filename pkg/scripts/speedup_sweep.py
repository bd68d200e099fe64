#!/usr/bin/env python3
"""Weak-scaling sweep: simulated speedup and efficiency over GPU counts.

Each worker keeps its per-GPU batch, so scaling adds machines with one GPU
each. The one-worker baseline exchanges nothing; every other point pays the
exchange cost recorded in the trace. Defaults use the bundled sample inputs.
"""

import argparse
import json
from dataclasses import replace
from pathlib import Path

from sgdsim import (
    BuildOptions,
    ClusterSpec,
    ResourceMap,
    Strategy,
    StrategyKind,
    WorkloadSpec,
    average_profile,
    build_iteration_dag,
    derive_transfer_times,
    nonoverlapped_comm,
    parse_trace,
    simulate,
)

ROOT = Path(__file__).resolve().parent.parent


def one_gpu_per_machine(base: ClusterSpec, machines: int) -> ClusterSpec:
    return ClusterSpec(
        machines=machines,
        gpus_per_machine=1,
        disk_bandwidth=base.disk_bandwidth,
        h2d_bandwidth=base.h2d_bandwidth,
        network_bandwidth=base.network_bandwidth,
        intra_bandwidth=base.intra_bandwidth,
    )


def steady(workload, cluster, profile, strategy, iterations):
    options = BuildOptions.for_strategy(strategy, iterations=iterations)
    dag = build_iteration_dag(workload, cluster, profile, options)
    result = simulate(dag, ResourceMap.from_cluster(cluster), profile)
    return result.avg_iteration_time, nonoverlapped_comm(result, profile)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--trace", default=str(ROOT / "data" / "alexnet_k80_sample.trace"))
    ap.add_argument("--cluster", default=str(ROOT / "data" / "cluster_k80.json"))
    ap.add_argument("--workload", default=str(ROOT / "data" / "workload_alexnet.json"))
    ap.add_argument("--strategy", choices=[k.value for k in StrategyKind],
                    default=StrategyKind.IO_WFBP.value)
    ap.add_argument("--gpu-counts", default="1,2,4,8,16")
    ap.add_argument("--iterations", type=int, default=5)
    args = ap.parse_args()

    base_cluster = ClusterSpec.from_json(json.loads(Path(args.cluster).read_text()))
    workload = WorkloadSpec.from_json(json.loads(Path(args.workload).read_text()))
    base = average_profile(parse_trace(Path(args.trace).read_text()))
    derived_io, derived_h2d = derive_transfer_times(workload, base_cluster)
    profile = replace(
        base,
        io_time=base.io_time if base.io_time > 0 else derived_io,
        h2d_time=derived_h2d,
        update_time=workload.update_time,
    )
    strategy = Strategy(StrategyKind(args.strategy))
    counts = [int(c) for c in args.gpu_counts.split(",") if c.strip()]

    solo_layers = tuple(replace(lp, comm_time=0.0) for lp in profile.layer_profiles)
    solo = replace(profile, layer_profiles=solo_layers)
    baseline, _ = steady(workload, one_gpu_per_machine(base_cluster, 1), solo,
                         strategy, args.iterations)
    print(f"strategy {strategy.kind.value}, baseline {baseline / 1e3:.1f} ms/iteration")
    print(f"{'gpus':>5} {'iter (ms)':>10} {'speedup':>8} {'efficiency':>11} {'exposed (ms)':>13}")
    for count in counts:
        cluster = one_gpu_per_machine(base_cluster, count)
        chosen = solo if count == 1 else profile
        iter_time, exposed = steady(workload, cluster, chosen, strategy, args.iterations)
        ratio = count * baseline / iter_time
        print(f"{count:>5} {iter_time / 1e3:>10.1f} {ratio:>8.2f} "
              f"{ratio / count:>10.1%} {exposed / 1e3:>13.1f}")


if __name__ == "__main__":
    main()
