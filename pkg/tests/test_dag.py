"""Task-graph construction, topological order, and critical path."""

from __future__ import annotations

import random

import networkx as nx
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sgdsim.dag import (
    BuildOptions,
    CycleDetected,
    MismatchedLayerCount,
    build_iteration_dag,
    critical_path,
    dag_to_dot,
    dag_to_json,
    topological_order,
)
from sgdsim.model import (
    CommTrigger,
    InvalidSpec,
    Strategy,
    StrategyKind,
    TaskDag,
    TaskKind,
    TaskNode,
    WorkloadSpec,
)
from tests.conftest import brute_force_longest_path, make_cluster, make_profile


def _workload(layers):
    return WorkloadSpec(layers=layers, batch_per_gpu=1, bytes_per_sample=1.0)


def _build(layers_spec, machines=1, per=1, kind=StrategyKind.WFBP, iterations=1,
           io=1.0, h2d=1.0, update=1.0, **opts):
    profile = make_profile(io=io, h2d=h2d, layers=layers_spec, update=update)
    strategy = Strategy(kind)
    if opts:
        options = BuildOptions(iterations=iterations, strategy=strategy, **opts)
    else:
        options = BuildOptions.for_strategy(strategy, iterations=iterations)
    cluster = make_cluster(machines=machines, gpus_per_machine=per)
    return build_iteration_dag(_workload(len(layers_spec)), cluster, profile, options)


UNIT_LAYERS_3 = ((1.0, 1.0, 1.0, 4), (1.0, 1.0, 1.0, 4), (1.0, 1.0, 1.0, 4))


def four_gpu_three_layer_dag(kind=StrategyKind.IO_WFBP):
    """2 machines x 2 GPUs, 3 learnable layers, unit durations, 1 iteration."""
    return _build(UNIT_LAYERS_3, machines=2, per=2, kind=kind)


class TestBuildOptions:
    def test_iterations_must_be_positive(self):
        with pytest.raises(InvalidSpec):
            BuildOptions(iterations=0, strategy=Strategy(StrategyKind.NAIVE))

    @pytest.mark.parametrize(
        "kind,expect_overlap",
        [
            (StrategyKind.NAIVE, False),
            (StrategyKind.IO_OVERLAP, True),
            (StrategyKind.WFBP, False),
            (StrategyKind.IO_WFBP, True),
        ],
    )
    def test_for_strategy_wires_io_pipeline_flags(self, kind, expect_overlap):
        options = BuildOptions.for_strategy(Strategy(kind), iterations=3)
        assert options.iterations == 3
        assert options.prefetch_io is expect_overlap
        assert options.early_h2d is expect_overlap


class TestSingleIterationShape:
    def test_layer_count_mismatch(self):
        profile = make_profile(layers=[(1.0, 1.0, 0.0, 0)])
        with pytest.raises(MismatchedLayerCount):
            build_iteration_dag(
                _workload(2),
                make_cluster(),
                profile,
                BuildOptions(iterations=1, strategy=Strategy(StrategyKind.NAIVE)),
            )

    def test_one_gpu_two_layer_id_layout(self):
        dag = _build(((1.0, 2.0, 3.0, 4), (5.0, 6.0, 7.0, 8)), kind=StrategyKind.WFBP)
        kinds = [(n.id, n.kind, n.layer, n.gpu) for n in dag.nodes]
        assert kinds == [
            (0, TaskKind.IO, None, 0),
            (1, TaskKind.H2D, None, 0),
            (2, TaskKind.FORWARD, 1, 0),
            (3, TaskKind.FORWARD, 2, 0),
            (4, TaskKind.BACKWARD, 2, 0),
            (5, TaskKind.BACKWARD, 1, 0),
            (6, TaskKind.ALLREDUCE, 2, None),
            (7, TaskKind.ALLREDUCE, 1, None),
            (8, TaskKind.UPDATE, None, None),
        ]
        durations = {n.id: n.duration for n in dag.nodes}
        assert durations[2] == 1.0 and durations[3] == 5.0
        assert durations[4] == 6.0 and durations[5] == 2.0
        assert durations[6] == 7.0 and durations[7] == 3.0

    def test_gradient_exchange_trigger_per_layer(self):
        dag = _build(((1.0, 1.0, 1.0, 4), (1.0, 1.0, 1.0, 4)), kind=StrategyKind.WFBP)
        # ids: b2=4 b1=5 ar2=6 ar1=7 update=8
        assert (4, 6) in dag.edges and (5, 7) in dag.edges
        assert (5, 6) not in dag.edges
        assert (6, 8) in dag.edges and (7, 8) in dag.edges

    def test_gradient_exchange_trigger_after_all(self):
        dag = _build(((1.0, 1.0, 1.0, 4), (1.0, 1.0, 1.0, 4)), kind=StrategyKind.NAIVE)
        # every exchange waits for the last backward task (layer 1)
        assert (5, 6) in dag.edges and (5, 7) in dag.edges
        assert (4, 6) not in dag.edges

    def test_non_learnable_layers_get_no_exchange(self):
        dag = _build(((1.0, 1.0, 1.0, 4), (1.0, 1.0, 0.0, 0)), kind=StrategyKind.WFBP)
        reduces = [n for n in dag.nodes if n.kind is TaskKind.ALLREDUCE]
        assert [n.layer for n in reduces] == [1]

    def test_no_learnable_layer_still_reaches_update(self):
        dag = _build(((1.0, 1.0, 0.0, 0),), kind=StrategyKind.NAIVE)
        update = next(n for n in dag.nodes if n.kind is TaskKind.UPDATE)
        bwd = next(n for n in dag.nodes if n.kind is TaskKind.BACKWARD)
        assert (bwd.id, update.id) in dag.edges

    def test_four_gpu_three_layer_node_census(self):
        dag = four_gpu_three_layer_dag()
        assert len(dag.nodes) == 40
        by_kind = {}
        for n in dag.nodes:
            by_kind.setdefault(n.kind, []).append(n)
        assert len(by_kind[TaskKind.IO]) == 8  # 4 reads + 4 prefetched next reads
        assert len(by_kind[TaskKind.H2D]) == 4
        assert len(by_kind[TaskKind.FORWARD]) == 12
        assert len(by_kind[TaskKind.BACKWARD]) == 12
        assert len(by_kind[TaskKind.ALLREDUCE]) == 3
        assert len(by_kind[TaskKind.UPDATE]) == 1
        tails = [n for n in by_kind[TaskKind.IO] if n.iteration == 1]
        assert len(tails) == 4

    def test_four_gpu_exchange_fan_in(self):
        dag = four_gpu_three_layer_dag()
        update = next(n for n in dag.nodes if n.kind is TaskKind.UPDATE)
        into_update = [a for a, b in dag.edges if b == update.id]
        reduces = {n.id: n for n in dag.nodes if n.kind is TaskKind.ALLREDUCE}
        assert sorted(into_update) == sorted(reduces)
        for ar_id, ar in reduces.items():
            feeders = [dag.by_id[a] for a, b in dag.edges if b == ar_id]
            assert len(feeders) == 4
            assert all(f.kind is TaskKind.BACKWARD and f.layer == ar.layer for f in feeders)

    def test_four_gpu_exchange_fan_in_after_all(self):
        dag = four_gpu_three_layer_dag(kind=StrategyKind.IO_OVERLAP)
        reduces = {n.id: n for n in dag.nodes if n.kind is TaskKind.ALLREDUCE}
        for ar_id in reduces:
            feeders = [dag.by_id[a] for a, b in dag.edges if b == ar_id]
            assert len(feeders) == 4
            assert all(f.kind is TaskKind.BACKWARD and f.layer == 1 for f in feeders)


class TestCrossIterationWiring:
    def _edge_kinds(self, dag):
        return [
            (dag.by_id[a].kind, dag.by_id[a].iteration, dag.by_id[b].kind, dag.by_id[b].iteration)
            for a, b in dag.edges
        ]

    def test_without_prefetch_next_read_waits_for_update(self):
        dag = _build(((1.0, 1.0, 1.0, 4),), kind=StrategyKind.NAIVE, iterations=2)
        kinds = self._edge_kinds(dag)
        assert (TaskKind.UPDATE, 0, TaskKind.IO, 1) in kinds
        assert (TaskKind.UPDATE, 0, TaskKind.H2D, 1) in kinds
        assert (TaskKind.UPDATE, 0, TaskKind.FORWARD, 1) in kinds
        assert (TaskKind.IO, 0, TaskKind.IO, 1) not in kinds

    def test_with_prefetch_next_read_waits_for_buffer_drain(self):
        dag = _build(((1.0, 1.0, 1.0, 4),), kind=StrategyKind.IO_OVERLAP, iterations=2)
        kinds = self._edge_kinds(dag)
        assert (TaskKind.IO, 0, TaskKind.IO, 1) in kinds
        assert (TaskKind.H2D, 0, TaskKind.IO, 1) in kinds
        assert (TaskKind.UPDATE, 0, TaskKind.IO, 1) not in kinds
        assert (TaskKind.UPDATE, 0, TaskKind.H2D, 1) not in kinds
        # weights from the previous update still gate the next forward pass
        assert (TaskKind.UPDATE, 0, TaskKind.FORWARD, 1) in kinds

    def test_trailing_prefetch_reads_present_per_gpu(self):
        dag = _build(UNIT_LAYERS_3, machines=2, per=2, kind=StrategyKind.IO_WFBP, iterations=2)
        tails = [n for n in dag.nodes if n.kind is TaskKind.IO and n.iteration == 2]
        assert len(tails) == 4
        for tail in tails:
            feeders = {dag.by_id[a].kind for a, b in dag.edges if b == tail.id}
            assert feeders == {TaskKind.IO, TaskKind.H2D}

    def test_no_prefetch_means_no_trailing_reads(self):
        dag = _build(UNIT_LAYERS_3, kind=StrategyKind.WFBP, iterations=2)
        assert not [n for n in dag.nodes if n.iteration == 2]


class TestTopologicalOrder:
    def test_respects_edges_and_breaks_ties_by_id(self):
        dag = four_gpu_three_layer_dag()
        order = topological_order(dag)
        position = {node: i for i, node in enumerate(order)}
        assert sorted(order) == sorted(n.id for n in dag.nodes)
        for a, b in dag.edges:
            assert position[a] < position[b]

    def test_matches_networkx_reachability(self):
        dag = four_gpu_three_layer_dag()
        g = nx.DiGraph(dag.edges)
        g.add_nodes_from(n.id for n in dag.nodes)
        assert nx.is_directed_acyclic_graph(g)
        order = topological_order(dag)
        assert order == list(nx.lexicographical_topological_sort(g))

    def test_cycle_detected(self):
        nodes = tuple(
            TaskNode(i, TaskKind.IO, layer=None, gpu=0, iteration=0, duration=1.0)
            for i in range(2)
        )
        dag = TaskDag(nodes=nodes, edges=((0, 1), (1, 0)))
        with pytest.raises(CycleDetected):
            topological_order(dag)


class TestCriticalPath:
    def test_unit_duration_reference_graph(self):
        dag = four_gpu_three_layer_dag()
        path, length = critical_path(dag)
        assert length == 10.0
        assert path == [0, 4, 8, 12, 16, 20, 24, 28, 34, 35]
        kinds = [dag.by_id[i].kind for i in path]
        assert kinds == [
            TaskKind.IO,
            TaskKind.H2D,
            TaskKind.FORWARD,
            TaskKind.FORWARD,
            TaskKind.FORWARD,
            TaskKind.BACKWARD,
            TaskKind.BACKWARD,
            TaskKind.BACKWARD,
            TaskKind.ALLREDUCE,
            TaskKind.UPDATE,
        ]

    def test_matches_exhaustive_search_on_reference_graph(self):
        dag = four_gpu_three_layer_dag()
        assert critical_path(dag) == tuple(brute_force_longest_path(dag))

    @pytest.mark.parametrize("seed", range(8))
    def test_matches_exhaustive_search_on_random_builds(self, seed):
        rng = random.Random(seed)
        layers = [
            (rng.uniform(0, 10), rng.uniform(0, 10), rng.uniform(0, 10), 4)
            for _ in range(rng.randint(1, 3))
        ]
        kind = rng.choice(list(StrategyKind))
        dag = _build(
            layers,
            machines=rng.randint(1, 2),
            per=rng.randint(1, 2),
            kind=kind,
            iterations=rng.randint(1, 2),
            io=rng.uniform(0, 10),
            h2d=rng.uniform(0, 10),
            update=rng.uniform(0, 5),
        )
        expected = brute_force_longest_path(dag)
        got = critical_path(dag)
        assert got[1] == pytest.approx(expected[1], rel=1e-12)
        assert got[0] == expected[0]

    def test_tie_break_prefers_smaller_id_sequence(self):
        nodes = (
            TaskNode(0, TaskKind.IO, layer=None, gpu=0, iteration=0, duration=5.0),
            TaskNode(1, TaskKind.IO, layer=None, gpu=1, iteration=0, duration=5.0),
            TaskNode(2, TaskKind.H2D, layer=None, gpu=0, iteration=0, duration=0.0),
        )
        dag = TaskDag(nodes=nodes, edges=((0, 2), (1, 2)))
        path, length = critical_path(dag)
        assert length == 5.0
        assert path == [0]

    def test_empty_graph(self):
        assert critical_path(TaskDag(nodes=(), edges=())) == ([], 0.0)


class TestExports:
    def test_json_shape(self):
        dag = _build(((1.0, 1.0, 1.0, 4),), kind=StrategyKind.NAIVE)
        data = dag_to_json(dag)
        assert {n["kind"] for n in data["nodes"]} == {
            "io", "h2d", "forward", "backward", "allreduce", "update",
        }
        assert all(len(e) == 2 for e in data["edges"])
        assert len(data["nodes"]) == len(dag.nodes)
        assert len(data["edges"]) == len(dag.edges)

    def test_dot_render(self):
        dag = _build(((1.0, 1.0, 1.0, 4),), kind=StrategyKind.NAIVE)
        dot = dag_to_dot(dag)
        assert dot.startswith("digraph")
        assert dot.count(" -> ") == len(dag.edges)
        assert 'label="T0' in dot


@st.composite
def build_cases(draw):
    n_layers = draw(st.integers(1, 4))
    layers = []
    for _ in range(n_layers):
        learnable = draw(st.booleans())
        layers.append((1.0, 1.0, 1.0 if learnable else 0.0, 4 if learnable else 0))
    return (
        tuple(layers),
        draw(st.integers(1, 2)),  # machines
        draw(st.integers(1, 2)),  # gpus per machine
        draw(st.sampled_from(list(StrategyKind))),
        draw(st.integers(1, 3)),  # iterations
    )


@settings(max_examples=60, deadline=None)
@given(build_cases())
def test_node_count_formula_and_acyclicity(case):
    layers, machines, per, kind, iterations = case
    dag = _build(list(layers), machines=machines, per=per, kind=kind, iterations=iterations)
    gpus = machines * per
    learnable = sum(1 for l in layers if l[3] > 0)
    per_iteration = 2 * gpus + 2 * len(layers) * gpus + learnable + 1
    prefetch = gpus if Strategy(kind).overlaps_io else 0
    assert len(dag.nodes) == iterations * per_iteration + prefetch
    order = topological_order(dag)  # raises if a cycle slipped in
    assert len(order) == len(dag.nodes)
