import json

import numpy as np
import pytest

from sirenrca.graph import (
    CycleError,
    Dag,
    ancestors,
    descendants,
    node_depths,
    random_dag,
    select_rooted_subgraph,
    topological_sort,
)


def chain(n):
    return Dag(n, tuple(() if j == 0 else (j - 1,) for j in range(n)), n - 1)


def diamond():
    # 0 -> 1, 0 -> 2, 1 -> 3, 2 -> 3
    return Dag(4, ((), (0,), (0,), (1, 2)), 3)


class TestTopologicalSort:
    def test_sorted_chain(self):
        assert topological_sort(chain(3)) == [0, 1, 2]

    def test_edgeless_ties_by_index(self):
        dag = Dag(3, ((), (), ()), 2)
        assert topological_sort(dag) == [0, 1, 2]

    def test_two_cycle_raises(self):
        with pytest.raises(CycleError, match="node"):
            Dag(2, ((1,), (0,)), 1)

    def test_parent_before_child_on_random_graphs(self):
        for seed in range(25):
            dag = random_dag(20, 0.3, seed)
            pos = {n: i for i, n in enumerate(dag.topo_order)}
            for child in range(dag.n_nodes):
                for parent in dag.parents[child]:
                    assert pos[parent] < pos[child]


class TestAncestors:
    def test_chain_closure(self):
        assert ancestors(chain(3), 2) == {0, 1}

    def test_edgeless(self):
        dag = Dag(3, ((), (), ()), 1)
        assert ancestors(dag, 0) == set()

    def test_diamond(self):
        assert ancestors(diamond(), 3) == {0, 1, 2}

    def test_invalid_index(self):
        with pytest.raises(ValueError):
            ancestors(chain(3), 5)

    def test_descendants_mirror(self):
        dag = diamond()
        assert descendants(dag, 0) == {1, 2, 3}
        assert descendants(dag, 3) == set()


class TestRandomDag:
    def test_full_density_gives_complete_dag(self):
        dag = random_dag(5, 1.0, seed=3)
        assert len(dag.edges()) == 10

    def test_edge_prob_zero_rejected(self):
        with pytest.raises(ValueError):
            random_dag(5, 0.0, seed=0)

    def test_seed_reproducibility(self):
        a = random_dag(50, 0.1, seed=7)
        b = random_dag(50, 0.1, seed=7)
        assert a.edges() == b.edges()
        assert a.leaf == b.leaf

    def test_always_sorts(self):
        for seed in range(10):
            dag = random_dag(30, 0.2, seed)
            assert len(topological_sort(dag)) == 30


class TestRootedSubgraph:
    def test_long_chain_kept_whole(self):
        sub = select_rooted_subgraph(chain(12), min_depth=10)
        assert sub is not None
        assert sub.n_nodes == 12
        assert sub.leaf == 11

    def test_shallow_star_returns_none(self):
        star = Dag(6, ((), (0,), (0,), (0,), (0,), (0,)), 5)
        assert select_rooted_subgraph(star, min_depth=10) is None

    def test_diamond_depth_two(self):
        sub = select_rooted_subgraph(diamond(), min_depth=2)
        assert sub is not None
        assert sub.n_nodes == 4
        assert ancestors(sub, sub.leaf) == set(range(4)) - {sub.leaf}

    def test_leaf_closure_covers_subgraph(self):
        for seed in range(20):
            dag = random_dag(40, 0.15, seed)
            sub = select_rooted_subgraph(dag, min_depth=4)
            if sub is None:
                continue
            assert ancestors(sub, sub.leaf) == set(range(sub.n_nodes)) - {sub.leaf}

    def test_depths_on_chain(self):
        assert node_depths(chain(4)) == [0, 1, 2, 3]


class TestSerialization:
    def test_round_trip(self):
        dag = random_dag(12, 0.3, seed=5)
        clone = Dag.from_json(dag.to_json())
        assert clone == dag

    def test_json_fields(self):
        d = json.loads(diamond().to_json())
        assert set(d) == {"n_nodes", "edges", "leaf"}
        assert sorted(map(tuple, d["edges"])) == [(0, 1), (0, 2), (1, 3), (2, 3)]


def test_leaf_with_children_rejected():
    with pytest.raises(ValueError, match="children"):
        Dag(3, ((), (0,), (1,)), 0)


def test_immutability_of_topo_order():
    dag = diamond()
    order = dag.topo_order
    assert isinstance(order, tuple)
    pos = {n: i for i, n in enumerate(order)}
    assert pos[0] < pos[1] < pos[3] and pos[0] < pos[2] < pos[3]
