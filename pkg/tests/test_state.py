"""State construction: graphs, node features, and history scalars."""

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_solution
from oracles import oracle_node_features

from opselect.cvrp import Instance, Solution, generate_instance, initial_solution
from opselect.neighborhood import DEFAULT_ACTION_SET, local_search, shake
from opselect.rng import make_rng
from opselect.state import (
    OptFeatures,
    build_distance_graph,
    build_node_features,
    build_search_state,
    build_solution_graph,
    initial_opt_features,
    update_opt_features,
)


class TestDistanceGraph:
    def test_three_four_five(self):
        inst = Instance(name="t", coords=[[0, 0], [3, 4]], demands=[0, 1], capacity=5)
        g = build_distance_graph(inst)
        assert g[0, 1] == 5.0 and g[1, 0] == 5.0

    def test_symmetric_zero_diag(self):
        inst = generate_instance(10, seed=1)
        g = build_distance_graph(inst)
        assert np.allclose(g, g.T) and np.allclose(np.diag(g), 0)
        assert (g >= 0).all()

    def test_exact_even_for_rounded_instances(self):
        inst = Instance(
            name="t",
            coords=[[0.0, 0.0], [1.2, 0.0]],
            demands=[0, 1],
            capacity=5,
            distance_convention="rounded-euclidean",
        )
        assert build_distance_graph(inst)[0, 1] == pytest.approx(1.2)

    def test_matches_naive_loop(self):
        inst = generate_instance(10, seed=2)
        g = build_distance_graph(inst)
        for i in range(inst.n_nodes):
            for j in range(inst.n_nodes):
                want = float(np.hypot(*(inst.coords[i] - inst.coords[j])))
                assert g[i, j] == pytest.approx(want, abs=1e-12)


class TestSolutionGraph:
    def test_single_route_edges(self):
        inst = generate_instance(2, seed=0)
        sol = Solution.from_routes(inst, [[1, 2]])
        adj = build_solution_graph(inst, sol)
        want = np.zeros((3, 3))
        for a, b in ((0, 1), (1, 2), (2, 0)):
            want[a, b] = want[b, a] = 1
        assert (adj == want).all()

    def test_degree_invariants(self):
        inst = generate_instance(12, seed=3)
        sol = random_solution(inst, seed=3, n_routes=2)
        assert all(len(r) >= 2 for r in sol.routes)
        adj = build_solution_graph(inst, sol)
        assert np.allclose(adj, adj.T)
        assert (adj.sum(axis=1)[1:] == 2).all()
        assert adj.sum(axis=1)[0] == 2 * len(sol.routes)

    def test_single_customer_route_collapses_depot_edge(self):
        inst = generate_instance(3, seed=1)
        sol = Solution.from_routes(inst, [[1], [2, 3]])
        adj = build_solution_graph(inst, sol)
        assert adj[0, 1] == 1  # out-and-back arcs share one binary edge
        assert adj.sum(axis=1)[1] == 1
        assert adj.sum(axis=1)[0] == 3

    @given(seed=st.integers(0, 5_000))
    @settings(max_examples=20, deadline=None)
    def test_degree_invariant_closed_under_search_and_shake(self, seed):
        inst = generate_instance(10, seed=seed)
        sol = initial_solution(inst, seed=seed + 1)
        rng = make_rng(seed, 13)
        for _ in range(3):
            op = DEFAULT_ACTION_SET[int(rng.integers(len(DEFAULT_ACTION_SET)))]
            sol = local_search(inst, sol, op)
            sol = shake(inst, sol, rng)
        adj = build_solution_graph(inst, sol)
        degrees = adj.sum(axis=1)
        for route in sol.routes:
            for c in route:
                assert degrees[c] == (2 if len(route) >= 2 else 1)
        assert degrees[0] == sum(2 if len(r) >= 2 else 1 for r in sol.routes)


class TestNodeFeatures:
    def test_single_customer_route(self):
        inst = generate_instance(1, seed=0)
        sol = Solution.from_routes(inst, [[1]])
        x = build_node_features(inst, sol)
        assert x.shape == (2, 11)
        assert (x[1, 4:6] == inst.coords[0]).all()  # predecessor is the depot
        assert (x[1, 6:8] == inst.coords[0]).all()  # successor is the depot
        assert x[1, 10] == 0.0  # pred and succ coincide

    def test_remaining_capacity_first_customer(self):
        inst = generate_instance(20, seed=42)
        first = sorted(
            range(1, inst.n_nodes), key=lambda c: int(inst.demands[c])
        )[0]
        sol = Solution.from_routes(inst, [[first]] + [[c] for c in range(1, inst.n_nodes) if c != first])
        x = build_node_features(inst, sol)
        assert x[first, 3] == inst.capacity - inst.demands[first]

    def test_depot_row(self):
        inst = generate_instance(6, seed=7)
        sol = initial_solution(inst, seed=7)
        x = build_node_features(inst, sol)
        assert (x[0, 0:2] == inst.coords[0]).all()
        assert x[0, 2] == 0.0
        assert x[0, 3] == inst.capacity
        assert (x[0, 8:11] == 0.0).all()

    def test_matches_oracle(self):
        for seed in (1, 2, 3):
            inst = generate_instance(9, seed=seed)
            sol = random_solution(inst, seed=seed, n_routes=2)
            got = build_node_features(inst, sol)
            want = np.array(oracle_node_features(inst, sol.routes))
            assert np.allclose(got, want, atol=1e-12)

    def test_capacity_non_increasing_along_routes(self):
        inst = generate_instance(15, seed=5)
        sol = initial_solution(inst, seed=5)
        x = build_node_features(inst, sol)
        for route in sol.routes:
            caps = [x[c, 3] for c in route]
            assert all(a > b for a, b in zip(caps, caps[1:]))
            assert all(0 <= c <= inst.capacity for c in caps)

    def test_triangle_inequality_columns(self):
        inst = generate_instance(12, seed=6)
        sol = random_solution(inst, seed=6, n_routes=3)
        x = build_node_features(inst, sol)
        assert (x[:, 8:11] >= 0).all()
        assert (x[:, 10] <= x[:, 8] + x[:, 9] + 1e-12).all()

    def test_pre_service_flag(self):
        inst = generate_instance(8, seed=8)
        sol = initial_solution(inst, seed=8)
        post = build_node_features(inst, sol)
        pre = build_node_features(inst, sol, capacity_after_service=False)
        for route in sol.routes:
            assert pre[route[0], 3] == inst.capacity
            for c in route:
                assert pre[c, 3] - post[c, 3] == inst.demands[c]


class TestOptFeatures:
    def test_improvement(self):
        opt = update_opt_features(initial_opt_features(10.0), 2, 10.0, 9.0, 9.0)
        assert opt.effectiveness == 1
        assert opt.last_delta == -1.0
        assert opt.gap == 0.0
        assert opt.last_op_index == 2

    def test_no_improvement(self):
        opt = update_opt_features(initial_opt_features(10.0), 0, 10.0, 10.0, 9.5)
        assert opt.effectiveness == 0
        assert opt.last_delta == 0.0
        assert opt.gap == pytest.approx(0.5)

    def test_gap_above_incumbent(self):
        opt = update_opt_features(initial_opt_features(10.0), 1, 9.0, 10.0, 9.5)
        assert opt.gap == pytest.approx(0.5)
        assert opt.effectiveness == 0

    @given(
        f_before=st.floats(1, 100),
        f_after=st.floats(1, 100),
        f_best=st.floats(1, 100),
    )
    @settings(max_examples=50, deadline=None)
    def test_gap_never_negative(self, f_before, f_after, f_best):
        opt = update_opt_features(initial_opt_features(50.0), 0, f_before, f_after, f_best)
        assert opt.gap >= 0.0
        assert opt.effectiveness in (0, 1)

    def test_vector_layout(self):
        opt = OptFeatures(
            last_op_index=3, effectiveness=1, gap=2.0, last_delta=-1.0, cost_scale=20.0
        )
        v = opt.vector(n_actions=5)
        assert v.shape == (8,)
        assert v[3] == 1.0 and v[:3].sum() == 0 and v[4] == 0
        assert v[5] == 1.0
        assert v[6] == pytest.approx(0.1)
        assert v[7] == pytest.approx(-0.05)

    def test_vector_before_first_action(self):
        v = initial_opt_features(12.0).vector(n_actions=4)
        assert (v == 0).all()


class TestSearchState:
    def test_build_and_debug_json(self):
        inst = generate_instance(5, seed=9)
        sol = initial_solution(inst, seed=9)
        state = build_search_state(inst, sol, initial_opt_features(sol.cost))
        assert state.n_nodes == 6
        blob = json.loads(state.to_debug_json())
        assert np.array(blob["dis"]).shape == (6, 6)
        assert np.array(blob["x"]).shape == (6, 11)
        assert blob["opt"]["cost_scale"] == pytest.approx(sol.cost)

    def test_rebuild_matches_fresh_build(self):
        inst = generate_instance(10, seed=10)
        sol = initial_solution(inst, seed=10)
        rng = make_rng(10, 14)
        for _ in range(5):
            sol = shake(inst, sol, rng)
        a = build_search_state(inst, sol, initial_opt_features(sol.cost))
        b = build_search_state(inst, sol, initial_opt_features(sol.cost))
        assert (a.dis == b.dis).all() and (a.sol == b.sol).all() and (a.x == b.x).all()
