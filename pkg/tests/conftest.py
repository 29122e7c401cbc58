"""Shared test fixtures and factories."""

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from opselect.cvrp import Instance, Solution, generate_instance
from opselect.rng import make_rng


def random_solution(inst: Instance, seed: int, n_routes: int | None = None) -> Solution:
    """Feasible random solution; optionally force an exact route count.

    Forcing a route count relaxes nothing: the split is retried until every
    chunk fits the capacity, so callers should keep n_routes small.
    """
    rng = make_rng(seed, 77)
    customers = list(range(1, inst.n_nodes))
    if n_routes is None:
        from opselect.cvrp import initial_solution

        return initial_solution(inst, seed)
    assert 1 <= n_routes <= len(customers)
    for _ in range(200):
        order = [customers[i] for i in rng.permutation(len(customers))]
        cuts = sorted(rng.choice(np.arange(1, len(order)), size=n_routes - 1, replace=False).tolist())
        pieces = [order[a:b] for a, b in zip([0] + cuts, cuts + [len(order)])]
        loads = [sum(int(inst.demands[c]) for c in p) for p in pieces]
        if all(ld <= inst.capacity for ld in loads):
            return Solution.from_routes(inst, pieces)
    raise AssertionError(f"could not split {len(customers)} customers into {n_routes} feasible routes")


def tight_instance(n: int, seed: int, n_routes: int) -> tuple[Instance, Solution]:
    """Small instance plus a solution whose capacity leaves little slack.

    The tight capacity makes the feasibility filter do real work in
    neighborhood enumeration tests.
    """
    rng = make_rng(seed, 31)
    coords = rng.random((n + 1, 2))
    demands = np.concatenate([[0], rng.integers(1, 10, size=n)])
    loose = Instance(name=f"tight-n{n}-s{seed}", coords=coords, demands=demands, capacity=int(demands.sum()))
    sol = random_solution(loose, seed, n_routes=n_routes)
    cap = max(sol.route_loads) + int(rng.integers(0, 3))
    inst = Instance(name=loose.name, coords=coords, demands=demands, capacity=cap)
    return inst, Solution.from_routes(inst, sol.routes)


@pytest.fixture
def small_instance() -> Instance:
    return generate_instance(8, seed=123)


MINIMAL_VRP = """\
NAME : mini-n2
TYPE : CVRP
DIMENSION : 2
EDGE_WEIGHT_TYPE : EUC_2D
CAPACITY : 10
NODE_COORD_SECTION
1 0 0
2 3 4
DEMAND_SECTION
1 0
2 5
DEPOT_SECTION
1
-1
EOF
"""
