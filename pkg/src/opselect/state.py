"""Search-state construction: distance graph, solution graph, node features,
and the optimization-history scalars the encoder consumes alongside them.

The distance graph is always exact Euclidean, even when the objective uses
rounded distances: the encoder sees geometry, the objective sees the
instance's cost convention.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from .cvrp import Instance, Solution

IMPROVEMENT_EPS = 1e-9
N_NODE_FEATURES = 11


def build_distance_graph(inst: Instance) -> np.ndarray:
    """Dense symmetric exact-Euclidean weights, zero diagonal (cached per instance)."""
    return inst.euclidean_matrix()


def build_solution_graph(inst: Instance, sol: Solution) -> np.ndarray:
    """Binary adjacency: 1 iff two nodes are consecutive in some route.

    Depot arcs are included.  The matrix is binary, so a single-customer
    route contributes one depot edge, not two: its out-and-back arcs
    coincide.  Customer rows sum to 2 whenever their route has at least two
    customers.
    """
    n = inst.n_nodes
    adj = np.zeros((n, n), dtype=np.float64)
    for route in sol.routes:
        seq = [0] + list(route) + [0]
        for a, b in zip(seq, seq[1:]):
            adj[a, b] = 1.0
            adj[b, a] = 1.0
    return adj


def build_node_features(
    inst: Instance, sol: Solution, capacity_after_service: bool = True
) -> np.ndarray:
    """Per-node feature matrix, |V| x 11.

    Columns: x, y, demand, remaining vehicle capacity at the node,
    predecessor x/y, successor x/y, and the three pairwise distances among
    the node and its route neighbors.  The depot is its own predecessor and
    successor with full capacity.  Remaining capacity counts the node's own
    demand when capacity_after_service is set (the default).
    """
    n = inst.n_nodes
    coords = inst.coords
    pred = np.zeros(n, dtype=np.int64)
    succ = np.zeros(n, dtype=np.int64)
    remaining = np.full(n, float(inst.capacity))
    for route in sol.routes:
        seq = [0] + list(route) + [0]
        served = 0
        for k in range(1, len(seq) - 1):
            node = seq[k]
            pred[node] = seq[k - 1]
            succ[node] = seq[k + 1]
            if not capacity_after_service:
                remaining[node] = inst.capacity - served
            served += int(inst.demands[node])
            if capacity_after_service:
                remaining[node] = inst.capacity - served
    pc = coords[pred]
    sc = coords[succ]
    return np.column_stack(
        [
            coords,
            inst.demands.astype(np.float64),
            remaining,
            pc,
            sc,
            np.linalg.norm(coords - pc, axis=1),
            np.linalg.norm(coords - sc, axis=1),
            np.linalg.norm(pc - sc, axis=1),
        ]
    )


@dataclass(frozen=True)
class OptFeatures:
    """Optimization-history scalars attached to a state.

    last_op_index indexes the configured action set (-1 before the first
    action, encoded as an all-zero one-hot).  gap and last_delta are stored
    raw; cost_scale (the episode's initial cost) divides both at encode
    time so their magnitude is comparable across instance sizes.
    """

    last_op_index: int
    effectiveness: int
    gap: float
    last_delta: float
    cost_scale: float

    def vector(self, n_actions: int) -> np.ndarray:
        """One-hot last action followed by [e, gap/scale, delta/scale]."""
        v = np.zeros(n_actions + 3, dtype=np.float64)
        if 0 <= self.last_op_index < n_actions:
            v[self.last_op_index] = 1.0
        scale = self.cost_scale if self.cost_scale > 0 else 1.0
        v[n_actions] = float(self.effectiveness)
        v[n_actions + 1] = self.gap / scale
        v[n_actions + 2] = self.last_delta / scale
        return v


def initial_opt_features(initial_cost: float) -> OptFeatures:
    return OptFeatures(
        last_op_index=-1,
        effectiveness=0,
        gap=0.0,
        last_delta=0.0,
        cost_scale=float(initial_cost),
    )


def update_opt_features(
    prev: OptFeatures,
    action_index: int,
    f_before: float,
    f_after: float,
    f_best: float,
) -> OptFeatures:
    """Roll the history scalars forward after one transition.

    e flags a strict improvement of the current solution; the gap is
    measured against the incumbent best, folding in f_after so it can never
    be negative.
    """
    return replace(
        prev,
        last_op_index=action_index,
        effectiveness=1 if f_after < f_before - IMPROVEMENT_EPS else 0,
        gap=f_after - min(f_best, f_after),
        last_delta=f_after - f_before,
    )


@dataclass
class SearchState:
    """Everything the encoder needs about one search step."""

    dis: np.ndarray
    sol: np.ndarray
    x: np.ndarray
    opt: OptFeatures

    @property
    def n_nodes(self) -> int:
        return self.x.shape[0]

    def to_debug_json(self) -> str:
        return json.dumps(
            {
                "dis": self.dis.tolist(),
                "sol": self.sol.tolist(),
                "x": self.x.tolist(),
                "opt": {
                    "last_op_index": self.opt.last_op_index,
                    "effectiveness": self.opt.effectiveness,
                    "gap": self.opt.gap,
                    "last_delta": self.opt.last_delta,
                    "cost_scale": self.opt.cost_scale,
                },
            }
        )


def build_search_state(inst: Instance, sol: Solution, opt: OptFeatures) -> SearchState:
    return SearchState(
        dis=build_distance_graph(inst),
        sol=build_solution_graph(inst, sol),
        x=build_node_features(inst, sol),
        opt=opt,
    )
