"""CVRP instances and solutions: generation, objective, feasibility, parsing.

An instance is a depot plus customers in the plane with integer demands and
a single vehicle capacity.  A solution is a set of routes; each route is a
sequence of customer indices, with the depot (index 0) implicit at both
ends.  Distances are Euclidean, either exact (synthetic instances) or
rounded to the nearest integer per the TSPLIB convention (benchmark
instances).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ParseError, UnsupportedFormatError
from .rng import make_rng

EXACT_EUCLIDEAN = "exact-euclidean"
ROUNDED_EUCLIDEAN = "rounded-euclidean"


@dataclass
class Instance:
    """A CVRP instance.  Node 0 is always the depot.

    Attributes:
        name: instance identifier (used in logs and result files).
        coords: (n_nodes, 2) float array, depot first.
        demands: (n_nodes,) int array, demands[0] == 0.
        capacity: vehicle capacity Q.
        distance_convention: EXACT_EUCLIDEAN or ROUNDED_EUCLIDEAN; controls
            the objective only, never the encoder's geometric inputs.
    """

    name: str
    coords: np.ndarray
    demands: np.ndarray
    capacity: int
    distance_convention: str = EXACT_EUCLIDEAN
    depot_index: int = 0
    _dist: np.ndarray | None = field(default=None, repr=False, compare=False)
    _euclid: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float64)
        self.demands = np.asarray(self.demands, dtype=np.int64)
        if self.coords.ndim != 2 or self.coords.shape[1] != 2:
            raise ValueError(f"coords must be (n, 2), got {self.coords.shape}")
        if len(self.coords) != len(self.demands):
            raise ValueError("coords and demands must have equal length")
        if len(self.coords) < 2:
            raise ValueError("an instance needs a depot and at least one customer")
        if self.depot_index != 0:
            raise ValueError("depot must be node 0")
        if self.demands[0] != 0:
            raise ValueError("depot demand must be 0")
        customer_demands = self.demands[1:]
        if (customer_demands <= 0).any() or (customer_demands > self.capacity).any():
            raise ValueError("customer demands must lie in (0, capacity]")
        if self.distance_convention not in (EXACT_EUCLIDEAN, ROUNDED_EUCLIDEAN):
            raise ValueError(f"unknown distance convention {self.distance_convention!r}")

    @property
    def n_nodes(self) -> int:
        return len(self.demands)

    @property
    def n_customers(self) -> int:
        return self.n_nodes - 1

    def euclidean_matrix(self) -> np.ndarray:
        """Exact pairwise Euclidean distances (encoder input), cached."""
        if self._euclid is None:
            diff = self.coords[:, None, :] - self.coords[None, :, :]
            self._euclid = np.sqrt((diff * diff).sum(axis=2))
        return self._euclid

    def distance_matrix(self) -> np.ndarray:
        """Pairwise distances under the objective convention, cached.

        Rounded-Euclidean rounds each pairwise distance half-up to the
        nearest integer (TSPLIB nint) before any summation.
        """
        if self._dist is None:
            exact = self.euclidean_matrix()
            if self.distance_convention == ROUNDED_EUCLIDEAN:
                self._dist = np.floor(exact + 0.5)
            else:
                self._dist = exact
        return self._dist

    def to_json(self) -> str:
        return json.dumps(
            {
                "name": self.name,
                "coords": self.coords.tolist(),
                "demands": self.demands.tolist(),
                "capacity": int(self.capacity),
                "distance_convention": self.distance_convention,
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "Instance":
        obj = json.loads(text)
        return cls(
            name=obj["name"],
            coords=np.array(obj["coords"], dtype=np.float64),
            demands=np.array(obj["demands"], dtype=np.int64),
            capacity=int(obj["capacity"]),
            distance_convention=obj["distance_convention"],
        )


@dataclass
class Solution:
    """A set of routes over an instance, with cached cost and loads.

    Routes never contain the depot and are never empty; operators that
    empty a route drop it.  ``cost`` is maintained incrementally by move
    application and always agrees with a from-scratch recomputation.
    """

    routes: list[list[int]]
    cost: float
    route_loads: list[int]

    @classmethod
    def from_routes(cls, inst: Instance, routes) -> "Solution":
        routes = [list(r) for r in routes if len(r) > 0]
        loads = [int(sum(inst.demands[c] for c in r)) for r in routes]
        return cls(routes=routes, cost=objective(inst, routes), route_loads=loads)

    def copy(self) -> "Solution":
        return Solution(
            routes=[list(r) for r in self.routes],
            cost=self.cost,
            route_loads=list(self.route_loads),
        )

    def routes_key(self) -> tuple:
        """Hashable snapshot of the route structure."""
        return tuple(tuple(r) for r in self.routes)


@dataclass
class FeasibilityReport:
    feasible: bool
    violations: list[str]


def default_capacity(n_customers: int) -> int:
    """Vehicle capacity by instance size: 30 / 40 / 50 for up to 20 / 50 / larger."""
    if n_customers <= 20:
        return 30
    if n_customers <= 50:
        return 40
    return 50


def generate_instance(n: int, seed: int, capacity: int | None = None) -> Instance:
    """Generate a synthetic instance: uniform coords in [0,1]^2, demands in {1..9}.

    Deterministic given ``seed``.  ``capacity`` defaults by size class
    (see :func:`default_capacity`).
    """
    if n < 1:
        raise ValueError("need at least one customer")
    rng = make_rng(seed)
    coords = rng.random((n + 1, 2))
    demands = np.concatenate([[0], rng.integers(1, 10, size=n)])
    cap = default_capacity(n) if capacity is None else int(capacity)
    return Instance(
        name=f"rnd-n{n}-s{seed}",
        coords=coords,
        demands=demands,
        capacity=cap,
        distance_convention=EXACT_EUCLIDEAN,
    )


def objective(inst: Instance, sol) -> float:
    """Total travel distance of a solution (Solution or bare route list).

    Each route contributes depot->first, consecutive legs, last->depot.
    """
    routes = sol.routes if isinstance(sol, Solution) else sol
    dist = inst.distance_matrix()
    n = inst.n_nodes
    total = 0.0
    for route in routes:
        prev = 0
        for c in route:
            if not 0 < c < n:
                raise ValueError(f"customer index {c} out of range for {n} nodes")
            total += dist[prev, c]
            prev = c
        total += dist[prev, 0]
    return total


def route_load(inst: Instance, route) -> int:
    return int(sum(inst.demands[c] for c in route))


def is_feasible(inst: Instance, sol: Solution) -> FeasibilityReport:
    """Check visit-once and capacity invariants; never raises."""
    violations: list[str] = []
    seen: set[int] = set()
    for ri, route in enumerate(sol.routes):
        if len(route) == 0:
            violations.append(f"empty-route: route {ri}")
        for c in route:
            if not 0 < c < inst.n_nodes:
                violations.append(f"unknown-customer: {c} in route {ri}")
            elif c in seen:
                violations.append(f"duplicate-visit: customer {c}")
            else:
                seen.add(c)
        load = route_load(inst, [c for c in route if 0 < c < inst.n_nodes])
        if load > inst.capacity:
            violations.append(
                f"capacity: route {ri} load {load} exceeds {inst.capacity}"
            )
    missing = set(range(1, inst.n_nodes)) - seen
    for c in sorted(missing):
        violations.append(f"missing-visit: customer {c}")
    return FeasibilityReport(feasible=not violations, violations=violations)


def initial_solution(inst: Instance, seed: int) -> Solution:
    """Random initial solution: shuffled customers packed greedily by capacity.

    Always feasible because every demand fits in an empty vehicle.
    """
    rng = make_rng(seed)
    order = rng.permutation(np.arange(1, inst.n_nodes))
    routes: list[list[int]] = []
    current: list[int] = []
    load = 0
    for c in order:
        c = int(c)
        d = int(inst.demands[c])
        if current and load + d > inst.capacity:
            routes.append(current)
            current = []
            load = 0
        current.append(c)
        load += d
    if current:
        routes.append(current)
    return Solution.from_routes(inst, routes)


def mean_cost(costs) -> float:
    """Arithmetic mean of per-instance total distances."""
    costs = list(costs)
    if not costs:
        raise ValueError("mean_cost of an empty list")
    return sum(costs) / len(costs)


# ---------------------------------------------------------------------------
# CVRPLib / TSPLIB parsing
# ---------------------------------------------------------------------------

_REQUIRED_KEYS = ("NAME", "DIMENSION", "CAPACITY", "EDGE_WEIGHT_TYPE")
_REQUIRED_SECTIONS = ("NODE_COORD_SECTION", "DEMAND_SECTION", "DEPOT_SECTION")


def parse_cvrplib(text: str) -> Instance:
    """Parse a TSPLIB-style CVRP file (EUC_2D only).

    Node ids are rebased to 0 with the depot moved to index 0; the returned
    instance uses the rounded-Euclidean objective convention.
    """
    headers: dict[str, str] = {}
    sections: dict[str, list[str]] = {}
    current: str | None = None
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line == "EOF":
            continue
        upper = line.upper()
        if upper.endswith("_SECTION") or upper == "DEPOT_SECTION":
            current = upper
            sections[current] = []
            continue
        if ":" in line and current is None:
            key, _, value = line.partition(":")
            headers[key.strip().upper()] = value.strip()
            continue
        if current is not None:
            sections[current].append(line)
            continue
        # Keyword headers without a colon (rare but legal in TSPLIB).
        parts = line.split(None, 1)
        if len(parts) == 2:
            headers[parts[0].upper()] = parts[1].strip()

    for key in _REQUIRED_KEYS:
        if key not in headers:
            raise ParseError(f"missing header {key}", section=key)
    for sec in _REQUIRED_SECTIONS:
        if sec not in sections:
            raise ParseError(f"missing section {sec}", section=sec)

    if headers["EDGE_WEIGHT_TYPE"].upper() != "EUC_2D":
        raise UnsupportedFormatError(
            f"unsupported EDGE_WEIGHT_TYPE {headers['EDGE_WEIGHT_TYPE']!r};"
            " only EUC_2D is supported",
            section="EDGE_WEIGHT_TYPE",
        )

    try:
        dimension = int(headers["DIMENSION"])
        capacity = int(headers["CAPACITY"])
    except ValueError as exc:
        raise ParseError(f"bad numeric header: {exc}", section="DIMENSION") from exc

    coords: dict[int, tuple[float, float]] = {}
    for line in sections["NODE_COORD_SECTION"]:
        parts = line.split()
        if len(parts) != 3:
            raise ParseError(
                f"bad coordinate line {line!r}", section="NODE_COORD_SECTION"
            )
        coords[int(parts[0])] = (float(parts[1]), float(parts[2]))

    demands: dict[int, int] = {}
    for line in sections["DEMAND_SECTION"]:
        parts = line.split()
        if len(parts) != 2:
            raise ParseError(f"bad demand line {line!r}", section="DEMAND_SECTION")
        demands[int(parts[0])] = int(parts[1])

    depot_entries = [int(tok) for line in sections["DEPOT_SECTION"] for tok in line.split()]
    depot_ids = [e for e in depot_entries if e != -1]
    if len(depot_ids) != 1:
        raise ParseError(
            f"expected exactly one depot, got {depot_ids}", section="DEPOT_SECTION"
        )
    depot = depot_ids[0]

    node_ids = sorted(coords)
    if len(node_ids) != dimension or sorted(demands) != node_ids:
        raise ParseError(
            "NODE_COORD_SECTION/DEMAND_SECTION do not cover DIMENSION nodes",
            section="NODE_COORD_SECTION",
        )
    if depot not in coords:
        raise ParseError(f"depot {depot} has no coordinates", section="DEPOT_SECTION")

    order = [depot] + [i for i in node_ids if i != depot]
    return Instance(
        name=headers["NAME"],
        coords=np.array([coords[i] for i in order], dtype=np.float64),
        demands=np.array([demands[i] for i in order], dtype=np.int64),
        capacity=capacity,
        distance_convention=ROUNDED_EUCLIDEAN,
    )


def parse_cvrplib_solution(text: str) -> tuple[list[list[int]], float | None]:
    """Parse a CVRPLib ``.sol`` file: ``Route #k: ...`` lines plus ``Cost``.

    Customer numbers in ``.sol`` files are the 1-based ``.vrp`` ids shifted
    down by one, which matches this package's internal indexing whenever
    the depot is the file's node 1 (true for all Uchoa-style instances).
    """
    routes: list[list[int]] = []
    cost: float | None = None
    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        low = line.lower()
        if low.startswith("route"):
            _, _, rest = line.partition(":")
            routes.append([int(tok) for tok in rest.split()])
        elif low.startswith("cost"):
            cost = float(line.split()[-1])
    if not routes:
        raise ParseError("no routes found in solution file", section="Route")
    return routes, cost


def verify_reference_solution(inst: Instance, routes: list[list[int]]) -> float:
    """Recompute a reference solution's cost under the instance's convention.

    Raises if the routes are infeasible for the instance.
    """
    sol = Solution.from_routes(inst, routes)
    report = is_feasible(inst, sol)
    if not report.feasible:
        raise ValueError(f"reference solution infeasible: {report.violations[:5]}")
    return sol.cost


def optimality_gap_pct(cost: float, reference: float) -> float:
    """(cost - reference) / reference, in percent."""
    if reference <= 0:
        raise ValueError("reference cost must be positive")
    return 100.0 * (cost - reference) / reference


def euclid(a, b) -> float:
    """Euclidean distance between two coordinate pairs."""
    return math.hypot(a[0] - b[0], a[1] - b[1])
