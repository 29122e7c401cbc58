"""Local-search operators, best-improvement search, and the shake perturbation.

Eleven operator families are exposed as 29 parameterized actions.  Move
enumeration is exhaustive over each neighborhood, filters out capacity
violations, and yields moves in a fixed canonical order (ascending over
route indices, then positions) so identical inputs always produce identical
streams.  Move deltas are computed from the affected arcs only; apply_move
trusts the delta and callers can always recompute to confirm.

Intra-route neighborhoods:   two-opt, relocate (segment length 1-3), swap,
                             or-opt (relocate length 1-3 as one action)
Inter-route neighborhoods:   cross and two-opt (both tail exchanges),
                             symmetric swap (1-4), asymmetric swap (m != n),
                             relocate (1-3), or-opt, cyclic exchange over
                             three routes
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cvrp import Instance, Solution
from .errors import InvalidMoveError

TWO_OPT_INTRA = "two-opt-intra"
RELOCATE_INTRA = "relocate-intra"
SWAP_INTRA = "swap-intra"
OR_OPT_INTRA = "or-opt-intra"
CROSS = "cross"
SYMMETRIC_SWAP = "symmetric-swap"
ASYMMETRIC_SWAP = "asymmetric-swap"
RELOCATE_INTER = "relocate-inter"
TWO_OPT_INTER = "two-opt-inter"
OR_OPT_INTER = "or-opt-inter"
CYCLIC_EXCHANGE = "cyclic-exchange-3"

IMPROVEMENT_EPS = 1e-9


@dataclass(frozen=True)
class OperatorId:
    """One action: an operator family plus its segment-length parameters."""

    family: str
    m: int = 0
    n: int = 0

    @property
    def name(self) -> str:
        if self.family == ASYMMETRIC_SWAP:
            return f"{self.family}-{self.m}-{self.n}"
        if self.m:
            return f"{self.family}-{self.m}"
        return self.family

    @classmethod
    def parse(cls, name: str) -> "OperatorId":
        name = name.strip()
        for fam in (ASYMMETRIC_SWAP,):
            if name.startswith(fam + "-"):
                m, n = name[len(fam) + 1 :].split("-")
                return cls(fam, int(m), int(n))
        for fam in (RELOCATE_INTRA, SYMMETRIC_SWAP, RELOCATE_INTER):
            if name.startswith(fam + "-"):
                return cls(fam, int(name[len(fam) + 1 :]))
        if name in (
            TWO_OPT_INTRA,
            SWAP_INTRA,
            OR_OPT_INTRA,
            CROSS,
            TWO_OPT_INTER,
            OR_OPT_INTER,
            CYCLIC_EXCHANGE,
        ):
            return cls(name)
        raise ValueError(f"unknown operator {name!r}")


def default_action_set() -> tuple[OperatorId, ...]:
    """The full 29-action set; tuple order fixes one-hot indices."""
    actions = [OperatorId(TWO_OPT_INTRA)]
    actions += [OperatorId(RELOCATE_INTRA, m) for m in (1, 2, 3)]
    actions += [OperatorId(SWAP_INTRA), OperatorId(OR_OPT_INTRA), OperatorId(CROSS)]
    actions += [OperatorId(SYMMETRIC_SWAP, m) for m in (1, 2, 3, 4)]
    actions += [
        OperatorId(ASYMMETRIC_SWAP, m, n)
        for m in (1, 2, 3, 4)
        for n in (1, 2, 3, 4)
        if m != n
    ]
    actions += [OperatorId(RELOCATE_INTER, m) for m in (1, 2, 3)]
    actions += [
        OperatorId(TWO_OPT_INTER),
        OperatorId(OR_OPT_INTER),
        OperatorId(CYCLIC_EXCHANGE),
    ]
    return tuple(actions)


DEFAULT_ACTION_SET = default_action_set()


def action_set_from_names(names) -> tuple[OperatorId, ...]:
    return tuple(OperatorId.parse(n) for n in names)


@dataclass(slots=True)
class Move:
    """A single neighborhood move with its exact cost delta.

    position_indices semantics by family:
      two-opt-intra:       (i, j)          reverse route[i..j]
      relocate (both),     (i, m, j)       take m nodes at i, insert at j
        or-opt (both):                     (j indexes the route minus segment)
      swap-intra:          (i, j)          exchange positions i < j
      cross/two-opt-inter: (i, j)          cut points; tails swap
      segment swaps:       (i, m, j, n)    m nodes at i (first route) for
                                           n nodes at j (second route)
      cyclic-exchange-3:   (dir, p1, p2, p3)  dir 0: a->b->c->a, 1: a->c->b->a
    """

    operator: OperatorId
    route_indices: tuple
    position_indices: tuple
    delta: float


def _prefix_loads(demands: list, route: list) -> list:
    acc = [0]
    for c in route:
        acc.append(acc[-1] + demands[c])
    return acc


def enumerate_moves(inst: Instance, sol: Solution, op: OperatorId):
    """Yield every feasibility-preserving move of one action, canonically ordered."""
    d = inst.distance_matrix()
    routes = sol.routes
    fam = op.family
    if fam == TWO_OPT_INTRA:
        yield from _gen_two_opt_intra(d, routes, op)
    elif fam == RELOCATE_INTRA:
        yield from _gen_relocate_intra(d, routes, op, (op.m,))
    elif fam == OR_OPT_INTRA:
        yield from _gen_relocate_intra(d, routes, op, (1, 2, 3))
    elif fam == SWAP_INTRA:
        yield from _gen_swap_intra(d, routes, op)
    elif fam in (CROSS, TWO_OPT_INTER):
        yield from _gen_tail_exchange(inst, d, sol, op)
    elif fam == SYMMETRIC_SWAP:
        yield from _gen_segment_swap(inst, d, sol, op, op.m, op.m)
    elif fam == ASYMMETRIC_SWAP:
        yield from _gen_segment_swap(inst, d, sol, op, op.m, op.n)
    elif fam == RELOCATE_INTER:
        yield from _gen_relocate_inter(inst, d, sol, op, (op.m,))
    elif fam == OR_OPT_INTER:
        yield from _gen_relocate_inter(inst, d, sol, op, (1, 2, 3))
    elif fam == CYCLIC_EXCHANGE:
        yield from _gen_cyclic_exchange(inst, d, sol, op)
    else:
        raise ValueError(f"unknown operator family {fam!r}")


def _gen_two_opt_intra(d, routes, op):
    for ri, r in enumerate(routes):
        L = len(r)
        for i in range(L - 1):
            p = r[i - 1] if i > 0 else 0
            a = r[i]
            for j in range(i + 1, L):
                q = r[j + 1] if j + 1 < L else 0
                delta = d[p, r[j]] + d[a, q] - d[p, a] - d[r[j], q]
                yield Move(op, (ri,), (i, j), float(delta))


def _gen_relocate_intra(d, routes, op, lengths):
    for ri, r in enumerate(routes):
        L = len(r)
        for i in range(L):
            for m in lengths:
                if i + m > L or L == m:
                    continue
                s0, sl = r[i], r[i + m - 1]
                p = r[i - 1] if i > 0 else 0
                q = r[i + m] if i + m < L else 0
                gain = d[p, q] - d[p, s0] - d[sl, q]
                for j in range(L - m + 1):
                    if j == i:
                        continue
                    u = (r[j - 1] if j - 1 < i else r[j - 1 + m]) if j > 0 else 0
                    v = (r[j] if j < i else r[j + m]) if j < L - m else 0
                    delta = gain + d[u, s0] + d[sl, v] - d[u, v]
                    yield Move(op, (ri,), (i, m, j), float(delta))


def _gen_swap_intra(d, routes, op):
    for ri, r in enumerate(routes):
        L = len(r)
        for i in range(L - 1):
            a = r[i]
            p = r[i - 1] if i > 0 else 0
            na = r[i + 1] if i + 1 < L else 0
            for j in range(i + 1, L):
                b = r[j]
                q = r[j + 1] if j + 1 < L else 0
                if j == i + 1:
                    delta = d[p, b] + d[a, q] - d[p, a] - d[b, q]
                else:
                    mb = r[j - 1]
                    delta = (
                        d[p, b]
                        + d[b, na]
                        + d[mb, a]
                        + d[a, q]
                        - d[p, a]
                        - d[a, na]
                        - d[mb, b]
                        - d[b, q]
                    )
                yield Move(op, (ri,), (i, j), float(delta))


def _gen_tail_exchange(inst, d, sol, op):
    routes = sol.routes
    demands = inst.demands.tolist()
    cap = inst.capacity
    prefixes = [_prefix_loads(demands, r) for r in routes]
    for a in range(len(routes) - 1):
        ra, pa = routes[a], prefixes[a]
        la, load_a = len(ra), prefixes[a][-1]
        for b in range(a + 1, len(routes)):
            rb, pb = routes[b], prefixes[b]
            lb, load_b = len(rb), prefixes[b][-1]
            for i in range(la + 1):
                head_a = pa[i]
                tail_a = load_a - head_a
                pa_node = ra[i - 1] if i > 0 else 0
                ta_node = ra[i] if i < la else 0
                for j in range(lb + 1):
                    if (i == 0 and j == 0) or (i == la and j == lb):
                        continue
                    head_b = pb[j]
                    if head_a + load_b - head_b > cap or head_b + tail_a > cap:
                        continue
                    pb_node = rb[j - 1] if j > 0 else 0
                    tb_node = rb[j] if j < lb else 0
                    delta = (
                        d[pa_node, tb_node]
                        + d[pb_node, ta_node]
                        - d[pa_node, ta_node]
                        - d[pb_node, tb_node]
                    )
                    yield Move(op, (a, b), (i, j), float(delta))


def _gen_segment_swap(inst, d, sol, op, m, n):
    routes = sol.routes
    demands = inst.demands.tolist()
    cap = inst.capacity
    prefixes = [_prefix_loads(demands, r) for r in routes]
    for a in range(len(routes) - 1):
        ra, pa = routes[a], prefixes[a]
        la, load_a = len(ra), prefixes[a][-1]
        if la < m:
            continue
        for b in range(a + 1, len(routes)):
            rb, pb = routes[b], prefixes[b]
            lb, load_b = len(rb), prefixes[b][-1]
            if lb < n:
                continue
            for i in range(la - m + 1):
                sa0, sal = ra[i], ra[i + m - 1]
                seg_a = pa[i + m] - pa[i]
                p1 = ra[i - 1] if i > 0 else 0
                q1 = ra[i + m] if i + m < la else 0
                for j in range(lb - n + 1):
                    seg_b = pb[j + n] - pb[j]
                    if load_a - seg_a + seg_b > cap or load_b - seg_b + seg_a > cap:
                        continue
                    sb0, sbl = rb[j], rb[j + n - 1]
                    p2 = rb[j - 1] if j > 0 else 0
                    q2 = rb[j + n] if j + n < lb else 0
                    delta = (
                        d[p1, sb0]
                        + d[sbl, q1]
                        - d[p1, sa0]
                        - d[sal, q1]
                        + d[p2, sa0]
                        + d[sal, q2]
                        - d[p2, sb0]
                        - d[sbl, q2]
                    )
                    yield Move(op, (a, b), (i, m, j, n), float(delta))


def _gen_relocate_inter(inst, d, sol, op, lengths):
    routes = sol.routes
    demands = inst.demands.tolist()
    cap = inst.capacity
    prefixes = [_prefix_loads(demands, r) for r in routes]
    for a in range(len(routes)):
        ra, pa = routes[a], prefixes[a]
        la = len(ra)
        for b in range(len(routes)):
            if a == b:
                continue
            rb = routes[b]
            lb, load_b = len(rb), prefixes[b][-1]
            for i in range(la):
                for m in lengths:
                    if i + m > la:
                        continue
                    if load_b + pa[i + m] - pa[i] > cap:
                        continue
                    s0, sl = ra[i], ra[i + m - 1]
                    p = ra[i - 1] if i > 0 else 0
                    q = ra[i + m] if i + m < la else 0
                    gain = d[p, q] - d[p, s0] - d[sl, q]
                    for j in range(lb + 1):
                        u = rb[j - 1] if j > 0 else 0
                        v = rb[j] if j < lb else 0
                        delta = gain + d[u, s0] + d[sl, v] - d[u, v]
                        yield Move(op, (a, b), (i, m, j), float(delta))


def _gen_cyclic_exchange(inst, d, sol, op):
    routes = sol.routes
    if len(routes) < 3:
        return
    demands = inst.demands.tolist()
    cap = inst.capacity
    loads = sol.route_loads
    n_routes = len(routes)
    for a in range(n_routes - 2):
        for b in range(a + 1, n_routes - 1):
            for c in range(b + 1, n_routes):
                for direction, (f, s, t) in enumerate(((a, b, c), (a, c, b))):
                    r1, r2, r3 = routes[f], routes[s], routes[t]
                    l1, l2, l3 = loads[f], loads[s], loads[t]
                    for p1 in range(len(r1)):
                        x = r1[p1]
                        qx = demands[x]
                        u1 = r1[p1 - 1] if p1 > 0 else 0
                        v1 = r1[p1 + 1] if p1 + 1 < len(r1) else 0
                        for p2 in range(len(r2)):
                            y = r2[p2]
                            qy = demands[y]
                            if l2 - qy + qx > cap:
                                continue
                            u2 = r2[p2 - 1] if p2 > 0 else 0
                            v2 = r2[p2 + 1] if p2 + 1 < len(r2) else 0
                            d2 = d[u2, x] + d[x, v2] - d[u2, y] - d[y, v2]
                            for p3 in range(len(r3)):
                                z = r3[p3]
                                qz = demands[z]
                                if l3 - qz + qy > cap or l1 - qx + qz > cap:
                                    continue
                                u3 = r3[p3 - 1] if p3 > 0 else 0
                                v3 = r3[p3 + 1] if p3 + 1 < len(r3) else 0
                                delta = (
                                    d2
                                    + d[u1, z]
                                    + d[z, v1]
                                    - d[u1, x]
                                    - d[x, v1]
                                    + d[u3, y]
                                    + d[y, v3]
                                    - d[u3, z]
                                    - d[z, v3]
                                )
                                yield Move(
                                    op, (a, b, c), (direction, p1, p2, p3), float(delta)
                                )


# ---------------------------------------------------------------------------
# Move application
# ---------------------------------------------------------------------------


def _check(cond: bool, mv: Move):
    if not cond:
        raise InvalidMoveError(f"stale or malformed move {mv}")


def apply_move(inst: Instance, sol: Solution, mv: Move) -> Solution:
    """Apply a move from this solution; cost is updated by the move's delta."""
    routes = [list(r) for r in sol.routes]
    loads = list(sol.route_loads)
    fam = mv.operator.family
    demands = inst.demands
    _check(all(0 <= ri < len(routes) for ri in mv.route_indices), mv)

    if fam == TWO_OPT_INTRA:
        (ri,), (i, j) = mv.route_indices, mv.position_indices
        r = routes[ri]
        _check(0 <= i < j < len(r), mv)
        routes[ri] = r[:i] + r[i : j + 1][::-1] + r[j + 1 :]
    elif fam in (RELOCATE_INTRA, OR_OPT_INTRA):
        (ri,), (i, m, j) = mv.route_indices, mv.position_indices
        r = routes[ri]
        _check(0 <= i and i + m <= len(r) and 0 <= j <= len(r) - m and j != i, mv)
        seg = r[i : i + m]
        rest = r[:i] + r[i + m :]
        routes[ri] = rest[:j] + seg + rest[j:]
    elif fam == SWAP_INTRA:
        (ri,), (i, j) = mv.route_indices, mv.position_indices
        r = routes[ri]
        _check(0 <= i < j < len(r), mv)
        r[i], r[j] = r[j], r[i]
    elif fam in (CROSS, TWO_OPT_INTER):
        (a, b), (i, j) = mv.route_indices, mv.position_indices
        ra, rb = routes[a], routes[b]
        _check(a < b and 0 <= i <= len(ra) and 0 <= j <= len(rb), mv)
        routes[a], routes[b] = ra[:i] + rb[j:], rb[:j] + ra[i:]
        la = sum(int(demands[c]) for c in routes[a])
        loads[a], loads[b] = la, loads[a] + loads[b] - la
    elif fam in (SYMMETRIC_SWAP, ASYMMETRIC_SWAP):
        (a, b), (i, m, j, n) = mv.route_indices, mv.position_indices
        ra, rb = routes[a], routes[b]
        _check(a < b and i + m <= len(ra) and j + n <= len(rb), mv)
        sa, sb = ra[i : i + m], rb[j : j + n]
        routes[a] = ra[:i] + sb + ra[i + m :]
        routes[b] = rb[:j] + sa + rb[j + n :]
        da = int(sum(demands[c] for c in sb) - sum(demands[c] for c in sa))
        loads[a] += da
        loads[b] -= da
    elif fam in (RELOCATE_INTER, OR_OPT_INTER):
        (a, b), (i, m, j) = mv.route_indices, mv.position_indices
        ra, rb = routes[a], routes[b]
        _check(a != b and 0 <= i and i + m <= len(ra) and 0 <= j <= len(rb), mv)
        seg = ra[i : i + m]
        routes[a] = ra[:i] + ra[i + m :]
        routes[b] = rb[:j] + seg + rb[j:]
        moved = int(sum(demands[c] for c in seg))
        loads[a] -= moved
        loads[b] += moved
    elif fam == CYCLIC_EXCHANGE:
        (a, b, c), (direction, p1, p2, p3) = mv.route_indices, mv.position_indices
        f, s, t = (a, b, c) if direction == 0 else (a, c, b)
        r1, r2, r3 = routes[f], routes[s], routes[t]
        _check(p1 < len(r1) and p2 < len(r2) and p3 < len(r3), mv)
        x, y, z = r1[p1], r2[p2], r3[p3]
        r1[p1], r2[p2], r3[p3] = z, x, y
        loads[f] += int(demands[z] - demands[x])
        loads[s] += int(demands[x] - demands[y])
        loads[t] += int(demands[y] - demands[z])
    else:
        raise InvalidMoveError(f"unknown operator family {fam!r}")

    keep = [k for k, r in enumerate(routes) if r]
    return Solution(
        routes=[routes[k] for k in keep],
        cost=sol.cost + mv.delta,
        route_loads=[loads[k] for k in keep],
    )


def local_search(inst: Instance, sol: Solution, op: OperatorId) -> Solution:
    """Best-improvement step: the cheapest neighbor if it strictly improves.

    Returns the input solution (same object) when no neighbor beats it by
    more than the improvement tolerance; ties on delta keep the first move
    in canonical order.
    """
    best: Move | None = None
    for mv in enumerate_moves(inst, sol, op):
        if best is None or mv.delta < best.delta:
            best = mv
    if best is None or best.delta >= -IMPROVEMENT_EPS:
        return sol
    return apply_move(inst, sol, best)


def shake(
    inst: Instance,
    sol: Solution,
    rng: np.random.Generator,
    action_set: tuple[OperatorId, ...] = DEFAULT_ACTION_SET,
    strength: int = 1,
) -> Solution:
    """Apply `strength` uniformly random feasible moves, ignoring cost.

    Each draw picks an action uniformly, then a move uniformly from its
    neighborhood; empty neighborhoods trigger a redraw, bounded by the
    action-set size, after which the solution is returned unchanged.
    """
    for _ in range(strength):
        for _ in range(len(action_set)):
            op = action_set[int(rng.integers(len(action_set)))]
            moves = list(enumerate_moves(inst, sol, op))
            if moves:
                sol = apply_move(inst, sol, moves[int(rng.integers(len(moves)))])
                break
    return sol
