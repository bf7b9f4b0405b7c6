"""Reference solvers for desk-scale optimality gaps.

Three exact solvers with hard size limits (exhaustive TSP search, a
subset dynamic program, and an exact small-CVRP partition solver) plus a
nearest-neighbor + 2-opt heuristic for anything larger. Exact results are
global optima; the heuristic is only locally optimal and says so via
``exact=False``.
"""
from __future__ import annotations

from dataclasses import dataclass
from itertools import permutations

import numpy as np

from .core import CVRP, TSP, Tour, VrpInstance, check_feasible
from .errors import DomainError, SizeLimitError

BRUTE_FORCE_MAX = 10
HELD_KARP_MAX = 16
CVRP_EXACT_MAX = 9


@dataclass(frozen=True)
class OracleResult:
    cost: float
    tour: Tour
    method: str  # brute_force | held_karp | cvrp_exact | nn_2opt
    exact: bool


def _dist_matrix(coords: np.ndarray) -> np.ndarray:
    diff = coords[:, None, :] - coords[None, :, :]
    return np.sqrt((diff * diff).sum(axis=-1))


def _closed_cost(d: np.ndarray, order: np.ndarray) -> float:
    return float(d[order, np.roll(order, -1)].sum())


def _canonical_cycle(order: np.ndarray) -> np.ndarray:
    """Rotate node 0 to the front and fix the orientation.

    Exact solvers report the cost of this canonical sequence through one
    shared summation path, so equal cycles give bitwise-equal costs no
    matter which representation the search produced.
    """
    order = np.asarray(order, dtype=np.int64)
    start = int(np.nonzero(order == 0)[0][0])
    order = np.roll(order, -start)
    if order.size > 2 and order[1] > order[-1]:
        order = np.concatenate([order[:1], order[1:][::-1]])
    return order


def brute_force_tsp(inst: VrpInstance) -> OracleResult:
    """Exhaustive search over canonical tours.

    Node 0 is pinned first and orientation is fixed by requiring the second
    node's index below the last one's, leaving (n-1)!/2 candidates.
    """
    if inst.kind != TSP:
        raise DomainError("brute_force_tsp handles tsp instances only")
    n = inst.n
    if n > BRUTE_FORCE_MAX:
        raise SizeLimitError(f"brute force capped at n={BRUTE_FORCE_MAX}, got {n}")
    d = _dist_matrix(inst.coords)
    perms = np.array([p for p in permutations(range(1, n)) if p[0] < p[-1]], dtype=np.int64)
    if perms.size == 0:  # n == 2
        order = np.array([0, 1])
        return OracleResult(_closed_cost(d, order), Tour((0, 1), _closed_cost(d, order)), "brute_force", True)
    full = np.concatenate([np.zeros((perms.shape[0], 1), dtype=np.int64), perms], axis=1)
    nxt = np.roll(full, -1, axis=1)
    costs = d[full, nxt].sum(axis=1)
    order = _canonical_cycle(full[int(np.argmin(costs))])
    cost = _closed_cost(d, order)
    return OracleResult(cost, Tour(tuple(int(v) for v in order), cost), "brute_force", True)


def held_karp(inst: VrpInstance) -> OracleResult:
    """Exact subset dynamic program; O(2^n n^2) time, O(2^n n) memory."""
    if inst.kind != TSP:
        raise DomainError("held_karp handles tsp instances only")
    n = inst.n
    if n > HELD_KARP_MAX:
        raise SizeLimitError(f"held_karp capped at n={HELD_KARP_MAX}, got {n}")
    d = _dist_matrix(inst.coords)
    if n == 2:
        order = np.array([0, 1])
        c = _closed_cost(d, order)
        return OracleResult(c, Tour((0, 1), c), "held_karp", True)
    m = n - 1  # nodes 1..n-1 live on bits 0..m-1
    size = 1 << m
    dp = np.full((size, m), np.inf)
    parent = np.full((size, m), -1, dtype=np.int64)
    sub = d[1:, 1:]  # distances among non-zero nodes
    for j in range(m):
        dp[1 << j, j] = d[0, j + 1]
    for mask in range(1, size):
        members = [j for j in range(m) if mask >> j & 1]
        if len(members) < 2:
            continue
        for j in members:
            pm = mask ^ (1 << j)
            cand = dp[pm] + sub[:, j]
            k = int(np.argmin(cand))
            dp[mask, j] = cand[k]
            parent[mask, j] = k
    final = dp[size - 1] + d[1:, 0]
    j = int(np.argmin(final))
    order = [j]
    mask = size - 1
    while parent[mask, j] >= 0:
        k = int(parent[mask, j])
        mask ^= 1 << j
        j = k
        order.append(j)
    tour = _canonical_cycle(np.array([0] + [v + 1 for v in reversed(order)]))
    cost = _closed_cost(d, tour)
    return OracleResult(cost, Tour(tuple(int(v) for v in tour), cost), "held_karp", True)


def cvrp_exact_small(inst: VrpInstance) -> OracleResult:
    """Exact small-CVRP solve: optimal partition into feasible trips.

    Every customer subset gets its optimal depot-to-depot route via a path
    dynamic program, then a subset-partition sweep picks the best group of
    capacity-feasible trips. Exponential in customers, hence the hard cap.
    """
    if inst.kind != CVRP:
        raise DomainError("cvrp_exact_small handles cvrp instances only")
    customers = inst.customer_indices()
    m = customers.size
    if m > CVRP_EXACT_MAX:
        raise SizeLimitError(f"cvrp_exact_small capped at {CVRP_EXACT_MAX} customers, got {m}")
    d = _dist_matrix(inst.coords)
    depot = inst.depot_index
    dem = inst.demands[customers]
    size = 1 << m

    # demand per subset, to rule out overloaded trips
    load = np.zeros(size)
    for mask in range(1, size):
        j = (mask & -mask).bit_length() - 1
        load[mask] = load[mask ^ (1 << j)] + dem[j]

    # pc[mask, j]: shortest depot -> ... -> customers[j] path covering mask
    pc = np.full((size, m), np.inf)
    path_parent = np.full((size, m), -1, dtype=np.int64)
    dc = d[np.ix_(customers, customers)]
    for j in range(m):
        pc[1 << j, j] = d[depot, customers[j]]
    for mask in range(1, size):
        members = [j for j in range(m) if mask >> j & 1]
        if len(members) < 2:
            continue
        for j in members:
            pm = mask ^ (1 << j)
            cand = pc[pm] + dc[:, j]
            k = int(np.argmin(cand))
            pc[mask, j] = cand[k]
            path_parent[mask, j] = k

    route_cost = np.full(size, np.inf)
    route_last = np.full(size, -1, dtype=np.int64)
    feasible = load <= inst.capacity + 1e-9
    back = d[customers, depot]
    for mask in range(1, size):
        if feasible[mask]:
            totals = pc[mask] + back
            j = int(np.argmin(totals))
            route_cost[mask] = totals[j]
            route_last[mask] = j

    best = np.full(size, np.inf)
    best[0] = 0.0
    choice = np.zeros(size, dtype=np.int64)
    for mask in range(1, size):
        # iterate submasks containing the lowest set bit, so each partition
        # is enumerated once
        low = mask & -mask
        sub_mask = mask
        while sub_mask:
            if sub_mask & low and route_cost[sub_mask] < np.inf:
                total = best[mask ^ sub_mask] + route_cost[sub_mask]
                if total < best[mask]:
                    best[mask] = total
                    choice[mask] = sub_mask
            sub_mask = (sub_mask - 1) & mask

    cost = float(best[size - 1])
    # unwind the partition, then each trip's path; a depot visit opens
    # every trip and the closing edge back to it is implicit
    order: list[int] = []
    mask = size - 1
    while mask:
        trip = int(choice[mask])
        j = int(route_last[trip])
        seg = [j]
        tm = trip
        while path_parent[tm, j] >= 0:
            k = int(path_parent[tm, j])
            tm ^= 1 << j
            j = k
            seg.append(j)
        order.append(depot)
        order.extend(int(customers[v]) for v in reversed(seg))
        mask ^= trip
    return OracleResult(cost, Tour(tuple(order), cost), "cvrp_exact", True)


def nn_2opt(inst: VrpInstance, restarts: int = 10, seed: int = 0) -> OracleResult:
    """Nearest-neighbor construction improved to 2-opt local optimality.

    Each restart begins at a random node; the best tour over restarts wins.
    First-improvement scan order is fixed, so results are deterministic per
    (instance, restarts, seed).
    """
    if inst.kind != TSP:
        raise DomainError("nn_2opt handles tsp instances only")
    if restarts < 1:
        raise DomainError(f"restarts must be positive, got {restarts}")
    d = _dist_matrix(inst.coords)
    n = inst.n
    best_cost = np.inf
    best_order: np.ndarray | None = None
    for r in range(restarts):
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(r,)))
        start = int(rng.integers(0, n))
        order = _nearest_neighbor(d, start)
        order = _two_opt(d, order)
        cost = _closed_cost(d, order)
        if cost < best_cost - 1e-12:
            best_cost = cost
            best_order = order
    assert best_order is not None
    cost = float(best_cost)
    return OracleResult(cost, Tour(tuple(int(v) for v in best_order), cost), "nn_2opt", False)


def _nearest_neighbor(d: np.ndarray, start: int) -> np.ndarray:
    n = d.shape[0]
    visited = np.zeros(n, dtype=bool)
    order = np.empty(n, dtype=np.int64)
    order[0] = start
    visited[start] = True
    cur = start
    masked = d.copy()
    for t in range(1, n):
        row = masked[cur].copy()
        row[visited] = np.inf
        cur = int(np.argmin(row))
        order[t] = cur
        visited[cur] = True
    return order


def _two_opt(d: np.ndarray, order: np.ndarray) -> np.ndarray:
    """First-improvement 2-opt sweeps until no swap helps."""
    order = order.copy()
    n = order.size
    improved = True
    while improved:
        improved = False
        for i in range(n - 2):
            a, b = order[i], order[i + 1]
            # edge (j, j+1) with j > i; the closing edge pairs with i > 0 only
            j_hi = n - 1 if i > 0 else n - 2
            js = np.arange(i + 2, j_hi + 1)
            if js.size == 0:
                continue
            c = order[js]
            e = order[(js + 1) % n]
            delta = d[a, c] + d[b, e] - (d[a, b] + d[c, e])
            hits = np.nonzero(delta < -1e-12)[0]
            if hits.size:
                j = int(js[hits[0]])
                order[i + 1:j + 1] = order[i + 1:j + 1][::-1]
                improved = True
    return order
