"""Routing domain model: instances, tours, costs, feasibility, symmetries.

Coordinates are float64 pairs. CVRP instances always store demands already
divided by vehicle capacity, so the capacity carried around is 1.0 and the
raw values live in ``meta``. A tour is a plain node-index sequence; CVRP
tours start at the depot and revisit it between trips, TSP tours list every
node exactly once, and the closing edge back to the start is implicit in
both cases.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import (
    DegenerateInstanceError,
    DimensionError,
    DomainError,
    FeasibilityError,
    ParseError,
)

TSP = "tsp"
CVRP = "cvrp"

# capacity tolerance for load checks; demands are exact multiples of
# 1/capacity so anything bigger than accumulated rounding noise is real
_CAP_EPS = 1e-9


@dataclass(frozen=True)
class VrpInstance:
    """One problem instance.

    kind: "tsp" or "cvrp".
    coords: (n, 2) float64 node positions; for CVRP the depot is a row too.
    depot_index / demands / capacity: CVRP only. Demands are normalized by
    the raw capacity (depot entry is 0), capacity is therefore 1.0.
    meta: provenance and generator bookkeeping; raw values for benchmark
    files live here.
    """

    kind: str
    coords: np.ndarray
    depot_index: Optional[int] = None
    demands: Optional[np.ndarray] = None
    capacity: Optional[float] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        coords = np.ascontiguousarray(np.asarray(self.coords, dtype=np.float64))
        if coords.ndim != 2 or coords.shape[1] != 2:
            raise DimensionError(f"coords must be (n, 2), got {coords.shape}")
        if coords.shape[0] < 2:
            raise DegenerateInstanceError(f"need at least 2 nodes, got {coords.shape[0]}")
        if not np.isfinite(coords).all():
            raise DomainError("coords contain non-finite values")
        coords.setflags(write=False)
        object.__setattr__(self, "coords", coords)
        if self.kind == TSP:
            if self.demands is not None or self.depot_index is not None:
                raise DomainError("tsp instances carry no depot or demands")
        elif self.kind == CVRP:
            if self.depot_index is None or self.demands is None or self.capacity is None:
                raise DomainError("cvrp instances need depot_index, demands and capacity")
            if not 0 <= self.depot_index < coords.shape[0]:
                raise DomainError(f"depot_index {self.depot_index} out of range")
            demands = np.ascontiguousarray(np.asarray(self.demands, dtype=np.float64))
            if demands.shape != (coords.shape[0],):
                raise DimensionError(f"demands shape {demands.shape} != ({coords.shape[0]},)")
            if demands[self.depot_index] != 0.0:
                raise DomainError("depot demand must be 0")
            others = np.delete(demands, self.depot_index)
            if not ((others > 0.0) & (others <= 1.0 + _CAP_EPS)).all():
                raise DomainError("customer demands must lie in (0, 1] after normalization")
            demands.setflags(write=False)
            object.__setattr__(self, "demands", demands)
            if self.capacity != 1.0:
                raise DomainError("capacity is stored normalized and must be 1.0")
        else:
            raise DomainError(f"unknown instance kind {self.kind!r}")

    @property
    def n(self) -> int:
        """Total node count, depot included for CVRP."""
        return self.coords.shape[0]

    @property
    def num_customers(self) -> int:
        return self.n - 1 if self.kind == CVRP else self.n

    def customer_indices(self) -> np.ndarray:
        if self.kind != CVRP:
            raise DomainError("customer_indices is a cvrp concept")
        return np.delete(np.arange(self.n), self.depot_index)

    def with_coords(self, coords: np.ndarray, extra_meta: Optional[dict] = None) -> "VrpInstance":
        meta = dict(self.meta)
        if extra_meta:
            meta.update(extra_meta)
        return dataclasses.replace(self, coords=coords, meta=meta)


def size_for_scaling(inst: VrpInstance) -> int:
    """Problem size as the scaling factor sees it.

    Node count for TSP, customer count for CVRP, so a model trained on
    generated size-n tasks reports factor exactly 1.0 at size n either way.
    """
    return inst.num_customers if inst.kind == CVRP else inst.n


@dataclass(frozen=True)
class Violation:
    code: str  # missing_node | duplicate | foreign_node | capacity | structure
    message: str
    node: Optional[int] = None
    subtour: Optional[int] = None


@dataclass(frozen=True)
class Feasibility:
    ok: bool
    violations: tuple = ()


@dataclass(frozen=True)
class Tour:
    """A visiting order plus its cost in the instance's coordinate frame."""

    nodes: tuple
    cost: float


def _edge_lengths(coords: np.ndarray, order: np.ndarray) -> np.ndarray:
    pts = coords[order]
    diffs = pts - np.roll(pts, -1, axis=0)
    return np.sqrt((diffs * diffs).sum(axis=1))


def tour_cost(inst: VrpInstance, nodes: Sequence[int]) -> float:
    """Euclidean length of the closed tour. Raises on infeasible input."""
    report = check_feasible(inst, nodes)
    if not report.ok:
        raise FeasibilityError(report.violations[0].message)
    order = np.asarray(nodes, dtype=np.int64)
    return float(_edge_lengths(inst.coords, order).sum())


def evaluate_tour(inst: VrpInstance, nodes: Sequence[int]) -> Tour:
    return Tour(nodes=tuple(int(v) for v in nodes), cost=tour_cost(inst, nodes))


def check_feasible(inst: VrpInstance, nodes: Sequence[int]) -> Feasibility:
    """Validate a tour, reporting every violated rule.

    TSP: a permutation of all nodes. CVRP: starts at the depot, covers every
    customer exactly once, never exceeds capacity within a depot-to-depot
    trip, and has no empty trips (consecutive depot visits).
    """
    order = [int(v) for v in nodes]
    viol: list[Violation] = []
    n = inst.n
    out_of_range = [v for v in order if not 0 <= v < n]
    if out_of_range:
        return Feasibility(False, (Violation("foreign_node", f"node {out_of_range[0]} outside [0, {n})", node=out_of_range[0]),))

    if inst.kind == TSP:
        counts = np.bincount(order, minlength=n)
        for v in np.nonzero(counts > 1)[0]:
            viol.append(Violation("duplicate", f"node {v} visited {counts[v]} times", node=int(v)))
        for v in np.nonzero(counts == 0)[0]:
            viol.append(Violation("missing_node", f"node {v} never visited", node=int(v)))
        return Feasibility(not viol, tuple(viol))

    depot = inst.depot_index
    if not order or order[0] != depot:
        viol.append(Violation("structure", f"cvrp tour must start at depot {depot}"))
        return Feasibility(False, tuple(viol))
    customers = [v for v in order if v != depot]
    counts = np.bincount(customers, minlength=n) if customers else np.zeros(n, dtype=int)
    counts[depot] = 1  # placeholder so the loops below skip it
    for v in np.nonzero(counts > 1)[0]:
        if v != depot:
            viol.append(Violation("duplicate", f"customer {v} visited {counts[v]} times", node=int(v)))
    for v in np.nonzero(counts == 0)[0]:
        viol.append(Violation("missing_node", f"customer {v} never visited", node=int(v)))

    load = 0.0
    trip = 0
    prev = depot
    for v in order[1:]:
        if v == depot:
            if prev == depot:
                viol.append(Violation("structure", "empty trip: consecutive depot visits", subtour=trip))
            trip += 1
            load = 0.0
        else:
            load += float(inst.demands[v])
            if load > inst.capacity + _CAP_EPS:
                viol.append(Violation("capacity", f"trip {trip} load {load:.6f} exceeds capacity", subtour=trip, node=int(v)))
        prev = v
    return Feasibility(not viol, tuple(viol))


def normalize_coords(inst: VrpInstance) -> VrpInstance:
    """Rescale coordinates into the unit square, keeping the aspect ratio.

    Subtracts the componentwise minimum, then divides every coordinate by
    the larger of the two axis ranges. The wider axis ends up spanning
    exactly [0, 1]; applying the map twice changes nothing. All-coincident
    points have no well-defined scale and are rejected.
    """
    lo = inst.coords.min(axis=0)
    span = float((inst.coords.max(axis=0) - lo).max())
    if span == 0.0:
        raise DegenerateInstanceError("all points coincide; normalization undefined")
    return inst.with_coords((inst.coords - lo) / span, extra_meta={"normalized": True})


_AUG_NAMES = ("xy", "yx", "1-x_y", "x_1-y", "1-x_1-y", "y_1-x", "1-y_x", "1-y_1-x")


def augment8(inst: VrpInstance) -> list[VrpInstance]:
    """The 8 symmetries of the unit square applied to the coordinates.

    Order: (x,y), (y,x), (1-x,y), (x,1-y), (1-x,1-y), (y,1-x), (1-y,x),
    (1-y,1-x). Costs of any fixed tour are identical across all variants up
    to floating-point noise. Expects coordinates inside [0, 1]^2.
    """
    x, y = inst.coords[:, 0], inst.coords[:, 1]
    if x.min() < -1e-9 or y.min() < -1e-9 or x.max() > 1 + 1e-9 or y.max() > 1 + 1e-9:
        raise DomainError("augment8 expects coordinates in the unit square")
    variants = [
        np.stack([x, y], axis=1),
        np.stack([y, x], axis=1),
        np.stack([1.0 - x, y], axis=1),
        np.stack([x, 1.0 - y], axis=1),
        np.stack([1.0 - x, 1.0 - y], axis=1),
        np.stack([y, 1.0 - x], axis=1),
        np.stack([1.0 - y, x], axis=1),
        np.stack([1.0 - y, 1.0 - x], axis=1),
    ]
    return [inst.with_coords(c, extra_meta={"augment": name}) for c, name in zip(variants, _AUG_NAMES)]


# ---------------------------------------------------------------------------
# canonical text format
# ---------------------------------------------------------------------------
#
# line 1: "<kind> <n> <raw_capacity>"   (capacity 0 for tsp)
# then n lines "x y demand" with full float64 precision (%.17g); demand is
# the raw integer-valued demand for cvrp, 0 for tsp. The depot is the first
# node line for cvrp.


def to_text(inst: VrpInstance) -> str:
    lines = []
    if inst.kind == TSP:
        lines.append(f"tsp {inst.n} 0")
        rows = range(inst.n)
        raw_demands = np.zeros(inst.n)
    else:
        raw_cap = float(inst.meta.get("raw_capacity", 1.0))
        lines.append(f"cvrp {inst.n} {raw_cap:.17g}")
        rows = [inst.depot_index] + [i for i in range(inst.n) if i != inst.depot_index]
        if "raw_demands" in inst.meta:
            raw_demands = np.asarray(inst.meta["raw_demands"], dtype=np.float64)
        else:
            raw_demands = inst.demands * raw_cap
    for i in rows:
        x, y = inst.coords[i]
        lines.append(f"{x:.17g} {y:.17g} {raw_demands[i]:.17g}")
    return "\n".join(lines) + "\n"


def from_text(text: str) -> VrpInstance:
    lines = [ln.strip() for ln in text.strip().splitlines()]
    if not lines:
        raise ParseError("empty instance text", line=1)
    head = lines[0].split()
    if len(head) != 3:
        raise ParseError(f"header needs 'kind n capacity', got {lines[0]!r}", line=1)
    kind, n_str, cap_str = head
    try:
        n = int(n_str)
        raw_cap = float(cap_str)
    except ValueError as exc:
        raise ParseError(f"bad header numbers: {exc}", line=1) from None
    if len(lines) - 1 != n:
        raise ParseError(f"expected {n} node lines, found {len(lines) - 1}", line=len(lines))
    coords = np.zeros((n, 2))
    raw_demands = np.zeros(n)
    for i, ln in enumerate(lines[1:]):
        parts = ln.split()
        if len(parts) != 3:
            raise ParseError(f"node line needs 'x y demand', got {ln!r}", line=i + 2)
        try:
            coords[i] = (float(parts[0]), float(parts[1]))
            raw_demands[i] = float(parts[2])
        except ValueError as exc:
            raise ParseError(f"bad node numbers: {exc}", line=i + 2) from None
    if kind == TSP:
        return VrpInstance(kind=TSP, coords=coords)
    if kind == CVRP:
        if raw_cap <= 0:
            raise ParseError(f"cvrp capacity must be positive, got {raw_cap}", line=1)
        return VrpInstance(
            kind=CVRP,
            coords=coords,
            depot_index=0,
            demands=raw_demands / raw_cap,
            capacity=1.0,
            meta={"raw_capacity": raw_cap, "raw_demands": raw_demands.tolist()},
        )
    raise ParseError(f"unknown kind {kind!r}", line=1)
