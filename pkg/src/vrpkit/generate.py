"""Seeded instance generators for seven node-layout families.

Base layouts:

* ``uniform``: i.i.d. uniform points in the unit square.
* ``cluster``: 3 to 7 Gaussian blobs (std 0.07) around centers drawn in
  [0.2, 0.8]^2; samples falling outside the square are redrawn.
* ``mixed``: exactly ceil(n/2) uniform points, the rest clustered.
* ``gaussian``: one isotropic blob around (0.5, 0.5), redrawn into the square.

Mutations, each applied to a fresh uniform layout:

* ``implosion``: points within radius r of a randomly chosen node slide
  toward it, keeping a fraction ``pull`` of their offset.
* ``explosion``: points strictly inside radius r of a random center are
  pushed out to the radius along their ray; the center is drawn away from
  the walls so the ring stays inside the square.
* ``expansion``: all offsets from a random center stretch by a factor, then
  the whole instance is renormalized back into the unit square.

Every instance gets its own child RNG stream keyed by (seed, index), so
regenerating with a larger count reproduces earlier instances bit for bit
and generation order cannot leak between instances.

Draw order within one instance is fixed and documented here because the
determinism contract depends on it: depot coordinates (cvrp), then raw
demands (cvrp), then the coordinate cloud, then any mutation parameters.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np

from .core import CVRP, TSP, VrpInstance, normalize_coords
from .errors import ConfigError, DomainError

DISTRIBUTIONS = ("uniform", "cluster", "mixed", "implosion", "explosion", "expansion", "gaussian")
_MUTATIONS = ("implosion", "explosion", "expansion")

_DEFAULTS: dict[str, dict[str, float]] = {
    "uniform": {},
    "cluster": {"clusters_min": 3, "clusters_max": 7, "center_lo": 0.2, "center_hi": 0.8, "std": 0.07},
    "mixed": {"clusters_min": 3, "clusters_max": 7, "center_lo": 0.2, "center_hi": 0.8, "std": 0.07},
    "implosion": {"radius": 0.3, "pull_lo": 0.1, "pull_hi": 0.5},
    "explosion": {"radius": 0.3},
    "expansion": {"factor_lo": 1.2, "factor_hi": 2.0},
    "gaussian": {"mean": 0.5, "std": 0.2},
}


@dataclass(frozen=True)
class DistributionSpec:
    """A named layout family with parameter overrides and a base seed."""

    name: str
    params: Mapping[str, float] = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.name not in DISTRIBUTIONS:
            raise ConfigError(f"unknown distribution {self.name!r}; choose from {DISTRIBUTIONS}")
        unknown = set(self.params) - set(_DEFAULTS[self.name]) - {"pull", "factor"}
        if unknown:
            raise ConfigError(f"unknown params for {self.name}: {sorted(unknown)}")

    def effective_params(self) -> dict[str, float]:
        out = dict(_DEFAULTS[self.name])
        out.update(self.params)
        return out


def raw_capacity_for(n: int) -> float:
    """Vehicle capacity for n customers: 40 at n=50, 50 at n=100.

    Linear in between, rounded to the nearest integer, clamped to [30, 50]
    outside, so normalized demands always lie within [1/50, 9/30].
    """
    if n < 1:
        raise DomainError(f"customer count must be positive, got {n}")
    cap = np.floor(40.0 + (n - 50) * 10.0 / 50.0 + 0.5)
    return float(np.clip(cap, 30.0, 50.0))


def cvrp_attrs(n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray, float]:
    """Draw depot position and demands for n customers.

    Returns (depot_xy, demands, raw_capacity) where demands has length n+1,
    entry 0 is the depot's 0.0 and the rest are integers from {1..9} divided
    by the capacity. Consumes exactly 2 + n draws in that order.
    """
    if n < 2:
        raise DomainError(f"cvrp needs at least 2 customers, got {n}")
    depot = rng.random(2)
    raw = rng.integers(1, 10, size=n).astype(np.float64)
    cap = raw_capacity_for(n)
    demands = np.concatenate([[0.0], raw / cap])
    return depot, demands, cap


def _cluster_cloud(n: int, rng: np.random.Generator, p: Mapping[str, float]) -> tuple[np.ndarray, dict]:
    k = int(rng.integers(int(p["clusters_min"]), int(p["clusters_max"]) + 1))
    centers = rng.uniform(p["center_lo"], p["center_hi"], size=(k, 2))
    assignment = rng.integers(0, k, size=n)
    pts = centers[assignment] + rng.normal(0.0, p["std"], size=(n, 2))
    bad = ~_inside(pts)
    while bad.any():
        idx = np.nonzero(bad)[0]
        pts[idx] = centers[assignment[idx]] + rng.normal(0.0, p["std"], size=(idx.size, 2))
        bad = ~_inside(pts)
    return pts, {"centers": centers.tolist(), "assignment": assignment.tolist()}


def _inside(pts: np.ndarray) -> np.ndarray:
    return (pts >= 0.0).all(axis=1) & (pts <= 1.0).all(axis=1)


def _base_cloud(name: str, n: int, rng: np.random.Generator, p: Mapping[str, float]) -> tuple[np.ndarray, dict]:
    if name == "uniform":
        return rng.random((n, 2)), {}
    if name == "cluster":
        return _cluster_cloud(n, rng, p)
    if name == "mixed":
        n_uniform = -(-n // 2)  # ceil
        mask = np.zeros(n, dtype=bool)
        mask[rng.permutation(n)[:n_uniform]] = True
        pts = np.empty((n, 2))
        pts[mask] = rng.random((n_uniform, 2))
        cluster_pts, extra = _cluster_cloud(n - n_uniform, rng, p)
        pts[~mask] = cluster_pts
        extra["uniform_mask"] = mask.tolist()
        return pts, extra
    if name == "gaussian":
        pts = rng.normal(p["mean"], p["std"], size=(n, 2))
        bad = ~_inside(pts)
        while bad.any():
            idx = np.nonzero(bad)[0]
            pts[idx] = rng.normal(p["mean"], p["std"], size=(idx.size, 2))
            bad = ~_inside(pts)
        return pts, {}
    raise ConfigError(f"{name} is not a base layout")


def mutate(base: VrpInstance, name: str, params: Optional[Mapping[str, float]] = None,
           rng: Optional[np.random.Generator] = None) -> VrpInstance:
    """Apply one geometric mutation to an instance's coordinates.

    The warp acts on every node, depot included. Draws (in order): the
    center, then the strength parameter where the family has one. Passing
    an explicit ``pull`` or ``factor`` skips that draw.
    """
    if name not in _MUTATIONS:
        raise ConfigError(f"unknown mutation {name!r}; choose from {_MUTATIONS}")
    if rng is None:
        rng = np.random.default_rng(0)
    p = dict(_DEFAULTS[name])
    if params:
        p.update(params)
    coords = np.array(base.coords)
    if coords.min() < -1e-9 or coords.max() > 1 + 1e-9:
        raise DomainError("mutations expect coordinates inside the unit square")
    extra: dict = {"mutation": name}

    if name == "implosion":
        r = float(p["radius"])
        if not 0.0 < r:
            raise DomainError(f"radius must be positive, got {r}")
        center_idx = int(rng.integers(0, coords.shape[0]))
        center = coords[center_idx]
        pull = float(p["pull"]) if "pull" in p else float(rng.uniform(p["pull_lo"], p["pull_hi"]))
        if not 0.0 < pull <= 1.0:
            raise DomainError(f"pull must lie in (0, 1], got {pull}")
        if pull != 1.0:  # pull of exactly 1 keeps every point in place
            offsets = coords - center
            near = np.linalg.norm(offsets, axis=1) <= r
            coords[near] = center + pull * offsets[near]
        extra.update({"center_index": center_idx, "radius": r, "pull": pull})

    elif name == "explosion":
        r = float(p["radius"])
        if not 0.0 < r <= 0.5:
            raise DomainError(f"explosion radius must lie in (0, 0.5], got {r}")
        # keep the evacuated ring inside the square so pushed points stay legal
        center = rng.uniform(r, 1.0 - r, size=2)
        offsets = coords - center
        dist = np.linalg.norm(offsets, axis=1)
        hit = (dist > 0.0) & (dist < r)
        coords[hit] = center + offsets[hit] * (r / dist[hit])[:, None]
        extra.update({"center": center.tolist(), "radius": r})

    elif name == "expansion":
        center = rng.random(2)
        factor = float(p["factor"]) if "factor" in p else float(rng.uniform(p["factor_lo"], p["factor_hi"]))
        if factor < 1.0:
            raise DomainError(f"expansion factor must be >= 1, got {factor}")
        coords = center + factor * (coords - center)
        extra.update({"center": center.tolist(), "factor": factor})
        return normalize_coords(base.with_coords(coords, extra_meta=extra))

    return base.with_coords(np.clip(coords, 0.0, 1.0), extra_meta=extra)


def _one_instance(spec: DistributionSpec, n: int, kind: str, index: int) -> VrpInstance:
    rng = np.random.default_rng(np.random.SeedSequence(entropy=spec.seed, spawn_key=(index,)))
    p = spec.effective_params()
    mutated = spec.name in _MUTATIONS
    cloud_name = "uniform" if mutated else spec.name
    meta = {"distribution": spec.name, "seed": spec.seed, "index": index}

    if kind == CVRP:
        depot, demands, cap = cvrp_attrs(n, rng)
        pts, extra = _base_cloud(cloud_name, n, rng, p)
        coords = np.vstack([depot[None, :], pts])
        meta.update(extra)
        meta.update({"raw_capacity": cap, "raw_demands": (demands * cap).tolist()})
        inst = VrpInstance(kind=CVRP, coords=coords, depot_index=0, demands=demands,
                           capacity=1.0, meta=meta)
    elif kind == TSP:
        pts, extra = _base_cloud(cloud_name, n, rng, p)
        meta.update(extra)
        inst = VrpInstance(kind=TSP, coords=pts, meta=meta)
    else:
        raise ConfigError(f"unknown kind {kind!r}")

    if mutated:
        inst = mutate(inst, spec.name, spec.params, rng)
    return inst


def generate(spec: DistributionSpec, n: int, count: int, kind: str = TSP) -> list[VrpInstance]:
    """Generate ``count`` instances of size ``n``.

    For cvrp, ``n`` counts customers; the depot is an extra node. Instance
    ``i`` depends only on (spec, n, kind, i), never on ``count``.
    """
    if n < 2:
        raise DomainError(f"generate needs n >= 2, got {n}")
    if count < 1:
        raise DomainError(f"count must be positive, got {count}")
    return [_one_instance(spec, n, kind, i) for i in range(count)]
