"""Benchmark-file ingestion, known optima, gap math and result reporting.

Reads the classic routing benchmark text formats (EUC_2D only), keeps both
the raw coordinate frame and the unit-square normalization of every
instance, and reports optimality gaps against a bundled registry of
published optima. Gap reporting uses the libraries' integer edge-length
convention (each Euclidean edge rounded to the nearest integer before
summation) so numbers are comparable with published results.
"""
from __future__ import annotations

import csv
import io
import json
import math
import warnings
from dataclasses import dataclass
from importlib import resources
from typing import Optional, Sequence

import numpy as np

from .core import CVRP, TSP, VrpInstance, check_feasible, normalize_coords
from .errors import DomainError, FeasibilityError, ParseError, UnsupportedFormatError


class GapAnomalyWarning(UserWarning):
    """A cost beat its reference; suspicious when the reference is exact."""


@dataclass(frozen=True)
class BenchmarkInstance:
    name: str
    raw: VrpInstance
    normalized: VrpInstance
    known_optimum: Optional[float] = None
    optimum_source: Optional[str] = None

    def __post_init__(self):
        if self.known_optimum is not None and not self.known_optimum > 0:
            raise DomainError(f"known optimum must be positive, got {self.known_optimum}")


def _header_and_sections(text: str):
    """Split a benchmark file into key/value headers and named sections."""
    headers: dict[str, str] = {}
    sections: dict[str, tuple[int, list[str]]] = {}
    lines = text.splitlines()
    i = 0
    while i < len(lines):
        line = lines[i].strip()
        i += 1
        if not line or line == "EOF":
            continue
        if ":" in line:
            key, _, value = line.partition(":")
            headers[key.strip().upper()] = value.strip()
            continue
        token = line.split()[0].upper()
        if token.endswith("_SECTION"):
            start = i
            body: list[str] = []
            while i < len(lines):
                nxt = lines[i].strip()
                if not nxt:
                    i += 1
                    continue
                first = nxt.split()[0].upper()
                if nxt == "EOF" or first.endswith("_SECTION") or ":" in nxt:
                    break
                body.append(nxt)
                i += 1
            sections[token] = (start, body)
        else:
            raise ParseError(f"unrecognized line {line!r}", line=i)
    return headers, sections


def _require(headers: dict, key: str, want: str, total_lines: int):
    got = headers.get(key)
    if got is None:
        raise ParseError(f"missing {key} header", line=total_lines)
    return got


def _parse_coords(sections: dict, dimension: int) -> np.ndarray:
    if "NODE_COORD_SECTION" not in sections:
        raise ParseError("missing NODE_COORD_SECTION", line=1)
    start, body = sections["NODE_COORD_SECTION"]
    if len(body) != dimension:
        raise ParseError(f"NODE_COORD_SECTION has {len(body)} rows, DIMENSION says {dimension}", line=start + len(body))
    coords = np.zeros((dimension, 2))
    for off, row in enumerate(body):
        parts = row.split()
        if len(parts) != 3:
            raise ParseError(f"coord row needs 'index x y', got {row!r}", line=start + off + 1)
        idx = int(parts[0]) - 1  # files are 1-based
        if idx != off:
            raise ParseError(f"coord indices out of order at {row!r}", line=start + off + 1)
        coords[idx] = (float(parts[1]), float(parts[2]))
    return coords


def parse_tsplib(text: str) -> BenchmarkInstance:
    """Parse a TSP benchmark file (TYPE TSP, EDGE_WEIGHT_TYPE EUC_2D)."""
    headers, sections = _header_and_sections(text)
    n_lines = len(text.splitlines())
    name = headers.get("NAME", "unnamed")
    file_type = _require(headers, "TYPE", "TSP", n_lines).split()[0]
    if file_type != "TSP":
        raise UnsupportedFormatError(f"TYPE {file_type} is not TSP")
    ewt = _require(headers, "EDGE_WEIGHT_TYPE", "EUC_2D", n_lines)
    if ewt != "EUC_2D":
        raise UnsupportedFormatError(f"EDGE_WEIGHT_TYPE {ewt} unsupported; only EUC_2D")
    dimension = int(_require(headers, "DIMENSION", "", n_lines))
    coords = _parse_coords(sections, dimension)
    raw = VrpInstance(kind=TSP, coords=coords, meta={"source": name, "raw_coords": coords.tolist()})
    opt, src = lookup_known_optimum(name)
    return BenchmarkInstance(name=name, raw=raw, normalized=normalize_coords(raw),
                             known_optimum=opt, optimum_source=src)


def parse_cvrplib(text: str) -> BenchmarkInstance:
    """Parse a CVRP benchmark file (TYPE CVRP, EUC_2D, with demands/depot)."""
    headers, sections = _header_and_sections(text)
    n_lines = len(text.splitlines())
    name = headers.get("NAME", "unnamed")
    file_type = _require(headers, "TYPE", "CVRP", n_lines).split()[0]
    if file_type != "CVRP":
        raise UnsupportedFormatError(f"TYPE {file_type} is not CVRP")
    ewt = _require(headers, "EDGE_WEIGHT_TYPE", "EUC_2D", n_lines)
    if ewt != "EUC_2D":
        raise UnsupportedFormatError(f"EDGE_WEIGHT_TYPE {ewt} unsupported; only EUC_2D")
    dimension = int(_require(headers, "DIMENSION", "", n_lines))
    capacity = float(_require(headers, "CAPACITY", "", n_lines))
    coords = _parse_coords(sections, dimension)

    if "DEMAND_SECTION" not in sections:
        raise ParseError("missing DEMAND_SECTION", line=n_lines)
    dstart, dbody = sections["DEMAND_SECTION"]
    if len(dbody) != dimension:
        raise ParseError(f"DEMAND_SECTION has {len(dbody)} rows, DIMENSION says {dimension}", line=dstart + len(dbody))
    raw_demands = np.zeros(dimension)
    for off, row in enumerate(dbody):
        parts = row.split()
        if len(parts) != 2:
            raise ParseError(f"demand row needs 'index demand', got {row!r}", line=dstart + off + 1)
        raw_demands[int(parts[0]) - 1] = float(parts[1])

    if "DEPOT_SECTION" not in sections:
        raise ParseError("missing DEPOT_SECTION", line=n_lines)
    pstart, pbody = sections["DEPOT_SECTION"]
    depots = [int(float(v)) for v in pbody if int(float(v)) != -1]
    if len(depots) != 1:
        raise ParseError(f"need exactly one depot, got {depots}", line=pstart + 1)
    depot = depots[0] - 1
    if raw_demands[depot] != 0:
        raise ParseError(f"depot demand must be 0, got {raw_demands[depot]}", line=dstart + depot + 1)

    raw = VrpInstance(
        kind=CVRP, coords=coords, depot_index=depot,
        demands=raw_demands / capacity, capacity=1.0,
        meta={"source": name, "raw_coords": coords.tolist(),
              "raw_capacity": capacity, "raw_demands": raw_demands.tolist()},
    )
    opt, src = lookup_known_optimum(name)
    return BenchmarkInstance(name=name, raw=raw, normalized=normalize_coords(raw),
                             known_optimum=opt, optimum_source=src)


def parse_tour(text: str) -> list[int]:
    """Read a TOUR_SECTION solution file; returns 0-based node order."""
    lines = [ln.strip() for ln in text.splitlines()]
    try:
        start = next(i for i, ln in enumerate(lines) if ln.upper().startswith("TOUR_SECTION"))
    except StopIteration:
        raise ParseError("missing TOUR_SECTION", line=len(lines)) from None
    order: list[int] = []
    for off, ln in enumerate(lines[start + 1:]):
        if not ln:
            continue
        for tok in ln.split():
            v = int(tok)
            if v == -1:
                return order
            order.append(v - 1)
        if ln.upper() == "EOF":
            break
    return order


def lookup_known_optimum(name: str) -> tuple[Optional[float], Optional[str]]:
    registry = load_known_optima()
    entry = registry.get(name)
    if entry is None:
        return None, None
    return float(entry["value"]), str(entry["source"])


_optima_cache: Optional[dict] = None


def load_known_optima() -> dict:
    global _optima_cache
    if _optima_cache is None:
        payload = json.loads(resources.files("vrpkit.data").joinpath("known_optima.json").read_text())
        _optima_cache = payload["entries"]
    return _optima_cache


def load_bundled(filename: str) -> str:
    """Read one of the benchmark files shipped with the package."""
    return resources.files("vrpkit.data").joinpath(filename).read_text()


def gap(cost: float, reference: float) -> float:
    """Percentage excess of cost over reference: 100 (c - r) / r.

    Negative gaps mean the cost beat the reference, which cannot happen
    against an exact optimum; a warning flags that case for the caller.
    """
    if not reference > 0:
        raise DomainError(f"reference must be positive, got {reference}")
    value = 100.0 * (cost - reference) / reference
    if value < 0:
        warnings.warn(f"cost {cost} beat reference {reference}", GapAnomalyWarning, stacklevel=2)
    return value


def benchmark_cost(raw_coords: np.ndarray, tour: Sequence[int]) -> float:
    """Closed-tour length with each edge rounded to nearest int (half up)."""
    order = np.asarray(tour, dtype=np.int64)
    pts = np.asarray(raw_coords, dtype=np.float64)[order]
    diffs = pts - np.roll(pts, -1, axis=0)
    lengths = np.sqrt((diffs * diffs).sum(axis=1))
    return float(np.floor(lengths + 0.5).sum())


def verify_optimum_tour(bench: BenchmarkInstance, tour: Sequence[int]) -> float:
    """Gap of a candidate optimal tour against the registry value."""
    rep = check_feasible(bench.raw, tour)
    if not rep.ok:
        raise FeasibilityError(rep.violations[0].message)
    if bench.known_optimum is None:
        raise DomainError(f"no known optimum registered for {bench.name}")
    return gap(benchmark_cost(bench.raw.coords, tour), bench.known_optimum)


# ---------------------------------------------------------------------------
# result reporting
# ---------------------------------------------------------------------------

RESULT_COLUMNS = ("instance", "n", "method", "cost", "reference", "gap_pct", "seconds")


def write_results_csv(rows: Sequence[dict], path) -> None:
    """Write result rows with the fixed reporting column order."""
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=RESULT_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row.get(k, "") for k in RESULT_COLUMNS})


def results_csv_text(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=RESULT_COLUMNS)
    writer.writeheader()
    for row in rows:
        writer.writerow({k: row.get(k, "") for k in RESULT_COLUMNS})
    return buf.getvalue()


def summarize_results(rows: Sequence[dict]) -> dict:
    """Aggregate gap statistics: count, mean, 95% margin of error, extremes."""
    gaps = [float(r["gap_pct"]) for r in rows if r.get("gap_pct") not in ("", None)]
    out: dict = {"count": len(rows), "with_reference": len(gaps)}
    if gaps:
        arr = np.asarray(gaps)
        mean = float(arr.mean())
        moe = float(1.96 * arr.std(ddof=1) / math.sqrt(arr.size)) if arr.size > 1 else 0.0
        out.update({
            "mean_gap_pct": mean,
            "margin_of_error_95": moe,
            "worst_gap_pct": float(arr.max()),
            "best_gap_pct": float(arr.min()),
            "anomalies": int((arr < 0).sum()),
        })
    return out
