"""Entropy measurements, scaling-factor sweeps, decoder choice proportions.

Everything here aggregates numbers and emits CSV; rendering lives elsewhere.
The entropy helpers quantify how a multiplier on attention logits moves the
softmax away from uniform, and :class:`EntropyAudit` checks the lower bound
``H >= ln n + min - max`` on every softmax row a policy produces.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, Dict, Mapping, Optional, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from .benchio import gap
from .core import VrpInstance, normalize_coords, size_for_scaling
from .errors import DimensionError, DomainError
from .generate import DistributionSpec, generate
from .policy import Policy, esf_value
from .training import evaluate_batch

__all__ = [
    "SWEEP_COLUMNS",
    "PROPORTION_COLUMNS",
    "ENTROPY_COLUMNS",
    "row_entropy",
    "entropy_lower_bound",
    "EntropyAudit",
    "mean_with_margin",
    "SweepResult",
    "sweep_scaling",
    "write_sweep_csv",
    "decoder_choice_proportions",
    "write_proportions_csv",
    "entropy_profile",
    "write_entropy_csv",
]

SWEEP_COLUMNS = ("factor", "mean_gap", "margin")
PROPORTION_COLUMNS = ("distribution", "decoder", "percent")
ENTROPY_COLUMNS = ("size", "factor", "rows", "mean_entropy", "mean_bound",
                   "min_slack", "violations")


# ---------------------------------------------------------------------------
# entropy
# ---------------------------------------------------------------------------

def row_entropy(weights) -> float:
    """Shannon entropy -sum p ln p of one probability row, in nats.

    Zero entries contribute exactly zero. Rejects rows that are not a
    probability distribution (negative entries, or mass off 1 by more
    than 1e-9).
    """
    p = np.asarray(weights, dtype=np.float64).reshape(-1)
    if p.size == 0:
        raise DomainError("entropy of an empty row is undefined")
    if not np.isfinite(p).all() or (p < 0).any():
        raise DomainError("weights must be finite and nonnegative")
    total = float(p.sum())
    if abs(total - 1.0) > 1e-9:
        raise DomainError(f"weights sum to {total}, not 1")
    pos = p[p > 0]
    return float(-(pos * np.log(pos)).sum())


def entropy_lower_bound(row) -> float:
    """ln n + min - max for a logit row: softmax entropy never drops below it.

    The bound can go negative (entropy cannot), in which case it is simply
    slack. Tight exactly when the row is constant.
    """
    x = np.asarray(row, dtype=np.float64).reshape(-1)
    if x.size == 0:
        raise DomainError("bound of an empty row is undefined")
    return float(math.log(x.size) + x.min() - x.max())


class EntropyAudit:
    """Context manager checking the entropy bound on every softmax row.

    Hooks the shared softmax and, for each row, compares the entropy of the
    produced distribution against ``ln k + min - max`` over the row's
    unmasked entries (k of them). ``min_slack`` is the smallest observed
    entropy-minus-bound; ``violations`` counts rows below ``-tol``.
    """

    def __init__(self, tol: float = 1e-9):
        self.tol = float(tol)
        self.rows = 0
        self.violations = 0
        self.min_slack = math.inf
        self.entropy_sum = 0.0
        self.bound_sum = 0.0
        self._ctx = None

    def _observe(self, scaled: np.ndarray, probs: np.ndarray) -> None:
        x = scaled.reshape(-1, scaled.shape[-1])
        p = probs.reshape(-1, probs.shape[-1])
        live = np.isfinite(x)  # masked entries arrive as -inf
        k = live.sum(axis=-1)
        xmin = np.where(live, x, np.inf).min(axis=-1)
        xmax = np.where(live, x, -np.inf).max(axis=-1)
        plogp = np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)
        entropy = -plogp.sum(axis=-1)
        bound = np.log(k) + xmin - xmax
        slack = entropy - bound
        self.rows += x.shape[0]
        self.violations += int((slack < -self.tol).sum())
        self.min_slack = min(self.min_slack, float(slack.min()))
        self.entropy_sum += float(entropy.sum())
        self.bound_sum += float(bound.sum())

    def __enter__(self) -> "EntropyAudit":
        self._ctx = ad.softmax_probe(self._observe)
        self._ctx.__enter__()
        return self

    def __exit__(self, *exc):
        ctx, self._ctx = self._ctx, None
        return ctx.__exit__(*exc)

    @property
    def clean(self) -> bool:
        return self.violations == 0

    @property
    def mean_entropy(self) -> float:
        if self.rows == 0:
            raise DomainError("no softmax rows observed")
        return self.entropy_sum / self.rows

    @property
    def mean_bound(self) -> float:
        if self.rows == 0:
            raise DomainError("no softmax rows observed")
        return self.bound_sum / self.rows


def mean_with_margin(values) -> Tuple[float, float]:
    """Sample mean and 95% confidence half-width (normal approximation)."""
    v = np.asarray(values, dtype=np.float64).reshape(-1)
    if v.size == 0:
        raise DomainError("cannot summarize an empty sample")
    mean = float(v.mean())
    if v.size == 1:
        return mean, 0.0
    sem = float(v.std(ddof=1)) / math.sqrt(v.size)
    return mean, 1.96 * sem


# ---------------------------------------------------------------------------
# scaling-factor sweep
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SweepResult:
    """Mean gap per scaling factor, plus the size-prescribed factor's gap."""

    factors: Tuple[float, ...]
    mean_gaps: Tuple[float, ...]
    margins: Tuple[float, ...]
    esf_factor: float
    esf_gap: float
    model_id: str
    test_size: int

    def __post_init__(self):
        if len(self.factors) != len(self.mean_gaps) or len(self.factors) != len(self.margins):
            raise DimensionError("factors, gaps and margins must align")
        if any(b <= a for a, b in zip(self.factors, self.factors[1:])):
            raise DomainError("factor grid must be strictly increasing")
        if not all(math.isfinite(g) for g in self.mean_gaps):
            raise DomainError("mean gaps must be finite")


def _gaps_at_factor(policy, instances, refs, factor, decoder_id, starts) -> np.ndarray:
    costs = evaluate_batch(policy, instances, decoder_id=decoder_id, esf=factor, starts=starts)
    return np.array([gap(float(c), r) for c, r in zip(costs, refs)])


def sweep_scaling(policy: Policy, sizes: Tuple[int, int], factors: Sequence[float],
                  eval_set: Sequence[VrpInstance], *,
                  oracle: Callable[[VrpInstance], float],
                  decoder_id: int = 0, starts: Optional[int] = None,
                  model_id: str = "policy") -> SweepResult:
    """Greedy-decode the eval set once per factor; report mean gap vs oracle.

    ``sizes`` is (training size, test size): the pair fixes the prescribed
    factor ln(test)/ln(train), whose gap is recorded alongside the grid.
    Each grid factor replaces the policy's own scaling wholesale, so factor
    1.0 is exactly the unscaled baseline. Grid must be strictly increasing
    within (0, 2]. ``oracle`` maps an instance to its reference cost and is
    consulted once per instance, in the normalized frame the policy sees.
    """
    n_train, n_test = int(sizes[0]), int(sizes[1])
    fs = tuple(float(f) for f in factors)
    if not fs:
        raise DomainError("factor grid is empty")
    if any(not 0.0 < f <= 2.0 for f in fs):
        raise DomainError("factors must lie in (0, 2]")
    if any(b <= a for a, b in zip(fs, fs[1:])):
        raise DomainError("factor grid must be strictly increasing")
    if not eval_set:
        raise DomainError("eval set is empty")
    for inst in eval_set:
        if size_for_scaling(inst) != n_test:
            raise DimensionError(f"eval instance size {size_for_scaling(inst)} != test size {n_test}")

    insts = [normalize_coords(inst) for inst in eval_set]
    refs = [float(oracle(inst)) for inst in insts]

    prescribed = esf_value("fixed", n_train, n_test)
    means, margins = [], []
    esf_gap = None
    for f in fs:
        gaps = _gaps_at_factor(policy, insts, refs, f, decoder_id, starts)
        m, h = mean_with_margin(gaps)
        means.append(m)
        margins.append(h)
        if f == prescribed:
            esf_gap = m
    if esf_gap is None:
        esf_gap, _ = mean_with_margin(
            _gaps_at_factor(policy, insts, refs, prescribed, decoder_id, starts))
    return SweepResult(fs, tuple(means), tuple(margins), prescribed, esf_gap,
                       model_id, n_test)


def write_sweep_csv(result: SweepResult, path) -> None:
    """One row per grid factor, in grid order."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SWEEP_COLUMNS)
        for f, g, h in zip(result.factors, result.mean_gaps, result.margins):
            writer.writerow([repr(f), repr(g), repr(h)])


# ---------------------------------------------------------------------------
# decoder choice proportions
# ---------------------------------------------------------------------------

def _grouped_costs(policy, instances, decoder_id, esf, starts) -> np.ndarray:
    """Greedy cost per instance, batching contiguous same-size groups."""
    out = np.empty(len(instances))
    start = 0
    while start < len(instances):
        n = size_for_scaling(instances[start])
        stop = start
        while stop < len(instances) and size_for_scaling(instances[stop]) == n \
                and instances[stop].kind == instances[start].kind:
            stop += 1
        chunk = instances[start:stop]
        factor = policy.esf_for(n) if esf is None else esf
        out[start:stop] = evaluate_batch(policy, chunk, decoder_id=decoder_id,
                                         esf=factor, starts=starts)
        start = stop
    return out


def decoder_choice_proportions(policy: Policy, eval_sets: Mapping[str, Sequence[VrpInstance]],
                               *, esf: Optional[float] = None,
                               starts: Optional[int] = None) -> Dict[str, Tuple[float, ...]]:
    """Share of instances on which each decoder produces the cheapest tour.

    Every instance in every eval set is greedy-decoded by every decoder;
    the cheapest decoder gets the credit, exact ties split it equally.
    Returns {distribution: (percent per decoder)}; each row sums to 100.
    """
    if policy.config.num_decoders < 2:
        raise DomainError("choice proportions need at least two decoders")
    if not eval_sets:
        raise DomainError("no eval sets given")
    n_dec = policy.config.num_decoders
    table: Dict[str, Tuple[float, ...]] = {}
    for name, instances in eval_sets.items():
        if not instances:
            raise DomainError(f"eval set {name!r} is empty")
        insts = [normalize_coords(inst) for inst in instances]
        costs = np.stack([_grouped_costs(policy, insts, d, esf, starts)
                          for d in range(n_dec)])  # (n_dec, m)
        best = costs.min(axis=0)
        wins = costs == best  # exact tie rule keeps copies symmetric
        credit = wins / wins.sum(axis=0)
        table[name] = tuple(100.0 * credit.mean(axis=1))
    return table


def write_proportions_csv(table: Mapping[str, Sequence[float]], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(PROPORTION_COLUMNS)
        for name in table:
            for d, pct in enumerate(table[name]):
                writer.writerow([name, d, repr(float(pct))])


# ---------------------------------------------------------------------------
# attention entropy across sizes
# ---------------------------------------------------------------------------

def entropy_profile(policy: Policy, sizes: Sequence[int], *, count: int = 16,
                    seed: int = 0, use_esf: bool = True,
                    starts: Optional[int] = None) -> list:
    """Observe every softmax the policy computes while greedy-decoding.

    For each size, ``count`` fresh instances are decoded with the scaling
    factor the policy prescribes for that size (or 1.0 with ``use_esf``
    off) and the audited entropy statistics become one row. ``violations``
    should be 0 everywhere: the entropy bound holds row by row.
    """
    if not sizes:
        raise DomainError("no sizes given")
    if count < 1:
        raise DomainError(f"count must be positive, got {count}")
    rows = []
    for n in sizes:
        spec = DistributionSpec("uniform", seed=seed)
        insts = [normalize_coords(inst)
                 for inst in generate(spec, int(n), count, kind=policy.config.kind)]
        factor = policy.esf_for(int(n)) if use_esf else 1.0
        with EntropyAudit() as audit:
            evaluate_batch(policy, insts, esf=factor, starts=starts)
        rows.append({
            "size": int(n),
            "factor": factor,
            "rows": audit.rows,
            "mean_entropy": audit.mean_entropy,
            "mean_bound": audit.mean_bound,
            "min_slack": audit.min_slack,
            "violations": audit.violations,
        })
    return rows


def write_entropy_csv(rows: Sequence[Mapping], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(ENTROPY_COLUMNS)
        for row in rows:
            writer.writerow([row["size"], repr(float(row["factor"])), row["rows"],
                             repr(float(row["mean_entropy"])), repr(float(row["mean_bound"])),
                             repr(float(row["min_slack"])), row["violations"]])
