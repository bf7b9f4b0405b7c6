"""Decoding strategies: greedy/sampled, augmented, multi-start, multi-decoder.

solve() enumerates a candidate set {augmentations} x {samples} x {starts}
x {decoders}, rolls everything out in one batch per decoder, and returns
the cheapest feasible tour costed in the instance's original coordinate
frame. Every sampled candidate draws from its own (augment, sample, start)
substream, so growing any axis of the candidate set leaves the existing
candidates' draws alone; the minimum can only improve.

Unsamplable tasks (single benchmark instances) run the encoder once and
fan the shared node embeddings out to every decoder.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .core import (
    CVRP,
    TSP,
    Tour,
    VrpInstance,
    augment8,
    check_feasible,
    normalize_coords,
    size_for_scaling,
)
from .errors import ConfigError, DomainError, FeasibilityError, SelectionError
from .generate import DistributionSpec, generate
from .policy import (
    DecoderCache,
    InstanceBatch,
    Policy,
    _decoder_cache,
    _encode_batch,
    _rollout_batch,
    batch_costs,
    esf_value,
    make_batch,
    picks_to_tour,
    rollout_step_budget,
)

MODES = ("greedy", "sample")
AUGMENTS = ("none", "aug8")
DECODER_POLICIES = ("fixed", "select", "min")
DEFAULT_SELECT_INSTANCES = 64


@dataclass(frozen=True)
class InferenceConfig:
    """What to enumerate and how to pick the decoder."""

    mode: str = "greedy"
    samples: int = 1
    augment: str = "none"
    starts: Optional[int] = None
    esf_mode: Optional[str] = None  # None -> the policy's own setting
    esf_size: Optional[int] = None
    decoder_policy: str = "fixed"
    decoder_id: int = 0
    select_instances: int = DEFAULT_SELECT_INSTANCES
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.augment not in AUGMENTS:
            raise ConfigError(f"augment must be one of {AUGMENTS}, got {self.augment!r}")
        if self.decoder_policy not in DECODER_POLICIES:
            raise ConfigError(f"decoder_policy must be one of {DECODER_POLICIES}")
        if self.samples < 1:
            raise ConfigError(f"samples must be >= 1, got {self.samples}")
        if self.select_instances < 1:
            raise ConfigError(f"select_instances must be >= 1, got {self.select_instances}")
        if self.starts is not None and self.starts < 1:
            raise ConfigError(f"starts must be >= 1, got {self.starts}")


def resolve_esf(policy: Policy, cfg: InferenceConfig, n_current: int) -> float:
    """Scaling factor for this instance, honoring config overrides."""
    if cfg.esf_mode is None:
        return policy.esf_for(n_current)
    if cfg.esf_mode == "off":
        return 1.0
    if cfg.esf_mode == "fixed":
        if cfg.esf_size is None:
            raise ConfigError("esf mode 'fixed' needs esf_size")
        return esf_value("fixed", cfg.esf_size, n_current)
    operand = cfg.esf_size if cfg.esf_size is not None else 50
    return esf_value(cfg.esf_mode, operand, n_current)


def _depot_first(inst: VrpInstance) -> tuple[VrpInstance, Optional[list[int]]]:
    """Reorder so the depot sits at index 0; returns (instance, new->old map)."""
    if inst.kind == TSP or inst.depot_index == 0:
        return inst, None
    order = [inst.depot_index] + [i for i in range(inst.n) if i != inst.depot_index]
    reordered = VrpInstance(kind=CVRP, coords=inst.coords[order], depot_index=0,
                            demands=inst.demands[order], capacity=inst.capacity,
                            meta=dict(inst.meta))
    return reordered, order


@dataclass(frozen=True)
class DecoderOutcome:
    decoder_id: int
    cost: float
    tour: Tour


@dataclass(frozen=True)
class SolveDetails:
    tour: Tour
    decoder_id: int
    outcomes: tuple[DecoderOutcome, ...]
    candidates: int


def _sample_uniforms(seed: int, n_augs: int, samples: int, starts: int, steps: int) -> np.ndarray:
    """(A*K, S, steps) draws keyed by (augment, sample, start)."""
    out = np.empty((n_augs * samples, starts, steps))
    for a in range(n_augs):
        for j in range(samples):
            for s in range(starts):
                ss = np.random.SeedSequence(entropy=seed, spawn_key=(a, j, s))
                out[a * samples + j, s, :] = np.random.default_rng(ss).random(steps)
    return out


def _repeat_rows(t, k: int):
    from .autodiff import Tensor
    return t if k == 1 else Tensor(np.repeat(t.data, k, axis=0))


def _enumerate(policy: Policy, inst: VrpInstance, cfg: InferenceConfig,
               decoder_ids: Sequence[int]) -> SolveDetails:
    """Shared engine behind solve and solve_unsamplable."""
    work, order = _depot_first(inst)
    norm = normalize_coords(work)
    variants = augment8(norm) if cfg.augment == "aug8" else [norm]
    greedy = cfg.mode == "greedy"
    k = 1 if greedy else cfg.samples
    var_batch = make_batch(variants)
    rows = len(variants) * k
    roll_batch = InstanceBatch(var_batch.kind, np.repeat(var_batch.coords, k, axis=0),
                               None if var_batch.demands is None else np.repeat(var_batch.demands, k, axis=0))
    lanes = roll_batch.num_customers if cfg.starts is None else min(cfg.starts, roll_batch.num_customers)
    factor = resolve_esf(policy, cfg, size_for_scaling(inst))
    unif = None
    if not greedy:
        unif = _sample_uniforms(cfg.seed, len(variants), k, lanes,
                                rollout_step_budget(roll_batch.kind, roll_batch.n) + 1)
    native_batch = InstanceBatch(work.kind, np.repeat(work.coords[None], rows, axis=0),
                                 None if work.kind == TSP else np.repeat(work.demands[None], rows, axis=0))
    outcomes = []
    with ad.no_grad():
        # the encoder sees each augmentation once; sample rows reuse its output
        emb_v, graph_v = _encode_batch(policy, var_batch, factor)
        encoded = (_repeat_rows(emb_v, k), _repeat_rows(graph_v, k))
        for d in decoder_ids:
            cv = _decoder_cache(policy, d, emb_v)
            cache = DecoderCache(_repeat_rows(cv.glimpse_k, k), _repeat_rows(cv.glimpse_v, k),
                                 _repeat_rows(cv.logit_k, k))
            picks, _, _ = _rollout_batch(policy, d, roll_batch, lanes, greedy, factor,
                                         unif, encoded=encoded, cache=cache)
            native_costs = batch_costs(native_batch, picks)
            flat = int(native_costs.argmin())
            b, s = divmod(flat, native_costs.shape[1])
            nodes = picks_to_tour(work.kind, picks[b, s])
            if order is not None:
                nodes = [order[v] for v in nodes]
            outcomes.append(DecoderOutcome(d, float(native_costs[b, s]), Tour(tuple(nodes), float(native_costs[b, s]))))
    best = min(range(len(outcomes)), key=lambda i: outcomes[i].cost)
    chosen = outcomes[best]
    verdict = check_feasible(inst, chosen.tour.nodes)
    if not verdict.ok:
        raise FeasibilityError(f"constructed tour is infeasible: {verdict.violations[0].message}")
    return SolveDetails(chosen.tour, chosen.decoder_id, tuple(outcomes),
                        candidates=rows * lanes * len(decoder_ids))


Sampler = Callable[[int], Sequence[VrpInstance]]


def distribution_sampler(spec: DistributionSpec, n: int, kind: str = TSP) -> Sampler:
    """Validation-instance source drawing fresh instances on every call."""
    offset = 0

    def sampler(count: int) -> Sequence[VrpInstance]:
        nonlocal offset
        batch = generate(spec, n, offset + count, kind=kind)[offset:]
        offset += count
        return batch

    return sampler


def select_decoder(policy: Policy, sampler: Sampler, m: int = DEFAULT_SELECT_INSTANCES,
                   esf: Optional[float] = None) -> int:
    """Pick the decoder with the lowest mean greedy cost on m fresh instances.

    Ties go to the lowest index. The mean uses exact summation, so the
    choice cannot depend on the order the instances arrive in.
    """
    if m < 1:
        raise DomainError(f"m must be >= 1, got {m}")
    if policy.config.num_decoders == 1:
        return 0
    try:
        drawn = list(sampler(m))
    except Exception as exc:
        raise SelectionError(f"validation sampler failed: {exc}") from exc
    if len(drawn) != m:
        raise SelectionError(f"sampler returned {len(drawn)} instances, wanted {m}")
    instances = [normalize_coords(inst) for inst in drawn]
    factor = policy.esf_for(size_for_scaling(instances[0])) if esf is None else esf
    from .training import evaluate_batch  # local import to avoid a cycle
    means = []
    for d in range(policy.config.num_decoders):
        costs = evaluate_batch(policy, instances, decoder_id=d, esf=factor)
        means.append(math.fsum(costs.tolist()) / m)
    return int(np.argmin(means))


def _resolve_decoders(policy: Policy, cfg: InferenceConfig,
                      sampler: Optional[Sampler]) -> list[int]:
    if cfg.decoder_policy == "fixed":
        policy._check_decoder(cfg.decoder_id)
        return [cfg.decoder_id]
    if cfg.decoder_policy == "min":
        return list(range(policy.config.num_decoders))
    if sampler is None:
        raise ConfigError("decoder_policy 'select' needs a validation sampler")
    return [select_decoder(policy, sampler, cfg.select_instances)]


def solve_detailed(policy: Policy, inst: VrpInstance, cfg: InferenceConfig,
                   sampler: Optional[Sampler] = None) -> SolveDetails:
    """solve() plus which decoder won and the candidate count."""
    return _enumerate(policy, inst, cfg, _resolve_decoders(policy, cfg, sampler))


def solve(policy: Policy, inst: VrpInstance, cfg: InferenceConfig,
          sampler: Optional[Sampler] = None) -> Tour:
    """Best tour over the configured candidate set, in native coordinates."""
    return solve_detailed(policy, inst, cfg, sampler).tour


def solve_unsamplable(policy: Policy, inst: VrpInstance, cfg: InferenceConfig) -> SolveDetails:
    """One shared encoding, every decoder decodes, keep the cheapest tour.

    The returned cost is exactly min(outcome.cost for outcome in outcomes).
    """
    ids = list(range(policy.config.num_decoders))
    return _enumerate(policy, inst, cfg, ids)
