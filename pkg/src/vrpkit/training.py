"""REINFORCE training with a shared-baseline over start lanes.

Each instance is rolled out from several forced starts; the advantage of a
trajectory is its cost minus the mean cost of its siblings on the same
instance. One decoder trains per distribution. The multi-distribution step
averages the per-distribution losses, runs a single backward pass and a
single optimizer update, so each decoder only ever sees gradient from its
own distribution while the encoder sees all of them.

Every step reseeds its own RNG from (seed, step, distribution), which is
what makes checkpoint resume reproduce the uninterrupted run bit for bit.
"""
from __future__ import annotations

import csv
import time
from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .core import VrpInstance, normalize_coords, size_for_scaling
from .errors import ConfigError, DomainError, NumericError
from .generate import DistributionSpec, generate
from .policy import (
    Policy,
    _rollout_batch,
    load_policy,
    make_batch,
    rollout_step_budget,
    save_policy,
)

METRICS_COLUMNS = ("step", "distribution", "mean_cost", "loss", "esf_value", "wallclock")


class Adam:
    """Adam with per-parameter step counters, keyed by parameter name.

    Parameters outside a given step() call keep their moments and counters
    untouched, so decoders that sat a step out are bitwise unchanged.
    """

    def __init__(self, lr: float = 1e-4, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if not lr > 0:
            raise ConfigError(f"lr must be positive, got {lr}")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.state: dict[str, dict] = {}

    def step(self, named: dict[str, Tensor]) -> None:
        for name, p in named.items():
            g = p.grad
            if g is None:
                raise DomainError(f"parameter {name} has no gradient; run backward first")
            st = self.state.get(name)
            if st is None:
                st = {"m": np.zeros_like(p.data), "v": np.zeros_like(p.data), "t": 0}
                self.state[name] = st
            st["t"] += 1
            st["m"] = self.beta1 * st["m"] + (1.0 - self.beta1) * g
            st["v"] = self.beta2 * st["v"] + (1.0 - self.beta2) * g * g
            m_hat = st["m"] / (1.0 - self.beta1 ** st["t"])
            v_hat = st["v"] / (1.0 - self.beta2 ** st["t"])
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def to_doc(self) -> dict:
        return {
            "lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps,
            "state": {
                name: {
                    "t": st["t"],
                    "shape": list(st["m"].shape),
                    "m": st["m"].reshape(-1).tolist(),
                    "v": st["v"].reshape(-1).tolist(),
                }
                for name, st in self.state.items()
            },
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "Adam":
        opt = cls(lr=doc["lr"], beta1=doc["beta1"], beta2=doc["beta2"], eps=doc["eps"])
        for name, st in doc["state"].items():
            shape = st["shape"]
            opt.state[name] = {
                "t": st["t"],
                "m": np.array(st["m"], dtype=np.float64).reshape(shape),
                "v": np.array(st["v"], dtype=np.float64).reshape(shape),
            }
        return opt


def named_parameters(policy: Policy, decoder_ids: Optional[Sequence[int]] = None) -> dict[str, Tensor]:
    """Encoder plus the requested decoders (all by default), name-keyed."""
    out = {f"encoder.{k}": t for k, t in policy.encoder.items()}
    ids = range(policy.config.num_decoders) if decoder_ids is None else decoder_ids
    for i in ids:
        policy._check_decoder(i)
        for k, t in policy.decoders[i].items():
            out[f"decoder{i}.{k}"] = t
    return out


@dataclass(frozen=True)
class StepStats:
    loss: float
    mean_cost: float
    decoder_id: int


def reinforce_loss(logp: Tensor, costs: np.ndarray) -> Tensor:
    """Advantage-weighted log-likelihood surrogate, averaged over lanes.

    The cost advantage of lane s on instance b is its cost minus the mean
    cost over b's lanes; descending advantage * log p lowers the likelihood
    of worse-than-baseline tours. A batch whose lanes tie on cost therefore
    contributes no gradient. Costs enter as plain numbers: no gradient
    flows through them.
    """
    advantage = costs - costs.mean(axis=1, keepdims=True)
    return ad.mul(logp, advantage).mean()


def _dist_loss(policy: Policy, decoder_id: int, instances: Sequence[VrpInstance],
               esf: float, rng: np.random.Generator,
               starts: Optional[int] = None) -> tuple[Tensor, float]:
    """Sampled-rollout REINFORCE loss for one decoder on one batch."""
    batch = make_batch(instances)
    limit = batch.num_customers
    lanes = limit if starts is None else starts
    unif = rng.random((batch.batch, lanes, rollout_step_budget(batch.kind, batch.n) + 1))
    _, logp, costs = _rollout_batch(policy, decoder_id, batch, lanes, False, esf, unif)
    return reinforce_loss(logp, costs), float(costs.mean())


def _check_finite(loss: Tensor, context: str) -> None:
    if not np.isfinite(loss.data).all():
        raise NumericError(f"non-finite loss ({float(loss.data)!r}) during {context}; "
                           "check instance scaling and learning rate")


def reinforce_step(policy: Policy, decoder_id: int, instances: Sequence[VrpInstance],
                   optimizer: Adam, esf: float = 1.0,
                   rng: Optional[np.random.Generator] = None,
                   starts: Optional[int] = None) -> StepStats:
    """One sampled-rollout policy-gradient update for a single decoder.

    Touches the encoder and the chosen decoder only; every other decoder's
    weights and optimizer state are left bitwise alone.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    loss, mean_cost = _dist_loss(policy, decoder_id, instances, esf, rng, starts)
    _check_finite(loss, f"reinforce_step(decoder={decoder_id})")
    named = named_parameters(policy, [decoder_id])
    ad.zero_grad(named.values())
    ad.backward(loss)
    optimizer.step(named)
    return StepStats(float(loss.data), mean_cost, decoder_id)


def multi_distribution_step(policy: Policy, batches: Sequence[Sequence[VrpInstance]],
                            optimizer: Adam, esfs: Optional[Sequence[float]] = None,
                            rngs: Optional[Sequence[np.random.Generator]] = None,
                            starts: Optional[int] = None) -> list[StepStats]:
    """Joint update: decoder i learns from batch i, the encoder from all.

    The combined loss is the plain average of the per-distribution losses;
    one backward pass, one optimizer step. With a single decoder this is
    exactly reinforce_step.
    """
    n_d = policy.config.num_decoders
    if len(batches) != n_d:
        raise ConfigError(f"need {n_d} batches, got {len(batches)}")
    if esfs is None:
        esfs = [1.0] * n_d
    if rngs is None:
        rngs = [np.random.default_rng(i) for i in range(n_d)]
    stats = []
    losses = []
    for i in range(n_d):
        loss_i, mean_cost = _dist_loss(policy, i, batches[i], esfs[i], rngs[i], starts)
        _check_finite(loss_i, f"multi_distribution_step(decoder={i})")
        losses.append(loss_i)
        stats.append(StepStats(float(loss_i.data), mean_cost, i))
    total = losses[0]
    for term in losses[1:]:
        total = ad.add(total, term)
    total = ad.mul(total, 1.0 / n_d)
    _check_finite(total, "multi_distribution_step")
    named = named_parameters(policy)
    ad.zero_grad(named.values())
    ad.backward(total)
    optimizer.step(named)
    return stats


# ---------------------------------------------------------------------------
# the training loop
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    """Loop setup; sizes may be a single value or an inclusive (lo, hi) range."""

    steps: int
    distributions: tuple[DistributionSpec, ...] = (DistributionSpec("uniform"),)
    size: object = 10
    batch_size: int = 32
    starts: Optional[int] = None
    seed: int = 0
    lr: float = 1e-4
    round_robin: bool = False
    checkpoint_every: int = 1000
    checkpoint_path: Optional[str] = None
    metrics_path: Optional[str] = None

    def __post_init__(self):
        if self.steps < 0:
            raise ConfigError(f"steps must be >= 0, got {self.steps}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.distributions:
            raise ConfigError("need at least one distribution")
        lo, hi = self.size_range
        if lo < 2 or hi < lo:
            raise ConfigError(f"bad size range ({lo}, {hi})")

    @property
    def size_range(self) -> tuple[int, int]:
        if isinstance(self.size, (tuple, list)):
            lo, hi = self.size
            return int(lo), int(hi)
        return int(self.size), int(self.size)


def _step_seed(seed: int, step: int, dist: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=seed, spawn_key=(step, dist))


def _step_instances(cfg: TrainConfig, kind: str, step: int, dist: int) -> tuple[list[VrpInstance], np.random.Generator]:
    """Fresh normalized instances plus the RNG that drives this step's sampling."""
    ss = _step_seed(cfg.seed, step, dist)
    child = int(ss.generate_state(1, np.uint64)[0])
    rng = np.random.default_rng(np.random.SeedSequence(entropy=cfg.seed, spawn_key=(step, dist, 1)))
    lo, hi = cfg.size_range
    n = int(rng.integers(lo, hi + 1)) if hi > lo else lo
    spec = replace(cfg.distributions[dist], seed=child)
    raw = generate(spec, n, cfg.batch_size, kind=kind)
    return [normalize_coords(inst) for inst in raw], rng


def train(policy: Policy, cfg: TrainConfig, optimizer: Optional[Adam] = None,
          start_step: int = 0,
          progress: Optional[Callable[[int, list[StepStats]], None]] = None) -> list[dict]:
    """Run the loop from start_step to cfg.steps; returns metric rows.

    Writes metrics to cfg.metrics_path (appending on resume) and a
    checkpoint every cfg.checkpoint_every steps when a path is set.
    """
    n_d = policy.config.num_decoders
    if len(cfg.distributions) != n_d:
        raise ConfigError(f"policy has {n_d} decoders but {len(cfg.distributions)} distributions given")
    if optimizer is None:
        optimizer = Adam(lr=cfg.lr)
    if start_step == 0:
        policy.bind_distributions([spec.name for spec in cfg.distributions])
    kind = policy.config.kind
    rows: list[dict] = []
    writer = None
    fh = None
    if cfg.metrics_path:
        mode = "a" if start_step > 0 else "w"
        fh = open(cfg.metrics_path, mode, newline="", encoding="utf-8")
        writer = csv.writer(fh)
        if start_step == 0:
            writer.writerow(METRICS_COLUMNS)

    def emit(step: int, stats: list[StepStats], esf_by_decoder: dict[int, float], elapsed: float):
        for st in stats:
            row = {
                "step": step,
                "distribution": cfg.distributions[st.decoder_id].name,
                "mean_cost": st.mean_cost,
                "loss": st.loss,
                "esf_value": esf_by_decoder[st.decoder_id],
                "wallclock": elapsed,
            }
            rows.append(row)
            if writer is not None:
                writer.writerow([row[c] for c in METRICS_COLUMNS])

    def checkpoint(step_next: int):
        if cfg.checkpoint_path:
            save_policy(policy, cfg.checkpoint_path, rng_seed=cfg.seed,
                        extra={"train_step": step_next, "optimizer": optimizer.to_doc()})

    try:
        for step in range(start_step, cfg.steps):
            t0 = time.perf_counter()
            if cfg.round_robin and n_d > 1:
                i = step % n_d
                insts, rng = _step_instances(cfg, kind, step, i)
                esf_by_decoder = {i: policy.esf_for(size_for_scaling(insts[0]))}
                stats = [reinforce_step(policy, i, insts, optimizer, esf_by_decoder[i], rng, cfg.starts)]
            else:
                batches, rngs, esfs = [], [], []
                for i in range(n_d):
                    insts, rng = _step_instances(cfg, kind, step, i)
                    batches.append(insts)
                    rngs.append(rng)
                    esfs.append(policy.esf_for(size_for_scaling(insts[0])))
                stats = multi_distribution_step(policy, batches, optimizer, esfs, rngs, cfg.starts)
                esf_by_decoder = dict(enumerate(esfs))
            elapsed = time.perf_counter() - t0
            emit(step, stats, esf_by_decoder, elapsed)
            if progress is not None:
                progress(step, stats)
            if cfg.checkpoint_every > 0 and (step + 1) % cfg.checkpoint_every == 0:
                checkpoint(step + 1)
        checkpoint(cfg.steps)
    finally:
        if fh is not None:
            fh.close()
    return rows


def resume(checkpoint_path: str, cfg: TrainConfig,
           progress: Optional[Callable[[int, list[StepStats]], None]] = None) -> tuple[Policy, list[dict]]:
    """Pick a run back up from its checkpoint; bitwise-matches an unbroken run."""
    policy, meta = load_policy(checkpoint_path)
    extra = meta.get("extra", {})
    step = int(extra.get("train_step", 0))
    opt_doc = extra.get("optimizer")
    optimizer = Adam.from_doc(opt_doc) if opt_doc else Adam(lr=cfg.lr)
    rows = train(policy, cfg, optimizer=optimizer, start_step=step, progress=progress)
    return policy, rows


# ---------------------------------------------------------------------------
# evaluation helpers shared by analysis and tests
# ---------------------------------------------------------------------------


def evaluate_batch(policy: Policy, instances: Sequence[VrpInstance], decoder_id: int = 0,
                   esf: Optional[float] = None, starts: Optional[int] = None) -> np.ndarray:
    """Greedy multi-start costs, min over lanes: one value per instance."""
    batch = make_batch(instances)
    lanes = batch.num_customers if starts is None else starts
    factor = policy.esf_for(size_for_scaling(instances[0])) if esf is None else esf
    with ad.no_grad():
        _, _, costs = _rollout_batch(policy, decoder_id, batch, lanes, True, factor)
    return costs.min(axis=1)
