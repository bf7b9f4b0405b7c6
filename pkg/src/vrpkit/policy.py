"""Attention routing policy: one shared encoder, n_D light decoders.

The encoder is a stack of post-norm transformer blocks over node features.
Each decoder builds a context query (graph embedding plus trip state),
runs one multi-head glimpse over the node embeddings and scores nodes with
a clipped single-head pointer. A size-adaptation factor ``esf`` multiplies
the attention logits in every softmax, and the pointer compatibilities
inside the tanh clip; at 1.0 the whole thing is bitwise-plain attention.

Decoders are intentionally cheap relative to the encoder so several of
them (one per training distribution) can share one encoding pass.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .core import CVRP, TSP, Tour, VrpInstance, size_for_scaling
from .errors import (
    ConfigError,
    DecodeStuckError,
    DegenerateRowError,
    DimensionError,
    DomainError,
    NumericError,
)

ESF_MODES = ("off", "fixed", "base")
DEFAULT_BASE_SIZE = 50


def esf_value(mode: str, n_train_or_base: int, n_current: int) -> float:
    """Scaling factor for attention logits.

    off: 1.0. fixed: ln(n_current)/ln(n_train). base: ln(n_current)/ln(n_base).
    The two log modes share the same formula; the mode names say where the
    denominator size comes from. Sizes below 2 have no usable logarithm.
    """
    if mode == "off":
        return 1.0
    if mode not in ESF_MODES:
        raise ConfigError(f"unknown esf mode {mode!r}; choose from {ESF_MODES}")
    if n_train_or_base < 2 or n_current < 2:
        raise DomainError(f"esf sizes must be >= 2, got base {n_train_or_base}, current {n_current}")
    return math.log(n_current) / math.log(n_train_or_base)


@dataclass(frozen=True)
class PolicyConfig:
    """Architecture and scaling configuration.

    Defaults are the toy scale: 3 encoder layers, 4 heads, 64-wide hidden.
    ff_dim defaults to 4x the hidden width. esf_size is the training size
    for mode "fixed" and the log base for mode "base" (default 50).
    """

    kind: str = TSP
    encoder_layers: int = 3
    heads: int = 4
    hidden_dim: int = 64
    ff_dim: Optional[int] = None
    logit_clip: float = 10.0
    num_decoders: int = 1
    esf_mode: str = "off"
    esf_size: Optional[int] = None
    esf_on_pointer: bool = True
    init_seed: int = 0

    def __post_init__(self):
        if self.kind not in (TSP, CVRP):
            raise ConfigError(f"unknown kind {self.kind!r}")
        if self.hidden_dim % self.heads != 0:
            raise ConfigError(f"hidden_dim {self.hidden_dim} not divisible by heads {self.heads}")
        if self.num_decoders < 1:
            raise ConfigError(f"num_decoders must be >= 1, got {self.num_decoders}")
        if not self.logit_clip > 0:
            raise ConfigError(f"logit_clip must be positive, got {self.logit_clip}")
        if self.encoder_layers < 1:
            raise ConfigError(f"encoder_layers must be >= 1, got {self.encoder_layers}")
        if self.esf_mode not in ESF_MODES:
            raise ConfigError(f"unknown esf mode {self.esf_mode!r}")
        if self.esf_mode == "fixed" and self.esf_size is None:
            raise ConfigError("esf mode 'fixed' needs esf_size (the training size)")

    @property
    def ff_width(self) -> int:
        return self.ff_dim if self.ff_dim is not None else 4 * self.hidden_dim

    @property
    def context_dim(self) -> int:
        # graph + first + last embeddings, or graph + last + remaining load
        return 3 * self.hidden_dim if self.kind == TSP else 2 * self.hidden_dim + 1

    @property
    def esf_operand(self) -> int:
        if self.esf_mode == "base":
            return self.esf_size if self.esf_size is not None else DEFAULT_BASE_SIZE
        return self.esf_size if self.esf_size is not None else 2

    def esf_for(self, n_current: int) -> float:
        return esf_value(self.esf_mode, self.esf_operand, n_current)


def _uniform_param(rng: np.random.Generator, shape: tuple, bound: float) -> Tensor:
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def _build_encoder(cfg: PolicyConfig, rng: np.random.Generator) -> dict[str, Tensor]:
    d, ff = cfg.hidden_dim, cfg.ff_width
    bound = 1.0 / math.sqrt(d)
    p: dict[str, Tensor] = {}
    if cfg.kind == TSP:
        p["embed_w"] = _uniform_param(rng, (2, d), bound)
        p["embed_b"] = _uniform_param(rng, (d,), bound)
    else:
        p["depot_w"] = _uniform_param(rng, (2, d), bound)
        p["depot_b"] = _uniform_param(rng, (d,), bound)
        p["cust_w"] = _uniform_param(rng, (3, d), bound)
        p["cust_b"] = _uniform_param(rng, (d,), bound)
    for i in range(cfg.encoder_layers):
        for name in ("wq", "wk", "wv", "wo"):
            p[f"layer{i}.{name}"] = _uniform_param(rng, (d, d), bound)
        p[f"layer{i}.ln1_g"] = Tensor(np.ones(d), requires_grad=True)
        p[f"layer{i}.ln1_b"] = Tensor(np.zeros(d), requires_grad=True)
        p[f"layer{i}.ln2_g"] = Tensor(np.ones(d), requires_grad=True)
        p[f"layer{i}.ln2_b"] = Tensor(np.zeros(d), requires_grad=True)
        p[f"layer{i}.ff1_w"] = _uniform_param(rng, (d, ff), bound)
        p[f"layer{i}.ff1_b"] = _uniform_param(rng, (ff,), bound)
        p[f"layer{i}.ff2_w"] = _uniform_param(rng, (ff, d), bound)
        p[f"layer{i}.ff2_b"] = _uniform_param(rng, (d,), bound)
    return p


def _build_decoder(cfg: PolicyConfig, rng: np.random.Generator) -> dict[str, Tensor]:
    d = cfg.hidden_dim
    bound = 1.0 / math.sqrt(d)
    return {
        "ctx_w": _uniform_param(rng, (cfg.context_dim, d), bound),
        "glimpse_wk": _uniform_param(rng, (d, d), bound),
        "glimpse_wv": _uniform_param(rng, (d, d), bound),
        "glimpse_wo": _uniform_param(rng, (d, d), bound),
        "logit_wk": _uniform_param(rng, (d, d), bound),
    }


class Policy:
    """Parameter container: encoder dict + one dict per decoder."""

    def __init__(self, config: PolicyConfig, encoder: dict[str, Tensor],
                 decoders: list[dict[str, Tensor]], training_record: list[str]):
        if len(decoders) != config.num_decoders or len(training_record) != config.num_decoders:
            raise ConfigError("decoder count, num_decoders and training_record length must agree")
        self.config = config
        self.encoder = encoder
        self.decoders = decoders
        self.training_record = list(training_record)

    @classmethod
    def new(cls, config: PolicyConfig) -> "Policy":
        rng = np.random.default_rng(np.random.SeedSequence(entropy=config.init_seed, spawn_key=(0,)))
        encoder = _build_encoder(config, rng)
        decoders = [_build_decoder(config, rng) for _ in range(config.num_decoders)]
        return cls(config, encoder, decoders, ["unassigned"] * config.num_decoders)

    def encoder_parameters(self) -> list[Tensor]:
        return list(self.encoder.values())

    def decoder_parameters(self, decoder_id: int) -> list[Tensor]:
        self._check_decoder(decoder_id)
        return list(self.decoders[decoder_id].values())

    def parameters(self) -> list[Tensor]:
        out = self.encoder_parameters()
        for dec in self.decoders:
            out.extend(dec.values())
        return out

    def bind_distributions(self, names: Sequence[str]) -> None:
        if len(names) != self.config.num_decoders:
            raise ConfigError(f"need {self.config.num_decoders} names, got {len(names)}")
        self.training_record = [str(v) for v in names]

    def _check_decoder(self, decoder_id: int) -> None:
        if not 0 <= decoder_id < self.config.num_decoders:
            raise DomainError(f"decoder_id {decoder_id} out of range [0, {self.config.num_decoders})")

    def esf_for(self, n_current: int) -> float:
        return self.config.esf_for(n_current)


# ---------------------------------------------------------------------------
# batched forward passes
# ---------------------------------------------------------------------------


@dataclass
class InstanceBatch:
    """Same-kind, same-size instances stacked for one forward pass."""

    kind: str
    coords: np.ndarray  # (B, n, 2)
    demands: Optional[np.ndarray] = None  # (B, n), depot column 0

    @property
    def batch(self) -> int:
        return self.coords.shape[0]

    @property
    def n(self) -> int:
        return self.coords.shape[1]

    @property
    def num_customers(self) -> int:
        return self.n - 1 if self.kind == CVRP else self.n


def make_batch(instances: Sequence[VrpInstance]) -> InstanceBatch:
    first = instances[0]
    if any(inst.kind != first.kind or inst.n != first.n for inst in instances):
        raise DimensionError("batch needs matching kind and size")
    coords = np.stack([inst.coords for inst in instances])
    if first.kind == CVRP:
        if any(inst.depot_index != 0 for inst in instances):
            raise DimensionError("cvrp batches expect the depot at index 0")
        demands = np.stack([inst.demands for inst in instances])
        return InstanceBatch(CVRP, coords, demands)
    return InstanceBatch(TSP, coords)


def _encode_batch(policy: Policy, batch: InstanceBatch, esf: float) -> tuple[Tensor, Tensor]:
    """Run the encoder: (B, n, d) node embeddings and (B, d) graph embedding."""
    cfg = policy.config
    p = policy.encoder
    if batch.kind != cfg.kind:
        raise DimensionError(f"policy is for {cfg.kind}, batch is {batch.kind}")
    coords = Tensor(batch.coords)
    if cfg.kind == TSP:
        x = ad.linear(coords, p["embed_w"], p["embed_b"])
    else:
        feats = Tensor(np.concatenate([batch.coords, batch.demands[:, :, None]], axis=2))
        depot_part = ad.linear(coords, p["depot_w"], p["depot_b"])
        cust_part = ad.linear(feats, p["cust_w"], p["cust_b"])
        is_depot = np.zeros((batch.batch, batch.n, 1))
        is_depot[:, 0, 0] = 1.0
        x = ad.add(ad.mul(depot_part, is_depot), ad.mul(cust_part, 1.0 - is_depot))
    for i in range(cfg.encoder_layers):
        q = ad.matmul(x, p[f"layer{i}.wq"])
        k = ad.matmul(x, p[f"layer{i}.wk"])
        v = ad.matmul(x, p[f"layer{i}.wv"])
        attn = ad.multi_head_attention(q, k, v, cfg.heads, esf=esf, w_out=p[f"layer{i}.wo"])
        x = ad.add(ad.mul(ad.layer_norm(ad.add(x, attn)), p[f"layer{i}.ln1_g"]), p[f"layer{i}.ln1_b"])
        h = ad.matmul(ad.relu(ad.linear(x, p[f"layer{i}.ff1_w"], p[f"layer{i}.ff1_b"])), p[f"layer{i}.ff2_w"])
        h = ad.add(h, p[f"layer{i}.ff2_b"])
        x = ad.add(ad.mul(ad.layer_norm(ad.add(x, h)), p[f"layer{i}.ln2_g"]), p[f"layer{i}.ln2_b"])
    graph = x.mean(axis=1)
    return x, graph


def encode(policy: Policy, inst: VrpInstance, esf: float = 1.0) -> tuple[Tensor, Tensor]:
    """Single-instance encoder wrapper: ((n, d) embeddings, (d,) graph)."""
    node_emb, graph = _encode_batch(policy, make_batch([inst]), esf)
    return node_emb.reshape(node_emb.shape[1], node_emb.shape[2]), graph.reshape(graph.shape[1])


@dataclass
class DecoderCache:
    """Per-batch precomputation for one decoder: keys/values over nodes."""

    glimpse_k: Tensor  # (B, n, d)
    glimpse_v: Tensor
    logit_k: Tensor


def _decoder_cache(policy: Policy, decoder_id: int, node_emb: Tensor) -> DecoderCache:
    dec = policy.decoders[decoder_id]
    return DecoderCache(
        glimpse_k=ad.matmul(node_emb, dec["glimpse_wk"]),
        glimpse_v=ad.matmul(node_emb, dec["glimpse_wv"]),
        logit_k=ad.matmul(node_emb, dec["logit_wk"]),
    )


def _expand(t: Tensor, shape: tuple) -> Tensor:
    """Broadcast a tensor up to `shape` (gradient sums back down)."""
    return ad.add(t, np.zeros(shape))


def _step_probs(policy: Policy, decoder_id: int, cache: DecoderCache, node_emb: Tensor,
                graph: Tensor, first: np.ndarray, last: np.ndarray,
                remaining: Optional[np.ndarray], mask: np.ndarray, esf: float) -> Tensor:
    """Probabilities (B, S, n) for one decode step across all start lanes."""
    cfg = policy.config
    dec = policy.decoders[decoder_id]
    bsz, starts = first.shape if cfg.kind == TSP else last.shape
    d = cfg.hidden_dim
    graph_e = _expand(graph.reshape(graph.shape[0], 1, d), (bsz, starts, d))
    last_emb = ad.gather_nodes(node_emb, last)
    if cfg.kind == TSP:
        first_emb = ad.gather_nodes(node_emb, first)
        ctx = ad.concat([graph_e, first_emb, last_emb], axis=-1)
    else:
        load = Tensor(remaining[:, :, None])
        ctx = ad.concat([graph_e, last_emb, load], axis=-1)
    q = ad.matmul(ctx, dec["ctx_w"])  # (B, S, d)
    glimpse = ad.multi_head_attention(q, cache.glimpse_k, cache.glimpse_v, cfg.heads,
                                      esf=esf, mask=mask, w_out=dec["glimpse_wo"])
    compat = ad.mul(ad.matmul(glimpse, ad.swap_last2(cache.logit_k)), 1.0 / math.sqrt(d))
    if cfg.esf_on_pointer:
        compat = ad.mul(compat, esf)
    logits = ad.tanh_clip(compat, cfg.logit_clip)
    return ad.softmax_rows(logits, scale=1.0, mask=mask)


# ---------------------------------------------------------------------------
# single-instance decode_step (test/inspection surface)
# ---------------------------------------------------------------------------


@dataclass
class DecodeState:
    """Rollout state for one trajectory on one instance.

    CVRP states carry the (normalized) demand vector so the capacity mask
    can be derived from the state alone.
    """

    visited: np.ndarray  # (n,) bool
    first: Optional[int] = None
    last: Optional[int] = None
    remaining: Optional[float] = None  # cvrp only
    demands: Optional[np.ndarray] = None  # cvrp only

    @classmethod
    def fresh(cls, inst: VrpInstance) -> "DecodeState":
        visited = np.zeros(inst.n, dtype=bool)
        if inst.kind == CVRP:
            if inst.depot_index != 0:
                raise DimensionError("decoding expects the depot at index 0; reorder the instance first")
            return cls(visited, first=0, last=0, remaining=1.0, demands=inst.demands)
        return cls(visited)

    @property
    def is_cvrp(self) -> bool:
        return self.demands is not None

    def apply_pick(self, node: int) -> "DecodeState":
        visited = self.visited.copy()
        if self.is_cvrp:
            if node == 0:
                return DecodeState(visited, self.first, node, 1.0, self.demands)
            visited[node] = True
            remaining = self.remaining - float(self.demands[node])
            return DecodeState(visited, self.first, node, remaining, self.demands)
        visited[node] = True
        first = self.first if self.first is not None else node
        return DecodeState(visited, first, node)


def feasible_mask(state: DecodeState) -> np.ndarray:
    """True marks nodes the next pick must avoid."""
    mask = state.visited.copy()
    if state.is_cvrp:
        mask |= state.demands > state.remaining + 1e-9
        mask[0] = state.last == 0  # a trip must serve at least one customer
    return mask


def decode_step(policy: Policy, decoder_id: int, embeddings: tuple[Tensor, Tensor],
                state: DecodeState, esf: float = 1.0) -> Tensor:
    """Next-node distribution (n,) for a single trajectory."""
    policy._check_decoder(decoder_id)
    node_emb, graph = embeddings
    n, d = node_emb.shape
    node_b = node_emb.reshape(1, n, d)
    graph_b = graph.reshape(1, d)
    cache = _decoder_cache(policy, decoder_id, node_b)
    if policy.config.kind == TSP:
        if state.first is None or state.last is None:
            raise DomainError("tsp decode_step needs a position; apply the first pick to the state")
        first = np.array([[state.first]])
        last = np.array([[state.last]])
        remaining = None
    else:
        if not state.is_cvrp:
            raise DomainError("cvrp decode_step needs a cvrp state")
        first = np.array([[0]])
        last = np.array([[state.last]])
        remaining = np.array([[state.remaining]])
    mask = feasible_mask(state)[None, None, :]
    if mask.all():
        raise DecodeStuckError("no feasible node remains")
    try:
        probs = _step_probs(policy, decoder_id, cache, node_b, graph_b, first, last, remaining, mask, esf)
    except DegenerateRowError as exc:
        raise DecodeStuckError(str(exc)) from None
    return probs.reshape(n)


# ---------------------------------------------------------------------------
# rollouts
# ---------------------------------------------------------------------------


def rollout_step_budget(kind: str, n: int) -> int:
    """Upper bound on decode steps; exceeding it means a masking bug."""
    return n if kind == TSP else 2 * (n - 1) + 3


def _cycle_costs(coords: np.ndarray, seq: np.ndarray) -> np.ndarray:
    """Closed-cycle lengths: coords (B, n, 2), seq (B, S, T) -> (B, S)."""
    pts = coords[np.arange(coords.shape[0])[:, None, None], seq]
    diffs = pts - np.roll(pts, -1, axis=2)
    return np.sqrt((diffs ** 2).sum(axis=-1)).sum(axis=-1)


def batch_costs(batch: InstanceBatch, picks: np.ndarray) -> np.ndarray:
    """Tour lengths (B, S) for pick sequences; CVRP closes through the depot."""
    if batch.kind == TSP:
        return _cycle_costs(batch.coords, picks)
    bsz, starts = picks.shape[:2]
    depot = np.zeros((bsz, starts, 1), dtype=picks.dtype)
    return _cycle_costs(batch.coords, np.concatenate([depot, picks], axis=2))


def _choose(probs: Tensor, greedy: bool, u: Optional[np.ndarray]) -> np.ndarray:
    """Pick node indices (B, S) from step probabilities (B, S, n)."""
    if greedy:
        return np.argmax(probs.data, axis=-1)
    cum = np.cumsum(probs.data, axis=-1)
    scaled = (1.0 - u) * cum[..., -1]  # u in [0,1) -> threshold in (0, total]
    return (cum < scaled[..., None]).sum(axis=-1)


def _gather_log_probs(probs: Tensor, idx: np.ndarray) -> Tensor:
    bsz, starts, n = probs.shape
    flat = probs.reshape(bsz * starts, n)
    chosen = flat[(np.arange(bsz * starts), idx.reshape(-1))]
    return chosen.log().reshape(bsz, starts)


def _rollout_batch(policy: Policy, decoder_id: int, batch: InstanceBatch, starts: int,
                   greedy: bool, esf: float, unif: Optional[np.ndarray] = None,
                   encoded: Optional[tuple[Tensor, Tensor]] = None,
                   cache: Optional[DecoderCache] = None) -> tuple[np.ndarray, Tensor, np.ndarray]:
    """Batched construction: (picks (B, S, T), log-probs (B, S), costs (B, S)).

    Start lane s forces node s (TSP) or customer s+1 (CVRP) as first pick.
    Sampling consumes unif[:, :, t] at step t, so lane draws are independent
    of how many other lanes run. Finished CVRP lanes park at the depot with
    probability pinned to one, which adds zero log-prob and zero gradient.
    """
    cfg = policy.config
    bsz, n = batch.batch, batch.n
    limit = batch.num_customers
    if not 1 <= starts <= limit:
        raise DomainError(f"starts must be in [1, {limit}], got {starts}")
    if not greedy and unif is None:
        raise DomainError("sampling needs a uniform draw array")
    if encoded is None:
        encoded = _encode_batch(policy, batch, esf)
    node_emb, graph = encoded
    if cache is None:
        cache = _decoder_cache(policy, decoder_id, node_emb)
    bi = np.arange(bsz)[:, None]
    si = np.arange(starts)[None, :]
    logp_terms: list[Tensor] = []

    if cfg.kind == TSP:
        picks = np.empty((bsz, starts, n), dtype=np.int64)
        picks[:, :, 0] = np.arange(starts)[None, :]
        visited = np.zeros((bsz, starts, n), dtype=bool)
        visited[bi, si, picks[:, :, 0]] = True
        first = np.broadcast_to(np.arange(starts)[None, :], (bsz, starts))
        last = picks[:, :, 0]
        for t in range(1, n):
            probs = _step_probs(policy, decoder_id, cache, node_emb, graph,
                                first, last, None, visited.copy(), esf)
            idx = _choose(probs, greedy, None if greedy else unif[:, :, t])
            logp_terms.append(_gather_log_probs(probs, idx))
            picks[:, :, t] = idx
            visited[bi, si, idx] = True
            last = idx
    else:
        demands = batch.demands
        visited = np.zeros((bsz, starts, n), dtype=bool)
        idx = np.broadcast_to(np.arange(1, starts + 1)[None, :], (bsz, starts)).copy()
        visited[bi, si, idx] = True
        remaining = 1.0 - demands[bi, idx]
        last = idx
        first = np.zeros((bsz, starts), dtype=np.int64)
        pick_list = [idx]
        done = visited[:, :, 1:].all(axis=-1)
        budget = rollout_step_budget(CVRP, n)
        t = 1
        while not done.all():
            if t > budget:
                raise DecodeStuckError(f"cvrp rollout exceeded {budget} steps; mask is broken")
            mask = visited | (demands[:, None, :] > remaining[:, :, None] + 1e-9)
            mask[:, :, 0] = (last == 0) & ~done
            mask |= done[:, :, None]
            mask[:, :, 0] &= ~done
            probs = _step_probs(policy, decoder_id, cache, node_emb, graph,
                                first, last, remaining, mask, esf)
            idx = _choose(probs, greedy, None if greedy else unif[:, :, t])
            logp_terms.append(_gather_log_probs(probs, idx))
            at_depot = idx == 0
            remaining = np.where(at_depot, 1.0, remaining - demands[bi, idx])
            visited[bi, si, idx] = True
            visited[:, :, 0] = False
            last = idx
            done = visited[:, :, 1:].all(axis=-1)
            pick_list.append(idx)
            t += 1
        picks = np.stack(pick_list, axis=2)

    if logp_terms:
        logp = logp_terms[0]
        for term in logp_terms[1:]:
            logp = ad.add(logp, term)
    else:
        logp = Tensor(np.zeros((bsz, starts)))  # every move was forced
    return picks, logp, batch_costs(batch, picks)


def picks_to_tour(kind: str, picks_row: np.ndarray) -> list[int]:
    """Node sequence for one lane; CVRP prepends the depot and drops parking."""
    nodes = [int(v) for v in picks_row]
    if kind == CVRP:
        while nodes and nodes[-1] == 0:
            nodes.pop()
        nodes = [0] + nodes
    return nodes


@dataclass(frozen=True)
class RolloutResult:
    tour: Tour
    log_prob: float
    start: int


def rollout(policy: Policy, inst: VrpInstance, decoder_id: int, mode: str = "greedy",
            starts: int = 1, esf: float = 1.0,
            rng: Optional[np.random.Generator] = None) -> list[RolloutResult]:
    """Construct one tour per start lane; greedy or temperature-1 sampling."""
    policy._check_decoder(decoder_id)
    if mode not in ("greedy", "sample"):
        raise ConfigError(f"mode must be greedy or sample, got {mode!r}")
    greedy = mode == "greedy"
    batch = make_batch([inst])
    unif = None
    if not greedy:
        if rng is None:
            raise DomainError("sample mode needs an rng")
        unif = rng.random((1, starts, rollout_step_budget(inst.kind, inst.n) + 1))
    with ad.no_grad():
        picks, logp, costs = _rollout_batch(policy, decoder_id, batch, starts, greedy, esf, unif)
    out = []
    for s in range(starts):
        nodes = picks_to_tour(inst.kind, picks[0, s])
        out.append(RolloutResult(Tour(tuple(nodes), float(costs[0, s])), float(logp.data[0, s]), s))
    return out


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

CHECKPOINT_VERSION = 1


def _params_to_doc(params: dict[str, Tensor]) -> dict:
    doc = {}
    for name, t in params.items():
        if not np.isfinite(t.data).all():
            raise NumericError(f"parameter {name} holds non-finite values; refusing to save")
        doc[name] = {"shape": list(t.data.shape), "data": t.data.reshape(-1).tolist()}
    return doc


def _params_from_doc(doc: dict) -> dict[str, Tensor]:
    out = {}
    for name, entry in doc.items():
        arr = np.array(entry["data"], dtype=np.float64).reshape(entry["shape"])
        out[name] = Tensor(arr, requires_grad=True)
    return out


def save_policy(policy: Policy, path, rng_seed: Optional[int] = None, extra: Optional[dict] = None) -> None:
    """Write a JSON checkpoint whose floats round-trip bitwise."""
    cfg = policy.config
    doc = {
        "format_version": CHECKPOINT_VERSION,
        "config": {
            "kind": cfg.kind,
            "encoder_layers": cfg.encoder_layers,
            "heads": cfg.heads,
            "hidden_dim": cfg.hidden_dim,
            "ff_dim": cfg.ff_dim,
            "logit_clip": cfg.logit_clip,
            "num_decoders": cfg.num_decoders,
            "esf_mode": cfg.esf_mode,
            "esf_size": cfg.esf_size,
            "esf_on_pointer": cfg.esf_on_pointer,
            "init_seed": cfg.init_seed,
        },
        "training_record": policy.training_record,
        "rng_seed": rng_seed,
        "extra": extra or {},
        "encoder": _params_to_doc(policy.encoder),
        "decoders": [_params_to_doc(dec) for dec in policy.decoders],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_policy(path) -> tuple[Policy, dict]:
    """Rebuild a policy from a checkpoint; returns (policy, metadata)."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    version = doc.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise ConfigError(f"unsupported checkpoint version {version!r}")
    cfg = PolicyConfig(**doc["config"])
    policy = Policy(cfg, _params_from_doc(doc["encoder"]),
                    [_params_from_doc(d) for d in doc["decoders"]],
                    doc["training_record"])
    meta = {"rng_seed": doc.get("rng_seed"), "extra": doc.get("extra", {})}
    return policy, meta
