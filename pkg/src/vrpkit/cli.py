"""Command-line surface: generate, train, solve, bench, sweep, entropy, proportions.

Every run resolves its options as flags > config file > defaults, does its
work, and drops exactly one ``manifest.json`` capturing the resolved options
so ``vrpkit rerun <manifest>`` reproduces the artifacts bitwise. Exit codes:
0 ok, 2 usage, 3 input/parse, 4 numeric failure, 5 size limit.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import csv
import json
import os
import sys
import time
from typing import Callable, Optional, Sequence

import numpy as np

from . import __version__
from .analysis import (
    decoder_choice_proportions,
    entropy_profile,
    sweep_scaling,
    write_entropy_csv,
    write_proportions_csv,
    write_sweep_csv,
)
from .benchio import (
    benchmark_cost,
    gap,
    parse_cvrplib,
    parse_tsplib,
    write_results_csv,
    summarize_results,
)
from .core import CVRP, TSP, from_text, normalize_coords, size_for_scaling, to_text
from .errors import (
    ConfigError,
    DecodeStuckError,
    DegenerateInstanceError,
    DegenerateRowError,
    DomainError,
    FeasibilityError,
    NumericError,
    ParseError,
    SizeLimitError,
    UnsupportedFormatError,
    VrpkitError,
)
from .generate import DISTRIBUTIONS, DistributionSpec, generate
from .inference import (
    InferenceConfig,
    distribution_sampler,
    solve_detailed,
    solve_unsamplable,
)
from .oracle import cvrp_exact_small, held_karp, nn_2opt
from .policy import Policy, PolicyConfig, load_policy
from .training import TrainConfig, resume, train

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INPUT = 3
EXIT_NUMERIC = 4
EXIT_SIZE = 5

MANIFEST_NAME = "manifest.json"


# ---------------------------------------------------------------------------
# option parsing: casters, per-command tables, config-file merge
# ---------------------------------------------------------------------------

def _cast_int(text: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise DomainError(f"expected an integer, got {text!r}")


def _cast_float(text: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise DomainError(f"expected a number, got {text!r}")


def _cast_bool(value) -> bool:
    if isinstance(value, bool):
        return value
    low = str(value).strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise DomainError(f"expected a boolean, got {value!r}")


def _cast_kind(text: str) -> str:
    if text not in (TSP, CVRP):
        raise DomainError(f"kind must be tsp or cvrp, got {text!r}")
    return text


def _cast_dist(text: str) -> str:
    if text not in DISTRIBUTIONS:
        raise DomainError(f"unknown distribution {text!r}; choose from {DISTRIBUTIONS}")
    return text


def _cast_dist_list(text: str) -> tuple:
    names = tuple(part.strip() for part in text.split(",") if part.strip())
    if not names:
        raise DomainError("empty distribution list")
    for name in names:
        _cast_dist(name)
    return names


def _cast_size(text: str):
    """A single size, or an inclusive lo:hi range."""
    if ":" in text:
        lo, hi = text.split(":", 1)
        return (_cast_int(lo), _cast_int(hi))
    return _cast_int(text)


def _cast_esf(text: str) -> tuple:
    """off | fixed:<n_tr> | base:<n_b> -> (mode, size or None)."""
    if text == "off":
        return ("off", None)
    for mode in ("fixed", "base"):
        if text.startswith(mode + ":"):
            return (mode, _cast_int(text[len(mode) + 1:]))
    if text == "base":
        return ("base", None)
    raise DomainError(f"esf must be off, fixed:<n_tr> or base:<n_b>, got {text!r}")


def _cast_mode(text: str) -> tuple:
    """greedy | sample:<k> -> (mode, samples)."""
    if text == "greedy":
        return ("greedy", 1)
    if text.startswith("sample:"):
        k = _cast_int(text[len("sample:"):])
        if k < 1:
            raise DomainError(f"sample count must be positive, got {k}")
        return ("sample", k)
    raise DomainError(f"mode must be greedy or sample:<k>, got {text!r}")


def _cast_select(text: str) -> tuple:
    """fixed:<i> | sample:<m> | min -> (policy, operand)."""
    if text == "min":
        return ("min", None)
    if text.startswith("fixed:"):
        return ("fixed", _cast_int(text[len("fixed:"):]))
    if text.startswith("sample:"):
        return ("sampled", _cast_int(text[len("sample:"):]))
    raise DomainError(f"select must be fixed:<i>, sample:<m> or min, got {text!r}")


def _cast_sizes(text: str) -> tuple:
    sizes = tuple(_cast_int(part) for part in text.split(",") if part.strip())
    if not sizes:
        raise DomainError("empty size list")
    return sizes


def _cast_factors(text: str) -> tuple:
    """Comma list (0.5,1.0,1.5) or lo:hi:step grid (0.1:2.0:0.1)."""
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise DomainError(f"factor range needs lo:hi:step, got {text!r}")
        lo, hi, step = (_cast_float(p) for p in parts)
        if step <= 0:
            raise DomainError(f"factor step must be positive, got {step}")
        count = int(round((hi - lo) / step)) + 1
        grid = tuple(round(lo + i * step, 10) for i in range(count) if lo + i * step <= hi + 1e-12)
        if not grid:
            raise DomainError(f"empty factor range {text!r}")
        return grid
    grid = tuple(_cast_float(part) for part in text.split(",") if part.strip())
    if not grid:
        raise DomainError("empty factor list")
    return grid


def _cast_str(text: str) -> str:
    return text


class Opt:
    """One resolvable option: cast, default (string form), help text."""

    def __init__(self, cast: Callable, default: Optional[str], help_text: str,
                 flag: bool = False, required: bool = False):
        self.cast = cast
        self.default = default
        self.help = help_text
        self.flag = flag
        self.required = required


_GEN_OPTS = {
    "kind": Opt(_cast_kind, "tsp", "problem family: tsp or cvrp"),
    "dist": Opt(_cast_dist, "uniform", "distribution pattern"),
    "n": Opt(_cast_int, "50", "instance size (customers for cvrp)"),
    "count": Opt(_cast_int, "100", "number of instances"),
    "seed": Opt(_cast_int, "0", "generator seed"),
    "out": Opt(_cast_str, None, "output directory", required=True),
}

_TRAIN_OPTS = {
    "kind": Opt(_cast_kind, "tsp", "problem family: tsp or cvrp"),
    "dist": Opt(_cast_dist_list, "uniform", "training distributions, comma separated (one per decoder)"),
    "n": Opt(_cast_size, "10", "training size, or lo:hi for varying sizes"),
    "steps": Opt(_cast_int, "1000", "optimizer steps"),
    "batch": Opt(_cast_int, "32", "instances per distribution per step"),
    "starts": Opt(_cast_int, None, "rollouts per instance (default: one per start node)"),
    "seed": Opt(_cast_int, "0", "run seed (parameters and instance streams)"),
    "esf": Opt(_cast_esf, "off", "attention scaling: off, fixed:<n_tr> or base:<n_b>"),
    "decoders": Opt(_cast_int, "1", "number of decoder heads"),
    "lr": Opt(_cast_float, "1e-4", "Adam learning rate"),
    "layers": Opt(_cast_int, "3", "encoder layers"),
    "heads": Opt(_cast_int, "4", "attention heads"),
    "hidden": Opt(_cast_int, "64", "embedding width"),
    "checkpoint-every": Opt(_cast_int, "1000", "steps between checkpoints"),
    "round-robin": Opt(_cast_bool, "false", "cycle distributions instead of stepping all each iteration", flag=True),
    "resume": Opt(_cast_str, None, "checkpoint to continue from (architecture flags are then ignored)"),
    "out": Opt(_cast_str, None, "output directory", required=True),
}

_SOLVE_OPTS = {
    "checkpoint": Opt(_cast_str, None, "trained policy checkpoint", required=True),
    "input": Opt(_cast_str, None, "instance file or directory", required=True),
    "mode": Opt(_cast_mode, "greedy", "rollout mode: greedy or sample:<k>"),
    "aug8": Opt(_cast_bool, "false", "decode all eight coordinate symmetries", flag=True),
    "starts": Opt(_cast_int, None, "start nodes per rollout (default: all)"),
    "esf": Opt(_cast_esf, None, "override attention scaling at test time"),
    "select": Opt(_cast_select, None, "decoder policy (default: fixed:0, or min for multi-decoder checkpoints)"),
    "dist": Opt(_cast_dist, None, "assumed test distribution (needed for select sample:<m>)"),
    "seed": Opt(_cast_int, "0", "sampling seed"),
    "jobs": Opt(_cast_int, None, "worker threads (default: cpu count)"),
    "out": Opt(_cast_str, None, "JSON-lines output file (default: stdout)"),
}

_BENCH_OPTS = {
    "checkpoint": Opt(_cast_str, None, "trained policy checkpoint", required=True),
    "input": Opt(_cast_str, None, "directory of .tsp/.vrp benchmark files", required=True),
    "mode": Opt(_cast_mode, "greedy", "rollout mode: greedy or sample:<k>"),
    "aug8": Opt(_cast_bool, "true", "decode all eight coordinate symmetries", flag=True),
    "starts": Opt(_cast_int, None, "start nodes per rollout (default: all)"),
    "esf": Opt(_cast_esf, None, "override attention scaling at test time"),
    "select": Opt(_cast_select, "min", "decoder policy (default: min over all decoders)"),
    "seed": Opt(_cast_int, "0", "sampling seed"),
    "jobs": Opt(_cast_int, None, "worker threads (default: cpu count)"),
    "out": Opt(_cast_str, None, "output directory", required=True),
}

_SWEEP_OPTS = {
    "checkpoint": Opt(_cast_str, None, "trained policy checkpoint", required=True),
    "train-size": Opt(_cast_int, None, "size the policy was trained at", required=True),
    "n": Opt(_cast_int, None, "test size", required=True),
    "factors": Opt(_cast_factors, "0.1:2.0:0.1", "factor grid: comma list or lo:hi:step"),
    "dist": Opt(_cast_dist, "uniform", "evaluation distribution"),
    "count": Opt(_cast_int, "1000", "evaluation instances"),
    "seed": Opt(_cast_int, "0", "evaluation instance seed"),
    "starts": Opt(_cast_int, None, "start nodes per rollout (default: all)"),
    "decoder": Opt(_cast_int, "0", "decoder head to evaluate"),
    "jobs": Opt(_cast_int, None, "worker threads for oracle references"),
    "out": Opt(_cast_str, None, "output directory", required=True),
}

_ENTROPY_OPTS = {
    "checkpoint": Opt(_cast_str, None, "policy checkpoint (omit for a fresh policy)"),
    "kind": Opt(_cast_kind, "tsp", "problem family for a fresh policy"),
    "esf": Opt(_cast_esf, "fixed:10", "scaling mode for a fresh policy"),
    "seed": Opt(_cast_int, "0", "instance seed (and fresh-policy init)"),
    "sizes": Opt(_cast_sizes, "10,20,40", "sizes to profile, comma separated"),
    "count": Opt(_cast_int, "16", "instances per size"),
    "starts": Opt(_cast_int, None, "start nodes per rollout (default: all)"),
    "out": Opt(_cast_str, None, "output directory", required=True),
}

_PROPORTION_OPTS = {
    "checkpoint": Opt(_cast_str, None, "multi-decoder policy checkpoint", required=True),
    "dists": Opt(_cast_dist_list, "uniform,cluster,mixed", "test distributions, comma separated"),
    "n": Opt(_cast_int, "20", "instance size"),
    "count": Opt(_cast_int, "100", "instances per distribution"),
    "seed": Opt(_cast_int, "0", "instance seed"),
    "starts": Opt(_cast_int, None, "start nodes per rollout (default: all)"),
    "out": Opt(_cast_str, None, "output directory", required=True),
}

_COMMAND_OPTS = {
    "generate": _GEN_OPTS,
    "train": _TRAIN_OPTS,
    "solve": _SOLVE_OPTS,
    "bench": _BENCH_OPTS,
    "sweep": _SWEEP_OPTS,
    "entropy": _ENTROPY_OPTS,
    "proportions": _PROPORTION_OPTS,
}


def read_config_file(path: str) -> dict:
    """Parse key=value lines; '#' starts a comment, blank lines ignored."""
    if not os.path.isfile(path):
        raise FileNotFoundError(f"config file not found: {path}")
    values = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            body = line.split("#", 1)[0].strip()
            if not body:
                continue
            if "=" not in body:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {body!r}")
            key, value = body.split("=", 1)
            values[key.strip()] = value.strip()
    return values


def resolve_options(command: str, flag_values: dict, config_path: Optional[str]) -> dict:
    """Merge flags over config-file entries over defaults; returns string forms."""
    spec = _COMMAND_OPTS[command]
    from_file = read_config_file(config_path) if config_path else {}
    for key in from_file:
        if key not in spec:
            raise ConfigError(f"unknown config key {key!r} for {command}")
    raw = {}
    for name, opt in spec.items():
        if flag_values.get(name) is not None:
            raw[name] = flag_values[name]
        elif name in from_file:
            raw[name] = from_file[name]
        else:
            raw[name] = opt.default
        if raw[name] is None and opt.required:
            raise DomainError(f"--{name} is required for {command}")
    return raw


def _typed(command: str, raw: dict) -> dict:
    spec = _COMMAND_OPTS[command]
    out = {}
    for name, value in raw.items():
        if value is None:
            out[name] = None
        elif spec[name].flag:
            out[name] = _cast_bool(value)
        else:
            out[name] = spec[name].cast(value)
    return out


# ---------------------------------------------------------------------------
# shared plumbing
# ---------------------------------------------------------------------------

def write_manifest(path, command: str, raw_options: dict, seeds: dict,
                   inputs: Sequence[str], outputs: Sequence[str], wallclock: float) -> dict:
    doc = {
        "command": command,
        "config": {k: v for k, v in raw_options.items()},
        "seeds": seeds,
        "code_version": __version__,
        "inputs": list(inputs),
        "outputs": list(outputs),
        "wallclock": wallclock,
    }
    if path is not None:
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return doc


def _ensure_dir(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path


def _load_checkpoint(path: str) -> Policy:
    if not os.path.isfile(path):
        raise FileNotFoundError(f"checkpoint not found: {path}")
    policy, _ = load_policy(path)
    return policy


def _read_instance(path: str):
    """Load one instance file -> (name, instance in its native frame, reference)."""
    ext = os.path.splitext(path)[1].lower()
    if not os.path.isfile(path):
        raise FileNotFoundError(f"instance file not found: {path}")
    with open(path) as fh:
        text = fh.read()
    if ext == ".tsp":
        bench = parse_tsplib(text)
        return bench.name, bench.raw, bench
    if ext == ".vrp":
        bench = parse_cvrplib(text)
        return bench.name, bench.raw, bench
    if ext == ".txt":
        inst = from_text(text)
        return os.path.splitext(os.path.basename(path))[0], inst, None
    raise UnsupportedFormatError(f"unrecognized instance extension {ext!r} for {path}")


def _instance_paths(input_path: str) -> list:
    if os.path.isdir(input_path):
        names = sorted(os.listdir(input_path))
        paths = [os.path.join(input_path, name) for name in names
                 if os.path.splitext(name)[1].lower() in (".tsp", ".vrp", ".txt")]
        if not paths:
            raise FileNotFoundError(f"no .tsp/.vrp/.txt instance files in {input_path}")
        return paths
    return [input_path]


def _inference_config(opts: dict, policy: Policy) -> InferenceConfig:
    mode, samples = opts["mode"]
    esf_mode, esf_size = opts["esf"] if opts["esf"] is not None else (None, None)
    select = opts["select"]
    if select is None:
        select = ("min", None) if policy.config.num_decoders > 1 else ("fixed", 0)
    policy_name, operand = select
    kwargs = dict(
        mode=mode, samples=samples,
        augment="aug8" if opts.get("aug8") else "none",
        starts=opts.get("starts"), esf_mode=esf_mode, esf_size=esf_size,
        seed=opts.get("seed", 0),
    )
    if policy_name == "fixed":
        kwargs.update(decoder_policy="fixed", decoder_id=operand)
    elif policy_name == "sampled":
        kwargs.update(decoder_policy="sampled", select_instances=operand)
    else:
        kwargs.update(decoder_policy="min")
    return InferenceConfig(**kwargs)


def _method_label(cfg: InferenceConfig, policy: Policy) -> str:
    parts = [cfg.mode if cfg.mode == "greedy" else f"sample{cfg.samples}"]
    if cfg.augment == "aug8":
        parts.append("aug8")
    if policy.config.num_decoders > 1:
        parts.append(cfg.decoder_policy)
    return "+".join(parts)


def _pool_map(jobs: Optional[int], fn, items):
    """Order-preserving map, threaded when jobs != 1."""
    workers = jobs if jobs is not None else (os.cpu_count() or 1)
    if workers < 1:
        raise DomainError(f"jobs must be positive, got {workers}")
    if workers == 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_generate(opts: dict, raw: dict) -> tuple:
    out_dir = _ensure_dir(opts["out"])
    spec = DistributionSpec(opts["dist"], seed=opts["seed"])
    instances = generate(spec, opts["n"], opts["count"], kind=opts["kind"])
    outputs = []
    stem = f"{opts['dist']}_{opts['kind']}{opts['n']}_{opts['seed']}"
    for i, inst in enumerate(instances):
        path = os.path.join(out_dir, f"{stem}_{i:04d}.txt")
        with open(path, "w") as fh:
            fh.write(to_text(inst))
        outputs.append(path)
    print(f"wrote {len(outputs)} {opts['kind']} instances to {out_dir}")
    return [], outputs, {"seed": opts["seed"]}, os.path.join(out_dir, MANIFEST_NAME)


def cmd_train(opts: dict, raw: dict) -> tuple:
    out_dir = _ensure_dir(opts["out"])
    checkpoint = os.path.join(out_dir, "checkpoint.json")
    metrics = os.path.join(out_dir, "metrics.csv")
    esf_mode, esf_size = opts["esf"]
    dists = tuple(DistributionSpec(name) for name in opts["dist"])
    cfg = TrainConfig(
        steps=opts["steps"], distributions=dists, size=opts["n"],
        batch_size=opts["batch"], starts=opts["starts"], seed=opts["seed"],
        lr=opts["lr"], round_robin=opts["round-robin"],
        checkpoint_every=opts["checkpoint-every"],
        checkpoint_path=checkpoint, metrics_path=metrics,
    )
    inputs = []
    if opts["resume"]:
        inputs.append(opts["resume"])
        policy, rows = resume(opts["resume"], cfg)
    else:
        pcfg = PolicyConfig(
            kind=opts["kind"], encoder_layers=opts["layers"], heads=opts["heads"],
            hidden_dim=opts["hidden"], num_decoders=opts["decoders"],
            esf_mode=esf_mode, esf_size=esf_size, init_seed=opts["seed"],
        )
        policy = Policy.new(pcfg)
        rows = train(policy, cfg)
    outputs = [checkpoint, metrics]
    if os.path.isfile(metrics):
        with open(metrics, newline="") as fh:
            curve_rows = list(csv.DictReader(fh))
        if curve_rows:
            from .figures import render_training_curve

            curve = os.path.join(out_dir, "training_curve.png")
            render_training_curve(curve_rows, curve)
            outputs.append(curve)
    last = rows[-1]["mean_cost"] if rows else float("nan")
    print(f"trained {opts['steps']} steps; final mean cost {last:.4f}; checkpoint {checkpoint}")
    return inputs, outputs, {"seed": opts["seed"]}, os.path.join(out_dir, MANIFEST_NAME)


def _solve_one(policy: Policy, cfg: InferenceConfig, path: str, dist: Optional[str], seed: int) -> dict:
    name, inst, bench = _read_instance(path)
    sampler = None
    if cfg.decoder_policy == "sampled":
        if dist is None:
            raise DomainError("select sample:<m> needs --dist for validation instances")
        sampler = distribution_sampler(DistributionSpec(dist, seed=seed),
                                       size_for_scaling(inst), kind=inst.kind)
    began = time.perf_counter()
    if cfg.decoder_policy == "min":
        details = solve_unsamplable(policy, inst, cfg)
    else:
        details = solve_detailed(policy, inst, cfg, sampler)
    seconds = time.perf_counter() - began
    record = {
        "instance": name,
        "n": inst.n,
        "cost": details.tour.cost,
        "tour": [int(v) for v in details.tour.nodes],
        "decoder": details.decoder_id,
        "candidates": details.candidates,
        "seconds": seconds,
    }
    if bench is not None:
        raw_coords = np.asarray(bench.raw.meta["raw_coords"])
        record["benchmark_cost"] = benchmark_cost(raw_coords, details.tour.nodes)
        if bench.known_optimum is not None:
            record["reference"] = bench.known_optimum
            record["gap_pct"] = gap(record["benchmark_cost"], bench.known_optimum)
    return record


def cmd_solve(opts: dict, raw: dict) -> tuple:
    policy = _load_checkpoint(opts["checkpoint"])
    cfg = _inference_config(opts, policy)
    paths = _instance_paths(opts["input"])
    records = _pool_map(opts["jobs"],
                        lambda p: _solve_one(policy, cfg, p, opts["dist"], opts["seed"]),
                        paths)
    lines = [json.dumps(record) for record in records]
    inputs = [opts["checkpoint"]] + paths
    if opts["out"]:
        with open(opts["out"], "w") as fh:
            fh.write("\n".join(lines) + "\n")
        print(f"solved {len(paths)} instances -> {opts['out']}")
        return inputs, [opts["out"]], {"seed": opts["seed"]}, opts["out"] + ".manifest.json"
    for line in lines:
        print(line)
    # stdout mode: the manifest becomes the closing JSON line
    return inputs, [], {"seed": opts["seed"]}, None


def cmd_bench(opts: dict, raw: dict) -> tuple:
    policy = _load_checkpoint(opts["checkpoint"])
    cfg = _inference_config(opts, policy)
    if not os.path.isdir(opts["input"]):
        raise FileNotFoundError(f"bench input must be a directory: {opts['input']}")
    paths = [p for p in _instance_paths(opts["input"])
             if os.path.splitext(p)[1].lower() in (".tsp", ".vrp")]
    if not paths:
        raise FileNotFoundError(f"no .tsp/.vrp benchmark files in {opts['input']}")
    want = ".tsp" if policy.config.kind == TSP else ".vrp"
    skipped = [p for p in paths if os.path.splitext(p)[1].lower() != want]
    paths = [p for p in paths if os.path.splitext(p)[1].lower() == want]
    if not paths:
        raise FileNotFoundError(
            f"no {want} files in {opts['input']} for a {policy.config.kind} policy")
    if skipped:
        print(f"skipping {len(skipped)} files that do not match the "
              f"{policy.config.kind} policy")
    out_dir = _ensure_dir(opts["out"])
    method = _method_label(cfg, policy)

    def run(path):
        record = _solve_one(policy, cfg, path, None, opts["seed"])
        return {
            "instance": record["instance"], "n": record["n"], "method": method,
            "cost": record["benchmark_cost"], "reference": record.get("reference", ""),
            "gap_pct": record.get("gap_pct", ""), "seconds": record["seconds"],
        }

    rows = _pool_map(opts["jobs"], run, paths)
    table = os.path.join(out_dir, "results.csv")
    write_results_csv(rows, table)
    outputs = [table]
    if any(r["gap_pct"] != "" for r in rows):
        from .figures import render_bench

        figure = os.path.join(out_dir, "bench.png")
        render_bench(rows, figure)
        outputs.append(figure)
    summary = summarize_results(rows)
    print(f"benchmarked {summary['count']} instances with {method}; "
          f"{summary['with_reference']} have references")
    if summary.get("mean_gap_pct") is not None:
        print(f"mean gap {summary['mean_gap_pct']:.3f}% "
              f"+/- {summary['margin_of_error_95']:.3f} (95% CI)")
    return [opts["checkpoint"]] + paths, outputs, {"seed": opts["seed"]}, \
        os.path.join(out_dir, MANIFEST_NAME)


def _sweep_oracle(kind: str, n: int):
    if kind == TSP:
        if n <= 16:
            return lambda inst: held_karp(inst).cost
        return lambda inst: nn_2opt(inst).cost
    if n <= 9:
        return lambda inst: cvrp_exact_small(inst).cost
    raise DomainError("cvrp sweeps need size <= 9 (no scalable exact reference)")


def cmd_sweep(opts: dict, raw: dict) -> tuple:
    policy = _load_checkpoint(opts["checkpoint"])
    out_dir = _ensure_dir(opts["out"])
    spec = DistributionSpec(opts["dist"], seed=opts["seed"])
    evals = generate(spec, opts["n"], opts["count"], kind=policy.config.kind)
    oracle = _sweep_oracle(policy.config.kind, opts["n"])

    # reference costs are embarrassingly parallel; the policy evaluation is
    # already batched, so the worker pool only wraps the oracle. Keyed by
    # coordinate bytes: normalization is bitwise idempotent, so the keys
    # survive the normalization inside sweep_scaling.
    normalized = [normalize_coords(inst) for inst in evals]
    refs = {inst.coords.tobytes(): cost
            for inst, cost in zip(normalized, _pool_map(opts["jobs"], oracle, normalized))}

    result = sweep_scaling(policy, (opts["train-size"], opts["n"]), opts["factors"],
                           normalized, oracle=lambda inst: refs[inst.coords.tobytes()],
                           decoder_id=opts["decoder"], starts=opts["starts"],
                           model_id=os.path.basename(opts["checkpoint"]))
    table = os.path.join(out_dir, "sweep.csv")
    write_sweep_csv(result, table)
    from .figures import render_sweep

    figure = os.path.join(out_dir, "sweep.png")
    render_sweep(result, figure)
    best = min(zip(result.mean_gaps, result.factors))
    print(f"swept {len(result.factors)} factors at size {opts['n']}; "
          f"best mean gap {best[0]:.3f}% at factor {best[1]:g}; "
          f"prescribed factor {result.esf_factor:.4f} gap {result.esf_gap:.3f}%")
    return [opts["checkpoint"]], [table, figure], {"seed": opts["seed"]}, \
        os.path.join(out_dir, MANIFEST_NAME)


def cmd_entropy(opts: dict, raw: dict) -> tuple:
    import dataclasses

    inputs = []
    esf_mode, esf_size = opts["esf"]
    if opts["checkpoint"]:
        policy = _load_checkpoint(opts["checkpoint"])
        inputs.append(opts["checkpoint"])
        if raw["esf"] is not None and raw["esf"] != _ENTROPY_OPTS["esf"].default:
            # profile the checkpoint under a different scaling mode than it
            # was trained with: same parameters, replaced scaling config
            cfg = dataclasses.replace(policy.config, esf_mode=esf_mode, esf_size=esf_size)
            policy = Policy(cfg, policy.encoder, policy.decoders, policy.training_record)
    else:
        policy = Policy.new(PolicyConfig(kind=opts["kind"], esf_mode=esf_mode,
                                         esf_size=esf_size, init_seed=opts["seed"]))
    out_dir = _ensure_dir(opts["out"])
    prescribed = entropy_profile(policy, opts["sizes"], count=opts["count"],
                                 seed=opts["seed"], starts=opts["starts"])
    unit = entropy_profile(policy, opts["sizes"], count=opts["count"],
                           seed=opts["seed"], use_esf=False, starts=opts["starts"])
    p_csv = os.path.join(out_dir, "entropy_prescribed.csv")
    u_csv = os.path.join(out_dir, "entropy_unit.csv")
    write_entropy_csv(prescribed, p_csv)
    write_entropy_csv(unit, u_csv)
    from .figures import render_entropy

    figure = os.path.join(out_dir, "entropy.png")
    render_entropy({"prescribed factor": prescribed, "factor 1.0": unit}, figure)
    worst = min(r["min_slack"] for r in prescribed + unit)
    bad = sum(r["violations"] for r in prescribed + unit)
    print(f"profiled sizes {list(opts['sizes'])}; entropy bound violations: {bad}; "
          f"min slack {worst:.3e}")
    return inputs, [p_csv, u_csv, figure], {"seed": opts["seed"]}, \
        os.path.join(out_dir, MANIFEST_NAME)


def cmd_proportions(opts: dict, raw: dict) -> tuple:
    policy = _load_checkpoint(opts["checkpoint"])
    out_dir = _ensure_dir(opts["out"])
    eval_sets = {}
    for i, name in enumerate(opts["dists"]):
        spec = DistributionSpec(name, seed=opts["seed"] + i)
        eval_sets[name] = generate(spec, opts["n"], opts["count"], kind=policy.config.kind)
    table = decoder_choice_proportions(policy, eval_sets, starts=opts["starts"])
    t_csv = os.path.join(out_dir, "proportions.csv")
    write_proportions_csv(table, t_csv)
    from .figures import render_proportions

    figure = os.path.join(out_dir, "proportions.png")
    render_proportions(table, figure)
    for name, shares in table.items():
        top = int(np.argmax(shares))
        print(f"{name}: decoder {top} cheapest on {shares[top]:.1f}% of instances")
    return [opts["checkpoint"]], [t_csv, figure], {"seed": opts["seed"]}, \
        os.path.join(out_dir, MANIFEST_NAME)


_COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "solve": cmd_solve,
    "bench": cmd_bench,
    "sweep": cmd_sweep,
    "entropy": cmd_entropy,
    "proportions": cmd_proportions,
}


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vrpkit",
        description="Attention routing policies with size and distribution generalization.",
    )
    parser.add_argument("--version", action="version", version=f"vrpkit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for command, spec in _COMMAND_OPTS.items():
        p = sub.add_parser(command, help=f"{command} artifacts")
        p.add_argument("--config", default=None, help="key=value config file (flags win)")
        for name, opt in spec.items():
            dest = name.replace("-", "_")
            if opt.flag:
                p.add_argument(f"--{name}", dest=dest, action="store_const",
                               const="true", default=None, help=opt.help)
                p.add_argument(f"--no-{name}", dest=dest, action="store_const",
                               const="false", help=argparse.SUPPRESS)
            else:
                p.add_argument(f"--{name}", dest=dest, default=None, metavar="V",
                               help=opt.help)
    rerun = sub.add_parser("rerun", help="replay a run from its manifest")
    rerun.add_argument("manifest", help="manifest.json from a previous run")
    return parser


def _execute(command: str, raw: dict) -> int:
    typed = _typed(command, raw)
    began = time.perf_counter()
    inputs, outputs, seeds, manifest_path = _COMMANDS[command](typed, raw)
    wallclock = time.perf_counter() - began
    doc = write_manifest(manifest_path, command, raw, seeds, inputs, outputs, wallclock)
    if manifest_path is None:
        print(json.dumps({"manifest": doc}))
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits on usage errors and --help
        return int(exc.code or 0)
    try:
        if args.command == "rerun":
            if not os.path.isfile(args.manifest):
                raise FileNotFoundError(f"manifest not found: {args.manifest}")
            with open(args.manifest) as fh:
                doc = json.load(fh)
            command = doc.get("command")
            if command not in _COMMANDS:
                raise ConfigError(f"manifest names unknown command {command!r}")
            raw = resolve_options(command, doc.get("config", {}), None)
            return _execute(command, raw)
        vals = {name: getattr(args, name.replace("-", "_"), None)
                for name in _COMMAND_OPTS[args.command]}
        raw = resolve_options(args.command, vals, args.config)
        return _execute(args.command, raw)
    except (ParseError, UnsupportedFormatError, DegenerateInstanceError,
            FileNotFoundError, IsADirectoryError, NotADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except SizeLimitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SIZE
    except (NumericError, FeasibilityError, DecodeStuckError, DegenerateRowError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except VrpkitError as exc:  # domain/config/dimension/selection: usage problems
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
