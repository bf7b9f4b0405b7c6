"""Warm the training cache for the slow gates, in resumable time slices.

Run: python3 tests/_build_cache.py [budget_minutes]

Each invocation trains for at most the budget, checkpointing as it goes,
then exits 3 with "paused". Re-run until it prints "all cached" (exit 0).
A short pilot goes first so the size-transfer direction can be eyeballed
before the full runs commit.
"""
import csv
import os
import sys
import time
from dataclasses import replace

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import numpy as np

import accept_configs as ac
from traincache import CACHE_DIR
from vrpkit.generate import DistributionSpec, generate
from vrpkit.oracle import nn_2opt
from vrpkit.policy import Policy, PolicyConfig, esf_value, load_policy
from vrpkit.training import METRICS_COLUMNS, TrainConfig, evaluate_batch, resume, train


class OutOfTime(Exception):
    pass


def _stamp(msg: str):
    print(f"[{time.strftime('%H:%M:%S')}] {msg}", flush=True)


def _truncate_metrics(path, below_step: int):
    """Drop rows from a dead run's tail that a resume would re-emit."""
    if not path.exists():
        return
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.DictReader(fh) if int(r["step"]) < below_step]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(METRICS_COLUMNS)
        for r in rows:
            w.writerow([r[c] for c in METRICS_COLUMNS])


def _ensure(tag: str, pc: PolicyConfig, tc: TrainConfig, deadline: float) -> Policy:
    """Train tag to completion, resuming partial runs; OutOfTime past deadline."""
    CACHE_DIR.mkdir(exist_ok=True)
    ck = CACHE_DIR / f"{tag}.json"
    metrics = CACHE_DIR / f"{tag}.metrics.csv"
    cfg = replace(tc, checkpoint_path=str(ck), metrics_path=str(metrics),
                  checkpoint_every=500)

    def stopper(step: int, stats):
        if time.time() > deadline and step % cfg.checkpoint_every == 0 and step > 0:
            raise OutOfTime(f"{tag} at step {step}")

    if ck.exists():
        policy, meta = load_policy(ck)
        step = int(meta.get("extra", {}).get("train_step", 0))
        if policy.config != pc:
            raise RuntimeError(f"cache {tag} holds a different policy config")
        if step >= cfg.steps:
            return policy
        if time.time() > deadline:
            raise OutOfTime(f"{tag} at step {step}")
        _stamp(f"{tag}: resuming from step {step}/{cfg.steps}")
        _truncate_metrics(metrics, step)
        policy, _ = resume(str(ck), cfg, progress=stopper)
        return policy
    if time.time() > deadline:
        raise OutOfTime(f"{tag} not started")
    _stamp(f"{tag}: fresh run, {cfg.steps} steps")
    policy = Policy.new(pc)
    train(policy, cfg, progress=stopper)
    return policy


def pilot(deadline: float):
    marker = CACHE_DIR / "pilot.done"
    if marker.exists():
        return
    policy = _ensure("pilot_tsp20",
                     PolicyConfig(init_seed=0),
                     TrainConfig(steps=1200, size=20, batch_size=32, seed=200),
                     deadline)
    insts = generate(DistributionSpec("uniform", seed=4040), count=400, n=40)
    refs = np.array([nn_2opt(i).cost for i in insts])
    plain = evaluate_batch(policy, insts, esf=1.0, starts=1)
    factor = esf_value("fixed", 20, 40)
    scaled = evaluate_batch(policy, insts, esf=factor, starts=1)
    g_plain = float((100 * (plain - refs) / refs).mean())
    g_scaled = float((100 * (scaled - refs) / refs).mean())
    _stamp(f"pilot: gap plain={g_plain:.3f}%  scaled({factor:.4f})={g_scaled:.3f}%  "
           f"delta={g_plain - g_scaled:+.3f}pp")
    marker.write_text("done\n")


def main():
    budget_min = float(sys.argv[1]) if len(sys.argv) > 1 else 8.5
    deadline = time.time() + budget_min * 60
    runs = [(ac.TOY10_TAG, ac.TOY10_POLICY, ac.TOY10_TRAIN)]
    runs += [ac.scale_run(s) for s in ac.SCALE_SEEDS]
    runs += [ac.specialist_run(d) for d in ac.SPECIALIST_DISTS]
    runs.append((ac.MULTI_TAG, ac.MULTI_POLICY, ac.MULTI_TRAIN))
    try:
        pilot(deadline)
        for tag, pc, tc in runs:
            _ensure(tag, pc, tc, deadline)
            _stamp(f"{tag} complete")
    except OutOfTime as stop:
        _stamp(f"paused: {stop}")
        sys.exit(3)
    _stamp("all cached")


if __name__ == "__main__":
    main()
