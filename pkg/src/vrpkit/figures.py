"""Render analysis and training reports to image files.

Pure presentation: every function takes data the library already produced
and writes one PNG next to the delimited output. Nothing here feeds back
into computation, and importing this module never opens a window (the Agg
backend is forced before pyplot loads).
"""

from __future__ import annotations

from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be pinned first)

import numpy as np  # noqa: E402

from .analysis import SweepResult  # noqa: E402
from .errors import DomainError  # noqa: E402

__all__ = [
    "render_sweep",
    "render_proportions",
    "render_entropy",
    "render_training_curve",
    "render_bench",
]


def _finish(fig, path) -> str:
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)
    return str(path)


def render_sweep(result: SweepResult, path) -> str:
    """Mean gap against scaling factor, with the prescribed factor marked."""
    fig, ax = plt.subplots(figsize=(6, 4))
    xs = np.array(result.factors)
    ys = np.array(result.mean_gaps)
    hs = np.array(result.margins)
    ax.plot(xs, ys, marker="o", color="tab:blue", label="mean gap")
    ax.fill_between(xs, ys - hs, ys + hs, color="tab:blue", alpha=0.2)
    ax.axvline(result.esf_factor, color="tab:cyan", linestyle="--",
               label=f"prescribed factor {result.esf_factor:.3f}")
    ax.plot([result.esf_factor], [result.esf_gap], marker="*", markersize=12,
            color="tab:cyan")
    ax.set_xlabel("scaling factor")
    ax.set_ylabel("mean gap (%)")
    ax.set_title(f"{result.model_id} at size {result.test_size}")
    ax.legend()
    ax.grid(alpha=0.3)
    return _finish(fig, path)


def render_proportions(table: Mapping[str, Sequence[float]], path) -> str:
    """Grouped bars: share of cheapest-tour wins per decoder and distribution."""
    if not table:
        raise DomainError("empty proportions table")
    names = list(table)
    n_dec = len(table[names[0]])
    width = 0.8 / n_dec
    fig, ax = plt.subplots(figsize=(1.5 + 1.6 * len(names), 4))
    xs = np.arange(len(names))
    for d in range(n_dec):
        vals = [table[name][d] for name in names]
        ax.bar(xs + (d - (n_dec - 1) / 2) * width, vals, width,
               label=f"decoder {d}")
    ax.set_xticks(xs)
    ax.set_xticklabels(names)
    ax.set_ylabel("cheapest tour share (%)")
    ax.set_ylim(0, 100)
    ax.legend()
    ax.grid(axis="y", alpha=0.3)
    return _finish(fig, path)


def render_entropy(profiles: Mapping[str, Sequence[Mapping]], path) -> str:
    """Mean attention entropy against size, one line per labelled profile.

    The first profile's per-size lower bound is drawn dashed; every curve
    must sit above it.
    """
    if not profiles:
        raise DomainError("no entropy profiles given")
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, rows in profiles.items():
        ax.plot([r["size"] for r in rows], [r["mean_entropy"] for r in rows],
                marker="o", label=label)
    first = next(iter(profiles.values()))
    ax.plot([r["size"] for r in first], [r["mean_bound"] for r in first],
            linestyle="--", color="gray", label="entropy lower bound")
    ax.set_xlabel("problem size")
    ax.set_ylabel("mean attention entropy (nats)")
    ax.legend()
    ax.grid(alpha=0.3)
    return _finish(fig, path)


def render_training_curve(rows: Sequence[Mapping], path) -> str:
    """Mean sampled cost per step, one line per training distribution."""
    if not rows:
        raise DomainError("no metric rows given")
    by_dist: dict = {}
    for row in rows:
        by_dist.setdefault(str(row["distribution"]), []).append(
            (int(row["step"]), float(row["mean_cost"])))
    fig, ax = plt.subplots(figsize=(6, 4))
    for name, points in by_dist.items():
        points.sort()
        ax.plot([p[0] for p in points], [p[1] for p in points], label=name,
                linewidth=0.9)
    ax.set_xlabel("step")
    ax.set_ylabel("mean rollout cost")
    ax.legend()
    ax.grid(alpha=0.3)
    return _finish(fig, path)


def render_bench(rows: Sequence[Mapping], path) -> str:
    """Horizontal gap bars, one per benchmark instance."""
    if not rows:
        raise DomainError("no benchmark rows given")
    rows = [r for r in rows if r.get("gap_pct") not in ("", None)]
    if not rows:
        raise DomainError("no rows carry a reference gap")
    names = [str(r["instance"]) for r in rows]
    gaps = [float(r["gap_pct"]) for r in rows]
    fig, ax = plt.subplots(figsize=(6, 1.0 + 0.45 * len(names)))
    ys = np.arange(len(names))
    ax.barh(ys, gaps, color="tab:blue")
    ax.set_yticks(ys)
    ax.set_yticklabels(names)
    ax.invert_yaxis()
    ax.set_xlabel("gap to best known (%)")
    ax.grid(axis="x", alpha=0.3)
    return _finish(fig, path)
