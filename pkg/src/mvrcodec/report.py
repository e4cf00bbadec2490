"""Render a stats table (and optionally an allocation plan) to files.

Output is one CSV with every (frame, q) operating point plus PNG figures:
a rate-quality chart always, and per-frame chosen rates with the running
budget when a plan is supplied. Everything is written into one directory
so the artifacts travel together.
"""

from __future__ import annotations

import csv
import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .errors import DomainError
from .ratecontrol import ConfigPoint

__all__ = ["write_report"]


def _write_csv(path: str, names: list[str], table: list[list[ConfigPoint]]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame", "q", "rate_bytes", "msssim"])
        for name, points in zip(names, table):
            for p in points:
                writer.writerow([name, p.q, p.rate_bytes, f"{p.msssim:.8f}"])


def _rate_quality_figure(path: str, names: list[str],
                         table: list[list[ConfigPoint]]) -> None:
    fig, ax = plt.subplots(figsize=(7, 5))
    # Cap the legend, not the curves; large tables stay readable.
    for i, (name, points) in enumerate(zip(names, table)):
        rates = [p.rate_bytes for p in points]
        scores = [p.msssim for p in points]
        label = name if i < 12 else None
        ax.plot(rates, scores, marker="o", linewidth=1.0, label=label)
    ax.set_xlabel("rate (bytes)")
    ax.set_ylabel("MS-SSIM")
    ax.set_title("Per-frame operating points")
    if len(names) <= 12:
        ax.legend(fontsize="small")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def _plan_figure(path: str, plan: dict) -> None:
    frames = plan.get("frames", [])
    if not frames:
        raise DomainError("plan has no frames to draw")
    rates = [f["rate_bytes"] for f in frames]
    cumulative = []
    total = 0
    for r in rates:
        total += r
        cumulative.append(total)

    fig, (top, bottom) = plt.subplots(2, 1, figsize=(8, 6), sharex=True)
    xs = range(len(frames))
    top.bar(xs, rates, width=0.9)
    top.set_ylabel("chosen rate (bytes)")
    top.set_title("Allocated rates")
    bottom.plot(xs, cumulative, drawstyle="steps-post")
    budget = plan.get("budget_bytes")
    if budget is not None:
        bottom.axhline(budget, color="tab:red", linestyle="--", label="budget")
        bottom.legend(fontsize="small")
    bottom.set_xlabel("frame")
    bottom.set_ylabel("cumulative bytes")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def write_report(names: list[str], table: list[list[ConfigPoint]],
                 out_dir: str, plan: dict | None = None) -> list[str]:
    """Write report.csv and figures into out_dir; returns the paths."""
    if len(names) != len(table):
        raise DomainError(f"{len(names)} names for {len(table)} table rows")
    if not table:
        raise DomainError("empty stats table")
    os.makedirs(out_dir, exist_ok=True)

    paths = []
    csv_path = os.path.join(out_dir, "report.csv")
    _write_csv(csv_path, names, table)
    paths.append(csv_path)

    rq_path = os.path.join(out_dir, "rate_quality.png")
    _rate_quality_figure(rq_path, names, table)
    paths.append(rq_path)

    if plan is not None:
        plan_path = os.path.join(out_dir, "plan_rates.png")
        _plan_figure(plan_path, plan)
        paths.append(plan_path)
    return paths
