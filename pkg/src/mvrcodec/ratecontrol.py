"""Byte-budgeted quality selection across a sequence of frames.

Each frame offers one (rate, quality-score) point per quality index.
Allocation maximizes the summed MS-SSIM subject to a total byte budget
using a multiple-choice knapsack DP over rate buckets. Rates are rounded
up to whole buckets, so a returned plan can never overshoot the true
budget; ties prefer lower total rate, then the lexicographically
smallest quality vector (earlier frames win lower indices first).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import CapacityError, DomainError, InfeasibleBudgetError

__all__ = [
    "QUALITY_COUNT",
    "ConfigPoint",
    "AllocationPlan",
    "lambda_for_quality",
    "evaluate_loss",
    "allocate",
    "load_stats",
    "plan_to_dict",
    "save_plan",
]

QUALITY_COUNT = 5
_DP_CELL_LIMIT = 300_000_000


def lambda_for_quality(q: int) -> float:
    """Distortion weight for quality index q: 20 + 2q."""
    if not 0 <= q < QUALITY_COUNT:
        raise DomainError(f"quality index must be 0..{QUALITY_COUNT - 1}, got {q}")
    return 20.0 + 2.0 * q


def evaluate_loss(msssim: float, rate_y_bits: float, rate_z_bits: float, lam: float) -> float:
    """Rate-distortion objective lam * (1 - msssim) + R_y + R_z."""
    if lam <= 0:
        raise DomainError(f"lambda must be positive, got {lam}")
    return lam * (1.0 - msssim) + rate_y_bits + rate_z_bits


@dataclass(frozen=True)
class ConfigPoint:
    """One selectable operating point of one frame."""

    q: int
    rate_bytes: int
    msssim: float

    def __post_init__(self) -> None:
        if self.rate_bytes < 0:
            raise DomainError(f"negative rate: {self.rate_bytes}")


@dataclass
class AllocationPlan:
    choices: list[ConfigPoint]
    budget_bytes: int
    bucket: int

    @property
    def total_rate_bytes(self) -> int:
        return sum(p.rate_bytes for p in self.choices)

    @property
    def total_msssim(self) -> float:
        return float(sum(p.msssim for p in self.choices))


def _check_table(table: list[list[ConfigPoint]]) -> None:
    if not table:
        raise DomainError("empty frame table")
    for i, points in enumerate(table):
        if not points:
            raise DomainError(f"frame {i} offers no operating points")
        qs = [p.q for p in points]
        if sorted(qs) != list(qs):
            raise DomainError(f"frame {i} points must be sorted by quality index")
        if len(set(qs)) != len(qs):
            raise DomainError(f"frame {i} repeats a quality index")


def allocate(table: list[list[ConfigPoint]], budget_bytes: int,
             bucket: int = 1024) -> AllocationPlan:
    """Pick one point per frame maximizing total MS-SSIM within the budget.

    `bucket` is the DP rate granularity in bytes; 1 makes the DP exact.
    Raises InfeasibleBudgetError when even the per-frame minima overflow
    the budget.
    """
    _check_table(table)
    if budget_bytes < 0:
        raise DomainError(f"negative budget: {budget_bytes}")
    if bucket < 1:
        raise DomainError(f"bucket must be >= 1, got {bucket}")

    min_total = sum(min(p.rate_bytes for p in points) for points in table)
    if min_total > budget_bytes:
        raise InfeasibleBudgetError(
            f"per-frame minimum rates sum to {min_total} bytes, "
            f"over the {budget_bytes} byte budget"
        )

    n = len(table)
    cap = budget_bytes // bucket
    buckets = [[-(-p.rate_bytes // bucket) for p in points] for points in table]

    # When even the most expensive choice everywhere fits, the budget is
    # slack and each frame independently takes its best point.
    if sum(max(bs) for bs in buckets) <= cap:
        choices = [
            min(points, key=lambda p: (-p.msssim, p.rate_bytes, p.q))
            for points in table
        ]
        return AllocationPlan(choices, budget_bytes, bucket)

    cap = min(cap, sum(max(bs) for bs in buckets))
    if n * (cap + 1) > _DP_CELL_LIMIT:
        raise CapacityError(
            f"allocation DP of {n} frames x {cap + 1} buckets is too large; "
            f"increase the bucket size"
        )

    neg_inf = -np.inf
    big_rate = np.int64(1) << 62
    nxt_ms = np.zeros(cap + 1, dtype=np.float64)
    nxt_rate = np.zeros(cap + 1, dtype=np.int64)
    choice = np.zeros((n, cap + 1), dtype=np.uint8)

    for f in range(n - 1, -1, -1):
        best_ms = np.full(cap + 1, neg_inf)
        best_rate = np.full(cap + 1, big_rate)
        best_idx = np.zeros(cap + 1, dtype=np.uint8)
        for idx, point in enumerate(table[f]):
            rb = buckets[f][idx]
            if rb > cap:
                continue
            cand_ms = np.full(cap + 1, neg_inf)
            cand_rate = np.full(cap + 1, big_rate)
            upto = cap + 1 - rb
            cand_ms[rb:] = nxt_ms[:upto] + point.msssim
            cand_rate[rb:] = nxt_rate[:upto] + point.rate_bytes
            better = (cand_ms > best_ms) | (
                (cand_ms == best_ms) & (cand_rate < best_rate)
            )
            best_ms[better] = cand_ms[better]
            best_rate[better] = cand_rate[better]
            best_idx[better] = idx
        nxt_ms, nxt_rate = best_ms, best_rate
        choice[f] = best_idx

    if nxt_ms[cap] == neg_inf:
        raise InfeasibleBudgetError(
            f"no feasible allocation within {budget_bytes} bytes at bucket {bucket}"
        )

    choices = []
    w = cap
    for f in range(n):
        idx = int(choice[f, w])
        choices.append(table[f][idx])
        w -= buckets[f][idx]
    return AllocationPlan(choices, budget_bytes, bucket)


def load_stats(path: str) -> tuple[list[str], list[list[ConfigPoint]]]:
    """Read the per-frame stats table: a JSON array, one entry per frame.

    Each entry is either {"frame": name, "points": [...]} or a bare list
    of points; a point is {"q": int, "rate_bytes": int, "msssim": float}.
    """
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if not isinstance(doc, list):
        raise DomainError("stats file must contain a JSON array of frames")
    names: list[str] = []
    table: list[list[ConfigPoint]] = []
    for i, entry in enumerate(doc):
        if isinstance(entry, dict):
            names.append(str(entry.get("frame", i)))
            raw_points = entry.get("points", [])
        else:
            names.append(str(i))
            raw_points = entry
        points = [
            ConfigPoint(int(p["q"]), int(p["rate_bytes"]), float(p["msssim"]))
            for p in raw_points
        ]
        points.sort(key=lambda p: p.q)
        table.append(points)
    return names, table


def plan_to_dict(plan: AllocationPlan, names: list[str] | None = None) -> dict:
    frames = []
    for i, point in enumerate(plan.choices):
        frames.append(
            {
                "frame": names[i] if names else str(i),
                "q": point.q,
                "rate_bytes": point.rate_bytes,
                "msssim": point.msssim,
            }
        )
    return {
        "budget_bytes": plan.budget_bytes,
        "bucket": plan.bucket,
        "total_rate_bytes": plan.total_rate_bytes,
        "total_msssim": plan.total_msssim,
        "frames": frames,
    }


def save_plan(plan: AllocationPlan, path: str, names: list[str] | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(plan_to_dict(plan, names), fh, indent=2)
        fh.write("\n")
