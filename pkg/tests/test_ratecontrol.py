"""Budgeted quality allocation against an exhaustive oracle."""

import itertools
import json

import numpy as np
import pytest

from mvrcodec.errors import CapacityError, DomainError, InfeasibleBudgetError
from mvrcodec.ratecontrol import (
    QUALITY_COUNT,
    AllocationPlan,
    ConfigPoint,
    allocate,
    evaluate_loss,
    lambda_for_quality,
    load_stats,
    plan_to_dict,
    save_plan,
)


def brute_force(table, budget_bytes, bucket=1):
    """Enumerate every per-frame combination; mirror the allocator's order.

    Feasibility uses the same bucket rounding (rates up, budget down).
    Returns (total_msssim, total_rate_bytes, q vector) or None.
    """
    cap = budget_bytes // bucket
    best = None
    for combo in itertools.product(*table):
        if sum(-(-p.rate_bytes // bucket) for p in combo) > cap:
            continue
        key = (
            -sum(p.msssim for p in combo),
            sum(p.rate_bytes for p in combo),
            tuple(p.q for p in combo),
        )
        if best is None or key < best:
            best = key
    if best is None:
        return None
    return -best[0], best[1], list(best[2])


def random_table(rng, max_frames=5, tie_rich=True):
    """Random instances with dyadic-rational scores.

    Scores are multiples of a power of two so partial sums are exact in
    any order; with arbitrary floats, mathematically tied totals differ
    by an ulp depending on summation order and 'equal score' would not
    be well defined across implementations.
    """
    table = []
    for _ in range(int(rng.integers(1, max_frames + 1))):
        count = int(rng.integers(1, QUALITY_COUNT + 1))
        qs = sorted(rng.choice(QUALITY_COUNT, size=count, replace=False).tolist())
        points = []
        for q in qs:
            if tie_rich:
                rate = int(rng.integers(0, 9)) * 100
                score = int(rng.integers(8, 17)) / 16.0
            else:
                rate = int(rng.integers(0, 5000))
                score = 0.5 + int(rng.integers(0, 1 << 20)) / float(1 << 21)
            points.append(ConfigPoint(q, rate, score))
        table.append(points)
    return table


# --- objective ---


def test_lambda_ladder():
    assert [lambda_for_quality(q) for q in range(5)] == [20.0, 22.0, 24.0, 26.0, 28.0]
    with pytest.raises(DomainError):
        lambda_for_quality(5)
    with pytest.raises(DomainError):
        lambda_for_quality(-1)


def test_evaluate_loss_values():
    assert evaluate_loss(0.95, 800.0, 80.0, 20.0) == pytest.approx(881.0, abs=1e-12)
    assert evaluate_loss(0.9969, 1000.0, 100.0, 20.0) == pytest.approx(1100.062, abs=1e-9)
    assert evaluate_loss(1.0, 123.0, 7.0, 28.0) == 130.0
    with pytest.raises(DomainError):
        evaluate_loss(0.9, 100.0, 10.0, 0.0)
    with pytest.raises(DomainError):
        evaluate_loss(0.9, 100.0, 10.0, -3.0)


# --- allocate ---


def test_two_frame_example():
    table = [
        [ConfigPoint(0, 10000, 0.90), ConfigPoint(1, 20000, 0.95)],
        [ConfigPoint(0, 10000, 0.80), ConfigPoint(1, 30000, 0.99)],
    ]
    plan = allocate(table, 40000, bucket=1)
    assert [p.q for p in plan.choices] == [0, 1]
    assert [p.rate_bytes for p in plan.choices] == [10000, 30000]
    assert plan.total_rate_bytes == 40000
    assert plan.total_msssim == pytest.approx(1.89, abs=1e-12)


def test_matches_brute_force_exact_bucket():
    rng = np.random.default_rng(60)
    for _ in range(80):
        table = random_table(rng)
        min_total = sum(min(p.rate_bytes for p in pts) for pts in table)
        budget = int(min_total + rng.integers(0, 1500))
        plan = allocate(table, budget, bucket=1)
        want = brute_force(table, budget, bucket=1)
        assert want is not None
        assert plan.total_msssim == pytest.approx(want[0], abs=1e-12)
        assert plan.total_rate_bytes == want[1]
        assert [p.q for p in plan.choices] == want[2]


def test_matches_brute_force_coarse_bucket():
    rng = np.random.default_rng(61)
    for _ in range(40):
        table = random_table(rng, tie_rich=False)
        min_total = sum(min(p.rate_bytes for p in pts) for pts in table)
        bucket = int(rng.choice([7, 64, 256]))
        # round the minima the way the DP will, so the case is feasible
        floor = sum(-(-min(p.rate_bytes for p in pts) // bucket) * bucket
                    for pts in table)
        budget = int(floor + rng.integers(0, 4000))
        plan = allocate(table, budget, bucket=bucket)
        want = brute_force(table, budget, bucket=bucket)
        assert plan.total_rate_bytes <= budget
        assert plan.total_msssim == pytest.approx(want[0], abs=1e-12)
        assert plan.total_rate_bytes == want[1]
        assert [p.q for p in plan.choices] == want[2]


def test_tie_prefers_lower_rate_then_lower_q():
    # equal scores: the cheaper point must win
    table = [[ConfigPoint(0, 500, 0.9), ConfigPoint(1, 300, 0.9)]]
    plan = allocate(table, 1000, bucket=1)
    assert plan.choices[0].q == 1

    # full tie on (score, rate): lexicographically smaller q vector
    table = [
        [ConfigPoint(0, 400, 0.9), ConfigPoint(1, 400, 0.9)],
        [ConfigPoint(0, 400, 0.8), ConfigPoint(1, 400, 0.8)],
    ]
    plan = allocate(table, 800, bucket=1)
    assert [p.q for p in plan.choices] == [0, 0]


def test_budget_monotonicity():
    rng = np.random.default_rng(62)
    table = random_table(rng, max_frames=4, tie_rich=False)
    min_total = sum(min(p.rate_bytes for p in pts) for pts in table)
    scores = []
    for budget in range(min_total, min_total + 6000, 500):
        scores.append(allocate(table, budget, bucket=1).total_msssim)
    assert all(b >= a - 1e-12 for a, b in zip(scores, scores[1:]))


def test_slack_budget_takes_best_everywhere():
    rng = np.random.default_rng(63)
    table = random_table(rng, tie_rich=False)
    plan = allocate(table, 10**9, bucket=1024)
    for point, points in zip(plan.choices, table):
        best = min(points, key=lambda p: (-p.msssim, p.rate_bytes, p.q))
        assert point == best


def test_infeasible_budget_reports_minimum():
    table = [
        [ConfigPoint(0, 700, 0.9)],
        [ConfigPoint(0, 500, 0.8), ConfigPoint(2, 900, 0.95)],
    ]
    with pytest.raises(InfeasibleBudgetError, match="sum to 1200"):
        allocate(table, 1199, bucket=1)
    # exactly at the minimum is feasible
    plan = allocate(table, 1200, bucket=1)
    assert plan.total_rate_bytes == 1200


def test_bucket_rounding_can_make_tight_budgets_infeasible():
    # raw minima fit in bytes but not in whole buckets
    table = [[ConfigPoint(0, 1000, 0.9)], [ConfigPoint(0, 1000, 0.8)]]
    with pytest.raises(InfeasibleBudgetError, match="bucket 1024"):
        allocate(table, 2040, bucket=1024)
    assert allocate(table, 2048, bucket=1024).total_rate_bytes == 2000


def test_dp_size_guard():
    table = [
        [ConfigPoint(0, 10, 0.5), ConfigPoint(1, 300_000_000, 0.9)],
        [ConfigPoint(0, 10, 0.5), ConfigPoint(1, 300_000_000, 0.9)],
    ]
    with pytest.raises(CapacityError, match="bucket"):
        allocate(table, 400_000_000, bucket=1)
    # a coarser bucket makes the same instance tractable
    plan = allocate(table, 400_000_000, bucket=1 << 20)
    assert plan.total_rate_bytes <= 400_000_000


def test_table_validation():
    with pytest.raises(DomainError, match="empty"):
        allocate([], 100)
    with pytest.raises(DomainError, match="no operating points"):
        allocate([[]], 100)
    with pytest.raises(DomainError, match="sorted"):
        allocate([[ConfigPoint(1, 10, 0.5), ConfigPoint(0, 10, 0.5)]], 100)
    with pytest.raises(DomainError, match="repeats"):
        allocate([[ConfigPoint(1, 10, 0.5), ConfigPoint(1, 20, 0.6)]], 100)
    with pytest.raises(DomainError, match="negative budget"):
        allocate([[ConfigPoint(0, 10, 0.5)]], -1)
    with pytest.raises(DomainError, match="bucket"):
        allocate([[ConfigPoint(0, 10, 0.5)]], 100, bucket=0)
    with pytest.raises(DomainError, match="negative rate"):
        ConfigPoint(0, -5, 0.5)


# --- stats and plan files ---


def test_load_stats_both_entry_forms(tmp_path):
    doc = [
        {
            "frame": "intro",
            "points": [
                {"q": 2, "rate_bytes": 900, "msssim": 0.97},
                {"q": 0, "rate_bytes": 400, "msssim": 0.91},
            ],
        },
        [{"q": 1, "rate_bytes": 700, "msssim": 0.95}],
    ]
    path = tmp_path / "stats.json"
    path.write_text(json.dumps(doc))
    names, table = load_stats(str(path))
    assert names == ["intro", "1"]
    assert [p.q for p in table[0]] == [0, 2]  # sorted on load
    assert table[1][0] == ConfigPoint(1, 700, 0.95)

    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"not": "a list"}))
    with pytest.raises(DomainError):
        load_stats(str(bad))


def test_plan_roundtrip(tmp_path):
    table = [
        [ConfigPoint(0, 400, 0.91), ConfigPoint(2, 900, 0.97)],
        [ConfigPoint(1, 700, 0.95)],
    ]
    plan = allocate(table, 2000, bucket=1)
    path = tmp_path / "plan.json"
    save_plan(plan, str(path), names=["a", "b"])
    doc = json.loads(path.read_text())
    assert doc["budget_bytes"] == 2000
    assert doc["bucket"] == 1
    assert doc["total_rate_bytes"] == plan.total_rate_bytes
    assert doc["total_msssim"] == pytest.approx(plan.total_msssim)
    assert [f["frame"] for f in doc["frames"]] == ["a", "b"]
    assert [f["q"] for f in doc["frames"]] == [p.q for p in plan.choices]

    unnamed = plan_to_dict(plan)
    assert [f["frame"] for f in unnamed["frames"]] == ["0", "1"]


def test_allocation_plan_totals():
    plan = AllocationPlan(
        [ConfigPoint(0, 100, 0.5), ConfigPoint(1, 250, 0.75)], 1000, 1
    )
    assert plan.total_rate_bytes == 350
    assert plan.total_msssim == pytest.approx(1.25)
