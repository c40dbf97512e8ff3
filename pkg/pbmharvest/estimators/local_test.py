"""Tests for PivotOne, AdjacentChain, naive CTR and the swap gold standard."""
import pytest

from ..exceptions import ConfigError, EstimationError
from ..interventions import InterventionalStats, harvest
from ..logdata import ARM_KEPT, ARM_SWAPPED, Impression, ImpressionLog, RankingTable, SwapImpression, SwapLog
from ..simulator import SimConfig, expected_world_stats, generate_world, simulate_clicks, true_curve
from . import ESTIMATORS, estimate
from .local import adjacent_chain, naive_ctr_curve, pivot_one, swap_arm_rates, swap_gold_estimate


def test_pivot_one_ratio():
    stats = InterventionalStats.from_pairs(2, {(1, 2): (0.6, 0.4, 0.3, 0.7, 10)})
    curve = pivot_one(stats)

    assert curve.method == "pivot-one"
    assert curve[2] == pytest.approx(0.5)
    assert curve.diagnostics == ()


def test_pivot_one_missing_set():
    stats = InterventionalStats.from_pairs(3, {(1, 2): (0.6, 0.4, 0.3, 0.7, 10)})
    curve = pivot_one(stats)

    assert curve[3] is None
    assert "rank 3: no interventional data in S(1,3)" in curve.diagnostics


def test_pivot_one_zero_pivot_clicks():
    stats = InterventionalStats.from_pairs(2, {(1, 2): (0.0, 1.0, 0.3, 0.7, 10)})
    curve = pivot_one(stats)

    assert curve[2] is None
    assert any("zero pivot clicks" in d for d in curve.diagnostics)


def test_adjacent_chain_product():
    stats = InterventionalStats.from_pairs(
        4,
        {
            (1, 2): (1.0, 1.0, 0.8, 1.0, 5),
            (2, 3): (0.4, 1.0, 0.3, 1.0, 5),
            (3, 4): (0.2, 1.0, 0.1, 1.0, 5),
        },
    )
    curve = adjacent_chain(stats)

    assert curve[2] == pytest.approx(0.8)
    assert curve[3] == pytest.approx(0.6)
    assert curve[4] == pytest.approx(0.3)


def test_adjacent_chain_breaks_at_first_missing_link():
    stats = InterventionalStats.from_pairs(
        4,
        {
            (1, 2): (1.0, 1.0, 0.5, 1.0, 5),
            (3, 4): (0.2, 1.0, 0.1, 1.0, 5),
        },
    )
    curve = adjacent_chain(stats)

    assert curve[2] == pytest.approx(0.5)
    assert curve[3] is None
    assert curve[4] is None
    assert len(curve.diagnostics) == 1
    assert curve.diagnostics[0].startswith("chain broken at link (2,3)")


def test_local_estimators_are_exact_on_expected_stats():
    cfg = SimConfig(num_queries=200, candidates_per_query=6, M=4, ranker_noise=1.0, traffic={"f1": 1000, "f2": 1000}, seed=3)
    stats = expected_world_stats(generate_world(cfg), cfg)
    truth = true_curve(cfg)

    for curve in (pivot_one(stats), adjacent_chain(stats)):
        assert curve.is_complete()
        for k in range(1, cfg.M + 1):
            assert curve[k] == pytest.approx(truth[k], rel=1e-9)


def test_naive_ctr_counts_positions():
    impressions = [Impression("q", "f1") for _ in range(10)]
    for i in range(4):
        impressions[i] = Impression("q", "f1", frozenset({("a", 1)}))
    impressions[9] = Impression("q", "f1", frozenset({("b", 2)}))
    curve = naive_ctr_curve(ImpressionLog(impressions), 2)

    assert curve.method == "naive-ctr"
    assert curve[2] == pytest.approx(0.25)


def test_naive_ctr_requires_clicks_at_the_top():
    with pytest.raises(EstimationError, match="no clicks at position 1"):
        naive_ctr_curve(ImpressionLog([Impression("q", "f1")]), 2)
    with pytest.raises(EstimationError):
        naive_ctr_curve(ImpressionLog([]), 2)


def test_naive_ctr_is_steeper_than_truth_when_relevance_is_on_top():
    cfg = SimConfig(
        num_queries=100,
        candidates_per_query=10,
        M=5,
        relevance_signal=4.0,
        ranker_noise=0.2,
        traffic={"f1": 5000, "f2": 5000},
        seed=2,
    )
    world = generate_world(cfg)
    naive = naive_ctr_curve(simulate_clicks(world, cfg), cfg.M, world.table)

    assert naive[cfg.M] < true_curve(cfg)[cfg.M]


def _swap_log(pair, kept_clicks, swapped_clicks, n=10):
    k, k2 = pair
    impressions = []
    for i in range(n):
        clicks = frozenset({("a", k)}) if i < kept_clicks else frozenset()
        impressions.append(SwapImpression("q", "f1", pair, ARM_KEPT, clicks))
    for i in range(n):
        clicks = frozenset({("a", k2)}) if i < swapped_clicks else frozenset()
        impressions.append(SwapImpression("q", "f1", pair, ARM_SWAPPED, clicks))
    return impressions


def test_swap_gold_pivot():
    swap_log = SwapLog(tuple(_swap_log((1, 2), 6, 3)))
    rates = swap_arm_rates(swap_log)

    assert rates[(1, 2)] == (pytest.approx(0.6), pytest.approx(0.3), 10, 10)
    curve = swap_gold_estimate(swap_log, 2)
    assert curve.method == "swap-gold"
    assert curve[2] == pytest.approx(0.5)


def test_swap_gold_adjacent_chains_links():
    swap_log = SwapLog(tuple(_swap_log((1, 2), 8, 4) + _swap_log((2, 3), 6, 3)))
    curve = swap_gold_estimate(swap_log, 3, mode="adjacent")

    assert curve[2] == pytest.approx(0.5)
    assert curve[3] == pytest.approx(0.25)


def test_swap_gold_missing_experiment():
    curve = swap_gold_estimate(SwapLog(tuple(_swap_log((1, 2), 6, 3))), 3)

    assert curve[3] is None
    assert any("no Swap(1, 3) experiment" in d for d in curve.diagnostics)


def test_swap_gold_zero_kept_clicks():
    curve = swap_gold_estimate(SwapLog(tuple(_swap_log((1, 2), 0, 3))), 2)
    assert curve[2] is None


def test_swap_gold_rejects_unknown_mode():
    with pytest.raises(ConfigError) as exc_info:
        swap_gold_estimate(SwapLog(()), 2, mode="diagonal")
    assert exc_info.value.field == "mode"


def test_estimate_dispatch():
    stats = InterventionalStats.from_pairs(2, {(1, 2): (0.6, 0.4, 0.3, 0.7, 10)})

    assert set(ESTIMATORS) == {"pivot-one", "adjacent-chain", "all-pairs", "naive-ctr", "swap-gold"}
    assert estimate("pivot-one", stats=stats)[2] == pytest.approx(0.5)
    with pytest.raises(ConfigError) as exc_info:
        estimate("em", stats=stats)
    assert exc_info.value.field == "method"
    with pytest.raises(ConfigError, match="needs stats"):
        estimate("adjacent-chain")
    with pytest.raises(ConfigError, match="needs swap_log"):
        estimate("swap-gold", M=2)


def test_harvested_identical_rankers_leave_every_rank_absent():
    log = ImpressionLog([Impression("q", "f1", frozenset({("a", 1)})), Impression("q", "f2")])
    table = RankingTable({("q", "f1"): ["a", "b"], ("q", "f2"): ["a", "b"]})
    stats = harvest(log, table, 2)

    assert pivot_one(stats).absent_ranks() == [2]
    assert adjacent_chain(stats).absent_ranks() == [2]
