"""Tests for MSE scoring, bootstrap intervals and sweeps."""
import numpy as np
import pytest

from .estimators import PropensityCurve
from .evaluation import (
    SWEEP_COLUMNS,
    apply_axis,
    bootstrap_ci,
    bootstrap_report,
    evaluate_curve,
    inverse_propensity_mse,
    normalize_axis,
    replicate_curves,
    run_pipeline,
    run_sweep,
    swap_bootstrap_ci,
    sweep_seeds,
    sweep_summary,
    sweep_table,
)
from .exceptions import ConfigError, EstimationError
from .logdata import ARM_KEPT, ARM_SWAPPED, Impression, ImpressionLog, RankingTable, SwapImpression, SwapLog
from .simulator import SimConfig, generate_world, simulate_clicks, true_curve

BASE = SimConfig(num_queries=30, candidates_per_query=8, M=4, ranker_noise=1.0, traffic={"f1": 1500, "f2": 1500}, seed=1)


def _harmonic(M):
    return PropensityCurve(tuple(1.0 / r for r in range(1, M + 1)))


def test_mse_of_identical_curves_is_zero():
    truth = _harmonic(5)
    assert inverse_propensity_mse(truth, truth, 5) == 0.0


def test_mse_hand_values():
    assert inverse_propensity_mse(PropensityCurve((1.0, 0.25)), PropensityCurve((1.0, 0.5)), 2) == pytest.approx(2.0)

    truth = _harmonic(10)
    est = PropensityCurve(truth.values[:9] + (0.09,))
    assert inverse_propensity_mse(est, truth, 10) == pytest.approx(0.1235, abs=1e-4)


def test_mse_ignores_curve_scale():
    truth = _harmonic(4)
    est = PropensityCurve.from_raw([0.7, 0.3, 0.2, 0.1])
    scaled = PropensityCurve.from_raw([7.0, 3.0, 2.0, 1.0])
    assert inverse_propensity_mse(est, truth, 4) == pytest.approx(inverse_propensity_mse(scaled, truth, 4))


def test_mse_errors():
    with pytest.raises(EstimationError, match="mismatched rank ranges"):
        inverse_propensity_mse(_harmonic(3), _harmonic(5), 5)
    with pytest.raises(EstimationError, match="rank\\(s\\) 3 absent"):
        inverse_propensity_mse(PropensityCurve((1.0, 0.5, None)), _harmonic(3), 3)


def test_evaluate_curve_reports_absent_ranks():
    report = evaluate_curve(PropensityCurve((1.0, 0.5, None), "pivot-one"), _harmonic(3))

    assert report.mse is None
    assert any("MSE undefined" in d for d in report.diagnostics)
    assert evaluate_curve(_harmonic(3), None).mse is None


def _naive_log():
    table = RankingTable({("q", "f1"): ["a", "b"]})
    impressions = []
    for i in range(40):
        clicks = {("a", 1)} if i % 2 == 0 else set()
        if i % 4 == 0:
            clicks.add(("b", 2))
        impressions.append(Impression("q", "f1", frozenset(clicks)))
    return ImpressionLog(impressions), table


def test_bootstrap_single_resample_is_degenerate():
    log, table = _naive_log()
    result = bootstrap_ci(log, table, "naive-ctr", B=1, M=2, seed=3)

    assert result.B == 1
    assert result.failures == 0
    lo, hi = result.intervals[1]
    assert lo == hi == result.samples[0, 1]


def test_bootstrap_of_a_constant_log_has_zero_width():
    table = RankingTable({("q", "f1"): ["a", "b"]})
    log = ImpressionLog([Impression("q", "f1", frozenset({("a", 1), ("b", 2)}))] * 30)
    result = bootstrap_ci(log, table, "naive-ctr", B=50, M=2)

    for lo, hi in result.intervals:
        assert lo == hi == 1.0


def test_bootstrap_is_deterministic_in_the_seed():
    log, table = _naive_log()
    a = bootstrap_ci(log, table, "naive-ctr", B=30, M=2, seed=5)
    b = bootstrap_ci(log, table, "naive-ctr", B=30, M=2, seed=5, jobs=2)

    assert np.array_equal(a.samples, b.samples)
    assert a.intervals == b.intervals


def test_bootstrap_aborts_when_too_many_resamples_fail():
    table = RankingTable({("q", "f1"): ["a", "b"]})
    impressions = [Impression("q", "f1", frozenset({("a", 1), ("b", 2)}))]
    impressions += [Impression("q", "f1", frozenset({("b", 2)}))] * 49
    with pytest.raises(EstimationError, match="bootstrap resamples"):
        bootstrap_ci(ImpressionLog(impressions), table, "naive-ctr", B=200, M=2)


def test_bootstrap_argument_checks():
    log, table = _naive_log()
    with pytest.raises(ConfigError):
        bootstrap_ci(log, table, "naive-ctr", B=0, M=2)
    with pytest.raises(ConfigError):
        bootstrap_ci(log, table, "naive-ctr", level=1.0, M=2)
    with pytest.raises(EstimationError, match="empty log"):
        bootstrap_ci(ImpressionLog([]), table, "naive-ctr", M=2)


def test_harvesting_bootstrap_intervals_contain_the_point_estimate():
    world = generate_world(BASE)
    log = simulate_clicks(world, BASE)
    report = bootstrap_report(log, world.table, "adjacent-chain", B=40, M=BASE.M, truth=true_curve(BASE))

    assert report.mse is not None
    for k, interval in enumerate(report.ci, start=1):
        if interval is not None:
            assert interval[0] <= report.estimate[k] <= interval[1]


def test_swap_bootstrap():
    impressions = [SwapImpression("q", "f1", (1, 2), ARM_KEPT, frozenset({("a", 1)}))] * 20
    impressions += [SwapImpression("q", "f1", (1, 2), ARM_SWAPPED, frozenset({("a", 2)}))] * 10
    impressions += [SwapImpression("q", "f1", (1, 2), ARM_SWAPPED)] * 10
    result = swap_bootstrap_ci(SwapLog(tuple(impressions)), 2, B=100, seed=2)

    lo, hi = result.intervals[1]
    assert lo <= 0.5 <= hi


def test_normalize_axis():
    assert normalize_axis("click-noise") == "click_noise"
    with pytest.raises(ConfigError) as exc_info:
        normalize_axis("temperature")
    assert exc_info.value.field == "axis"


def test_apply_axis():
    assert apply_axis(BASE, "data_size", 200).traffic == {"f1": 200, "f2": 200}
    assert apply_axis(BASE, "bias_severity", 2.0).eta == 2.0
    assert apply_axis(BASE, "traffic_imbalance", "1:3").traffic == {"f1": 750, "f2": 2250}
    with pytest.raises(ConfigError):
        apply_axis(BASE, "traffic_imbalance", "1:2:3")


def test_sweep_order_and_cardinality():
    methods = ["adjacent-chain", "naive-ctr"]
    reports = run_sweep("click-noise", [0.0, 0.2], BASE, methods, seeds=2)

    assert len(reports) == 8
    assert [r.value for r in reports] == [0.0] * 4 + [0.2] * 4
    assert [r.method for r in reports] == methods * 4
    seeds = sweep_seeds(BASE.seed, 2)
    assert [r.seed for r in reports[:4]] == [seeds[0], seeds[0], seeds[1], seeds[1]]
    assert [r.seed for r in reports[4:]] == [r.seed for r in reports[:4]]
    assert all(r.axis == "click_noise" for r in reports)


def test_sweep_single_point_matches_a_manual_run():
    report, = run_sweep("data_size", [1500], BASE, ["all-pairs"], seeds=1)

    cfg = BASE.replace(seed=sweep_seeds(BASE.seed, 1)[0])
    world = generate_world(cfg)
    curve = run_pipeline(simulate_clicks(world, cfg), world.table, "all-pairs", cfg.M)
    assert report.mse == pytest.approx(inverse_propensity_mse(curve, true_curve(cfg), cfg.M), rel=1e-12)


def test_sweep_is_deterministic():
    first = sweep_table(run_sweep("bias_severity", [0.5], BASE, ["pivot-one"], seeds=2))
    second = sweep_table(run_sweep("bias_severity", [0.5], BASE, ["pivot-one"], seeds=2, jobs=2))

    assert list(first.columns) == SWEEP_COLUMNS
    assert first["mse"].equals(second["mse"])
    assert first["seed"].equals(second["seed"])


def test_sweep_records_failures_instead_of_raising():
    reports = run_sweep("ranker_similarity", [0.0], BASE, ["all-pairs", "pivot-one"], seeds=2)

    assert all(r.mse is None for r in reports)
    assert any("no interventional data" in d for d in reports[0].diagnostics)
    summary = sweep_summary(reports)
    assert list(summary["method"]) == ["all-pairs", "pivot-one"]
    assert list(summary["failed"]) == [2, 2]
    assert list(summary["runs"]) == [2, 2]


def test_sweep_summary_aggregates_seeds():
    summary = sweep_summary(run_sweep("click_noise", [0.0, 0.3], BASE, ["naive-ctr"], seeds=3))

    assert list(summary["value"]) == ["0.0", "0.3"]
    assert list(summary["runs"]) == [3, 3]
    assert (summary["mse_sd"] >= 0).all()
    assert summary["mse_mean"].notna().all()


@pytest.mark.parametrize(
    "kwargs, field",
    [
        ({"grid": []}, "grid"),
        ({"seeds": 0}, "seeds"),
        ({"methods": ["swap-gold"]}, "methods"),
    ],
)
def test_sweep_argument_checks(kwargs, field):
    args = {"axis": "click_noise", "grid": [0.1], "base": BASE, "methods": ["all-pairs"], "seeds": 1}
    args.update(kwargs)
    with pytest.raises(ConfigError) as exc_info:
        run_sweep(**args)
    assert exc_info.value.field == field


def test_replicate_curves_bands():
    bands = replicate_curves(BASE, "naive-ctr", runs=3)
    frame = bands.to_frame()

    assert list(frame["rank"]) == [1, 2, 3, 4]
    assert bands.mean[0] == 1.0
    assert (bands.lower <= bands.mean).all()
    assert (bands.mean <= bands.upper).all()


@pytest.fixture(scope="module")
def harmonic_log():
    cfg = SimConfig(
        num_queries=200,
        candidates_per_query=8,
        M=4,
        ranker_noise=1.0,
        traffic={"f1": 100_000, "f2": 100_000},
        seed=12,
    )
    world = generate_world(cfg)
    return cfg, world, simulate_clicks(world, cfg)


@pytest.mark.parametrize("method", ["pivot-one", "adjacent-chain", "all-pairs"])
def test_harvesting_estimators_recover_the_harmonic_curve(harmonic_log, method):
    cfg, world, log = harmonic_log
    curve = run_pipeline(log, world.table, method, cfg.M)

    for k in range(2, cfg.M + 1):
        assert curve[k] == pytest.approx(1 / k, rel=0.2)


def test_bootstrap_intervals_cover_the_true_propensities():
    cfg = SimConfig(
        num_queries=60,
        candidates_per_query=6,
        M=3,
        ranker_noise=1.0,
        traffic={"f1": 10_000, "f2": 10_000},
        seed=8,
    )
    world = generate_world(cfg)
    truth = true_curve(cfg)
    replications = 25
    covered = np.zeros(cfg.M - 1)
    for rep in range(replications):
        log = simulate_clicks(world, cfg.replace(seed=100 + rep))
        result = bootstrap_ci(log, world.table, "pivot-one", B=200, M=cfg.M, seed=rep)
        for k in range(2, cfg.M + 1):
            lower, upper = result.intervals[k - 1]
            covered[k - 2] += lower <= truth[k] <= upper

    assert np.all(covered / replications >= 0.76)


# Desk-scale versions of the robustness sweeps: two rankers, M = 10.
ROBUSTNESS = SimConfig(
    num_queries=500,
    candidates_per_query=20,
    M=10,
    ranker_noise=1.0,
    traffic={"f1": 50_000, "f2": 50_000},
    seed=3,
)


def _mean_mse(reports):
    """Mean MSE per (grid value, method); a failed replicate counts as unboundedly bad."""
    table = sweep_table(reports)
    table["value"] = table["value"].astype(str)
    table["mse"] = table["mse"].astype(float).fillna(np.inf)
    return table.groupby(["value", "method"], sort=False)["mse"].mean()


def test_all_pairs_beats_adjacent_chain_at_every_data_size():
    grid = [20_000, 100_000]
    means = _mean_mse(run_sweep("data-size", grid, ROBUSTNESS, ["all-pairs", "adjacent-chain"], seeds=2))

    for value in map(str, grid):
        assert np.isfinite(means[(value, "all-pairs")])
        assert means[(value, "all-pairs")] < means[(value, "adjacent-chain")]


@pytest.mark.parametrize(
    "axis, grid",
    [
        ("click-noise", [0.0, 0.3]),
        ("traffic-imbalance", ["1:5", "1:1"]),
    ],
)
def test_all_pairs_error_is_stable_along_the_axis(axis, grid):
    means = _mean_mse(run_sweep(axis, grid, ROBUSTNESS, ["all-pairs"], seeds=2))
    values = np.array([means[(str(v), "all-pairs")] for v in grid])

    assert np.all(np.isfinite(values))
    assert values.max() < 2 * values.min()


def test_error_grows_with_bias_severity():
    grid = [1.0, 2.0]
    methods = ["all-pairs", "adjacent-chain"]
    means = _mean_mse(run_sweep("bias-severity", grid, ROBUSTNESS, methods, seeds=2))

    for method in methods:
        assert means[("1.0", method)] < means[("2.0", method)]
    for value in ("1.0", "2.0"):
        assert means[(value, "all-pairs")] <= means[(value, "adjacent-chain")]
