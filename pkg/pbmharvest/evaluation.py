"""Scoring, bootstrap intervals and robustness sweeps."""

import logging
import time
import warnings
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .estimators import HARVESTING_METHODS, AllPairsOptions, PropensityCurve, estimate, swap_gold_estimate
from .exceptions import ConfigError, EstimationError, HarvestError
from .interventions import EncodedLog, encode_log, harvest, same_rank_fraction
from .logdata import ImpressionLog, RankingTable, SwapLog
from .simulator import SimConfig, generate_world, simulate_clicks, true_curve
from .utils import STREAM_BOOTSTRAP, STREAM_SWEEP, parallel_map, seed_stream

logger = logging.getLogger(__name__)

# More failed resamples than this fraction of B aborts the bootstrap.
MAX_FAILED_FRACTION = 0.2

SWEEP_AXES = (
    "data_size",
    "ranker_similarity",
    "click_noise",
    "bias_severity",
    "traffic_imbalance",
    "ranker_quality",
)
SWEEP_METHODS = ("pivot-one", "adjacent-chain", "all-pairs", "naive-ctr")
SWEEP_COLUMNS = ["axis", "value", "seed", "method", "mse", "runtime_s", "same_rank_fraction"]

Interval = Optional[Tuple[float, float]]


@dataclass
class EvalReport:
    """Outcome of scoring one estimated curve.

    ``mse`` is None when no truth was given or the estimate left ranks absent;
    in the latter case ``diagnostics`` says why.
    """

    method: str
    estimate: Optional[PropensityCurve]
    truth: Optional[PropensityCurve] = None
    mse: Optional[float] = None
    ci: Optional[Tuple[Interval, ...]] = None
    axis: Optional[str] = None
    value: Any = None
    grid: Optional[Tuple[Any, ...]] = None
    seed: Optional[int] = None
    runtime_s: float = 0.0
    same_rank_fraction: Optional[float] = None
    diagnostics: List[str] = field(default_factory=list)

    def to_row(self) -> Dict[str, Any]:
        return {
            "axis": self.axis,
            "value": self.value,
            "seed": self.seed,
            "method": self.method,
            "mse": self.mse,
            "runtime_s": self.runtime_s,
            "same_rank_fraction": self.same_rank_fraction,
        }


@dataclass(frozen=True, eq=False)
class BootstrapResult:
    """Percentile intervals per rank; None for ranks absent from the full-data estimate."""

    intervals: Tuple[Interval, ...]
    samples: np.ndarray
    failures: int
    B: int
    level: float
    diagnostics: Tuple[str, ...] = ()


@dataclass(frozen=True, eq=False)
class CurveBands:
    """Mean curve with +/- z * sd bands over independent re-simulations."""

    mean: np.ndarray
    sd: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    runs: int
    z: float

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "rank": np.arange(1, len(self.mean) + 1),
                "mean": self.mean,
                "sd": self.sd,
                "lower": self.lower,
                "upper": self.upper,
            }
        )


def inverse_propensity_mse(est: PropensityCurve, truth: PropensityCurve, M: int) -> float:
    """Mean over ranks 1..M of (p̂_1/p̂_i - p_1/p_i)^2.

    Raises:
        EstimationError: A curve is shorter than M or leaves a rank absent.

    Example:
        >>> inverse_propensity_mse(PropensityCurve((1.0, 0.25)), PropensityCurve((1.0, 0.5)), 2)
        2.0
    """
    if M < 1:
        raise ConfigError("M", f"M must be >= 1, got {M}")
    if est.M < M or truth.M < M:
        raise EstimationError(f"mismatched rank ranges: curves cover {est.M} and {truth.M} ranks, need {M}")
    absent = [k for k in range(1, M + 1) if est[k] is None or truth[k] is None]
    if absent:
        raise EstimationError(
            f"MSE undefined: rank(s) {', '.join(map(str, absent))} absent",
            list(est.diagnostics),
        )
    est_inv = np.array(est.inverse()[:M], dtype=np.float64)
    truth_inv = np.array(truth.inverse()[:M], dtype=np.float64)
    return float(np.mean((est_inv - truth_inv) ** 2))


def evaluate_curve(est: PropensityCurve, truth: Optional[PropensityCurve], M: Optional[int] = None) -> EvalReport:
    """Score est against truth when given; absent ranks leave mse None and are reported."""
    report = EvalReport(method=est.method, estimate=est, truth=truth, diagnostics=list(est.diagnostics))
    if truth is not None:
        try:
            report.mse = inverse_propensity_mse(est, truth, M or min(est.M, truth.M))
        except EstimationError as e:
            report.diagnostics.append(str(e))
            logger.warning("%s: %s", est.method or "estimate", e)
    return report


def run_pipeline(
    log: ImpressionLog,
    table: RankingTable,
    method: str,
    M: int,
    options: Optional[AllPairsOptions] = None,
    jobs: int = 1,
) -> PropensityCurve:
    """Harvest (when the method needs it) and estimate."""
    if method in HARVESTING_METHODS:
        stats = harvest(log, table, M, jobs=jobs)
        return estimate(method, stats=stats, options=options)
    if method == "naive-ctr":
        return estimate(method, log=log, table=table, M=M)
    raise ConfigError("method", f"method {method!r} cannot run on a click log")


# =============================================================================
# Bootstrap
# =============================================================================


def _percentile_intervals(samples: np.ndarray, ok: np.ndarray, present: Sequence[bool], level: float):
    alpha = 1.0 - level
    good = samples[ok]
    lo, hi = np.percentile(good, [100 * alpha / 2, 100 * (1 - alpha / 2)], axis=0)
    return tuple((float(lo[i]), float(hi[i])) if present[i] else None for i in range(samples.shape[1]))


def _run_resamples(
    stat: Callable[[np.ndarray], PropensityCurve],
    n: int,
    B: int,
    seed: int,
    present: Sequence[bool],
    jobs: int,
) -> Tuple[np.ndarray, np.ndarray, List[str]]:
    children = seed_stream(seed, STREAM_BOOTSTRAP).spawn(B)
    M = len(present)

    def run_chunk(chunk: Sequence[int]):
        rows, flags, notes = [], [], []
        for b in chunk:
            indices = np.random.default_rng(children[b]).integers(0, n, size=n)
            try:
                curve = stat(indices)
            except HarvestError as e:
                rows.append(np.full(M, np.nan))
                flags.append(False)
                notes.append(f"resample {b}: {e}")
                continue
            values = curve.as_array()[:M]
            missing = [k + 1 for k in range(M) if present[k] and np.isnan(values[k])]
            rows.append(values)
            flags.append(not missing)
            if missing:
                notes.append(f"resample {b}: rank(s) {', '.join(map(str, missing))} absent")
        return rows, flags, notes

    chunks = [c.tolist() for c in np.array_split(np.arange(B), max(1, min(B, jobs * 4)))]
    rows, flags, notes = [], [], []
    for chunk_rows, chunk_flags, chunk_notes in parallel_map(run_chunk, chunks, jobs):
        rows.extend(chunk_rows)
        flags.extend(chunk_flags)
        notes.extend(chunk_notes)
    return np.vstack(rows), np.array(flags, dtype=bool), notes


def _finish_bootstrap(samples, ok, notes, present, B, level) -> BootstrapResult:
    failures = int((~ok).sum())
    if failures > MAX_FAILED_FRACTION * B:
        raise EstimationError(
            f"estimator failed on {failures} of {B} bootstrap resamples (limit {MAX_FAILED_FRACTION:.0%})",
            notes[:20],
        )
    if failures:
        logger.warning("%d of %d bootstrap resamples failed and were dropped", failures, B)
    return BootstrapResult(
        intervals=_percentile_intervals(samples, ok, present, level),
        samples=samples,
        failures=failures,
        B=B,
        level=level,
        diagnostics=tuple(notes),
    )


def _check_bootstrap_args(B: int, level: float) -> None:
    if B < 1:
        raise ConfigError("B", f"B must be >= 1, got {B}")
    if not 0 < level < 1:
        raise ConfigError("level", f"level must be in (0, 1), got {level}")


def bootstrap_ci(
    log: ImpressionLog,
    table: RankingTable,
    estimator: str,
    B: int = 1000,
    level: float = 0.95,
    M: int = 10,
    seed: int = 0,
    options: Optional[AllPairsOptions] = None,
    jobs: int = 1,
) -> BootstrapResult:
    """Percentile bootstrap intervals from impression-level resampling.

    Each resample draws len(log) impressions with replacement, recounts the
    traffic and re-runs the whole pipeline. A resample fails if the
    estimator raises or leaves absent a rank the full-data estimate has.

    Raises:
        EstimationError: More than 20% of resamples failed, or the full-data
            estimate itself fails.
    """
    _check_bootstrap_args(B, level)
    if not len(log):
        raise EstimationError("cannot bootstrap an empty log")
    point = run_pipeline(log, table, estimator, M, options)
    present = [point.present(k) for k in range(1, M + 1)]

    if estimator in HARVESTING_METHODS:
        encoded: EncodedLog = encode_log(log, table, M)

        def stat(indices: np.ndarray) -> PropensityCurve:
            return estimate(estimator, stats=encoded.stats(indices), options=options)

    else:

        def stat(indices: np.ndarray) -> PropensityCurve:
            return estimate(estimator, log=log.resample(indices), table=table, M=M)

    samples, ok, notes = _run_resamples(stat, len(log), B, seed, present, jobs)
    logger.info("bootstrap %s: B=%d level=%.3g", estimator, B, level)
    return _finish_bootstrap(samples, ok, notes, present, B, level)


def swap_bootstrap_ci(
    swap_log: SwapLog,
    M: int,
    B: int = 1000,
    level: float = 0.95,
    seed: int = 0,
    mode: str = "pivot",
    jobs: int = 1,
) -> BootstrapResult:
    """Bootstrap intervals for the gold-standard swap estimator (resampling swap impressions)."""
    _check_bootstrap_args(B, level)
    if not len(swap_log):
        raise EstimationError("cannot bootstrap an empty swap log")
    point = swap_gold_estimate(swap_log, M, mode)
    present = [point.present(k) for k in range(1, M + 1)]
    impressions = swap_log.impressions

    def stat(indices: np.ndarray) -> PropensityCurve:
        return swap_gold_estimate(SwapLog(tuple(impressions[i] for i in indices)), M, mode)

    samples, ok, notes = _run_resamples(stat, len(swap_log), B, seed, present, jobs)
    return _finish_bootstrap(samples, ok, notes, present, B, level)


def bootstrap_report(
    log: ImpressionLog,
    table: RankingTable,
    estimator: str,
    B: int = 1000,
    level: float = 0.95,
    M: int = 10,
    seed: int = 0,
    truth: Optional[PropensityCurve] = None,
    options: Optional[AllPairsOptions] = None,
    jobs: int = 1,
) -> EvalReport:
    """Point estimate plus bootstrap intervals, widened to contain the point estimate."""
    point = run_pipeline(log, table, estimator, M, options, jobs=jobs)
    result = bootstrap_ci(log, table, estimator, B, level, M, seed, options, jobs)
    intervals = []
    for k, interval in enumerate(result.intervals, start=1):
        if interval is None or point[k] is None:
            intervals.append(None)
        else:
            intervals.append((min(interval[0], point[k]), max(interval[1], point[k])))
    report = evaluate_curve(point, truth, M)
    report.ci = tuple(intervals)
    report.diagnostics.extend(result.diagnostics[:20])
    return report


# =============================================================================
# Sweeps
# =============================================================================


def normalize_axis(axis: str) -> str:
    name = axis.replace("-", "_")
    if name not in SWEEP_AXES:
        raise ConfigError("axis", f"unknown sweep axis {axis!r}; choose from {', '.join(SWEEP_AXES)}")
    return name


def parse_split(value: Any) -> List[float]:
    """'1:5' -> [1.0, 5.0]."""
    try:
        parts = [float(x) for x in str(value).split(":")]
    except ValueError:
        raise ConfigError("grid", f"traffic split {value!r} must look like '1:5'") from None
    if len(parts) < 2 or any(x <= 0 for x in parts):
        raise ConfigError("grid", f"traffic split {value!r} needs two or more positive parts")
    return parts


def apply_axis(base: SimConfig, axis: str, value: Any) -> SimConfig:
    """SimConfig with the sweep parameter of `axis` set to `value`."""
    axis = normalize_axis(axis)
    if axis == "data_size":
        return base.replace(traffic={r: int(value) for r in base.rankers})
    if axis == "ranker_similarity":
        return base.replace(ranker_noise=float(value))
    if axis == "click_noise":
        return base.replace(eps_minus=float(value))
    if axis == "bias_severity":
        return base.replace(eta=float(value))
    if axis == "ranker_quality":
        return base.replace(relevance_signal=float(value))
    parts = parse_split(value)
    if len(parts) != len(base.rankers):
        raise ConfigError("grid", f"traffic split {value!r} has {len(parts)} parts for {len(base.rankers)} rankers")
    total = base.total_traffic
    shares = np.floor(np.array(parts) / sum(parts) * total).astype(np.int64)
    shares[-1] += total - int(shares.sum())
    return base.replace(traffic={r: int(n) for r, n in zip(base.rankers, shares)})


def sweep_seeds(base_seed: int, seeds: int) -> List[int]:
    """Per-replicate world seeds, shared across grid points."""
    return [int(child.generate_state(1)[0]) for child in seed_stream(base_seed, STREAM_SWEEP).spawn(seeds)]


def _sweep_job(args) -> List[EvalReport]:
    axis, value, grid, cfg, methods, options = args
    world = generate_world(cfg)
    log = simulate_clicks(world, cfg)
    truth = true_curve(cfg)
    similarity = same_rank_fraction(world.table, cfg.M)

    stats, harvest_s = None, 0.0
    if any(m in HARVESTING_METHODS for m in methods):
        started = time.perf_counter()
        try:
            stats = harvest(log, world.table, cfg.M)
        except HarvestError as e:
            stats = e
        harvest_s = time.perf_counter() - started

    reports = []
    for method in methods:
        started = time.perf_counter()
        try:
            if method in HARVESTING_METHODS:
                if isinstance(stats, HarvestError):
                    raise stats
                curve = estimate(method, stats=stats, options=options)
            else:
                curve = estimate(method, log=log, table=world.table, M=cfg.M)
        except HarvestError as e:
            report = EvalReport(method=method, estimate=None, truth=truth, diagnostics=[str(e), *e.diagnostics])
        else:
            report = evaluate_curve(curve, truth, cfg.M)
        report.runtime_s = time.perf_counter() - started + (harvest_s if method in HARVESTING_METHODS else 0.0)
        report.method = method
        report.axis, report.value, report.grid = axis, value, grid
        report.seed = cfg.seed
        report.same_rank_fraction = similarity
        reports.append(report)
    return reports


def run_sweep(
    axis: str,
    grid: Sequence[Any],
    base: SimConfig,
    methods: Sequence[str],
    seeds: int,
    options: Optional[AllPairsOptions] = None,
    jobs: int = 1,
) -> List[EvalReport]:
    """One EvalReport per grid point x seed x method, in that order.

    Every grid point reuses the same per-replicate seeds. Estimator failures
    become reports with ``mse=None`` instead of aborting the sweep.

    Raises:
        ConfigError: Unknown axis or method, empty grid or seeds < 1.
    """
    axis = normalize_axis(axis)
    if not grid:
        raise ConfigError("grid", "sweep grid is empty")
    if seeds < 1:
        raise ConfigError("seeds", f"seeds must be >= 1, got {seeds}")
    unknown = [m for m in methods if m not in SWEEP_METHODS]
    if unknown or not methods:
        raise ConfigError("methods", f"sweep methods must be among {', '.join(SWEEP_METHODS)}, got {list(methods)}")

    replicate_seeds = sweep_seeds(base.seed, seeds)
    grid = tuple(grid)
    jobs_args = []
    for value in grid:
        cfg = apply_axis(base, axis, value).validate()
        for s in replicate_seeds:
            jobs_args.append((axis, value, grid, cfg.replace(seed=s), tuple(methods), options))
    logger.info("sweep %s over %d grid points x %d seeds x %d methods", axis, len(grid), seeds, len(methods))
    return [report for reports in parallel_map(_sweep_job, jobs_args, jobs) for report in reports]


def sweep_table(reports: Sequence[EvalReport]) -> pd.DataFrame:
    return pd.DataFrame([r.to_row() for r in reports], columns=SWEEP_COLUMNS)


def sweep_summary(reports: Sequence[EvalReport]) -> pd.DataFrame:
    """Mean and standard deviation of MSE per (axis, value, method), in grid order.

    ``failed`` counts replicates whose MSE was undefined; they are left out of
    the mean.
    """
    table = sweep_table(reports)
    table["value"] = table["value"].astype(str)
    table["mse"] = table["mse"].astype(float)
    grouped = table.groupby(["axis", "value", "method"], sort=False)
    summary = grouped["mse"].agg(mse_mean="mean", mse_sd="std", runs="size", scored="count").reset_index()
    summary["mse_sd"] = summary["mse_sd"].fillna(0.0)
    summary["failed"] = summary["runs"] - summary["scored"]
    summary["same_rank_fraction"] = grouped["same_rank_fraction"].mean().to_numpy()
    return summary.drop(columns=["scored"])


def replicate_curves(
    cfg: SimConfig,
    method: str,
    runs: int,
    z: float = 2.576,
    options: Optional[AllPairsOptions] = None,
    jobs: int = 1,
) -> CurveBands:
    """Re-simulate `runs` independent logs and summarize the estimated curves.

    Absent ranks of a run are ignored in that rank's mean and sd.
    """
    if runs < 1:
        raise ConfigError("runs", f"runs must be >= 1, got {runs}")
    cfg.validate()

    def one_run(seed: int) -> np.ndarray:
        run_cfg = cfg.replace(seed=seed)
        world = generate_world(run_cfg)
        log = simulate_clicks(world, run_cfg)
        try:
            return run_pipeline(log, world.table, method, cfg.M, options).as_array()
        except HarvestError as e:
            logger.warning("replicate with seed %d failed: %s", seed, e)
            return np.full(cfg.M, np.nan)

    curves = np.vstack(parallel_map(one_run, sweep_seeds(cfg.seed, runs), jobs))
    with warnings.catch_warnings():
        # All-absent ranks yield NaN bands.
        warnings.simplefilter("ignore", RuntimeWarning)
        mean = np.nanmean(curves, axis=0)
        sd = np.nanstd(curves, axis=0, ddof=1) if runs > 1 else np.zeros(cfg.M)
    return CurveBands(mean=mean, sd=sd, lower=mean - z * sd, upper=mean + z * sd, runs=runs, z=z)
