"""Main CLI entry point for pbmharvest.

Subcommands: init, simulate, build-stats, estimate, evaluate, bootstrap, sweep.
Every subcommand resolves its settings through config.load_config, logs the
resolved configuration and returns an exit code (0 ok, 1 failure, 2 usage).
"""

import json
import logging
import sys
from pathlib import Path
from typing import Annotated, Any, Dict, List, Optional, Sequence

import cyclopts
import pandas as pd
from cyclopts import Parameter
from rich.console import Console
from rich.logging import RichHandler
from rich.table import Table

from .. import __version__
from ..estimators import HARVESTING_METHODS, PropensityCurve, estimate, read_curve, write_curve
from ..evaluation import (
    bootstrap_report,
    evaluate_curve,
    run_sweep,
    swap_bootstrap_ci,
    sweep_summary,
    sweep_table,
)
from ..exceptions import ConfigError, EstimationError
from ..interventions import harvest, read_stats, set_size_table, write_stats
from ..logdata import (
    parse_impressions,
    parse_rankings,
    parse_swap_log,
    validate_independence_report,
    write_impressions,
    write_rankings,
    write_swap_log,
)
from ..simulator import (
    generate_world,
    ground_truth,
    read_ground_truth,
    simulate_clicks,
    simulate_swap_experiment,
    write_ground_truth,
)
from .config import Config, create_example_config, load_config
from .errors import EXIT_FAILURE, EXIT_OK, EXIT_USAGE, wrap_harvest_error

logger = logging.getLogger("pbmharvest.cli")

app = cyclopts.App(
    name="pbmharvest",
    help="Position-bias propensity estimation from multi-ranker click logs",
    version=__version__,
)
console = Console()

RANKINGS_FILE = "rankings.jsonl"
IMPRESSIONS_FILE = "impressions.jsonl"
TRUTH_FILE = "truth.json"
SWAP_FILE = "swap.jsonl"

ConfigOpt = Annotated[Optional[Path], Parameter(help="Config file (TOML); default discovery: $PBMHARVEST_CONFIG, ./.pbmharvestrc, ~/.pbmharvestrc")]
ProfileOpt = Annotated[Optional[str], Parameter(help="Config profile ([profiles.NAME])")]
VerboseOpt = Annotated[bool, Parameter(name=["--verbose", "-v"], negative="", help="Debug logging")]
QuietOpt = Annotated[bool, Parameter(name=["--quiet", "-q"], negative="", help="Warnings and errors only")]
JobsOpt = Annotated[Optional[int], Parameter(help="Worker processes; results do not depend on it")]
SeedOpt = Annotated[Optional[int], Parameter(help="Master random seed")]
MOpt = Annotated[Optional[int], Parameter(name=["-M", "--M"], help="Top-rank cutoff")]
MethodOpt = Annotated[str, Parameter(help="pivot-one, adjacent-chain, all-pairs, naive-ctr or swap-gold")]

_log_handler: Optional[logging.Handler] = None


def configure_logging(verbose: bool = False, quiet: bool = False) -> None:
    """Send pbmharvest logs to stderr through rich."""
    global _log_handler
    package_logger = logging.getLogger("pbmharvest")
    if _log_handler is not None:
        package_logger.removeHandler(_log_handler)
    _log_handler = RichHandler(console=Console(stderr=True), show_time=False, show_path=False)
    package_logger.addHandler(_log_handler)
    package_logger.setLevel(logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO)


def _start(
    command: str,
    config: Optional[Path],
    profile: Optional[str],
    verbose: bool,
    quiet: bool,
    overrides: Dict[str, Any],
    extra: Optional[Dict[str, Any]] = None,
) -> Config:
    configure_logging(verbose, quiet)
    cfg = load_config(overrides, profile=profile, config_path=config)
    cfg.check_jobs()
    resolved = {"command": command, **cfg.as_dict(), **{k: _jsonable(v) for k, v in (extra or {}).items()}}
    logger.info("resolved config: %s", json.dumps(resolved, sort_keys=True))
    return cfg


def _jsonable(value: Any) -> Any:
    return str(value) if isinstance(value, Path) else value


def _require_file(path: Optional[Path], field: str) -> Path:
    if path is None:
        raise ConfigError(field, f"{field.replace('_', '-')} file is required")
    if not Path(path).is_file():
        raise ConfigError(field, f"file not found: {path}")
    return Path(path)


def _output_path(path: Path, field: str) -> Path:
    path = Path(path)
    if path.is_dir():
        raise ConfigError(field, f"{path} is a directory")
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _print_set_sizes(stats) -> None:
    sizes = set_size_table(stats)
    table = Table(title="Interventional set sizes |S(k,k')|", show_lines=False)
    table.add_column("k", justify="right")
    for k2 in sizes.columns:
        table.add_column(str(k2), justify="right")
    for k, row in sizes.iterrows():
        table.add_row(str(k), *("" if pd.isna(v) else str(int(v)) for v in row))
    console.print(table)


def _print_curve(curve: PropensityCurve, ci=None) -> None:
    table = Table(title=f"Propensities ({curve.method or 'curve'})")
    table.add_column("rank", justify="right")
    table.add_column("p_k / p_1", justify="right")
    table.add_column("p_1 / p_k", justify="right")
    if ci is not None:
        table.add_column("lower", justify="right")
        table.add_column("upper", justify="right")
    for k, (value, inverse) in enumerate(zip(curve.values, curve.inverse()), start=1):
        row = ["absent", "absent"] if value is None else [f"{value:.4f}", f"{inverse:.4f}"]
        if ci is not None:
            interval = ci[k - 1]
            row += ["", ""] if interval is None else [f"{interval[0]:.4f}", f"{interval[1]:.4f}"]
        table.add_row(str(k), *row)
    console.print(table)


def _parse_count(token: str) -> int:
    token = token.strip().lower()
    scale = {"k": 1_000, "m": 1_000_000}.get(token[-1:], 1)
    number = token[:-1] if scale > 1 else token
    try:
        value = float(number) * scale
    except ValueError:
        raise ConfigError("grid", f"invalid count {token!r}") from None
    if not value.is_integer():
        raise ConfigError("grid", f"count {token!r} is not a whole number")
    return int(value)


def parse_grid(axis: str, grid: str) -> List[Any]:
    """Grid values for a sweep axis: counts (10k), splits (1:5) or reals."""
    tokens = [t.strip() for t in grid.split(",") if t.strip()]
    if not tokens:
        raise ConfigError("grid", "sweep grid is empty")
    name = axis.replace("-", "_")
    if name == "data_size":
        return [_parse_count(t) for t in tokens]
    if name == "traffic_imbalance":
        return tokens
    try:
        return [float(t) for t in tokens]
    except ValueError:
        raise ConfigError("grid", f"grid values for {axis} must be numbers, got {grid!r}") from None


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


@app.command
def init(
    *,
    path: Annotated[Optional[Path], Parameter(name=["--path", "-p"], help="Config file path (default: ~/.pbmharvestrc)")] = None,
    force: Annotated[bool, Parameter(name=["--force", "-f"], negative="", help="Overwrite existing config")] = False,
) -> int:
    """Create example configuration file."""
    path = path or Path.home() / ".pbmharvestrc"
    if path.exists() and not force:
        console.print(f"[bold red]Error:[/bold red] Config file already exists at {path}. Use --force to overwrite.")
        return EXIT_FAILURE
    path.write_text(create_example_config(), encoding="utf-8")
    console.print(f"Created config file at {path}")
    return EXIT_OK


@app.command
@wrap_harvest_error
def simulate(
    *,
    out: Annotated[Path, Parameter(help="Output directory")] = Path("."),
    queries: Optional[int] = None,
    candidates: Optional[int] = None,
    relevant_fraction: Optional[float] = None,
    relevance_signal: Optional[float] = None,
    eta: Annotated[Optional[float], Parameter(help="Bias severity: p_r = (1/r)^eta")] = None,
    eps_minus: Annotated[Optional[float], Parameter(help="Click noise on irrelevant documents")] = None,
    ranker_noise: Annotated[Optional[float], Parameter(help="Ranker perturbation scale (0 = identical rankers)")] = None,
    rankers: Optional[int] = None,
    impressions_per_ranker: Optional[int] = None,
    M: MOpt = None,
    swap_k: Annotated[Optional[int], Parameter(help="Also simulate a Swap(1,K) experiment")] = None,
    p_swap: Optional[float] = None,
    swap_queries: Annotated[Optional[int], Parameter(help="Queries assigned to the swap experiment")] = None,
    seed: SeedOpt = None,
    jobs: JobsOpt = None,
    config: ConfigOpt = None,
    profile: ProfileOpt = None,
    verbose: VerboseOpt = False,
    quiet: QuietOpt = False,
) -> int:
    """Simulate a synthetic world: rankings, impressions and ground truth."""
    cfg = _start(
        "simulate", config, profile, verbose, quiet,
        dict(
            queries=queries, candidates=candidates, relevant_fraction=relevant_fraction,
            relevance_signal=relevance_signal, eta=eta, eps_minus=eps_minus, ranker_noise=ranker_noise,
            rankers=rankers, impressions_per_ranker=impressions_per_ranker, M=M, p_swap=p_swap,
            seed=seed, jobs=jobs,
        ),
        {"out": out, "swap_k": swap_k, "swap_queries": swap_queries},
    )
    sim = cfg.sim_config(swap_queries=swap_queries)
    if swap_k is not None and not 1 <= swap_k <= sim.M:
        raise ConfigError("swap_k", f"swap-k must be in 1..M ({sim.M}), got {swap_k}")
    if out.exists() and not out.is_dir():
        raise ConfigError("out", f"{out} is not a directory")
    out.mkdir(parents=True, exist_ok=True)

    world = generate_world(sim)
    log = simulate_clicks(world, sim, jobs=cfg.jobs)
    write_rankings(world.table, out / RANKINGS_FILE)
    write_impressions(log, out / IMPRESSIONS_FILE)
    write_ground_truth(ground_truth(world, sim), out / TRUTH_FILE)
    console.print(
        f"wrote {len(log)} impressions with {log.total_clicks()} clicks "
        f"({len(world.queries)} queries, rankers {', '.join(world.rankers)}) to {out}"
    )
    if swap_k is not None:
        swap_log = simulate_swap_experiment(world, sim, swap_k)
        write_swap_log(swap_log, out / SWAP_FILE)
        console.print(f"wrote {len(swap_log)} Swap(1,{swap_k}) impressions to {out / SWAP_FILE}")
    return EXIT_OK


@app.command(name="build-stats")
@wrap_harvest_error
def build_stats_command(
    *,
    rankings: Annotated[Optional[Path], Parameter(help="Rankings file")] = None,
    impressions: Annotated[Optional[Path], Parameter(help="Impressions file")] = None,
    out: Annotated[Path, Parameter(help="Stats matrix file")] = Path("stats.jsonl"),
    M: MOpt = None,
    jobs: JobsOpt = None,
    config: ConfigOpt = None,
    profile: ProfileOpt = None,
    verbose: VerboseOpt = False,
    quiet: QuietOpt = False,
) -> int:
    """Harvest interventional statistics from a click log."""
    rankings = _require_file(rankings, "rankings")
    impressions = _require_file(impressions, "impressions")
    out = _output_path(out, "out")
    cfg = _start(
        "build-stats", config, profile, verbose, quiet, dict(M=M, jobs=jobs),
        {"rankings": rankings, "impressions": impressions, "out": out},
    )
    table = parse_rankings(rankings)
    table.check_candidate_consistency(cfg.M)
    log = parse_impressions(impressions, table)
    validate_independence_report(log)
    stats = harvest(log, table, cfg.M, jobs=cfg.jobs)
    write_stats(stats, out)
    _print_set_sizes(stats)
    console.print(f"wrote interventional statistics for M={cfg.M} to {out}")
    return EXIT_OK


@app.command(name="estimate")
@wrap_harvest_error
def estimate_command(
    *,
    method: MethodOpt = "all-pairs",
    rankings: Annotated[Optional[Path], Parameter(help="Rankings file")] = None,
    impressions: Annotated[Optional[Path], Parameter(help="Impressions file")] = None,
    stats: Annotated[Optional[Path], Parameter(help="Stats file from build-stats (instead of rankings/impressions)")] = None,
    swap_log: Annotated[Optional[Path], Parameter(help="Swap-experiment log (swap-gold)")] = None,
    swap_mode: Annotated[str, Parameter(help="swap-gold protocol: pivot or adjacent")] = "pivot",
    out: Annotated[Path, Parameter(help="Curve CSV")] = Path("curve.csv"),
    M: MOpt = None,
    max_iter: Optional[int] = None,
    tol: Optional[float] = None,
    weighting: Annotated[Optional[str], Parameter(help="AllPairs weighting: printed or set-size")] = None,
    jobs: JobsOpt = None,
    config: ConfigOpt = None,
    profile: ProfileOpt = None,
    verbose: VerboseOpt = False,
    quiet: QuietOpt = False,
) -> int:
    """Estimate a propensity curve."""
    if method == "swap-gold":
        swap_log = _require_file(swap_log, "swap_log")
    elif stats is not None and method in HARVESTING_METHODS:
        stats = _require_file(stats, "stats")
    else:
        rankings = _require_file(rankings, "rankings")
        impressions = _require_file(impressions, "impressions")
    out = _output_path(out, "out")
    cfg = _start(
        "estimate", config, profile, verbose, quiet,
        dict(M=M, max_iter=max_iter, tol=tol, weighting=weighting, jobs=jobs),
        {"method": method, "rankings": rankings, "impressions": impressions, "stats": stats,
         "swap_log": swap_log, "swap_mode": swap_mode, "out": out},
    )
    options = cfg.allpairs_options()

    if method == "swap-gold":
        curve = estimate(method, swap_log=parse_swap_log(swap_log), M=cfg.M, options=swap_mode)
    elif method in HARVESTING_METHODS:
        if stats is not None:
            harvested = read_stats(stats)
            if M is not None and M != harvested.M:
                raise ConfigError("M", f"-M {M} does not match the stats file (M={harvested.M})")
        else:
            table = parse_rankings(rankings)
            harvested = harvest(parse_impressions(impressions, table), table, cfg.M, jobs=cfg.jobs)
        _print_set_sizes(harvested)
        curve = estimate(method, stats=harvested, options=options)
    else:
        table = parse_rankings(rankings)
        curve = estimate(method, log=parse_impressions(impressions, table), table=table, M=cfg.M)

    write_curve(curve, out)
    _print_curve(curve)
    console.print(f"wrote {curve.method} curve to {out}")
    return EXIT_OK


def _read_truth(path: Path) -> PropensityCurve:
    if path.suffix == ".json":
        return read_ground_truth(path).curve()
    return read_curve(path, method="truth")


@app.command(name="evaluate")
@wrap_harvest_error
def evaluate_command(
    *,
    curve: Annotated[Optional[Path], Parameter(help="Estimated curve CSV")] = None,
    truth: Annotated[Optional[Path], Parameter(help="Ground-truth JSON or curve CSV")] = None,
    out: Annotated[Optional[Path], Parameter(help="Report CSV")] = None,
    M: MOpt = None,
    config: ConfigOpt = None,
    profile: ProfileOpt = None,
    verbose: VerboseOpt = False,
    quiet: QuietOpt = False,
) -> int:
    """Score an estimated curve against ground truth (inverse-propensity MSE)."""
    curve = _require_file(curve, "curve")
    truth = _require_file(truth, "truth")
    if out is not None:
        out = _output_path(out, "out")
    _start("evaluate", config, profile, verbose, quiet, {}, {"curve": curve, "truth": truth, "out": out, "M": M})
    est = read_curve(curve)
    true = _read_truth(truth)
    if M is None:
        if est.M != true.M:
            raise ConfigError("M", f"mismatched rank ranges: curve has {est.M} ranks, truth {true.M}; pass -M")
        M = est.M
    report = evaluate_curve(est, true, M)
    if report.mse is None:
        # evaluate_curve appends the scoring failure last.
        raise EstimationError(report.diagnostics[-1], report.diagnostics[:-1])
    console.print(f"inverse-propensity MSE over ranks 1..{M}: {report.mse:.6g}")
    if out is not None:
        pd.DataFrame([{"curve": str(curve), "truth": str(truth), "M": M, "mse": report.mse}]).to_csv(
            out, index=False, lineterminator="\n"
        )
    return EXIT_OK


@app.command(name="bootstrap")
@wrap_harvest_error
def bootstrap_command(
    *,
    method: MethodOpt = "all-pairs",
    rankings: Annotated[Optional[Path], Parameter(help="Rankings file")] = None,
    impressions: Annotated[Optional[Path], Parameter(help="Impressions file")] = None,
    swap_log: Annotated[Optional[Path], Parameter(help="Swap-experiment log (swap-gold)")] = None,
    swap_mode: Annotated[str, Parameter(help="swap-gold protocol: pivot or adjacent")] = "pivot",
    truth: Annotated[Optional[Path], Parameter(help="Ground truth to score the point estimate")] = None,
    out: Annotated[Path, Parameter(help="Interval CSV")] = Path("bootstrap.csv"),
    B: Annotated[Optional[int], Parameter(name=["--B", "-B"], help="Bootstrap resamples")] = None,
    level: Annotated[Optional[float], Parameter(help="Confidence level")] = None,
    M: MOpt = None,
    max_iter: Optional[int] = None,
    tol: Optional[float] = None,
    weighting: Optional[str] = None,
    seed: SeedOpt = None,
    jobs: JobsOpt = None,
    config: ConfigOpt = None,
    profile: ProfileOpt = None,
    verbose: VerboseOpt = False,
    quiet: QuietOpt = False,
) -> int:
    """Percentile bootstrap intervals for an estimator."""
    if method == "swap-gold":
        swap_log = _require_file(swap_log, "swap_log")
    else:
        rankings = _require_file(rankings, "rankings")
        impressions = _require_file(impressions, "impressions")
    if truth is not None:
        truth = _require_file(truth, "truth")
    out = _output_path(out, "out")
    cfg = _start(
        "bootstrap", config, profile, verbose, quiet,
        dict(B=B, level=level, M=M, max_iter=max_iter, tol=tol, weighting=weighting, seed=seed, jobs=jobs),
        {"method": method, "rankings": rankings, "impressions": impressions, "swap_log": swap_log,
         "swap_mode": swap_mode, "truth": truth, "out": out},
    )
    true = _read_truth(truth) if truth is not None else None

    if method == "swap-gold":
        swaps = parse_swap_log(swap_log)
        point = estimate(method, swap_log=swaps, M=cfg.M, options=swap_mode)
        result = swap_bootstrap_ci(swaps, cfg.M, cfg.B, cfg.level, cfg.seed, swap_mode, cfg.jobs)
        ci = tuple(
            None if iv is None or point[k] is None else (min(iv[0], point[k]), max(iv[1], point[k]))
            for k, iv in enumerate(result.intervals, start=1)
        )
        report = evaluate_curve(point, true, cfg.M)
        report.ci = ci
    else:
        table = parse_rankings(rankings)
        log = parse_impressions(impressions, table)
        report = bootstrap_report(
            log, table, method, cfg.B, cfg.level, cfg.M, cfg.seed, true, cfg.allpairs_options(), cfg.jobs
        )

    frame = report.estimate.to_frame()[["rank", "propensity"]]
    frame["lower"] = [None if iv is None else iv[0] for iv in report.ci]
    frame["upper"] = [None if iv is None else iv[1] for iv in report.ci]
    frame.to_csv(out, index=False, lineterminator="\n")
    _print_curve(report.estimate, report.ci)
    if report.mse is not None:
        console.print(f"inverse-propensity MSE: {report.mse:.6g}")
    console.print(f"wrote {cfg.level:.0%} intervals from B={cfg.B} resamples to {out}")
    return EXIT_OK


@app.command(name="sweep")
@wrap_harvest_error
def sweep_command(
    *,
    axis: Annotated[str, Parameter(help="data-size, ranker-similarity, click-noise, bias-severity, traffic-imbalance or ranker-quality")],
    grid: Annotated[str, Parameter(help="Comma-separated values, e.g. 10k,50k,100k or 1:5,1:1,5:1")],
    methods: Annotated[str, Parameter(help="Comma-separated estimator ids")] = "all-pairs,adjacent-chain",
    seeds: Annotated[int, Parameter(help="Independent replicates per grid point")] = 6,
    out: Annotated[Path, Parameter(help="Flat result table (CSV)")] = Path("sweep.csv"),
    summary: Annotated[Optional[Path], Parameter(help="Summary table (default: <out>_summary.csv)")] = None,
    queries: Optional[int] = None,
    candidates: Optional[int] = None,
    relevant_fraction: Optional[float] = None,
    relevance_signal: Optional[float] = None,
    eta: Optional[float] = None,
    eps_minus: Optional[float] = None,
    ranker_noise: Optional[float] = None,
    rankers: Optional[int] = None,
    impressions_per_ranker: Optional[int] = None,
    M: MOpt = None,
    max_iter: Optional[int] = None,
    tol: Optional[float] = None,
    weighting: Optional[str] = None,
    seed: SeedOpt = None,
    jobs: JobsOpt = None,
    config: ConfigOpt = None,
    profile: ProfileOpt = None,
    verbose: VerboseOpt = False,
    quiet: QuietOpt = False,
) -> int:
    """Robustness sweep: simulate, harvest, estimate and score over a parameter grid."""
    out = _output_path(out, "out")
    summary = _output_path(summary or out.with_name(out.stem + "_summary.csv"), "summary")
    cfg = _start(
        "sweep", config, profile, verbose, quiet,
        dict(
            queries=queries, candidates=candidates, relevant_fraction=relevant_fraction,
            relevance_signal=relevance_signal, eta=eta, eps_minus=eps_minus, ranker_noise=ranker_noise,
            rankers=rankers, impressions_per_ranker=impressions_per_ranker, M=M, max_iter=max_iter,
            tol=tol, weighting=weighting, seed=seed, jobs=jobs,
        ),
        {"axis": axis, "grid": grid, "methods": methods, "seeds": seeds, "out": out, "summary": summary},
    )
    method_ids = [m.strip() for m in methods.split(",") if m.strip()]
    reports = run_sweep(
        axis, parse_grid(axis, grid), cfg.sim_config(), method_ids, seeds, cfg.allpairs_options(), cfg.jobs
    )
    sweep_table(reports).to_csv(out, index=False, lineterminator="\n")
    table = sweep_summary(reports)
    table.to_csv(summary, index=False, lineterminator="\n")

    view = Table(title=f"Sweep over {axis}")
    for column in ("value", "method", "mse_mean", "mse_sd", "failed"):
        view.add_column(column, justify="right")
    for row in table.itertuples(index=False):
        view.add_row(str(row.value), row.method, f"{row.mse_mean:.4g}", f"{row.mse_sd:.3g}", str(row.failed))
    console.print(view)
    console.print(f"wrote {len(reports)} rows to {out} and the summary to {summary}")
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main entry point for the pbmharvest CLI."""
    tokens = list(sys.argv[1:] if argv is None else argv)
    if not tokens:
        app.help_print([])
        return EXIT_USAGE
    try:
        command, bound, _ = app.parse_args(tokens, exit_on_error=False, print_error=True)
    except cyclopts.CycloptsError:
        return EXIT_USAGE
    result = command(*bound.args, **bound.kwargs)
    return result if isinstance(result, int) else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
