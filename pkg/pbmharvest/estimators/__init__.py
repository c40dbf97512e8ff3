from typing import Callable, Dict, Optional

from ..exceptions import ConfigError
from ..interventions import InterventionalStats
from ..logdata import ImpressionLog, RankingTable, SwapLog
from .allpairs import AllPairsOptions, AllPairsSolution, all_pairs_estimate, all_pairs_objective
from .curve import PropensityCurve, read_curve, write_curve
from .local import adjacent_chain, naive_ctr_curve, pivot_one, swap_arm_rates, swap_gold_estimate


def _needs(value, name: str, method: str):
    if value is None:
        raise ConfigError(name, f"method {method!r} needs {name}")
    return value


def _run_pivot_one(method, stats, log, table, swap_log, M, options):
    return pivot_one(_needs(stats, "stats", method))


def _run_adjacent_chain(method, stats, log, table, swap_log, M, options):
    return adjacent_chain(_needs(stats, "stats", method))


def _run_all_pairs(method, stats, log, table, swap_log, M, options):
    return all_pairs_estimate(_needs(stats, "stats", method), options).curve


def _run_naive_ctr(method, stats, log, table, swap_log, M, options):
    if M is None and stats is not None:
        M = stats.M
    return naive_ctr_curve(_needs(log, "log", method), _needs(M, "M", method), table)


def _run_swap_gold(method, stats, log, table, swap_log, M, options):
    return swap_gold_estimate(_needs(swap_log, "swap_log", method), _needs(M, "M", method), options or "pivot")


# Estimator id -> runner. Ids are the names accepted by `pbmharvest estimate --method`.
ESTIMATORS: Dict[str, Callable[..., PropensityCurve]] = {
    "pivot-one": _run_pivot_one,
    "adjacent-chain": _run_adjacent_chain,
    "all-pairs": _run_all_pairs,
    "naive-ctr": _run_naive_ctr,
    "swap-gold": _run_swap_gold,
}

HARVESTING_METHODS = ("pivot-one", "adjacent-chain", "all-pairs")


def estimate(
    method: str,
    *,
    stats: Optional[InterventionalStats] = None,
    log: Optional[ImpressionLog] = None,
    table: Optional[RankingTable] = None,
    swap_log: Optional[SwapLog] = None,
    M: Optional[int] = None,
    options=None,
) -> PropensityCurve:
    """
    Run an estimator by id.

    Args:
        method: One of ESTIMATORS.
        stats: Interventional statistics (harvesting methods).
        log: Impression log (naive-ctr).
        table: Ranking table, lets naive-ctr count displays exactly.
        swap_log: Swap-experiment log (swap-gold).
        M: Cutoff for the log-based methods; defaults to stats.M.
        options: AllPairsOptions for all-pairs, or "pivot"/"adjacent" for swap-gold.

    Raises:
        ConfigError: Unknown method or a missing input.

    Usage:
        curve = estimate("all-pairs", stats=stats)
    """
    try:
        runner = ESTIMATORS[method]
    except KeyError:
        raise ConfigError(
            "method", f"unknown estimator {method!r}; choose from {', '.join(ESTIMATORS)}"
        ) from None
    return runner(method, stats, log, table, swap_log, M, options)


__all__ = [
    "ESTIMATORS",
    "HARVESTING_METHODS",
    "AllPairsOptions",
    "AllPairsSolution",
    "PropensityCurve",
    "adjacent_chain",
    "all_pairs_estimate",
    "all_pairs_objective",
    "estimate",
    "naive_ctr_curve",
    "pivot_one",
    "read_curve",
    "swap_arm_rates",
    "swap_gold_estimate",
    "write_curve",
]
