"""Local estimators: PivotOne, AdjacentChain, the explicit swap gold standard and naive CTR."""

import logging
from typing import Dict, List, Optional, Tuple

from ..exceptions import ConfigError, EstimationError
from ..interventions import InterventionalStats
from ..logdata import ARM_KEPT, ARM_SWAPPED, ImpressionLog, RankingTable, SwapLog
from .curve import PropensityCurve

logger = logging.getLogger(__name__)


def _warn(diagnostics: List[str], message: str) -> None:
    diagnostics.append(message)
    logger.warning(message)


def pivot_one(stats: InterventionalStats) -> PropensityCurve:
    """p_k / p_1 = ĉ_k / ĉ_1 inside S_{1,k}.

    Ranks with an empty S_{1,k}, no pivot clicks or no clicks at k are absent.
    """
    values: List[Optional[float]] = [1.0]
    diagnostics: List[str] = []
    for k in range(2, stats.M + 1):
        if stats.size(1, k) == 0:
            _warn(diagnostics, f"rank {k}: no interventional data in S(1,{k})")
            values.append(None)
            continue
        pivot, at_k = stats.c(1, (1, k)), stats.c(k, (1, k))
        if pivot == 0:
            _warn(diagnostics, f"rank {k}: undefined (zero pivot clicks)")
            values.append(None)
        elif at_k == 0:
            _warn(diagnostics, f"rank {k}: undefined (zero clicks at rank {k})")
            values.append(None)
        else:
            values.append(at_k / pivot)
    return PropensityCurve(tuple(values), "pivot-one", tuple(diagnostics))


def adjacent_chain(stats: InterventionalStats) -> PropensityCurve:
    """p_k / p_1 as the product of adjacent ratios ĉ_j / ĉ_{j-1} inside S_{j-1,j}.

    The first unusable link truncates the chain; deeper ranks are absent.
    """
    values: List[Optional[float]] = [1.0]
    diagnostics: List[str] = []
    product = 1.0
    for k in range(2, stats.M + 1):
        link = (k - 1, k)
        upper, lower = stats.c(k - 1, link), stats.c(k, link)
        if stats.size(*link) == 0:
            reason = "empty interventional set"
        elif upper == 0:
            reason = f"zero clicks at rank {k - 1}"
        elif lower == 0:
            reason = f"zero clicks at rank {k}"
        else:
            product *= lower / upper
            values.append(product)
            continue
        _warn(diagnostics, f"chain broken at link ({k - 1},{k}): {reason}; ranks {k}..{stats.M} absent")
        values.extend([None] * (stats.M - k + 1))
        break
    return PropensityCurve(tuple(values), "adjacent-chain", tuple(diagnostics))


def naive_ctr_curve(log: ImpressionLog, M: int, table: Optional[RankingTable] = None) -> PropensityCurve:
    """Empirical click-through rate per position, normalized by position 1.

    Without a table every impression is assumed to display positions 1..M.
    This estimator ignores relevance and is confounded by the ranker.
    """
    if M < 1:
        raise ConfigError("M", f"M must be >= 1, got {M}")
    if not len(log):
        raise EstimationError("naive CTR needs a nonempty log")
    displays = [0] * M
    clicks = [0] * M
    for imp in log:
        shown = M if table is None else min(M, len(table.ranking(imp.query, imp.ranker)))
        for k in range(shown):
            displays[k] += 1
        for pos in imp.clicked_positions():
            if pos <= M:
                clicks[pos - 1] += 1
    if displays[0] == 0 or clicks[0] == 0:
        raise EstimationError("naive CTR undefined: no clicks at position 1")

    raw: List[Optional[float]] = []
    diagnostics: List[str] = []
    for k in range(M):
        if displays[k] == 0:
            _warn(diagnostics, f"rank {k + 1}: never displayed")
            raw.append(None)
        elif clicks[k] == 0:
            _warn(diagnostics, f"rank {k + 1}: no clicks")
            raw.append(None)
        else:
            raw.append(clicks[k] / displays[k])
    return PropensityCurve.from_raw(raw, "naive-ctr", diagnostics)


def swap_arm_rates(swap_log: SwapLog) -> Dict[Tuple[int, int], Tuple[float, float, int, int]]:
    """Per swap pair (k, k2): (kept-arm click rate at k, swapped-arm click rate at k2, n_kept, n_swapped).

    The document ranked at k stays there in the kept arm and moves to k2 in
    the swapped arm, so the two rates observe the same documents.
    """
    tallies: Dict[Tuple[int, int], List[int]] = {}
    for imp in swap_log:
        k, k2 = imp.pair
        tally = tallies.setdefault(imp.pair, [0, 0, 0, 0])
        positions = imp.clicked_positions()
        if imp.arm == ARM_KEPT:
            tally[0] += k in positions
            tally[2] += 1
        elif imp.arm == ARM_SWAPPED:
            tally[1] += k2 in positions
            tally[3] += 1
    return {
        pair: (
            clicks_kept / n_kept if n_kept else 0.0,
            clicks_swapped / n_swapped if n_swapped else 0.0,
            n_kept,
            n_swapped,
        )
        for pair, (clicks_kept, clicks_swapped, n_kept, n_swapped) in sorted(tallies.items())
    }


def swap_gold_estimate(swap_log: SwapLog, M: int, mode: str = "pivot") -> PropensityCurve:
    """Gold-standard propensities from explicit swap experiments.

    mode="pivot" uses Swap(1,k) experiments: p_k / p_1 = ĉ_k / ĉ_1.
    mode="adjacent" chains Swap(k,k+1) experiments: p_k / p_1 = prod of ĉ_{j} / ĉ_{j-1}.
    """
    if mode not in ("pivot", "adjacent"):
        raise ConfigError("mode", f"swap gold mode must be 'pivot' or 'adjacent', got {mode!r}")
    if M < 1:
        raise ConfigError("M", f"M must be >= 1, got {M}")
    rates = swap_arm_rates(swap_log)
    values: List[Optional[float]] = [1.0]
    diagnostics: List[str] = []

    def ratio(pair: Tuple[int, int]) -> Optional[float]:
        if pair not in rates:
            _warn(diagnostics, f"no Swap{pair} experiment in the log")
            return None
        kept, swapped, n_kept, n_swapped = rates[pair]
        if n_kept == 0 or n_swapped == 0:
            _warn(diagnostics, f"Swap{pair}: an arm has no impressions")
            return None
        if kept == 0:
            _warn(diagnostics, f"Swap{pair}: rank undefined (zero clicks in the kept arm)")
            return None
        if swapped == 0:
            _warn(diagnostics, f"Swap{pair}: rank undefined (zero clicks in the swapped arm)")
            return None
        return swapped / kept

    if mode == "pivot":
        for k in range(2, M + 1):
            values.append(ratio((1, k)))
    else:
        product: Optional[float] = 1.0
        for k in range(2, M + 1):
            if product is not None:
                link = ratio((k - 1, k))
                product = None if link is None else product * link
            values.append(product)
    return PropensityCurve(tuple(values), "swap-gold", tuple(diagnostics))
