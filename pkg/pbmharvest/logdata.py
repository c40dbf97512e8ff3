"""Click-log data model: ranking tables, impression logs and swap-experiment logs.

File formats (line-delimited JSON, UTF-8, positions 1-based):
- rankings:    {"query": str, "ranker": str, "ranking": [doc, ...]}
- impressions: {"query": str, "ranker": str, "clicks": [{"doc": str, "pos": int}, ...]}
- swap log:    {"query": str, "ranker": str, "pair": [k, k'], "arm": "kept"|"swapped",
                "clicks": [{"doc": str, "pos": int}, ...]}
"""

import hashlib
import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, Iterator, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy import stats as scipy_stats

from .exceptions import LogConsistencyError, LogFormatError
from .utils import PathLike, iter_jsonl, require_keys, write_jsonl

logger = logging.getLogger(__name__)

# Bias-corrected Cramér's V above which rankers are reported as seeing
# different query populations.
DIVERGENCE_WARNING = 0.1

ARM_KEPT = "kept"
ARM_SWAPPED = "swapped"
ARMS = (ARM_KEPT, ARM_SWAPPED)

Key = Tuple[str, str]
Click = Tuple[str, int]


class RankingTable:
    """Deterministic rankings f_i(q) for every logged (query, ranker) pair.

    Args:
        entries: Mapping (query_id, ranker_id) -> ranked doc ids, position 1 first.

    Raises:
        LogConsistencyError: If a ranking lists the same document twice.

    Example:
        >>> table = RankingTable({("q1", "f1"): ["a", "b"], ("q1", "f2"): ["b", "a"]})
        >>> table.rank("q1", "f2", "a")
        2
    """

    def __init__(self, entries: Mapping[Key, Sequence[str]]):
        self._entries: Dict[Key, Tuple[str, ...]] = {}
        self._ranks: Dict[Key, Dict[str, int]] = {}
        for key, ranking in entries.items():
            ranking = tuple(ranking)
            ranks = {doc: pos for pos, doc in enumerate(ranking, start=1)}
            if len(ranks) != len(ranking):
                raise LogConsistencyError(f"duplicate document in ranking for {key!r}")
            self._entries[key] = ranking
            self._ranks[key] = ranks
        self._fingerprint: Optional[str] = None

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, key: object) -> bool:
        return key in self._entries

    def __repr__(self) -> str:
        return f"RankingTable(entries={len(self)}, queries={len(self.queries())}, rankers={self.rankers()!r})"

    def items(self) -> Iterator[Tuple[Key, Tuple[str, ...]]]:
        return iter(self._entries.items())

    def ranking(self, query: str, ranker: str) -> Tuple[str, ...]:
        return self._entries[(query, ranker)]

    def rank(self, query: str, ranker: str, doc: str) -> Optional[int]:
        """Position of doc in f_ranker(query), or None if it is not ranked."""
        return self._ranks[(query, ranker)].get(doc)

    def queries(self) -> List[str]:
        return sorted({q for q, _ in self._entries})

    def rankers(self) -> List[str]:
        return sorted({r for _, r in self._entries})

    def rankers_for(self, query: str) -> List[str]:
        return sorted(r for q, r in self._entries if q == query)

    def candidates(self, query: str, M: int) -> List[str]:
        """Documents any ranker places in the top M for query, sorted by id."""
        docs = set()
        for ranker in self.rankers_for(query):
            docs.update(self._entries[(query, ranker)][:M])
        return sorted(docs)

    def check_candidate_consistency(self, M: int) -> List[str]:
        """Return queries whose top-M candidates are not ranked by every ranker.

        Rankers may disagree on the tail of the candidate set; only documents
        some ranker shows in the top M must be present in every ranking.
        """
        inconsistent = []
        by_query: Dict[str, List[str]] = {}
        for q, r in self._entries:
            by_query.setdefault(q, []).append(r)
        for query in sorted(by_query):
            top = self.candidates(query, M)
            for ranker in by_query[query]:
                ranks = self._ranks[(query, ranker)]
                if any(doc not in ranks for doc in top):
                    inconsistent.append(query)
                    break
        if inconsistent:
            logger.warning(
                "%d queries have top-%d candidates missing from some ranking (e.g. %s)",
                len(inconsistent), M, inconsistent[0],
            )
        return inconsistent

    def fingerprint(self) -> str:
        """Content hash used to tie derived weights and stats back to this table."""
        if self._fingerprint is None:
            digest = hashlib.sha256()
            for key in sorted(self._entries):
                digest.update("\x1f".join((*key, *self._entries[key])).encode("utf-8"))
                digest.update(b"\x1e")
            self._fingerprint = digest.hexdigest()
        return self._fingerprint


@dataclass(frozen=True)
class Impression:
    query: str
    ranker: str
    clicks: FrozenSet[Click] = frozenset()

    def clicked_positions(self) -> List[int]:
        return sorted(pos for _, pos in self.clicks)


class ImpressionLog:
    """Logged sessions plus per-ranker traffic counts n_i.

    Args:
        impressions: Impressions in log order.
        rankers: Optional ranker ids to report with zero traffic when they
            have no impressions.
    """

    def __init__(self, impressions: Iterable[Impression], rankers: Optional[Iterable[str]] = None):
        self._impressions: Tuple[Impression, ...] = tuple(impressions)
        counts = Counter(imp.ranker for imp in self._impressions)
        for ranker in rankers or ():
            counts.setdefault(ranker, 0)
        self._traffic: Dict[str, int] = {r: counts[r] for r in sorted(counts)}

    @property
    def impressions(self) -> Tuple[Impression, ...]:
        return self._impressions

    @property
    def traffic(self) -> Dict[str, int]:
        return dict(self._traffic)

    def __len__(self) -> int:
        return len(self._impressions)

    def __iter__(self) -> Iterator[Impression]:
        return iter(self._impressions)

    def __repr__(self) -> str:
        return f"ImpressionLog(impressions={len(self)}, traffic={self._traffic!r})"

    def total_clicks(self) -> int:
        return sum(len(imp.clicks) for imp in self._impressions)

    def by_ranker(self) -> Dict[str, List[Impression]]:
        grouped: Dict[str, List[Impression]] = {r: [] for r in self._traffic}
        for imp in self._impressions:
            grouped[imp.ranker].append(imp)
        return grouped

    def replicate(self, times: int) -> "ImpressionLog":
        """Log with every impression repeated `times` times, in place order."""
        return ImpressionLog(
            (imp for imp in self._impressions for _ in range(times)),
            rankers=self._traffic,
        )

    def resample(self, indices: Sequence[int]) -> "ImpressionLog":
        """Log made of the impressions at `indices`; traffic is recounted."""
        return ImpressionLog((self._impressions[i] for i in indices), rankers=self._traffic)


@dataclass(frozen=True)
class SwapImpression:
    """One impression of an explicit Swap(k, k') experiment.

    In the kept arm the ranking is shown as the ranker produced it; in the
    swapped arm the documents at positions k and k' trade places.
    """

    query: str
    ranker: str
    pair: Tuple[int, int]
    arm: str
    clicks: FrozenSet[Click] = frozenset()

    def clicked_positions(self) -> List[int]:
        return sorted(pos for _, pos in self.clicks)


@dataclass(frozen=True)
class SwapLog:
    impressions: Tuple[SwapImpression, ...] = field(default_factory=tuple)

    def __len__(self) -> int:
        return len(self.impressions)

    def __iter__(self) -> Iterator[SwapImpression]:
        return iter(self.impressions)

    def pairs(self) -> List[Tuple[int, int]]:
        return sorted({imp.pair for imp in self.impressions})

    def arm_sizes(self) -> Dict[Tuple[Tuple[int, int], str], int]:
        return dict(Counter((imp.pair, imp.arm) for imp in self.impressions))


@dataclass
class IndependenceReport:
    """Advisory check that rankers saw the same query distribution."""

    histograms: Dict[str, Dict[str, int]]
    chi2: float
    dof: int
    p_value: float
    cramers_v: float
    divergence: float
    disjoint: bool
    warnings: List[str] = field(default_factory=list)

    @property
    def flagged(self) -> bool:
        return self.disjoint or self.divergence > DIVERGENCE_WARNING


# =============================================================================
# Parsing
# =============================================================================


def _parse_clicks(raw, path: PathLike, line_no: int) -> FrozenSet[Click]:
    if not isinstance(raw, list):
        raise LogFormatError("malformed line: 'clicks' must be a list", str(path), line_no)
    clicks = set()
    for entry in raw:
        if not isinstance(entry, dict) or "doc" not in entry or "pos" not in entry:
            raise LogFormatError("malformed line: click needs 'doc' and 'pos'", str(path), line_no)
        doc, pos = entry["doc"], entry["pos"]
        if not isinstance(doc, str) or isinstance(pos, bool) or not isinstance(pos, int):
            raise LogFormatError("malformed line: click doc must be a string, pos an integer", str(path), line_no)
        if pos < 1:
            raise LogFormatError(f"malformed line: position {pos} is < 1", str(path), line_no)
        clicks.add((doc, pos))
    return frozenset(clicks)


def _require_string_ids(record: dict, path: PathLike, line_no: int) -> None:
    if not isinstance(record["query"], str) or not isinstance(record["ranker"], str):
        raise LogFormatError("malformed line: query and ranker must be strings", str(path), line_no)


def _check_impression(imp, table: RankingTable, where: str) -> None:
    if (imp.query, imp.ranker) not in table:
        raise LogConsistencyError(
            f"{where}: impression references unknown (query, ranker) ({imp.query!r}, {imp.ranker!r})"
        )
    for doc, pos in imp.clicks:
        if table.rank(imp.query, imp.ranker, doc) != pos:
            raise LogConsistencyError(
                f"{where}: click/ranking mismatch: {doc!r} clicked at position {pos} but ranked "
                f"{table.rank(imp.query, imp.ranker, doc)} by {imp.ranker!r} for {imp.query!r}"
            )


def parse_rankings(path: PathLike) -> RankingTable:
    """Load a rankings file.

    Raises:
        LogFormatError: Malformed line, duplicate document in one ranking, or
            duplicate (query, ranker) key. The message carries the line number.
    """
    entries: Dict[Key, List[str]] = {}
    for line_no, record in iter_jsonl(path):
        require_keys(record, ("query", "ranker", "ranking"), path, line_no)
        _require_string_ids(record, path, line_no)
        query, ranker, ranking = record["query"], record["ranker"], record["ranking"]
        if not isinstance(ranking, list) or not all(isinstance(d, str) for d in ranking):
            raise LogFormatError("malformed line: ranking must be a list of strings", str(path), line_no)
        if len(set(ranking)) != len(ranking):
            raise LogFormatError("duplicate document in ranking", str(path), line_no)
        if (query, ranker) in entries:
            raise LogFormatError(f"duplicate (query, ranker) key ({query!r}, {ranker!r})", str(path), line_no)
        entries[(query, ranker)] = ranking
    table = RankingTable(entries)
    logger.debug("parsed %d rankings from %s", len(table), path)
    return table


def parse_impressions(path: PathLike, table: RankingTable) -> ImpressionLog:
    """Load an impressions file and cross-check every click against table.

    Raises:
        LogFormatError: Malformed line.
        LogConsistencyError: Unknown (query, ranker) or click/ranking mismatch.
    """
    impressions = []
    for line_no, record in iter_jsonl(path):
        require_keys(record, ("query", "ranker", "clicks"), path, line_no)
        _require_string_ids(record, path, line_no)
        imp = Impression(
            query=record["query"],
            ranker=record["ranker"],
            clicks=_parse_clicks(record["clicks"], path, line_no),
        )
        _check_impression(imp, table, f"{path}:{line_no}")
        impressions.append(imp)
    log = ImpressionLog(impressions)
    logger.debug("parsed %d impressions from %s (traffic %s)", len(log), path, log.traffic)
    return log


def parse_swap_log(path: PathLike) -> SwapLog:
    impressions = []
    for line_no, record in iter_jsonl(path):
        require_keys(record, ("query", "ranker", "pair", "arm", "clicks"), path, line_no)
        _require_string_ids(record, path, line_no)
        pair = record["pair"]
        if (
            not isinstance(pair, list)
            or len(pair) != 2
            or not all(isinstance(k, int) and not isinstance(k, bool) for k in pair)
            or not 1 <= pair[0] <= pair[1]
        ):
            raise LogFormatError("malformed line: pair must be [k, k'] with 1 <= k <= k'", str(path), line_no)
        if record["arm"] not in ARMS:
            raise LogFormatError(f"malformed line: arm must be one of {', '.join(ARMS)}", str(path), line_no)
        impressions.append(
            SwapImpression(
                query=record["query"],
                ranker=record["ranker"],
                pair=(pair[0], pair[1]),
                arm=record["arm"],
                clicks=_parse_clicks(record["clicks"], path, line_no),
            )
        )
    return SwapLog(tuple(impressions))


# =============================================================================
# Serialization
# =============================================================================


def _click_records(clicks: FrozenSet[Click]) -> List[dict]:
    return [{"doc": doc, "pos": pos} for doc, pos in sorted(clicks, key=lambda c: (c[1], c[0]))]


def write_rankings(table: RankingTable, path: PathLike) -> int:
    return write_jsonl(
        path,
        (
            {"query": q, "ranker": r, "ranking": list(ranking)}
            for (q, r), ranking in sorted(table.items())
        ),
    )


def write_impressions(log: ImpressionLog, path: PathLike) -> int:
    return write_jsonl(
        path,
        ({"query": imp.query, "ranker": imp.ranker, "clicks": _click_records(imp.clicks)} for imp in log),
    )


def write_swap_log(swap_log: SwapLog, path: PathLike) -> int:
    return write_jsonl(
        path,
        (
            {
                "query": imp.query,
                "ranker": imp.ranker,
                "pair": list(imp.pair),
                "arm": imp.arm,
                "clicks": _click_records(imp.clicks),
            }
            for imp in swap_log
        ),
    )


# =============================================================================
# Diagnostics
# =============================================================================


def _bias_corrected_cramers_v(chi2: float, n: int, rows: int, cols: int) -> float:
    if n <= 1:
        return 0.0
    phi2 = max(0.0, chi2 / n - (cols - 1) * (rows - 1) / (n - 1))
    rows_corr = rows - (rows - 1) ** 2 / (n - 1)
    cols_corr = cols - (cols - 1) ** 2 / (n - 1)
    denom = min(rows_corr - 1, cols_corr - 1)
    if denom <= 0:
        return 0.0
    return float(np.sqrt(phi2 / denom))


def validate_independence_report(log: ImpressionLog) -> IndependenceReport:
    """Compare the query distributions seen by each ranker.

    Harvested interventions are only randomized when the query distribution
    does not depend on the ranker. This report is advisory and never raises.
    The divergence score is the bias-corrected Cramér's V of the
    ranker x query contingency table (0 for identical distributions).
    """
    histograms: Dict[str, Dict[str, int]] = {
        ranker: dict(Counter(imp.query for imp in impressions)) for ranker, impressions in log.by_ranker().items()
    }

    warnings: List[str] = []
    for ranker, n in log.traffic.items():
        if n == 0:
            warnings.append(f"ranker {ranker!r} has no impressions")

    active = [r for r in sorted(histograms) if histograms[r]]
    queries = sorted({q for r in active for q in histograms[r]})
    if len(active) < 2 or len(queries) < 2:
        if not log:
            warnings.append("log is empty")
        for w in warnings:
            logger.warning(w)
        return IndependenceReport(histograms, 0.0, 0, 1.0, 0.0, 0.0, False, warnings)

    counts = np.array([[histograms[r].get(q, 0) for q in queries] for r in active], dtype=float)
    chi2, p_value, dof, _ = scipy_stats.chi2_contingency(counts, correction=False)
    n = int(counts.sum())
    rows, cols = counts.shape
    cramers_v = float(np.sqrt(chi2 / (n * (min(rows, cols) - 1))))
    divergence = _bias_corrected_cramers_v(chi2, n, rows, cols)

    supports = [set(histograms[r]) for r in active]
    disjoint = all(
        not (supports[i] & supports[j]) for i in range(len(supports)) for j in range(i + 1, len(supports))
    )
    if disjoint:
        warnings.append("maximal divergence: rankers saw disjoint query sets")
    elif divergence > DIVERGENCE_WARNING:
        warnings.append(
            f"query distributions differ across rankers (divergence {divergence:.3f} > {DIVERGENCE_WARNING})"
        )
    for w in warnings:
        logger.warning(w)
    return IndependenceReport(
        histograms=histograms,
        chi2=float(chi2),
        dof=int(dof),
        p_value=float(p_value),
        cramers_v=cramers_v,
        divergence=divergence,
        disjoint=disjoint,
        warnings=warnings,
    )
