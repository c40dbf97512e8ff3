"""Intervention harvesting: interventional sets, weights and click statistics.

A (query, doc) pair belongs to S_{k,k'} when one logged ranker shows the doc
at position k and another at k' (both within the top M). The ranker choice
randomizes the position, so clicks on these pairs act like a swap experiment.

Arrays are 0-based internally: ``c_hat[k - 1, k2 - 1]`` holds the weighted
click rate at position k inside S_{k,k2}.
"""

import logging
from dataclasses import dataclass
from typing import Dict, FrozenSet, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .exceptions import ConfigError, LogFormatError, ProvenanceError
from .logdata import ImpressionLog, RankingTable
from .utils import PathLike, iter_jsonl, pairwise_reduce, parallel_map, write_jsonl

logger = logging.getLogger(__name__)

STATS_FORMAT = "pbmharvest-stats"
STATS_VERSION = 1

Pair = Tuple[int, int]


def _check_M(M: int) -> None:
    if isinstance(M, bool) or not isinstance(M, (int, np.integer)) or M < 2:
        raise ConfigError("M", f"M must be an integer >= 2, got {M!r}")


@dataclass(frozen=True, eq=False)
class InterventionalStats:
    """Weighted click/skip rates for every ordered pair of positions.

    Attributes:
        M: Top-rank cutoff.
        c_hat: (M, M) array, ``c_hat[k-1, k2-1]`` = weighted clicks at k in S_{k,k2}.
        notc_hat: (M, M) array of weighted skips, same layout.
        set_size: (M, M) symmetric integer array of |S_{k,k2}|.
    """

    M: int
    c_hat: np.ndarray
    notc_hat: np.ndarray
    set_size: np.ndarray

    def __post_init__(self):
        _check_M(self.M)
        shape = (self.M, self.M)
        for name in ("c_hat", "notc_hat", "set_size"):
            if getattr(self, name).shape != shape:
                raise ValueError(f"{name} must have shape {shape}")
        if not np.array_equal(self.set_size, self.set_size.T):
            raise ValueError("set_size must be symmetric")
        if (self.c_hat < 0).any() or (self.notc_hat < 0).any():
            raise ValueError("c_hat and notc_hat must be nonnegative")
        empty = self.set_size == 0
        if self.c_hat[empty].any() or self.notc_hat[empty].any():
            raise ValueError("c_hat and notc_hat must be 0 where the interventional set is empty")

    @classmethod
    def from_pairs(
        cls,
        M: int,
        pairs: Mapping[Pair, Tuple[float, float, float, float, int]],
    ) -> "InterventionalStats":
        """Build stats from {(k, k2): (c_k, notc_k, c_k2, notc_k2, set_size)} with k < k2.

        Example:
            >>> stats = InterventionalStats.from_pairs(2, {(1, 2): (50, 50, 25, 75, 100)})
        """
        _check_M(M)
        c_hat = np.zeros((M, M))
        notc_hat = np.zeros((M, M))
        set_size = np.zeros((M, M), dtype=np.int64)
        for (k, k2), (c_k, notc_k, c_k2, notc_k2, size) in pairs.items():
            if not 1 <= k < k2 <= M:
                raise ValueError(f"pair ({k}, {k2}) must satisfy 1 <= k < k2 <= M")
            i, j = k - 1, k2 - 1
            c_hat[i, j], notc_hat[i, j] = c_k, notc_k
            c_hat[j, i], notc_hat[j, i] = c_k2, notc_k2
            set_size[i, j] = set_size[j, i] = size
        return cls(M, c_hat, notc_hat, set_size)

    def c(self, k: int, pair: Pair) -> float:
        """ĉ_k for the interventional set of `pair`; k must be one of its positions."""
        other = pair[1] if k == pair[0] else pair[0]
        return float(self.c_hat[k - 1, other - 1])

    def notc(self, k: int, pair: Pair) -> float:
        other = pair[1] if k == pair[0] else pair[0]
        return float(self.notc_hat[k - 1, other - 1])

    def size(self, k: int, k2: int) -> int:
        return int(self.set_size[k - 1, k2 - 1])

    def nonempty_pairs(self) -> List[Pair]:
        return [
            (k, k2)
            for k in range(1, self.M + 1)
            for k2 in range(k + 1, self.M + 1)
            if self.set_size[k - 1, k2 - 1] > 0
        ]

    def exposure(self) -> np.ndarray:
        """Weighted exposure mass ĉ + ¬ĉ; estimates N_{k,k2} at either position."""
        return self.c_hat + self.notc_hat

    def scaled(self, factor: float) -> "InterventionalStats":
        return InterventionalStats(self.M, self.c_hat * factor, self.notc_hat * factor, self.set_size.copy())

    def allclose(self, other: "InterventionalStats", rtol: float = 1e-9, atol: float = 0.0) -> bool:
        return (
            self.M == other.M
            and np.array_equal(self.set_size, other.set_size)
            and np.allclose(self.c_hat, other.c_hat, rtol=rtol, atol=atol)
            and np.allclose(self.notc_hat, other.notc_hat, rtol=rtol, atol=atol)
        )


class _SlotLayout:
    """Per-(query, ranker, position) slots of a ranking table, truncated at M.

    A slot is one displayed position of one ranking. For each slot we keep
    which rankers place the same document at the same position (for w) and
    which other positions the document takes (its interventional partners).
    """

    def __init__(self, table: RankingTable, M: int):
        _check_M(M)
        self.M = M
        self.fingerprint = table.fingerprint()
        self.rankers: List[str] = table.rankers()
        ranker_index = {r: i for i, r in enumerate(self.rankers)}
        self.keys: List[Tuple[str, str]] = sorted(key for key, _ in table.items())
        self.key_index: Dict[Tuple[str, str], int] = {key: i for i, key in enumerate(self.keys)}

        # Positions of each top-M candidate under every ranker of its query (0 = not in top M).
        doc_positions: Dict[Tuple[str, str], np.ndarray] = {}
        for query, ranker in self.keys:
            for pos, doc in enumerate(table.ranking(query, ranker)[:M], start=1):
                positions = doc_positions.setdefault((query, doc), np.zeros(len(self.rankers), dtype=np.int64))
                positions[ranker_index[ranker]] = pos

        num_slots = len(self.keys) * M
        self.valid = np.zeros(num_slots, dtype=bool)
        self.position = np.tile(np.arange(1, M + 1), len(self.keys))
        self.agree = np.zeros((num_slots, len(self.rankers)), dtype=np.int64)
        self.partner = np.zeros((num_slots, M), dtype=np.float64)
        self.slot_doc: List[Optional[Tuple[str, str]]] = [None] * num_slots
        for key_id, (query, ranker) in enumerate(self.keys):
            for pos, doc in enumerate(table.ranking(query, ranker)[:M], start=1):
                slot = key_id * M + pos - 1
                positions = doc_positions[(query, doc)]
                self.valid[slot] = True
                self.slot_doc[slot] = (query, doc)
                self.agree[slot] = positions == pos
                for other in set(positions[positions > 0].tolist()) - {pos}:
                    self.partner[slot, other - 1] = 1.0

        self.set_size = np.zeros((M, M), dtype=np.int64)
        self.sets: Dict[Pair, set] = {}
        for (query, doc), positions in doc_positions.items():
            distinct = sorted(set(positions[positions > 0].tolist()))
            for k in distinct:
                for k2 in distinct:
                    if k != k2:
                        self.set_size[k - 1, k2 - 1] += 1
                        self.sets.setdefault((k, k2), set()).add((query, doc))

    def traffic_vector(self, traffic: Mapping[str, int]) -> np.ndarray:
        return np.array([traffic.get(r, 0) for r in self.rankers], dtype=np.int64)

    def slot_weights(self, traffic_vector: np.ndarray) -> np.ndarray:
        weights = self.agree @ traffic_vector
        return np.where(self.valid, weights, 0).astype(np.int64)


class WeightIndex:
    """w(q, d, k) = sum_i n_i * 1[rank(d | f_i(q)) = k], for k <= M.

    Lookups of (query, doc, k) that no ranker produces return 0.
    """

    def __init__(self, layout: _SlotLayout, traffic: Mapping[str, int]):
        self._layout = layout
        self._traffic = {r: int(n) for r, n in traffic.items() if n}
        self._slot_weights = layout.slot_weights(layout.traffic_vector(traffic))
        self._mapping: Optional[Dict[Tuple[str, str, int], int]] = None

    @property
    def M(self) -> int:
        return self._layout.M

    @property
    def traffic(self) -> Dict[str, int]:
        return dict(self._traffic)

    @property
    def layout(self) -> _SlotLayout:
        """Slot layout of the ranking table the weights were computed from."""
        return self._layout

    @property
    def table_fingerprint(self) -> str:
        return self._layout.fingerprint

    def _as_mapping(self) -> Dict[Tuple[str, str, int], int]:
        if self._mapping is None:
            mapping = {}
            for slot, qd in enumerate(self._layout.slot_doc):
                if qd is not None:
                    mapping[(qd[0], qd[1], int(self._layout.position[slot]))] = int(self._slot_weights[slot])
            self._mapping = mapping
        return self._mapping

    def __getitem__(self, key: Tuple[str, str, int]) -> int:
        return self._as_mapping().get(key, 0)

    def get(self, query: str, doc: str, k: int) -> int:
        return self[(query, doc, k)]

    def items(self):
        return sorted(self._as_mapping().items())


def compute_weights(table: RankingTable, traffic: Mapping[str, int], M: int) -> WeightIndex:
    """Assignment weights of every (query, doc, position) for positions <= M.

    Raises:
        ConfigError: If M < 2 or a traffic count is negative.

    Example:
        >>> table = RankingTable({("q", "f1"): ["x", "d"], ("q", "f2"): ["x", "y", "d"]})
        >>> compute_weights(table, {"f1": 100, "f2": 300}, 3).get("q", "d", 3)
        300
    """
    _check_M(M)
    negative = [r for r, n in traffic.items() if n < 0]
    if negative:
        raise ConfigError("traffic", f"traffic counts must be >= 0 (ranker {negative[0]!r})")
    return WeightIndex(_SlotLayout(table, M), traffic)


def build_interventional_sets(table: RankingTable, M: int) -> Dict[Pair, FrozenSet[Tuple[str, str]]]:
    """Membership of every S_{k,k2}, k != k2 in [M]; empty sets included."""
    layout = _SlotLayout(table, M)
    return {
        (k, k2): frozenset(layout.sets.get((k, k2), ()))
        for k in range(1, M + 1)
        for k2 in range(1, M + 1)
        if k != k2
    }


@dataclass(frozen=True, eq=False)
class _SlotCounts:
    displays: np.ndarray
    clicks: np.ndarray

    def merge(self, other: "_SlotCounts") -> "_SlotCounts":
        return _SlotCounts(self.displays + other.displays, self.clicks + other.clicks)


class EncodedLog:
    """Impression log in array form against a slot layout.

    Used by build_stats and by the bootstrap, which re-derives traffic and
    statistics for many resamples of the same log.
    """

    def __init__(self, log: ImpressionLog, layout: _SlotLayout):
        self.layout = layout
        M = layout.M
        ranker_index = {r: i for i, r in enumerate(layout.rankers)}
        n = len(log)
        self.key_ids = np.empty(n, dtype=np.int64)
        self.ranker_ids = np.empty(n, dtype=np.int64)
        self.clicked = np.zeros((n, M), dtype=bool)
        for i, imp in enumerate(log):
            key = (imp.query, imp.ranker)
            if key not in layout.key_index:
                raise ProvenanceError(f"impression references ({imp.query!r}, {imp.ranker!r}) missing from the table")
            self.key_ids[i] = layout.key_index[key]
            self.ranker_ids[i] = ranker_index[imp.ranker]
            for _, pos in imp.clicks:
                if pos <= M:
                    self.clicked[i, pos - 1] = True

    def __len__(self) -> int:
        return len(self.key_ids)

    def traffic_vector(self, indices: Optional[np.ndarray] = None) -> np.ndarray:
        ranker_ids = self.ranker_ids if indices is None else self.ranker_ids[indices]
        return np.bincount(ranker_ids, minlength=len(self.layout.rankers)).astype(np.int64)

    def counts(self, indices: Optional[np.ndarray] = None) -> _SlotCounts:
        key_ids = self.key_ids if indices is None else self.key_ids[indices]
        clicked = self.clicked if indices is None else self.clicked[indices]
        M = self.layout.M
        num_keys = len(self.layout.keys)
        per_key = np.bincount(key_ids, minlength=num_keys).astype(np.int64)
        displays = np.repeat(per_key, M) * self.layout.valid
        rows, cols = np.nonzero(clicked)
        clicks = np.bincount(key_ids[rows] * M + cols, minlength=num_keys * M).astype(np.int64)
        return _SlotCounts(displays, clicks * self.layout.valid)

    def partitioned_counts(self, partitions: int, jobs: int = 1) -> _SlotCounts:
        bounds = np.linspace(0, len(self), max(1, partitions) + 1).astype(np.int64)
        chunks = [np.arange(bounds[i], bounds[i + 1]) for i in range(len(bounds) - 1)]
        parts = parallel_map(self.counts, chunks, jobs)
        return pairwise_reduce(parts, _SlotCounts.merge)

    def stats(
        self,
        indices: Optional[np.ndarray] = None,
        counts: Optional[_SlotCounts] = None,
        traffic_vector: Optional[np.ndarray] = None,
    ) -> InterventionalStats:
        layout = self.layout
        if counts is None:
            counts = self.counts(indices)
        if traffic_vector is None:
            traffic_vector = self.traffic_vector(indices)
        weights = layout.slot_weights(traffic_vector).astype(np.float64)
        shown = weights > 0
        click_rate = np.zeros_like(weights)
        skip_rate = np.zeros_like(weights)
        # 0/0 := 0; a displayed slot always has positive weight.
        click_rate[shown] = counts.clicks[shown] / weights[shown]
        skip_rate[shown] = (counts.displays[shown] - counts.clicks[shown]) / weights[shown]

        M = layout.M
        c_hat = np.zeros((M, M))
        notc_hat = np.zeros((M, M))
        for k in range(1, M + 1):
            rows = (layout.position == k) & shown
            if rows.any():
                partner = layout.partner[rows]
                c_hat[k - 1] = (partner * click_rate[rows, None]).sum(axis=0)
                notc_hat[k - 1] = (partner * skip_rate[rows, None]).sum(axis=0)
        return InterventionalStats(M, c_hat, notc_hat, layout.set_size.copy())


def encode_log(log: ImpressionLog, table: RankingTable, M: int) -> EncodedLog:
    """Array form of log against table, for repeated stats over index resamples."""
    return EncodedLog(log, _SlotLayout(table, M))


def build_stats(
    log: ImpressionLog,
    table: RankingTable,
    weights: WeightIndex,
    M: int,
    jobs: int = 1,
    partitions: Optional[int] = None,
) -> InterventionalStats:
    """Accumulate ĉ and ¬ĉ over the log.

    Partial results are integer display/click counts per slot, so any number
    of partitions yields bit-identical statistics.

    Raises:
        ProvenanceError: If weights were computed from a different table,
            traffic or cutoff M.
    """
    _check_M(M)
    if weights.M != M:
        raise ProvenanceError(f"mismatched table/weights provenance: weights use M={weights.M}, requested M={M}")
    if weights.table_fingerprint != table.fingerprint():
        raise ProvenanceError("mismatched table/weights provenance: weights were computed from another ranking table")
    log_traffic = {r: n for r, n in log.traffic.items() if n}
    if weights.traffic != log_traffic:
        raise ProvenanceError(
            f"mismatched table/weights provenance: weights traffic {weights.traffic} != log traffic {log_traffic}"
        )

    encoded = EncodedLog(log, weights.layout)
    counts = encoded.partitioned_counts(partitions or jobs, jobs)
    stats = encoded.stats(counts=counts, traffic_vector=weights.layout.traffic_vector(log_traffic))
    logger.info(
        "harvested %d nonempty interventional pairs from %d impressions (M=%d)",
        len(stats.nonempty_pairs()), len(log), M,
    )
    return stats


def harvest(log: ImpressionLog, table: RankingTable, M: int, jobs: int = 1) -> InterventionalStats:
    """compute_weights followed by build_stats, using the log's traffic."""
    weights = compute_weights(table, log.traffic, M)
    return build_stats(log, table, weights, M, jobs=jobs)


def expected_stats(
    table: RankingTable,
    traffic: Mapping[str, int],
    click_relevance: Mapping[Tuple[str, str], float],
    propensities: Sequence[float],
    M: int,
) -> InterventionalStats:
    """Exact expectations of ĉ and ¬ĉ for uniformly drawn queries.

    E[ĉ_k] = p_k r_{k,k2} and E[¬ĉ_k] = N_{k,k2} - p_k r_{k,k2}, where
    r sums the click relevance (relevance including click noise) and N counts
    the (query, doc) pairs of S_{k,k2}, both averaged over queries. A
    placement contributes only if some ranker with traffic produces it.
    """
    layout = _SlotLayout(table, M)
    weights = layout.slot_weights(layout.traffic_vector(traffic))
    queries = table.queries()
    reachable = {}
    for slot, qd in enumerate(layout.slot_doc):
        if qd is not None and weights[slot] > 0:
            reachable[(qd[0], qd[1], int(layout.position[slot]))] = True

    r = np.zeros((M, M))
    N = np.zeros((M, M))
    for (k, k2), members in layout.sets.items():
        for query, doc in sorted(members):
            if reachable.get((query, doc, k)):
                r[k - 1, k2 - 1] += click_relevance.get((query, doc), 0.0)
                N[k - 1, k2 - 1] += 1.0
    r /= len(queries)
    N /= len(queries)
    p = np.asarray(propensities[:M], dtype=np.float64)[:, None]
    return InterventionalStats(M, p * r, N - p * r, layout.set_size.copy())


def set_size_table(stats: InterventionalStats) -> pd.DataFrame:
    """Upper-triangular |S_{k,k2}| table, rows k and columns k2 (1-based)."""
    positions = list(range(1, stats.M + 1))
    table = pd.DataFrame(stats.set_size, index=positions, columns=positions)
    table.index.name = "k"
    table.columns.name = "k_prime"
    return table.where(np.triu(np.ones_like(stats.set_size, dtype=bool), k=1))


def same_rank_fraction(table: RankingTable, M: int) -> float:
    """Fraction of top-M documents every ranker puts at the same rank, averaged over queries."""
    fractions = []
    for query in table.queries():
        rankers = table.rankers_for(query)
        if len(rankers) < 2:
            continue
        docs = table.candidates(query, M)
        same = sum(
            1 for doc in docs if len({table.rank(query, r, doc) for r in rankers}) == 1
        )
        fractions.append(same / len(docs) if docs else 1.0)
    return float(np.mean(fractions)) if fractions else 1.0


# =============================================================================
# Matrix file
# =============================================================================


def write_stats(stats: InterventionalStats, path: PathLike) -> int:
    header = {"format": STATS_FORMAT, "version": STATS_VERSION, "M": stats.M}
    records = [header]
    for k in range(1, stats.M + 1):
        for k2 in range(1, stats.M + 1):
            if k != k2:
                records.append(
                    {
                        "k": k,
                        "k_prime": k2,
                        "c_hat": float(stats.c_hat[k - 1, k2 - 1]),
                        "notc_hat": float(stats.notc_hat[k - 1, k2 - 1]),
                        "set_size": int(stats.set_size[k - 1, k2 - 1]),
                    }
                )
    return write_jsonl(path, records)


def read_stats(path: PathLike) -> InterventionalStats:
    records = iter_jsonl(path)
    try:
        line_no, header = next(records)
    except StopIteration:
        raise LogFormatError("empty stats file", str(path)) from None
    if header.get("format") != STATS_FORMAT or "M" not in header:
        raise LogFormatError(f"not a {STATS_FORMAT} file (missing header)", str(path), line_no)
    M = header["M"]
    _check_M(M)
    c_hat = np.zeros((M, M))
    notc_hat = np.zeros((M, M))
    set_size = np.zeros((M, M), dtype=np.int64)
    for line_no, record in records:
        try:
            i, j = int(record["k"]) - 1, int(record["k_prime"]) - 1
            if not (0 <= i < M and 0 <= j < M) or i == j:
                raise ValueError("position out of range")
            c_hat[i, j] = float(record["c_hat"])
            notc_hat[i, j] = float(record["notc_hat"])
            set_size[i, j] = int(record["set_size"])
        except (KeyError, TypeError, ValueError) as e:
            raise LogFormatError(f"malformed stats record: {e}", str(path), line_no) from e
    try:
        return InterventionalStats(M, c_hat, notc_hat, set_size)
    except ValueError as e:
        raise LogFormatError(f"invalid stats: {e}", str(path)) from e
