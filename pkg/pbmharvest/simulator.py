"""Synthetic PBM worlds, click logs and swap experiments.

A world holds binary relevances and a base quality score per candidate
document. Each ranker sorts candidates by the base score plus its own
Gaussian noise, scaled by ``ranker_noise``; at 0 all rankers coincide.

Clicks follow the position-based model: a document shown at rank r <= M is
clicked with probability p_r if relevant and p_r * eps_minus otherwise, with
p_r = (1/r)^eta.
"""

import json
import logging
from dataclasses import dataclass, field, replace
from typing import Dict, List, Mapping, Optional, Tuple

import numpy as np

from .estimators.curve import PropensityCurve
from .exceptions import ConfigError, LogFormatError
from .interventions import InterventionalStats, expected_stats
from .logdata import ARM_KEPT, ARM_SWAPPED, Impression, ImpressionLog, RankingTable, SwapImpression, SwapLog
from .utils import (
    STREAM_CLICKS,
    STREAM_SWAP,
    STREAM_WORLD,
    PathLike,
    parallel_map,
    seed_stream,
    stream_rng,
)

logger = logging.getLogger(__name__)

# Impressions per independently seeded simulation block. Changing it changes
# the simulated logs for a given seed.
CLICK_BLOCK_SIZE = 8192

GROUND_TRUTH_KEYS = ("M", "eta", "eps_minus", "propensities", "relevance")


def default_traffic(rankers: int = 2, impressions_per_ranker: int = 100_000) -> Dict[str, int]:
    return {f"f{i + 1}": impressions_per_ranker for i in range(rankers)}


@dataclass(frozen=True)
class SimConfig:
    """Synthetic-world parameters.

    Attributes:
        num_queries: Number of queries, drawn uniformly per impression.
        candidates_per_query: Candidate documents per query; must be >= M.
        relevant_fraction: Probability that a candidate is relevant.
        eta: Bias severity; p_r = (1/r)^eta.
        eps_minus: Click noise on irrelevant documents.
        ranker_noise: Scale of the per-ranker score perturbation (similarity knob).
            The default 0.25 leaves two rankers agreeing on the rank of
            roughly a third of their top-M documents; at 1.0 that share falls
            below 0.1.
        traffic: Impressions per ranker id (n_i).
        M: Displayed positions.
        seed: Master seed for every random stream.
        relevance_signal: How strongly base scores track relevance.
        p_swap: Probability an assigned query lands in the swapped arm.
        swap_queries: Queries assigned to a swap experiment (None = total traffic).
    """

    num_queries: int = 1000
    candidates_per_query: int = 20
    relevant_fraction: float = 0.3
    eta: float = 1.0
    eps_minus: float = 0.1
    ranker_noise: float = 0.25
    traffic: Mapping[str, int] = field(default_factory=default_traffic)
    M: int = 10
    seed: int = 0
    relevance_signal: float = 1.5
    p_swap: float = 0.5
    swap_queries: Optional[int] = None

    def validate(self) -> "SimConfig":
        """Return self, or raise ConfigError naming the first invalid field."""
        if self.M < 2:
            raise ConfigError("M", f"M must be >= 2, got {self.M}")
        if self.num_queries < 1:
            raise ConfigError("queries", f"queries must be >= 1, got {self.num_queries}")
        if self.candidates_per_query < self.M:
            raise ConfigError(
                "candidates",
                f"candidates must be >= M ({self.M}), got {self.candidates_per_query}",
            )
        if not 0 < self.relevant_fraction < 1:
            raise ConfigError("relevant_fraction", f"relevant_fraction must be in (0, 1), got {self.relevant_fraction}")
        if not self.eta >= 0:
            raise ConfigError("eta", "eta must be ≥ 0")
        if not 0 <= self.eps_minus <= 1:
            raise ConfigError("eps_minus", f"eps_minus must be in [0, 1], got {self.eps_minus}")
        if not self.ranker_noise >= 0:
            raise ConfigError("ranker_noise", "ranker_noise must be ≥ 0")
        if not self.relevance_signal >= 0:
            raise ConfigError("relevance_signal", "relevance_signal must be ≥ 0")
        if not self.traffic:
            raise ConfigError("rankers", "at least one ranker is required")
        for ranker, n in self.traffic.items():
            if n < 0:
                raise ConfigError("traffic", f"traffic of ranker {ranker!r} must be ≥ 0, got {n}")
        if not 0 <= self.p_swap <= 1:
            raise ConfigError("p_swap", f"p_swap must be in [0, 1], got {self.p_swap}")
        if self.swap_queries is not None and self.swap_queries < 0:
            raise ConfigError("swap_queries", f"swap_queries must be ≥ 0, got {self.swap_queries}")
        if self.seed < 0:
            raise ConfigError("seed", f"seed must be ≥ 0, got {self.seed}")
        return self

    @property
    def rankers(self) -> List[str]:
        return sorted(self.traffic)

    @property
    def total_traffic(self) -> int:
        return int(sum(self.traffic.values()))

    def replace(self, **changes) -> "SimConfig":
        return replace(self, **changes)


@dataclass(frozen=True, eq=False)
class SyntheticWorld:
    """Queries, candidates, relevance bits, base scores and the rankers' rankings.

    ``relevance`` and ``base_scores`` are (num_queries, candidates) arrays;
    ``orders[i, q]`` lists candidate indices in ranker i's order.
    """

    queries: Tuple[str, ...]
    docs: Tuple[str, ...]
    rankers: Tuple[str, ...]
    relevance: np.ndarray
    base_scores: np.ndarray
    orders: np.ndarray
    table: RankingTable

    def relevance_map(self) -> Dict[Tuple[str, str], int]:
        return {
            (q, d): int(self.relevance[qi, di])
            for qi, q in enumerate(self.queries)
            for di, d in enumerate(self.docs)
        }


def generate_world(cfg: SimConfig) -> SyntheticWorld:
    """Build a world and one ranking per (query, ranker); deterministic in cfg.seed.

    Example:
        >>> world = generate_world(SimConfig(num_queries=5, ranker_noise=0.0))
        >>> world.table.ranking("q1", "f1") == world.table.ranking("q1", "f2")
        True
    """
    cfg.validate()
    rng = stream_rng(cfg.seed, STREAM_WORLD)
    Q, C = cfg.num_queries, cfg.candidates_per_query
    relevance = (rng.random((Q, C)) < cfg.relevant_fraction).astype(np.int8)
    base_scores = cfg.relevance_signal * relevance + rng.standard_normal((Q, C))

    queries = tuple(f"q{i}" for i in range(Q))
    docs = tuple(f"d{j}" for j in range(C))
    rankers = tuple(cfg.rankers)
    orders = np.empty((len(rankers), Q, C), dtype=np.int64)
    for i in range(len(rankers)):
        scores = base_scores + cfg.ranker_noise * rng.standard_normal((Q, C))
        orders[i] = np.argsort(-scores, axis=1, kind="stable")

    table = RankingTable(
        {
            (queries[q], ranker): [docs[j] for j in orders[i, q]]
            for i, ranker in enumerate(rankers)
            for q in range(Q)
        }
    )
    logger.debug("generated world: %d queries, %d candidates, rankers %s", Q, C, list(rankers))
    return SyntheticWorld(queries, docs, rankers, relevance, base_scores, orders, table)


def propensities(cfg: SimConfig) -> np.ndarray:
    ranks = np.arange(1, cfg.M + 1, dtype=np.float64)
    return (1.0 / ranks) ** cfg.eta


def true_curve(cfg: SimConfig) -> PropensityCurve:
    return PropensityCurve(tuple(float(p) for p in propensities(cfg)), "truth")


def click_probabilities(rel: np.ndarray, cfg: SimConfig) -> np.ndarray:
    """Click probability of documents with relevance bits `rel` shown at ranks 1..M (last axis)."""
    return propensities(cfg) * (rel + cfg.eps_minus * (1 - rel))


def click_relevance(world: SyntheticWorld, cfg: SimConfig) -> Dict[Tuple[str, str], float]:
    """rel + eps_minus * (1 - rel): the relevance a click reveals once examined."""
    return {qd: rel + cfg.eps_minus * (1 - rel) for qd, rel in world.relevance_map().items()}


def expected_world_stats(
    world: SyntheticWorld,
    cfg: SimConfig,
    traffic: Optional[Mapping[str, int]] = None,
) -> InterventionalStats:
    """Exact expected interventional statistics of the world under cfg."""
    return expected_stats(
        world.table,
        cfg.traffic if traffic is None else traffic,
        click_relevance(world, cfg),
        propensities(cfg),
        cfg.M,
    )


def _simulate_block(args) -> Tuple[np.ndarray, np.ndarray]:
    world, cfg, ranker_ids, seed_seq = args
    rng = np.random.default_rng(seed_seq)
    query_ids = rng.integers(0, len(world.queries), size=len(ranker_ids))
    shown = world.orders[ranker_ids, query_ids, : cfg.M]
    rel = world.relevance[query_ids[:, None], shown]
    clicked = rng.random(shown.shape) < click_probabilities(rel, cfg)
    return query_ids, clicked


def simulate_clicks(world: SyntheticWorld, cfg: SimConfig, jobs: int = 1) -> ImpressionLog:
    """Simulate cfg.traffic impressions per ranker in a random interleaving.

    Every ranker gets exactly its traffic count; queries are drawn uniformly
    and independently of the ranker. Output does not depend on `jobs`.
    """
    cfg.validate()
    assign_seq, blocks_seq = seed_stream(cfg.seed, STREAM_CLICKS).spawn(2)
    counts = [int(cfg.traffic[r]) for r in world.rankers]
    ranker_ids = np.repeat(np.arange(len(world.rankers)), counts)
    np.random.default_rng(assign_seq).shuffle(ranker_ids)

    starts = list(range(0, len(ranker_ids), CLICK_BLOCK_SIZE))
    block_seeds = blocks_seq.spawn(len(starts))
    blocks = [
        (world, cfg, ranker_ids[s : s + CLICK_BLOCK_SIZE], block_seeds[b])
        for b, s in enumerate(starts)
    ]
    results = parallel_map(_simulate_block, blocks, jobs)

    impressions = []
    for (_, _, block_rankers, _), (query_ids, clicked) in zip(blocks, results):
        for ranker_id, query_id, row in zip(block_rankers, query_ids, clicked):
            order = world.orders[ranker_id, query_id]
            clicks = frozenset((world.docs[order[pos]], int(pos) + 1) for pos in np.flatnonzero(row))
            impressions.append(Impression(world.queries[query_id], world.rankers[ranker_id], clicks))
    log = ImpressionLog(impressions, rankers=world.rankers)
    logger.info("simulated %d impressions with %d clicks", len(log), log.total_clicks())
    return log


def simulate_swap_experiment(
    world: SyntheticWorld,
    cfg: SimConfig,
    k: int,
    pair: Optional[Tuple[int, int]] = None,
) -> SwapLog:
    """Randomized Swap(1, k) experiment, or Swap(pair) when pair is given.

    Each assigned query picks a ranker uniformly; with probability p_swap the
    documents at the two positions trade places before clicks are drawn.
    """
    cfg.validate()
    a, b = pair if pair is not None else (1, k)
    if not 1 <= a <= b <= cfg.M:
        raise ConfigError("swap_k", f"swap positions must satisfy 1 <= k <= k' <= M ({cfg.M}), got ({a}, {b})")
    n = cfg.total_traffic if cfg.swap_queries is None else cfg.swap_queries
    rng = stream_rng(cfg.seed, STREAM_SWAP)
    ranker_ids = rng.integers(0, len(world.rankers), size=n)
    query_ids = rng.integers(0, len(world.queries), size=n)
    swapped = rng.random(n) < cfg.p_swap

    shown = world.orders[ranker_ids, query_ids, : cfg.M].copy()
    shown[swapped, a - 1], shown[swapped, b - 1] = shown[swapped, b - 1], shown[swapped, a - 1]
    rel = world.relevance[query_ids[:, None], shown]
    clicked = rng.random(shown.shape) < click_probabilities(rel, cfg)

    impressions = []
    for i in range(n):
        clicks = frozenset((world.docs[shown[i, pos]], int(pos) + 1) for pos in np.flatnonzero(clicked[i]))
        impressions.append(
            SwapImpression(
                query=world.queries[query_ids[i]],
                ranker=world.rankers[ranker_ids[i]],
                pair=(a, b),
                arm=ARM_SWAPPED if swapped[i] else ARM_KEPT,
                clicks=clicks,
            )
        )
    logger.info("simulated Swap(%d,%d): %d queries, %d swapped", a, b, n, int(swapped.sum()))
    return SwapLog(tuple(impressions))


# =============================================================================
# Ground truth file
# =============================================================================


@dataclass(frozen=True)
class GroundTruth:
    M: int
    eta: float
    eps_minus: float
    propensities: Tuple[float, ...]
    relevance: Dict[Tuple[str, str], int]

    def curve(self) -> PropensityCurve:
        return PropensityCurve.from_raw(self.propensities, "truth")


def ground_truth(world: SyntheticWorld, cfg: SimConfig) -> GroundTruth:
    return GroundTruth(
        M=cfg.M,
        eta=float(cfg.eta),
        eps_minus=float(cfg.eps_minus),
        propensities=tuple(float(p) for p in propensities(cfg)),
        relevance=world.relevance_map(),
    )


def write_ground_truth(truth: GroundTruth, path: PathLike) -> None:
    payload = {
        "M": truth.M,
        "eta": truth.eta,
        "eps_minus": truth.eps_minus,
        "propensities": list(truth.propensities),
        "relevance": [
            {"query": q, "doc": d, "rel": rel} for (q, d), rel in sorted(truth.relevance.items())
        ],
    }
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(payload, f, indent=2)
        f.write("\n")


def read_ground_truth(path: PathLike) -> GroundTruth:
    try:
        with open(path, "r", encoding="utf-8") as f:
            payload = json.load(f)
    except json.JSONDecodeError as e:
        raise LogFormatError(f"malformed ground-truth file: {e.msg}", str(path), e.lineno) from e
    if not isinstance(payload, dict):
        raise LogFormatError("ground-truth file must hold a JSON object", str(path))
    missing = [key for key in GROUND_TRUTH_KEYS if key not in payload]
    if missing:
        raise LogFormatError(f"ground-truth file lacks {', '.join(missing)}", str(path))
    try:
        relevance = {(r["query"], r["doc"]): int(r["rel"]) for r in payload["relevance"]}
        return GroundTruth(
            M=int(payload["M"]),
            eta=float(payload["eta"]),
            eps_minus=float(payload["eps_minus"]),
            propensities=tuple(float(p) for p in payload["propensities"]),
            relevance=relevance,
        )
    except (KeyError, TypeError, ValueError) as e:
        raise LogFormatError(f"malformed ground-truth file: {e}", str(path)) from e
