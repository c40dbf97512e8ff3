__version__ = "0.1.0"

from .estimators import (
    AllPairsOptions,
    PropensityCurve,
    adjacent_chain,
    all_pairs_estimate,
    estimate,
    pivot_one,
)
from .exceptions import (
    ConfigError,
    DomainError,
    EstimationError,
    HarvestError,
    LogConsistencyError,
    LogFormatError,
    NoInterventionalDataError,
    ProvenanceError,
)
from .interventions import InterventionalStats, build_stats, compute_weights, harvest
from .logdata import ImpressionLog, RankingTable, parse_impressions, parse_rankings
from .simulator import SimConfig, generate_world, simulate_clicks
