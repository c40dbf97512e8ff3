"""Configuration management for the pbmharvest CLI.

Config priority (highest to lowest):
1. Command-line flags
2. Environment variables (PBMHARVEST_<KEY>)
3. [profiles.<name>] section of the config file
4. [default] section of the config file
5. Built-in defaults
"""

import logging
import os
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Dict, Mapping, Optional

try:
    import tomllib
except ImportError:
    import tomli as tomllib

from ..estimators import AllPairsOptions
from ..exceptions import ConfigError
from ..simulator import SimConfig, default_traffic

logger = logging.getLogger(__name__)

ENV_PREFIX = "PBMHARVEST_"
CONFIG_FILENAME = ".pbmharvestrc"


@dataclass
class Config:
    """Fully resolved settings of one CLI run."""

    seed: int = 0
    jobs: int = 1
    M: int = 10
    eta: float = 1.0
    eps_minus: float = 0.1
    queries: int = 1000
    candidates: int = 20
    relevant_fraction: float = 0.3
    relevance_signal: float = 1.5
    ranker_noise: float = 0.25
    rankers: int = 2
    impressions_per_ranker: int = 100_000
    p_swap: float = 0.5
    max_iter: int = 10_000
    tol: float = 1e-9
    weighting: str = "printed"
    B: int = 1000
    level: float = 0.95
    profile: str = "default"
    config_path: str = ""

    def sim_config(self, swap_queries: Optional[int] = None) -> SimConfig:
        if self.rankers < 1:
            raise ConfigError("rankers", f"rankers must be >= 1, got {self.rankers}")
        if self.impressions_per_ranker < 0:
            raise ConfigError("impressions_per_ranker", "impressions_per_ranker must be ≥ 0")
        return SimConfig(
            num_queries=self.queries,
            candidates_per_query=self.candidates,
            relevant_fraction=self.relevant_fraction,
            eta=self.eta,
            eps_minus=self.eps_minus,
            ranker_noise=self.ranker_noise,
            traffic=default_traffic(self.rankers, self.impressions_per_ranker),
            M=self.M,
            seed=self.seed,
            relevance_signal=self.relevance_signal,
            p_swap=self.p_swap,
            swap_queries=swap_queries,
        ).validate()

    def allpairs_options(self) -> AllPairsOptions:
        return AllPairsOptions(max_iter=self.max_iter, tol=self.tol, weighting=self.weighting).validate()

    def check_jobs(self) -> int:
        if self.jobs < 1:
            raise ConfigError("jobs", f"jobs must be >= 1, got {self.jobs}")
        return self.jobs

    def as_dict(self) -> Dict[str, Any]:
        return asdict(self)


KEYS = {name: type(value) for name, value in asdict(Config()).items() if name not in ("profile", "config_path")}
_KIND_NAMES = {int: "an integer", float: "a number", str: "a string"}


def _coerce(key: str, value: Any) -> Any:
    kind = KEYS[key]
    try:
        if kind is int:
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise ValueError
            return int(value)
        if kind is float:
            if isinstance(value, bool):
                raise ValueError
            return float(value)
        return str(value)
    except (TypeError, ValueError):
        raise ConfigError(key, f"{key} must be {_KIND_NAMES[kind]}, got {value!r}") from None


def get_config_path(explicit: Optional[Path] = None) -> Path:
    """Get the config file path."""
    if explicit:
        return Path(explicit)

    env_path = os.environ.get(f"{ENV_PREFIX}CONFIG")
    if env_path:
        return Path(env_path)

    local_config = Path(CONFIG_FILENAME)
    if local_config.exists():
        return local_config

    return Path.home() / CONFIG_FILENAME


def load_config_file(config_path: Optional[Path] = None) -> dict:
    """Load configuration from TOML file; a missing file is an empty config."""
    path = get_config_path(config_path)

    if not path.exists():
        if config_path:
            raise ConfigError("config", f"config file not found: {path}")
        return {}

    try:
        with open(path, "rb") as f:
            return tomllib.load(f)
    except (OSError, tomllib.TOMLDecodeError) as e:
        raise ConfigError("config", f"cannot read config file {path}: {e}") from e


def _section(values: Mapping[str, Any], where: str) -> Dict[str, Any]:
    section = {}
    for key, value in values.items():
        if key not in KEYS:
            logger.warning("ignoring unknown config key %r in %s", key, where)
            continue
        section[key] = _coerce(key, value)
    return section


def load_config(
    overrides: Optional[Mapping[str, Any]] = None,
    profile: Optional[str] = None,
    config_path: Optional[Path] = None,
) -> Config:
    """Load configuration from all sources with proper priority.

    Args:
        overrides: Values from command-line flags; None means "not given".
        profile: Profile name (else $PBMHARVEST_PROFILE, else "default").
        config_path: Explicit config file (else discovery).
    """
    file_config = load_config_file(config_path)
    selected_profile = profile or os.environ.get(f"{ENV_PREFIX}PROFILE") or "default"

    merged: Dict[str, Any] = {}
    merged.update(_section(file_config.get("default", {}), "[default]"))
    profiles = file_config.get("profiles", {})
    if selected_profile != "default" and selected_profile not in profiles:
        raise ConfigError("profile", f"profile {selected_profile!r} not found in config file")
    merged.update(_section(profiles.get(selected_profile, {}), f"[profiles.{selected_profile}]"))

    for key in KEYS:
        env_value = os.environ.get(f"{ENV_PREFIX}{key.upper()}")
        if env_value is not None and env_value != "":
            merged[key] = _coerce(key, env_value)

    for key, value in (overrides or {}).items():
        if value is not None:
            merged[key] = _coerce(key, value)

    source = get_config_path(config_path)
    return Config(
        **merged,
        profile=selected_profile,
        config_path=str(source) if source.exists() else "",
    )


def create_example_config() -> str:
    """Return example config file content."""
    return """# pbmharvest configuration
# Save this file as ~/.pbmharvestrc or ./.pbmharvestrc

[default]
seed = 0
jobs = 1
M = 10
# Simulation
eta = 1.0
eps_minus = 0.1
queries = 1000
candidates = 20
relevant_fraction = 0.3
relevance_signal = 1.5
ranker_noise = 0.25
rankers = 2
impressions_per_ranker = 100000
p_swap = 0.5
# AllPairs optimizer
max_iter = 10000
tol = 1e-9
weighting = "printed"
# Bootstrap
B = 1000
level = 0.95

# [profiles.quick]
# impressions_per_ranker = 20000
# B = 200

# [profiles.severe]
# eta = 2.0
# eps_minus = 0.3
"""
