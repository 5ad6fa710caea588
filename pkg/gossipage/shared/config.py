"""
Run settings for gossipage.

Every tunable of the solvers, the simulator and the harness lives in one
typed `GossipAgeConfig`, read from config/environments/<env>.json and
patched by GOSSIPAGE_* variables:

    cap = get_config().limits.exact_memo_cap
    seed = get_config_manager().get('simulation.seed')
"""

import copy
import json
import os
from typing import Any, Dict, Optional
from dataclasses import dataclass, field
from pathlib import Path

from dotenv import load_dotenv

from .logging_utils import get_logger

logger = get_logger(__name__)


@dataclass
class RatesConfig:
    """Default Poisson rates for built topologies."""
    gossip_rate: float = 1.0
    source_rate: float = 1.0


@dataclass
class LimitsConfig:
    """Size caps that keep exact work and graph construction bounded."""
    max_hypercube_dim: int = 20
    max_nodes: int = 2_000_000
    enumeration_size_cap: int = 30
    anchored_enumeration_cap: int = 20
    exact_memo_cap: int = 5_000_000


@dataclass
class SimulationConfig:
    """Monte Carlo defaults."""
    warmup_fraction: float = 0.2
    min_source_updates: int = 100_000
    replications: int = 8
    confidence: float = 0.95
    seed: int = 20240101
    batch_size: int = 65_536
    workers: int = 1


@dataclass
class BoundsConfig:
    """Bound chain evaluation settings."""
    chain_store_limit: int = 100_000
    chunk_size: int = 1 << 20
    floor_ring_degree: bool = True
    closed_form_slack: float = 2.0


@dataclass
class HarnessConfig:
    """Experiment runner settings."""
    schema_version: int = 1
    workers: int = 1
    soundness_sigma: float = 3.0
    timestamp_header: bool = True


@dataclass
class LoggingConfig:
    """Logging configuration."""
    level: str = "WARNING"
    service_name: str = "gossipage"


@dataclass
class GossipAgeConfig:
    """Main configuration class containing all settings."""
    environment: str = "dev"
    rates: RatesConfig = field(default_factory=RatesConfig)
    limits: LimitsConfig = field(default_factory=LimitsConfig)
    simulation: SimulationConfig = field(default_factory=SimulationConfig)
    bounds: BoundsConfig = field(default_factory=BoundsConfig)
    harness: HarnessConfig = field(default_factory=HarnessConfig)
    logging: LoggingConfig = field(default_factory=LoggingConfig)


_SECTIONS = {
    'rates': RatesConfig,
    'limits': LimitsConfig,
    'simulation': SimulationConfig,
    'bounds': BoundsConfig,
    'harness': HarnessConfig,
    'logging': LoggingConfig,
}


class ConfigManager:
    """Configuration manager for loading and accessing configuration."""

    ENV_MAPPINGS = {
        'GOSSIPAGE_LAMBDA': 'rates.gossip_rate',
        'GOSSIPAGE_LAMBDA_E': 'rates.source_rate',
        'GOSSIPAGE_MAX_NODES': 'limits.max_nodes',
        'GOSSIPAGE_MAX_HYPERCUBE_DIM': 'limits.max_hypercube_dim',
        'GOSSIPAGE_ENUMERATION_CAP': 'limits.enumeration_size_cap',
        'GOSSIPAGE_ANCHORED_CAP': 'limits.anchored_enumeration_cap',
        'GOSSIPAGE_EXACT_MEMO_CAP': 'limits.exact_memo_cap',
        'GOSSIPAGE_SEED': 'simulation.seed',
        'GOSSIPAGE_REPLICATIONS': 'simulation.replications',
        'GOSSIPAGE_BATCH_SIZE': 'simulation.batch_size',
        'GOSSIPAGE_WORKERS': 'simulation.workers',
        'GOSSIPAGE_CHAIN_STORE_LIMIT': 'bounds.chain_store_limit',
        'GOSSIPAGE_FLOOR_RING_DEGREE': 'bounds.floor_ring_degree',
        'GOSSIPAGE_HARNESS_WORKERS': 'harness.workers',
        'GOSSIPAGE_TIMESTAMP_HEADER': 'harness.timestamp_header',
        'GOSSIPAGE_LOG_LEVEL': 'logging.level',
    }

    def __init__(self, environment: Optional[str] = None, config_file: Optional[Path] = None):
        load_dotenv(override=False)
        self.environment = environment or os.environ.get('GOSSIPAGE_ENV', 'dev')
        self.config_file = Path(config_file) if config_file else None
        self._config_cache: Optional[GossipAgeConfig] = None
        self._raw_config_cache: Optional[Dict[str, Any]] = None

    def _load_raw_config(self) -> Dict[str, Any]:
        """Load raw configuration from the environment file and variables."""
        if self._raw_config_cache is not None:
            return self._raw_config_cache

        config: Dict[str, Any] = {}

        config_file = self.config_file or self._find_config_file()
        if config_file and config_file.exists():
            try:
                with open(config_file, 'r') as f:
                    config.update(json.load(f))
            except (FileNotFoundError, json.JSONDecodeError) as e:
                logger.warning("could not load config file", path=str(config_file), error=str(e))

        config = self._merge_configs(config, self._extract_env_overrides())

        self._raw_config_cache = config
        return config

    def _find_config_file(self) -> Optional[Path]:
        """Find the configuration file for the current environment."""
        possible_paths = [
            Path(__file__).parent.parent.parent / "config" / "environments" / f"{self.environment}.json",
            Path(f"./config/environments/{self.environment}.json"),
            Path(f"./config/{self.environment}.json"),
        ]

        for path in possible_paths:
            if path.exists():
                return path

        return None

    def _extract_env_overrides(self) -> Dict[str, Any]:
        """Extract configuration overrides from environment variables."""
        overrides: Dict[str, Any] = {}

        for env_var, config_path in self.ENV_MAPPINGS.items():
            value = os.environ.get(env_var)
            if value is None:
                continue
            self._set_nested_value(overrides, config_path, self._coerce(value))

        return overrides

    @staticmethod
    def _coerce(value: str) -> Any:
        """Convert an environment string to bool, int, float or leave it."""
        if value.lower() in ('true', 'false'):
            return value.lower() == 'true'
        if value.lstrip('-').isdigit():
            return int(value)
        try:
            return float(value)
        except ValueError:
            return value

    def _set_nested_value(self, config: Dict[str, Any], path: str, value: Any):
        """Set a nested configuration value using dot notation."""
        keys = path.split('.')
        current = config

        for key in keys[:-1]:
            current = current.setdefault(key, {})

        current[keys[-1]] = value

    def _merge_configs(self, base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
        """Merge two configuration dictionaries."""
        result = base.copy()

        for key, value in override.items():
            if isinstance(value, dict) and isinstance(result.get(key), dict):
                result[key] = self._merge_configs(result[key], value)
            else:
                result[key] = value

        return result

    def _create_dataclass_from_dict(self, data_class, config_dict: Dict[str, Any]):
        """Create a dataclass instance from a configuration dictionary."""
        if not isinstance(config_dict, dict):
            return data_class()

        kwargs = {
            name: config_dict[name]
            for name in data_class.__dataclass_fields__
            if name in config_dict
        }
        return data_class(**kwargs)

    def get_config(self) -> GossipAgeConfig:
        """Get the typed configuration object."""
        if self._config_cache is not None:
            return self._config_cache

        raw_config = self._load_raw_config()

        sections = {
            name: self._create_dataclass_from_dict(cls, raw_config.get(name, {}))
            for name, cls in _SECTIONS.items()
        }
        self._config_cache = GossipAgeConfig(environment=self.environment, **sections)
        return self._config_cache

    def snapshot(self) -> Dict[str, Any]:
        """Environment name and merged raw settings, picklable for worker processes."""
        return {'environment': self.environment, 'raw': copy.deepcopy(self._load_raw_config())}

    @classmethod
    def from_snapshot(cls, snapshot: Dict[str, Any]) -> "ConfigManager":
        """Manager that serves a parent snapshot without re-reading files or variables."""
        manager = cls(environment=snapshot['environment'])
        manager._raw_config_cache = copy.deepcopy(snapshot['raw'])
        return manager

    def get(self, key: str, default: Any = None) -> Any:
        """Get a configuration value using dot notation."""
        current: Any = self._load_raw_config()

        try:
            for k in key.split('.'):
                current = current[k]
            return current
        except (KeyError, TypeError):
            return default


# Global configuration manager instance
_config_manager: Optional[ConfigManager] = None


def get_config() -> GossipAgeConfig:
    """Get the global configuration instance."""
    return get_config_manager().get_config()


def get_config_manager() -> ConfigManager:
    """Get the global configuration manager instance."""
    global _config_manager
    if _config_manager is None:
        _config_manager = ConfigManager()
    return _config_manager


def set_config_manager(manager: ConfigManager) -> None:
    """Install a manager for the process (the CLI does this for --env/--config)."""
    global _config_manager
    _config_manager = manager


def init_worker_config(snapshot: Dict[str, Any]) -> None:
    """Process-pool initializer: install the parent's settings in a worker."""
    set_config_manager(ConfigManager.from_snapshot(snapshot))


def reset_config_cache():
    """Reset the configuration cache (useful for testing)."""
    global _config_manager
    if _config_manager is not None:
        _config_manager._config_cache = None
        _config_manager._raw_config_cache = None
