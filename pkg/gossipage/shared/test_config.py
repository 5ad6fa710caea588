import json
import os
import tempfile
import unittest
from pathlib import Path
from unittest.mock import patch

from gossipage.shared import config
from gossipage.shared.config import ConfigManager, GossipAgeConfig, get_config, set_config_manager


class TestConfigManager(unittest.TestCase):

    def setUp(self):
        """Set up test fixtures."""
        self.tmp = tempfile.TemporaryDirectory()
        self.config_path = Path(self.tmp.name) / "custom.json"
        self.config_path.write_text(json.dumps({
            "limits": {"max_nodes": 1234, "enumeration_size_cap": 12},
            "simulation": {"seed": 99, "replications": 3},
            "unknown_section": {"ignored": True},
        }))

    def tearDown(self):
        self.tmp.cleanup()
        set_config_manager(ConfigManager(environment="test"))

    def test_defaults_without_file(self):
        """Test dataclass defaults when no config document exists."""
        manager = ConfigManager(environment="missing-env", config_file=Path(self.tmp.name) / "absent.json")
        cfg = manager.get_config()
        self.assertIsInstance(cfg, GossipAgeConfig)
        self.assertEqual(cfg.environment, "missing-env")
        self.assertEqual(cfg.rates.gossip_rate, 1.0)
        self.assertEqual(cfg.limits.exact_memo_cap, 5_000_000)
        self.assertEqual(cfg.harness.schema_version, 1)
        self.assertTrue(cfg.bounds.floor_ring_degree)

    def test_file_values_override_defaults(self):
        """Test that document values replace defaults section by section."""
        cfg = ConfigManager(environment="custom", config_file=self.config_path).get_config()
        self.assertEqual(cfg.limits.max_nodes, 1234)
        self.assertEqual(cfg.limits.enumeration_size_cap, 12)
        self.assertEqual(cfg.limits.anchored_enumeration_cap, 20)
        self.assertEqual(cfg.simulation.seed, 99)
        self.assertEqual(cfg.simulation.confidence, 0.95)

    @patch.dict(os.environ, {"GOSSIPAGE_SEED": "5", "GOSSIPAGE_LAMBDA_E": "2.5",
                             "GOSSIPAGE_FLOOR_RING_DEGREE": "false", "GOSSIPAGE_LOG_LEVEL": "DEBUG"})
    def test_environment_overrides(self):
        """Test environment variables win over the document, with type coercion."""
        cfg = ConfigManager(environment="custom", config_file=self.config_path).get_config()
        self.assertEqual(cfg.simulation.seed, 5)
        self.assertEqual(cfg.rates.source_rate, 2.5)
        self.assertIs(cfg.bounds.floor_ring_degree, False)
        self.assertEqual(cfg.logging.level, "DEBUG")

    def test_dotted_get(self):
        """Test raw dotted-path access with defaults for missing keys."""
        manager = ConfigManager(environment="custom", config_file=self.config_path)
        self.assertEqual(manager.get("limits.max_nodes"), 1234)
        self.assertEqual(manager.get("limits.nothing", "fallback"), "fallback")
        self.assertTrue(manager.get("unknown_section.ignored"))

    def test_coerce(self):
        """Test string coercion of environment values."""
        self.assertIs(ConfigManager._coerce("TRUE"), True)
        self.assertEqual(ConfigManager._coerce("-3"), -3)
        self.assertEqual(ConfigManager._coerce("0.25"), 0.25)
        self.assertEqual(ConfigManager._coerce("INFO"), "INFO")

    def test_invalid_json_falls_back_to_defaults(self):
        """Test that a broken document is reported and ignored."""
        broken = Path(self.tmp.name) / "broken.json"
        broken.write_text("{not json")
        with self.assertLogs("gossipage.shared.config", level="WARNING") as logs:
            cfg = ConfigManager(environment="broken", config_file=broken).get_config()
        self.assertEqual(len(logs.records), 1)
        self.assertEqual(cfg.limits.max_nodes, 2_000_000)

    def test_shipped_test_environment(self):
        """Test that the shipped test environment document is found and loaded."""
        cfg = ConfigManager(environment="test").get_config()
        self.assertEqual(cfg.environment, "test")
        self.assertEqual(cfg.simulation.seed, 7)
        self.assertFalse(cfg.harness.timestamp_header)

    def test_global_manager(self):
        """Test the process-wide manager helpers."""
        set_config_manager(ConfigManager(environment="custom", config_file=self.config_path))
        self.assertEqual(get_config().limits.max_nodes, 1234)
        config.reset_config_cache()
        self.assertEqual(get_config().limits.max_nodes, 1234)

    def test_worker_snapshot_ignores_worker_environment(self):
        """Test that a worker installs the parent settings, not its own environment."""
        parent = ConfigManager(environment="custom", config_file=self.config_path)
        snapshot = parent.snapshot()
        with patch.dict(os.environ, {"GOSSIPAGE_ENV": "dev", "GOSSIPAGE_SEED": "5"}):
            config.init_worker_config(snapshot)
            cfg = get_config()
        self.assertEqual(cfg.environment, "custom")
        self.assertEqual(cfg.simulation.seed, 99)
        self.assertEqual(cfg.limits.max_nodes, 1234)
        snapshot["raw"]["limits"]["max_nodes"] = 1
        self.assertEqual(get_config().limits.max_nodes, 1234)


if __name__ == '__main__':
    unittest.main()
