import math
import unittest

import numpy as np
import pytest

from gossipage import bounds
from gossipage.exact_age import AgeKind, exact_single_node
from gossipage.shared.config import ConfigManager, set_config_manager
from gossipage.shared.error_handler import SimulationError, ValidationError
from gossipage.simulator import (
    AliasTables,
    Estimator,
    SimConfig,
    confidence_halfwidth,
    fit_scaling,
    simulate,
    vose_table,
)
from gossipage.topology import (
    build_fully_connected,
    build_grid,
    build_ring,
    build_torus_hypercube,
    build_unit_hypercube,
)


class TestSamplingTables(unittest.TestCase):

    def test_vose_table_reproduces_weights(self):
        """Test that the alias table encodes the weight distribution exactly."""
        weights = np.array([1.0, 2.0, 3.0, 4.0, 0.5])
        prob, alias = vose_table(weights)
        size = weights.shape[0]
        mass = np.zeros(size)
        for slot in range(size):
            mass[slot] += prob[slot] / size
            mass[alias[slot]] += (1.0 - prob[slot]) / size
        np.testing.assert_allclose(mass, weights / weights.sum(), atol=1e-12)

    def test_vose_table_rejects_empty(self):
        """Test that zero weights are rejected."""
        with self.assertRaises(SimulationError):
            vose_table(np.zeros(3))
        with self.assertRaises(SimulationError):
            vose_table(np.array([]))

    def test_alias_tables_sample_neighbors(self):
        """Test that recipients are always out-neighbors."""
        set_config_manager(ConfigManager(environment="test"))
        g = build_ring(9, 2)
        tables = AliasTables(g)
        for node in range(g.n):
            allowed = set(g.neighbors(node).tolist())
            drawn = {tables.sample(node, u) for u in np.linspace(0.0, 0.999, 40)}
            with self.subTest(node=node):
                self.assertEqual(drawn, allowed)


class TestSimConfig(unittest.TestCase):

    def setUp(self):
        """Set up test fixtures."""
        set_config_manager(ConfigManager(environment="test"))
        self.graph = build_ring(6, 1)

    def test_defaults_from_configuration(self):
        """Test that unset fields come from the test environment."""
        cfg = SimConfig().resolved(self.graph)
        self.assertEqual(cfg.horizon, 20000.0)
        self.assertEqual(cfg.warmup, 4000.0)
        self.assertEqual(cfg.replications, 4)
        self.assertEqual(cfg.seed, 7)
        self.assertEqual(cfg.batch_size, 8192)
        self.assertEqual(cfg.estimator, Estimator.ALL_NODES)

    def test_invalid_settings(self):
        """Test rejection of inconsistent settings."""
        cases = [
            SimConfig(horizon=10.0, warmup=10.0),
            SimConfig(horizon=-1.0),
            SimConfig(horizon=float("inf")),
            SimConfig(horizon=10.0, replications=0),
            SimConfig(horizon=10.0, replications=1),
            SimConfig(horizon=10.0, confidence=1.5),
            SimConfig(horizon=10.0, anchor=6),
        ]
        for cfg in cases:
            with self.subTest(cfg=cfg):
                with self.assertRaises(ValidationError):
                    cfg.resolved(self.graph)

    def test_single_replication_without_interval(self):
        """Test that confidence 0 allows a single replication."""
        cfg = SimConfig(horizon=10.0, replications=1, confidence=0.0).resolved(self.graph)
        self.assertEqual(cfg.replications, 1)

    def test_zero_source_rate_needs_horizon(self):
        """Test that λe = 0 has no default horizon."""
        with self.assertRaises(ValidationError):
            SimConfig().resolved(build_ring(6, 1, source_rate=0.0))


class TestSimulate(unittest.TestCase):

    def setUp(self):
        """Set up test fixtures."""
        set_config_manager(ConfigManager(environment="test"))

    def test_deterministic_for_seed(self):
        """Test that a seed fixes the estimate and a new seed changes it."""
        g = build_ring(8, 1)
        first = simulate(g, SimConfig(horizon=300.0, replications=2, seed=11))
        second = simulate(g, SimConfig(horizon=300.0, replications=2, seed=11))
        other = simulate(g, SimConfig(horizon=300.0, replications=2, seed=12))
        self.assertEqual(first.age.value, second.age.value)
        self.assertEqual(first.events, second.events)
        self.assertNotEqual(first.age.value, other.age.value)

    def test_workers_do_not_change_results(self):
        """Test that workers do not change results."""
        g = build_ring(7, 2)
        serial = simulate(g, SimConfig(horizon=200.0, replications=2, seed=3, workers=1))
        pooled = simulate(g, SimConfig(horizon=200.0, replications=2, seed=3, workers=2))
        self.assertEqual(serial.age.value, pooled.age.value)

    def test_matches_exact_on_small_graphs(self):
        """Test agreement with the exact age on two hand-checked instances."""
        for g, expected in ((build_fully_connected(2), 4.0 / 3.0), (build_ring(3, 1), 1.65)):
            with self.subTest(graph=g.label):
                report = simulate(g, SimConfig(horizon=20000.0, replications=4, seed=5))
                self.assertEqual(report.age.kind, AgeKind.SIMULATED)
                self.assertAlmostEqual(report.age.value, expected, delta=0.05)
                self.assertIsNotNone(report.age.ci_halfwidth)

    def test_single_node_estimator(self):
        """Test the anchored estimator against the exact age."""
        g = build_grid(3, 2)
        expected = exact_single_node(g).value
        report = simulate(g, SimConfig(horizon=20000.0, replications=4, seed=9,
                                       estimator=Estimator.SINGLE_NODE_MEAN, anchor=4))
        self.assertAlmostEqual(report.age.value / expected, 1.0, delta=0.06)
        self.assertEqual(report.age.metadata["estimator"], "single_node_mean")

    def test_event_mix_follows_rates(self):
        """Test that event types occur in proportion to their rates."""
        g = build_ring(10, 1)
        report = simulate(g, SimConfig(horizon=2000.0, warmup=0.0, replications=2, seed=1))
        counts = report.event_counts
        self.assertEqual(sum(counts.values()), report.events)
        # λe : λ : nλ = 1 : 1 : 10
        self.assertAlmostEqual(counts["source_self"] / report.events, 1.0 / 12.0, delta=0.01)
        self.assertAlmostEqual(counts["gossip"] / report.events, 10.0 / 12.0, delta=0.015)

    def test_per_node_ages_average_to_estimate(self):
        """Test that per-node ages average to the all-nodes estimate."""
        g = build_ring(5, 1)
        report = simulate(g, SimConfig(horizon=500.0, replications=2, seed=4, per_node=True))
        self.assertEqual(report.per_node.shape, (5,))
        for replication in report.replications:
            self.assertAlmostEqual(float(np.mean(replication.per_node)), replication.mean_age, places=6)

    def test_zero_source_rate(self):
        """Test that a frozen source keeps every node at age 0."""
        report = simulate(build_ring(6, 1, source_rate=0.0), SimConfig(horizon=50.0, replications=2))
        self.assertEqual(report.age.value, 0.0)
        self.assertEqual(report.age.ci_halfwidth, 0.0)
        self.assertEqual(report.event_counts["source_self"], 0)


class TestStatistics(unittest.TestCase):

    def test_confidence_halfwidth(self):
        """Test the normal half-width."""
        expected = 1.959963984540054 * np.std([1.0, 2.0, 3.0, 4.0], ddof=1) / 2.0
        self.assertAlmostEqual(confidence_halfwidth([1.0, 2.0, 3.0, 4.0], 0.95), expected, places=9)
        with self.assertRaises(ValidationError):
            confidence_halfwidth([1.0], 0.95)

    def test_fit_scaling(self):
        """Test the log-log fit on an exact power law."""
        fit = fit_scaling([(n, 3.0 * math.sqrt(n)) for n in (100, 400, 1600, 6400)])
        self.assertAlmostEqual(fit.exponent, 0.5, places=9)
        self.assertAlmostEqual(fit.coefficient, 3.0, places=9)

    def test_fit_scaling_errors(self):
        """Test fit input validation."""
        for points in ([(1, 1), (2, 2)], [(1, 1), (1, 2), (3, 3)], [(1, 1), (2, 0), (3, 3)]):
            with self.subTest(points=points):
                with self.assertRaises(ValidationError):
                    fit_scaling(points)


@pytest.mark.slow
class TestScaling(unittest.TestCase):

    def setUp(self):
        """Set up test fixtures."""
        set_config_manager(ConfigManager(environment="test"))

    def test_ring_square_root_growth(self):
        """Test that nearest-neighbor ring ages grow like √n over n = 64..1024."""
        points = []
        for n in (64, 128, 256, 512, 1024):
            report = simulate(build_ring(n, 1), SimConfig(horizon=3000.0, replications=4, seed=n))
            points.append((n, report.age.value))
        self.assertAlmostEqual(fit_scaling(points).exponent, 0.5, delta=0.05)

    def test_grid_cube_root_band(self):
        """Test that square-grid ages sit in the n^{1/3} band and under 3.764 n^{1/3}."""
        for side in (10, 20, 30, 40):
            n = side * side
            report = simulate(build_grid(side, side), SimConfig(horizon=1500.0, replications=2, seed=side))
            with self.subTest(side=side):
                self.assertGreaterEqual(report.age.value, 1.0 * n ** (1.0 / 3.0))
                self.assertLessEqual(report.age.value, 1.8 * n ** (1.0 / 3.0))
                self.assertLessEqual(report.age.value, bounds.grid_asymptotic(n))

    def test_hypercube_logarithmic_band(self):
        """Test that hypercube ages stay between ln n − 0.5 and the closed form."""
        for m in range(3, 11):
            n = 2 ** m
            report = simulate(build_unit_hypercube(m), SimConfig(horizon=1000.0, replications=2, seed=m))
            closed = bounds.hypercube_closed_form(m)
            with self.subTest(m=m):
                self.assertGreaterEqual(report.age.value, math.log(n) - 0.5)
                if closed > 0:
                    self.assertLessEqual(report.age.value, closed)

    def test_three_dimensional_torus_slope(self):
        """Test the fitted slope of d = 3 tori over m = 2..16."""
        points = []
        for m in range(2, 17, 2):
            report = simulate(build_torus_hypercube(m, 3), SimConfig(horizon=400.0, warmup=100.0,
                                                                      replications=2, seed=m))
            points.append((m ** 3, report.age.value))
        exponent = fit_scaling(points).exponent
        # small tori pull the fit above 1/4; stays below the planar 1/3
        self.assertGreater(exponent, 0.2)
        self.assertLess(exponent, 0.335)


if __name__ == '__main__':
    unittest.main()
