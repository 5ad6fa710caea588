import io
import json
import os
import re
import tempfile
import unittest
from pathlib import Path
from unittest.mock import MagicMock, patch

import pytest

from gossipage import cli, harness
from gossipage.harness import (
    COLUMNS,
    EXACT_RTOL,
    CrosscheckReport,
    ExperimentSpec,
    Method,
    SimulationSettings,
    SweepSpec,
    closed_form_value,
    crosscheck,
    derive_seed,
    format_value,
    oracle_agreement,
    run,
    write_csv,
)
from gossipage.shared.config import ConfigManager, init_worker_config, set_config_manager
from gossipage.shared.error_handler import SoundnessViolation, ValidationError
from gossipage.topology import build_grid

REPO_ROOT = Path(__file__).resolve().parent.parent


def make_spec(**overrides) -> ExperimentSpec:
    data = {
        "name": "ring_small",
        "family": "ring",
        "sweep": {"product": {"n": [7, 9], "f": [1]}},
        "methods": ["exact", "chain", "closed_form"],
        "seed": 17,
    }
    data.update(overrides)
    return ExperimentSpec.model_validate(data)


class TestSweepSpec(unittest.TestCase):

    def test_square_grid_derivation(self):
        """Test k derived from m for square grids."""
        sweep = SweepSpec.model_validate({"product": {"m": [3, 4]}, "derive": {"k": "m"}})
        self.assertEqual(sweep.expand(), [{"m": 3, "k": 3}, {"m": 4, "k": 4}])

    def test_scaled_derivation_and_points(self):
        """Test factor derivations and extra points."""
        sweep = SweepSpec.model_validate({
            "product": {"k": [2, 3]},
            "derive": {"m": "2*k"},
            "points": [{"k": 5}],
        })
        self.assertEqual(sweep.expand(), [{"k": 2, "m": 4}, {"k": 3, "m": 6}, {"k": 5, "m": 10}])

    def test_product_order_is_sorted_by_key(self):
        """Test that the product iterates keys alphabetically."""
        sweep = SweepSpec.model_validate({"product": {"n": [10, 20], "f": [1, 2]}})
        self.assertEqual([(p["f"], p["n"]) for p in sweep.expand()], [(1, 10), (1, 20), (2, 10), (2, 20)])

    def test_bad_derivations(self):
        """Test derive syntax and unknown sources."""
        with self.assertRaises(ValueError):
            SweepSpec.model_validate({"product": {"m": [3]}, "derive": {"k": "m + 1"}})
        with self.assertRaises(ValueError):
            SweepSpec.model_validate({"product": {"m": [3]}, "derive": {"k": "q"}}).expand()


class TestExperimentSpec(unittest.TestCase):

    def setUp(self):
        """Set up test fixtures."""
        set_config_manager(ConfigManager(environment="test"))

    def test_shipped_specs_load(self):
        """Test that every experiment file parses and the CLI usage names shipped files."""
        paths = sorted((REPO_ROOT / "experiments").glob("*.json"))
        self.assertGreater(len(paths), 0)
        for path in paths:
            with self.subTest(spec=path.name):
                spec = ExperimentSpec.from_file(path)
                self.assertEqual(spec.name, path.stem)
        for name in re.findall(r"experiments/(\S+\.json)", cli.__doc__):
            with self.subTest(usage=name):
                self.assertTrue((REPO_ROOT / "experiments" / name).exists())

    def test_defaults(self):
        """Test default rates, seed and closed-form variants."""
        spec = make_spec(seed=None)
        self.assertEqual(spec.lambda_, 1.0)
        self.assertEqual(spec.lambda_e, 1.0)
        self.assertEqual(spec.resolved_seed, 7)
        self.assertEqual(spec.variants(), ("ring",))
        self.assertEqual(make_spec(closed_forms=["ring", "ring_alpha"]).variants(), ("ring", "ring_alpha"))

    def test_lambda_alias(self):
        """Test that specs use the 'lambda' key."""
        spec = make_spec(**{"lambda": 2.0, "lambda_e": 0.5})
        self.assertEqual(spec.lambda_, 2.0)
        self.assertEqual(spec.lambda_e, 0.5)

    def test_invalid_specs(self):
        """Test schema and sweep-point rejection."""
        cases = [
            {"family": "custom"},
            {"closed_forms": ["nope"]},
            {"methods": []},
            {"methods": ["guess"]},
            {"sweep": {"product": {"n": [10], "f": [5]}}},
            {"sweep": {"product": {}}},
            {"sweep": {"product": {"n": [10 ** 6], "f": [1]}}, "methods": ["simulate"]},
            {"unexpected": 1},
        ]
        for overrides in cases:
            with self.subTest(overrides=overrides):
                with self.assertRaises(ValueError):
                    make_spec(**overrides)

    def test_bounds_only_specs_skip_size_caps(self):
        """Test that chain-only sweeps may exceed the node cap."""
        spec = make_spec(sweep={"product": {"n": [10 ** 8], "f": [1]}}, methods=["chain"])
        self.assertEqual(spec.points(), [{"f": 1, "n": 10 ** 8}])

    def test_from_file(self):
        """Test loading from JSON and the error on a malformed file."""
        with tempfile.TemporaryDirectory() as tmp:
            good = os.path.join(tmp, "good.json")
            with open(good, "w") as fh:
                json.dump({"name": "g", "family": "grid", "sweep": {"product": {"m": [3]}, "derive": {"k": "m"}},
                           "methods": ["chain"]}, fh)
            self.assertEqual(ExperimentSpec.from_file(good).points(), [{"m": 3, "k": 3}])

            bad = os.path.join(tmp, "bad.json")
            with open(bad, "w") as fh:
                fh.write("{\"name\": ")
            with self.assertRaises(ValidationError) as ctx:
                ExperimentSpec.from_file(bad)
            self.assertEqual(ctx.exception.details["path"], bad)

            partial = os.path.join(tmp, "partial.json")
            with open(partial, "w") as fh:
                json.dump({"name": "p", "family": "ring"}, fh)
            with self.assertRaises(ValidationError) as ctx:
                ExperimentSpec.from_file(partial)
            self.assertEqual(ctx.exception.details["missing_fields"], ["sweep", "methods"])


class TestRun(unittest.TestCase):

    def setUp(self):
        """Set up test fixtures."""
        set_config_manager(ConfigManager(environment="test"))

    def test_rows_and_order(self):
        """Test one row per point and method in canonical order."""
        table = run(make_spec())
        self.assertEqual(len(table.rows), 6)
        self.assertEqual([row["method"] for row in table.rows[:3]], ["exact", "chain", "closed_form"])
        self.assertEqual([row["n"] for row in table.rows], [7, 7, 7, 9, 9, 9])
        self.assertEqual(table.rows[0]["params"], "f=1;n=7")
        self.assertEqual(table.rows[2]["variant"], "ring")
        self.assertEqual(table.errors, [])
        for row in table.by_method(Method.CHAIN):
            with self.subTest(params=row["params"]):
                self.assertTrue(row["sound"])
                self.assertLessEqual(row["reference"] * (1 - EXACT_RTOL), row["value"])

    def test_seeds_are_per_point(self):
        """Test that rows carry the derived per-point seed."""
        table = run(make_spec())
        self.assertEqual(table.rows[0]["seed"], derive_seed(17, 0))
        self.assertEqual(table.rows[3]["seed"], derive_seed(17, 1))
        self.assertNotEqual(derive_seed(17, 0), derive_seed(17, 1))
        self.assertEqual(derive_seed(17, 0), derive_seed(17, 0))

    def test_failed_point_fills_error_column(self):
        """Test that a failing variant is recorded without aborting the run."""
        spec = ExperimentSpec.model_validate({
            "name": "grid_bad_variant",
            "family": "grid",
            "sweep": {"product": {"m": [4]}, "derive": {"k": "m"}},
            "methods": ["chain", "closed_form"],
            "closed_forms": ["grid", "fixed_d_ring"],
        })
        table = run(spec)
        self.assertEqual(len(table.rows), 3)
        self.assertEqual(len(table.errors), 1)
        self.assertTrue(table.errors[0]["error"].startswith("KeyError"))
        self.assertIsNone(table.errors[0]["value"])

    def test_reference_variants_are_not_marked(self):
        """Test that growth references carry no soundness verdict."""
        spec = make_spec(closed_forms=["ring", "ring_alpha"])
        rows = {row["variant"]: row for row in run(spec).by_method("closed_form") if row["n"] == 7}
        self.assertTrue(rows["ring"]["sound"])
        self.assertIsNone(rows["ring_alpha"]["sound"])

    def test_ring_chain_table(self):
        """Test the reference ring chain and closed-form values through a chain sweep."""
        spec = ExperimentSpec.model_validate({
            "name": "ring_table",
            "family": "ring",
            "sweep": {"product": {"n": [10000, 100000], "alpha": [0.0, 0.1]}},
            "methods": ["chain", "closed_form"],
        })
        table = run(spec)
        chains = {(row["params"]): row["value"] for row in table.by_method("chain")}
        self.assertAlmostEqual(chains["alpha=0.0;f=1;n=10000"] / 124.641, 1.0, delta=0.01)
        self.assertAlmostEqual(chains["alpha=0.1;f=2;n=10000"] / 102.198, 1.0, delta=0.01)
        self.assertAlmostEqual(chains["alpha=0.0;f=1;n=100000"] / 395.658, 1.0, delta=0.01)
        self.assertAlmostEqual(chains["alpha=0.1;f=3;n=100000"] / 280.508, 1.0, delta=0.01)
        closed = {row["params"]: row["value"] for row in table.by_method("closed_form")}
        self.assertAlmostEqual(closed["alpha=0.1;f=2;n=10000"] / 132.987, 1.0, delta=1e-4)

    def test_workers_do_not_change_rows(self):
        """Test that a process pool yields the same table."""
        spec = make_spec(methods=["chain", "closed_form"], sweep={"product": {"n": [11, 13, 15], "f": [1, 2]}})
        self.assertEqual(run(spec, workers=2).rows, run(spec, workers=1).rows)

    def test_workers_receive_parent_settings(self):
        """Test that pool workers are initialized with the parent configuration."""
        spec = make_spec(methods=["chain"], sweep={"product": {"n": [11, 13], "f": [1]}})
        with patch("gossipage.harness.ProcessPoolExecutor") as executor:
            executor.return_value.__enter__.return_value.map.side_effect = lambda fn, *its: map(fn, *its)
            table = run(spec, workers=2)
        self.assertEqual(len(table.rows), 2)
        kwargs = executor.call_args.kwargs
        self.assertIs(kwargs["initializer"], init_worker_config)
        self.assertEqual(kwargs["initargs"][0]["environment"], "test")
        self.assertEqual(kwargs["initargs"][0]["raw"]["simulation"]["seed"], 7)

    def test_closed_form_value(self):
        """Test variant dispatch and unknown variants."""
        value, conjecture = closed_form_value("ddim", {"m": 4, "d": 3}, 64, 1.0, 1.0)
        self.assertTrue(conjecture)
        self.assertGreater(value, 0.0)
        with self.assertRaises(ValidationError):
            closed_form_value("nope", {}, 1, 1.0, 1.0)


class TestCsvOutput(unittest.TestCase):

    def setUp(self):
        """Set up test fixtures."""
        set_config_manager(ConfigManager(environment="test"))
        self.spec = make_spec(
            methods=["simulate", "chain"],
            simulation={"horizon": 200.0, "replications": 2},
        )

    def test_header_and_columns(self):
        """Test the schema header and the column row."""
        text = write_csv(run(self.spec))
        lines = text.splitlines()
        self.assertEqual(lines[0], "# schema=1 experiment=ring_small")
        self.assertEqual(lines[1], ",".join(COLUMNS))
        self.assertEqual(len(lines), 2 + 4)
        self.assertIn(",simulate,,", lines[2])

    def test_rerun_is_byte_identical(self):
        """Test that the same spec and seed give the same file."""
        self.assertEqual(write_csv(run(self.spec)), write_csv(run(self.spec)))

    def test_timestamp_and_file_output(self):
        """Test the optional timestamp and writing to a path or stream."""
        table = run(make_spec(methods=["chain"]))
        self.assertIn(" generated=", write_csv(table, timestamp=True).splitlines()[0])
        stream = io.StringIO()
        text = write_csv(table, stream)
        self.assertEqual(stream.getvalue(), text)
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "nested", "out.csv")
            write_csv(table, path)
            with open(path) as fh:
                self.assertEqual(fh.read(), text)

    def test_format_value(self):
        """Test CSV value rendering."""
        self.assertEqual(format_value(None), "")
        self.assertEqual(format_value(True), "true")
        self.assertEqual(format_value(False), "false")
        self.assertEqual(format_value(1.5), "1.5")
        self.assertEqual(format_value(7), "7")


class TestCrosscheck(unittest.TestCase):

    def setUp(self):
        """Set up test fixtures."""
        set_config_manager(ConfigManager(environment="test"))
        self.simulation = {"horizon": 2000.0, "replications": 4}

    def test_small_instances_pass(self):
        """Test exact/simulated ≤ chain ≤ slack × closed form on every small family."""
        specs = [
            make_spec(methods=["exact", "simulate", "chain", "closed_form"], simulation=self.simulation),
            ExperimentSpec.model_validate({
                "name": "grid_small", "family": "grid", "sweep": {"points": [{"m": 3, "k": 3}, {"m": 4, "k": 2}]},
                "methods": ["exact", "simulate", "chain", "closed_form"], "simulation": self.simulation}),
            ExperimentSpec.model_validate({
                "name": "cube_small", "family": "unit_hypercube", "sweep": {"product": {"m": [2, 3]}},
                "methods": ["exact", "chain", "closed_form"]}),
            ExperimentSpec.model_validate({
                "name": "torus_small", "family": "torus_hypercube", "sweep": {"points": [{"m": 2, "d": 3}]},
                "methods": ["exact", "chain", "closed_form"]}),
            ExperimentSpec.model_validate({
                "name": "complete_small", "family": "fully_connected", "sweep": {"product": {"n": [4, 6]}},
                "methods": ["exact", "chain", "closed_form"]}),
        ]
        for spec in specs:
            with self.subTest(experiment=spec.name):
                report = crosscheck(spec)
                self.assertEqual(report.violations, [])
                self.assertTrue(report.passed)
                report.raise_for_violations()

    def test_unsound_chain_is_reported(self):
        """Test that a chain below the exact age is flagged."""
        fake = MagicMock(v1=1.0, conjecture=False)
        with patch("gossipage.harness.bound_chain_for", return_value=fake):
            report = crosscheck(make_spec(methods=["exact", "chain"]))
        self.assertFalse(report.passed)
        self.assertEqual(len(report.violations), 2)
        self.assertIn("< exact", report.violations[0])
        with self.assertRaises(SoundnessViolation) as ctx:
            report.raise_for_violations()
        self.assertEqual(ctx.exception.violations, report.violations)

    def test_loose_chain_is_reported(self):
        """Test that slack below 1 turns a loose chain into a violation."""
        report = crosscheck(make_spec(methods=["chain", "closed_form"]), slack=0.01)
        self.assertEqual(len(report.violations), 2)
        self.assertIn("closed form ring", report.violations[0])

    def test_error_rows_are_violations(self):
        """Test that failed rows fail the crosscheck."""
        with patch.object(harness, "exact_single_node", side_effect=RuntimeError("boom")):
            report = crosscheck(make_spec(methods=["exact", "chain"]))
        self.assertEqual(len(report.violations), 2)
        self.assertIn("RuntimeError: boom", report.violations[0])

    def test_report_defaults(self):
        """Test an empty report passes."""
        report = CrosscheckReport(table=harness.ResultTable(experiment="x", schema_version=1))
        self.assertTrue(report.passed)


@pytest.mark.slow
class TestOracleAgreement(unittest.TestCase):

    def setUp(self):
        """Set up test fixtures."""
        set_config_manager(ConfigManager(environment="test"))

    def test_simulation_brackets_exact_age(self):
        """Test that simulated ages fall within 3 CI of the exact age for most seeds."""
        settings = SimulationSettings(horizon=2000.0, replications=10)
        fraction = oracle_agreement(build_grid(3, 2), range(20), settings, sigma=3.0)
        self.assertGreaterEqual(fraction, 19 / 20)


if __name__ == '__main__':
    unittest.main()
