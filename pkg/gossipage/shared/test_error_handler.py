import unittest
from unittest.mock import patch

import click
from click.testing import CliRunner

from gossipage.shared.error_handler import (
    CapacityError,
    DisconnectedSetError,
    ErrorCategory,
    ErrorHandler,
    ErrorSeverity,
    ExitCode,
    GossipAgeError,
    NumericalError,
    SoundnessViolation,
    TopologyError,
    ValidationError,
    validate_int_range,
    validate_positive,
    validate_required_fields,
)


class TestErrorHierarchy(unittest.TestCase):

    def test_validation_error_is_value_error(self):
        """Test that validation failures are also ValueErrors."""
        error = ValidationError("bad n")
        self.assertIsInstance(error, ValueError)
        self.assertEqual(error.category, ErrorCategory.VALIDATION)
        self.assertEqual(error.severity, ErrorSeverity.LOW)
        self.assertEqual(error.exit_code, ExitCode.VALIDATION)

    def test_topology_error_records_family(self):
        """Test that topology errors carry the family in their details."""
        error = TopologyError("k > m", family="grid")
        self.assertEqual(error.category, ErrorCategory.TOPOLOGY)
        self.assertEqual(error.details["family"], "grid")
        self.assertIsInstance(DisconnectedSetError("x"), ValidationError)

    def test_capacity_error_reports_count(self):
        """Test that capacity errors report the count reached."""
        error = CapacityError("too many", reached=101, cap=100)
        self.assertEqual(error.reached, 101)
        self.assertEqual(error.details, {"reached": 101, "cap": 100})
        self.assertEqual(error.category, ErrorCategory.ENUMERATION)

    def test_soundness_violation_exit_code(self):
        """Test the soundness exit code and violation list."""
        error = SoundnessViolation("2 violations", violations=["a", "b"])
        self.assertEqual(error.exit_code, ExitCode.SOUNDNESS)
        self.assertEqual(error.violations, ["a", "b"])
        self.assertEqual(error.to_dict()["details"]["violations"], ["a", "b"])

    def test_to_dict(self):
        """Test dictionary rendering of an error."""
        payload = NumericalError("zero denominator", details={"set": "0 1"}).to_dict()
        self.assertEqual(payload["error_code"], "NumericalError")
        self.assertEqual(payload["category"], "numerical")
        self.assertEqual(payload["severity"], "high")
        self.assertEqual(payload["details"], {"set": "0 1"})
        self.assertIn("timestamp", payload)


class TestErrorHandler(unittest.TestCase):

    def setUp(self):
        """Set up test fixtures."""
        self.handler = ErrorHandler("unit")

    def test_exit_codes(self):
        """Test the exception to exit-code mapping."""
        self.assertEqual(self.handler.exit_code_for(click.UsageError("x")), ExitCode.USAGE)
        self.assertEqual(self.handler.exit_code_for(ValidationError("x")), ExitCode.VALIDATION)
        self.assertEqual(self.handler.exit_code_for(CapacityError("x")), ExitCode.VALIDATION)
        self.assertEqual(self.handler.exit_code_for(SoundnessViolation("x")), ExitCode.SOUNDNESS)
        self.assertEqual(self.handler.exit_code_for(RuntimeError("x")), ExitCode.USAGE)

    @patch("gossipage.shared.error_handler.click.echo")
    def test_handle_error_logs_and_echoes(self, mock_echo):
        """Test that handled errors are logged with their payload and echoed to stderr."""
        with patch.object(self.handler, "logger") as mock_logger:
            code = self.handler.handle_error(NumericalError("diverged"))
        self.assertEqual(code, ExitCode.VALIDATION)
        mock_logger.error.assert_called_once()
        self.assertEqual(mock_logger.error.call_args.kwargs["error"]["message"], "diverged")
        mock_echo.assert_called_once_with("Error: diverged", err=True)

    @patch("gossipage.shared.error_handler.click.echo")
    def test_handle_low_severity_as_warning(self, mock_echo):
        """Test that low-severity errors are logged as warnings."""
        with patch.object(self.handler, "logger") as mock_logger:
            self.handler.handle_error(ValidationError("bad"))
        mock_logger.warning.assert_called_once()
        mock_logger.error.assert_not_called()

    def test_cli_command_exit_status(self):
        """Test that the decorator turns exceptions into exit codes."""
        @click.command()
        @click.argument("kind")
        @ErrorHandler("unit").cli_command
        def command(kind):
            if kind == "soundness":
                raise SoundnessViolation("violated")
            if kind == "validation":
                raise ValidationError("invalid")
            click.echo("ok")

        runner = CliRunner()
        self.assertEqual(runner.invoke(command, ["fine"]).exit_code, 0)
        self.assertEqual(runner.invoke(command, ["validation"]).exit_code, 2)
        self.assertEqual(runner.invoke(command, ["soundness"]).exit_code, 3)


class TestValidators(unittest.TestCase):

    def test_validate_required_fields(self):
        """Test missing-field detection."""
        validate_required_fields({"a": 1, "b": 0}, ["a", "b"])
        with self.assertRaises(ValidationError) as ctx:
            validate_required_fields({"a": None}, ["a", "b"])
        self.assertEqual(ctx.exception.details["missing_fields"], ["a", "b"])

    def test_validate_positive(self):
        """Test positive and nonnegative checks."""
        self.assertEqual(validate_positive("lambda", 2), 2.0)
        self.assertEqual(validate_positive("lambda_e", 0, allow_zero=True), 0.0)
        for bad in (0, -1, float("nan"), float("inf"), "x"):
            with self.assertRaises(ValidationError):
                validate_positive("lambda", bad)

    def test_validate_int_range(self):
        """Test integer range checks."""
        self.assertEqual(validate_int_range("m", 4.0, 2, 8), 4)
        for bad in (1, 9, 2.5, True, "3"):
            with self.assertRaises(ValidationError):
                validate_int_range("m", bad, 2, 8)


if __name__ == '__main__':
    unittest.main()
