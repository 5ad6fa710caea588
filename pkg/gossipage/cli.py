"""
Command-line interface for gossipage.

Usage:
    python -m gossipage topology inspect --family grid --m 6 --k 6
    python -m gossipage exact --family ring --n 12 --f 2
    python -m gossipage simulate --family grid --m 10 --horizon 2000 --reps 4
    python -m gossipage bound --family ring --n 10000 --f 1 --both
    python -m gossipage verify-extremal --family unit_hypercube --m 4 --j-max 8
    python -m gossipage run --config experiments/ring_chain_alpha00.json --out results/ring_chain_alpha00.csv
    python -m gossipage crosscheck --config experiments/crosscheck_ring.json

Exit codes: 0 ok, 1 usage, 2 validation failure, 3 soundness violation.
CSV goes to stdout (or --out); logs go to stderr.
"""

import csv
import json
import sys
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence

import click

from . import __version__, bounds, harness
from .exact_age import exact_age_table, exact_single_node
from .shared.config import ConfigManager, get_config, set_config_manager
from .shared.error_handler import ErrorHandler, ExitCode, SoundnessViolation, ValidationError
from .shared.logging_utils import configure_logging, get_logger
from .simulator import Estimator, SimConfig, simulate
from .subset_geometry import incoming_bound, min_incoming_bruteforce
from .topology import Family, TopologyDescriptor, describe, format_params, node_count, normalize_params

logger = get_logger(__name__)


class GossipAgeGroup(click.Group):
    """Click group that reports usage errors with exit code 1."""

    def make_context(self, *args, **kwargs):
        try:
            return super().make_context(*args, **kwargs)
        except click.UsageError as e:
            e.exit_code = int(ExitCode.USAGE)
            raise

    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except click.UsageError as e:
            e.exit_code = int(ExitCode.USAGE)
            raise


def _write_rows(header: Sequence[str], rows: Iterable[Sequence[Any]], out: Optional[str]) -> None:
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        handle = open(out, "w", newline="")
    else:
        handle = None
    try:
        writer = csv.writer(handle or sys.stdout, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([harness.format_value(value) for value in row])
    finally:
        if handle is not None:
            handle.close()


def topology_options(func):
    """Descriptor options shared by the per-topology commands."""
    options = [
        click.option("--config", "config_file", type=click.Path(dir_okay=False),
                     help="JSON topology descriptor {family, params, lambda, lambda_e}"),
        click.option("--family", type=click.Choice([f.value for f in Family if f is not Family.CUSTOM])),
        click.option("--n", type=int, help="Node count (ring, fully_connected)"),
        click.option("--m", type=int, help="Grid columns, hypercube dimension or torus side"),
        click.option("--k", type=int, help="Grid rows (defaults to m)"),
        click.option("--f", type=int, help="Ring neighbors per side"),
        click.option("--d", type=int, help="Torus dimension"),
        click.option("--alpha", type=float, help="Ring f = floor(n^alpha)"),
        click.option("--lambda", "lam", type=float, help="Gossip rate per node"),
        click.option("--lambda-e", "lam_e", type=float, help="Source self-update rate"),
    ]
    for option in reversed(options):
        func = option(func)
    return func


def _descriptor(config_file: Optional[str], family: Optional[str], lam: Optional[float],
                lam_e: Optional[float], **params: Any) -> TopologyDescriptor:
    """Descriptor from --config, with inline options layered on top."""
    data: Dict[str, Any] = {}
    if config_file:
        path = Path(config_file)
        if not path.exists():
            raise click.BadParameter(f"{config_file} does not exist", param_hint="--config")
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as e:
            raise ValidationError(f"{config_file} is not valid JSON: {e}") from e
    inline = {key: value for key, value in params.items() if value is not None}
    if family:
        data["family"] = family
    if inline:
        data["params"] = {**data.get("params", {}), **inline}
    if lam is not None:
        data["lambda"] = lam
    if lam_e is not None:
        data["lambda_e"] = lam_e
    if "family" not in data:
        raise click.UsageError("Give a topology with --family or --config")
    try:
        return TopologyDescriptor.model_validate(data)
    except ValueError as e:
        raise ValidationError(f"Invalid topology descriptor: {e}") from e


def _rates(descriptor: TopologyDescriptor):
    rates = get_config().rates
    lam = rates.gossip_rate if descriptor.lambda_ is None else descriptor.lambda_
    lam_e = rates.source_rate if descriptor.lambda_e is None else descriptor.lambda_e
    return lam, lam_e


def _seed(ctx: click.Context, seed: Optional[int]) -> Optional[int]:
    if seed is not None:
        return seed
    return (ctx.obj or {}).get("seed")


@click.group(cls=GossipAgeGroup)
@click.option("--env", help="Configuration environment (config/environments/<env>.json)")
@click.option("--settings", type=click.Path(exists=True, dir_okay=False),
              help="Explicit configuration document instead of the environment file")
@click.option("--seed", type=int, help="Seed for simulations and experiments")
@click.option("--log-level", type=click.Choice(["DEBUG", "INFO", "WARNING", "ERROR"], case_sensitive=False))
@click.option("--quiet", is_flag=True, help="Only log errors")
@click.version_option(version=__version__, prog_name="gossipage")
@click.pass_context
def main(ctx: click.Context, env: Optional[str], settings: Optional[str], seed: Optional[int],
         log_level: Optional[str], quiet: bool):
    """Version age of gossip networks: exact solver, simulator and bounds."""
    if env or settings:
        set_config_manager(ConfigManager(environment=env, config_file=settings))
    configure_logging(level=log_level, quiet=quiet)
    ctx.obj = {"seed": seed}


@main.group()
def topology():
    """Topology utilities."""


@topology.command("inspect")
@topology_options
@ErrorHandler("topology-inspect").cli_command
def topology_inspect(config_file, family, n, m, k, f, d, alpha, lam, lam_e):
    """Print n, degree histogram and per-node rate sums as JSON."""
    descriptor = _descriptor(config_file, family, lam, lam_e, n=n, m=m, k=k, f=f, d=d, alpha=alpha)
    g = descriptor.build()
    click.echo(json.dumps(describe(g), indent=2))


@main.command()
@topology_options
@click.option("--anchor", type=int, default=0, show_default=True)
@click.option("--table-size", type=int, help="Print v_S for every connected set up to this size instead")
@click.option("--out", type=click.Path(dir_okay=False))
@ErrorHandler("exact").cli_command
def exact(config_file, family, n, m, k, f, d, alpha, lam, lam_e, anchor, table_size, out):
    """Exact single-node version age (small graphs)."""
    descriptor = _descriptor(config_file, family, lam, lam_e, n=n, m=m, k=k, f=f, d=d, alpha=alpha)
    g = descriptor.build()
    if table_size:
        table = exact_age_table(g, table_size)
        _write_rows(("set", "size", "age"), ((str(s), len(s), value) for s, value in table), out)
        return
    result = exact_single_node(g, anchor)
    _write_rows(("family", "params", "n", "anchor", "v1"),
                [(g.family.value, g.label, g.n, anchor, result.value)], out)


@main.command("simulate")
@topology_options
@click.option("--horizon", type=float, help="Simulated time (default: enough for the configured source updates)")
@click.option("--warmup", type=float, help="Discarded prefix (default: configured fraction of the horizon)")
@click.option("--reps", type=int, help="Replications")
@click.option("--seed", type=int)
@click.option("--estimator", type=click.Choice([e.value for e in Estimator]), default=Estimator.ALL_NODES.value,
              show_default=True)
@click.option("--workers", type=int)
@click.option("--out", type=click.Path(dir_okay=False))
@click.pass_context
@ErrorHandler("simulate").cli_command
def simulate_command(ctx, config_file, family, n, m, k, f, d, alpha, lam, lam_e, horizon, warmup, reps, seed,
                     estimator, workers, out):
    """Monte Carlo estimate of the single-node version age."""
    descriptor = _descriptor(config_file, family, lam, lam_e, n=n, m=m, k=k, f=f, d=d, alpha=alpha)
    g = descriptor.build()
    cfg = SimConfig(horizon=horizon, warmup=warmup, replications=reps, seed=_seed(ctx, seed),
                    estimator=Estimator(estimator), workers=workers)
    report = simulate(g, cfg)
    _write_rows(("family", "params", "n", "mean", "ci95", "events", "seed"),
                [(g.family.value, g.label, g.n, report.age.value, report.age.ci_halfwidth, report.events,
                  report.config.seed)], out)


@main.command()
@topology_options
@click.option("--chain", "mode", flag_value="chain", help="Bound chain only")
@click.option("--closed-form", "mode", flag_value="closed_form", help="Closed form only")
@click.option("--both", "mode", flag_value="both", default=True, help="Chain and closed form (default)")
@click.option("--variant", "variants", multiple=True, help="Closed-form variant(s) instead of the family default")
@click.option("--out", type=click.Path(dir_okay=False))
@ErrorHandler("bound").cli_command
def bound(config_file, family, n, m, k, f, d, alpha, lam, lam_e, mode, variants, out):
    """Upper bounds on the single-node version age (any n, no graph is built)."""
    descriptor = _descriptor(config_file, family, lam, lam_e, n=n, m=m, k=k, f=f, d=d, alpha=alpha)
    params = normalize_params(descriptor.family, descriptor.params, check_size=False)
    size = node_count(descriptor.family, params)
    g_lam, g_lam_e = _rates(descriptor)

    chain_value = None
    conjecture = False
    if mode in ("chain", "both"):
        chain = harness.bound_chain_for(descriptor.family, params, g_lam_e, g_lam)
        chain_value = chain.v1
        conjecture = chain.conjecture

    rows: List[Sequence[Any]] = []
    if mode in ("closed_form", "both"):
        for variant in variants or harness.CLOSED_FORM_VARIANTS[descriptor.family.value]:
            closed, closed_conjecture = harness.closed_form_value(variant, params, size, g_lam_e, g_lam)
            rows.append((descriptor.family.value, format_params(params), size, chain_value, closed, variant,
                         conjecture or closed_conjecture))
    else:
        rows.append((descriptor.family.value, format_params(params), size, chain_value, None, "", conjecture))
    _write_rows(("family", "params", "n", "v1_chain", "v1_closed", "variant", "conjecture"), rows, out)


@main.command("verify-extremal")
@topology_options
@click.option("--j-min", type=int, default=1, show_default=True)
@click.option("--j-max", type=int, help="Largest subset size (default: n, up to the enumeration cap)")
@click.option("--relaxed", is_flag=True, help="Check the relaxed forms the chains use")
@click.option("--out", type=click.Path(dir_okay=False))
@ErrorHandler("verify-extremal").cli_command
def verify_extremal(config_file, family, n, m, k, f, d, alpha, lam, lam_e, j_min, j_max, relaxed, out):
    """Certify the minimum-incoming-edge formula against brute force."""
    descriptor = _descriptor(config_file, family, lam, lam_e, n=n, m=m, k=k, f=f, d=d, alpha=alpha)
    g = descriptor.build()
    params = descriptor.resolved_params()
    if j_max is None:
        j_max = min(g.n, get_config().limits.enumeration_size_cap)
    if not 1 <= j_min <= j_max <= g.n:
        raise click.BadParameter(f"need 1 <= j-min <= j-max <= n={g.n}", param_hint="--j-min/--j-max")

    rows = []
    failures = []
    for j in range(j_min, j_max + 1):
        formula = incoming_bound(descriptor.family, params, j, tight=not relaxed)
        minimum, witness = min_incoming_bruteforce(g, j)
        rows.append((g.family.value, g.label, j, formula.value, minimum, str(witness), formula.conjecture))
        if formula.value > minimum:
            failures.append(f"{g.label} j={j}: formula {formula.value!r} > brute-force minimum {minimum}")
    _write_rows(("family", "params", "j", "formula_bound", "bruteforce_min", "witness", "conjecture"), rows, out)
    if failures:
        raise SoundnessViolation(f"{len(failures)} formula value(s) exceed the brute-force minimum",
                                 violations=failures)


def experiment_options(func):
    """Options shared by run and crosscheck."""
    options = [
        click.option("--config", "config_file", required=True, type=click.Path(dir_okay=False),
                     help="Experiment spec (JSON)"),
        click.option("--out", type=click.Path(dir_okay=False), help="CSV path (default: spec output, else stdout)"),
        click.option("--seed", type=int),
        click.option("--workers", type=int, help="Sweep points evaluated in parallel"),
        click.option("--no-header-timestamp", is_flag=True, help="Omit the generated= field for byte-identical reruns"),
    ]
    for option in reversed(options):
        func = option(func)
    return func


def _load_experiment(ctx: click.Context, config_file: str, seed: Optional[int]) -> harness.ExperimentSpec:
    if not Path(config_file).exists():
        raise click.BadParameter(f"{config_file} does not exist", param_hint="--config")
    spec = harness.ExperimentSpec.from_file(config_file)
    seed = _seed(ctx, seed)
    if seed is not None:
        spec = spec.model_copy(update={"seed": seed})
    return spec


def _emit(table: harness.ResultTable, spec: harness.ExperimentSpec, out: Optional[str],
          no_header_timestamp: bool) -> None:
    timestamp = False if no_header_timestamp else None
    target = out or spec.output
    if target:
        harness.write_csv(table, target, timestamp=timestamp)
        logger.info("results written", path=target, rows=len(table.rows))
    else:
        click.echo(harness.write_csv(table, timestamp=timestamp), nl=False)


@main.command("run")
@experiment_options
@click.pass_context
@ErrorHandler("run").cli_command
def run_command(ctx, config_file, out, seed, workers, no_header_timestamp):
    """Run an experiment spec and write its CSV."""
    spec = _load_experiment(ctx, config_file, seed)
    table = harness.run(spec, workers)
    _emit(table, spec, out, no_header_timestamp)
    if table.errors:
        click.echo(f"{len(table.errors)} row(s) failed; see the error column", err=True)


@main.command("crosscheck")
@experiment_options
@click.option("--sigma", type=float, help="CI half-widths allowed below a simulated value")
@click.option("--slack", type=float, help="Allowed chain / closed-form ratio")
@click.pass_context
@ErrorHandler("crosscheck").cli_command
def crosscheck_command(ctx, config_file, out, seed, workers, no_header_timestamp, sigma, slack):
    """Run a spec and check exact/simulated <= chain <= slack x closed form."""
    spec = _load_experiment(ctx, config_file, seed)
    report = harness.crosscheck(spec, sigma=sigma, slack=slack, workers=workers)
    if out:
        _emit(report.table, spec, out, no_header_timestamp)
    for violation in report.violations:
        click.echo(f"VIOLATION {violation}", err=True)
    report.raise_for_violations()
    click.echo(f"crosscheck passed: {spec.name} ({len(spec.points())} points)")


@main.command()
@click.option("--dims", default="2,3,4,5", show_default=True, help="Torus dimensions for C_d and L_d")
@ErrorHandler("constants").cli_command
def constants(dims):
    """Print the closed-form constants as JSON."""
    try:
        parsed = tuple(int(part) for part in dims.split(",") if part.strip())
    except ValueError:
        raise click.BadParameter(f"expected comma-separated integers, got {dims!r}", param_hint="--dims")
    consts = bounds.compute_constants(parsed)
    click.echo(json.dumps({
        "gamma": consts.gamma,
        "beta": consts.beta,
        "beta_closed_form": consts.beta_closed_form,
        "beta_prime": consts.beta_prime,
        "delta_bound": consts.delta_bound,
        "c_d": {str(key): value for key, value in consts.c_d.items()},
        "l_d": {str(key): value for key, value in consts.l_d.items()},
    }, indent=2))


@main.command()
@click.option("--alpha", "alphas", type=float, multiple=True,
              help="Exponent of f(n) = n^alpha (repeatable; default 0.1..0.5)")
@click.option("--factor", type=float, default=10.0, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False))
@ErrorHandler("crossover").cli_command
def crossover(alphas, factor, out):
    """Largest n where the ring's log term is still within factor of its rational term."""
    alphas = alphas or (0.1, 0.2, 0.3, 0.4, 0.5)
    _write_rows(("alpha", "factor", "crossover_n"),
                [(alpha, factor, bounds.ring_log_crossover(alpha, factor)) for alpha in alphas], out)


if __name__ == "__main__":
    main()
