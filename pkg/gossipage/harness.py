"""
Declarative experiment runner.

An ExperimentSpec names a topology family, a parameter sweep and the methods
to evaluate at every sweep point (exact, simulate, chain, closed_form). ``run``
produces one CSV row per point and method (one per variant for closed forms),
sorted canonically so the same spec and seed always yield the same file.
``crosscheck`` runs a spec and asserts exact/simulated ≤ chain ≤ slack ×
closed form at every point.
"""

import csv
import io
import itertools
import json
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, TextIO, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from . import bounds
from .exact_age import exact_single_node
from .shared.config import get_config, get_config_manager, init_worker_config
from .shared.error_handler import GossipAgeError, SoundnessViolation, ValidationError, validate_required_fields
from .shared.logging_utils import LogContext, get_logger, log_performance
from .simulator import Estimator, SimConfig, simulate
from .topology import Family, Graph, build, format_params, node_count, normalize_params, ring_degree

logger = get_logger(__name__)

COLUMNS = (
    "schema", "experiment", "family", "params", "n", "method", "variant", "value", "ci95",
    "seed", "horizon", "replications", "conjecture", "reference", "sound", "error",
)

_DERIVE = re.compile(r"^\s*(?:(\d+(?:\.\d+)?)\s*\*\s*)?([a-z_]+)\s*$")

# relative slack when comparing a bound with an exact value computed another way
EXACT_RTOL = 1e-9


class Method(str, Enum):
    """Evaluation methods of a sweep point."""
    EXACT = "exact"
    SIMULATE = "simulate"
    CHAIN = "chain"
    CLOSED_FORM = "closed_form"


METHOD_ORDER = {method: index for index, method in enumerate(Method)}

BOUND_METHODS = (Method.CHAIN, Method.CLOSED_FORM)


class SweepSpec(BaseModel):
    """Cartesian product of parameter lists plus parameters derived from them.

    ``derive`` maps a parameter to ``"<name>"`` or ``"<factor>*<name>"``, e.g.
    ``{"k": "m"}`` for square grids or ``{"m": "2*k"}``.
    """

    model_config = ConfigDict(extra="forbid")

    product: Dict[str, List[float]] = Field(default_factory=dict)
    derive: Dict[str, str] = Field(default_factory=dict)
    points: List[Dict[str, float]] = Field(default_factory=list)

    @field_validator("derive")
    @classmethod
    def _derive_syntax(cls, value: Dict[str, str]) -> Dict[str, str]:
        for key, expression in value.items():
            if not _DERIVE.match(expression):
                raise ValueError(f"derive.{key}: expected '<name>' or '<factor>*<name>', got {expression!r}")
        return value

    def expand(self) -> List[Dict[str, Any]]:
        keys = sorted(self.product)
        combos = [dict(zip(keys, values)) for values in itertools.product(*(self.product[k] for k in keys))]
        if not keys:
            combos = []
        expanded = []
        for point in combos + [dict(p) for p in self.points]:
            for key, expression in self.derive.items():
                factor, source = _DERIVE.match(expression).groups()
                if source not in point:
                    raise ValueError(f"derive.{key} refers to unknown parameter {source!r}")
                point[key] = float(factor or 1) * point[source]
            expanded.append({k: _tidy(v) for k, v in point.items()})
        return expanded


def _tidy(value: Any) -> Any:
    if isinstance(value, float) and value.is_integer():
        return int(value)
    return value


class SimulationSettings(BaseModel):
    """Per-experiment simulation settings (defaults from configuration)."""

    model_config = ConfigDict(extra="forbid")

    horizon: Optional[float] = Field(default=None, gt=0)
    warmup: Optional[float] = Field(default=None, ge=0)
    replications: Optional[int] = Field(default=None, ge=1)
    estimator: Estimator = Estimator.ALL_NODES
    confidence: Optional[float] = Field(default=None, ge=0, lt=1)
    workers: Optional[int] = Field(default=None, ge=1)

    def to_config(self, seed: int) -> SimConfig:
        return SimConfig(
            horizon=self.horizon,
            warmup=self.warmup,
            replications=self.replications,
            seed=seed,
            estimator=self.estimator,
            confidence=self.confidence,
            workers=self.workers,
        )


CLOSED_FORM_VARIANTS = {
    "grid": ("grid",),
    "ring": ("ring",),
    "fully_connected": ("fully_connected",),
    "unit_hypercube": ("hypercube",),
    "torus_hypercube": ("ddim",),
}


class ExperimentSpec(BaseModel):
    """Declarative sweep description."""

    model_config = ConfigDict(populate_by_name=True, extra="forbid")

    name: str = Field(min_length=1)
    family: Family
    sweep: SweepSpec
    methods: List[Method] = Field(min_length=1)
    closed_forms: List[str] = Field(default_factory=list)
    lambda_: float = Field(default=1.0, alias="lambda", gt=0)
    lambda_e: float = Field(default=1.0, ge=0)
    seed: Optional[int] = None
    simulation: SimulationSettings = Field(default_factory=SimulationSettings)
    output: Optional[str] = None
    description: Optional[str] = None

    @field_validator("family")
    @classmethod
    def _built_family(cls, value: Family) -> Family:
        if value is Family.CUSTOM:
            raise ValueError("experiments sweep built families only")
        return value

    @field_validator("closed_forms")
    @classmethod
    def _known_variants(cls, value: List[str]) -> List[str]:
        unknown = [v for v in value if v not in CLOSED_FORMS]
        if unknown:
            raise ValueError(f"unknown closed forms {unknown}; known: {sorted(CLOSED_FORMS)}")
        return value

    @model_validator(mode="after")
    def _valid_points(self) -> "ExperimentSpec":
        points = self.sweep.expand()
        if not points:
            raise ValueError("sweep has no points")
        check_size = bool({Method.EXACT, Method.SIMULATE} & set(self.methods))
        for point in points:
            try:
                normalize_params(self.family, point, check_size=check_size)
            except GossipAgeError as e:
                raise ValueError(f"invalid sweep point {point}: {e.message}") from e
        return self

    @property
    def resolved_seed(self) -> int:
        return int(get_config().simulation.seed if self.seed is None else self.seed)

    def points(self) -> List[Dict[str, Any]]:
        return self.sweep.expand()

    def variants(self) -> Tuple[str, ...]:
        return tuple(self.closed_forms) or CLOSED_FORM_VARIANTS[self.family.value]

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "ExperimentSpec":
        try:
            raw = json.loads(Path(path).read_text())
        except json.JSONDecodeError as e:
            raise ValidationError(f"Experiment spec {path} is not valid JSON: {e}", details={"path": str(path)}) from e
        if not isinstance(raw, dict):
            raise ValidationError(f"Experiment spec {path} must be a JSON object", details={"path": str(path)})
        validate_required_fields(raw, ("name", "family", "sweep", "methods"))
        try:
            return cls.model_validate(raw)
        except ValueError as e:
            raise ValidationError(f"Invalid experiment spec {path}: {e}", details={"path": str(path)}) from e


def bound_chain_for(family: Family, p: Dict[str, Any], lam_e: float, lam: float) -> bounds.BoundChain:
    """Chain of a family instance from normalized parameters; a torus uses the d-dimensional chain."""
    if family is Family.GRID:
        return bounds.grid_bound_chain(p["m"], p["k"], lam_e, lam)
    if family is Family.RING:
        return bounds.ring_bound_chain(p["n"], p["f"], lam_e, lam)
    if family is Family.UNIT_HYPERCUBE:
        return bounds.unit_hypercube_bound_chain(p["m"], lam_e, lam)
    if family is Family.TORUS_HYPERCUBE:
        return bounds.ddim_bound_chain(p["m"], p["d"], lam_e, lam)
    return bounds.fully_connected_bound_chain(p["n"], lam_e, lam)


def _ring_f(p: Dict[str, Any]) -> float:
    """Closed-form f: floored like the chain, or the real n^α when flooring is off."""
    if "alpha" in p and not get_config().bounds.floor_ring_degree:
        return ring_degree(p["n"], p["alpha"], floor=False)
    return p["f"]


# variant → (function of (params, n, λe, λ), conjecture flag)
CLOSED_FORMS: Dict[str, Tuple[Callable[[Dict[str, Any], int, float, float], float], bool]] = {
    "grid": (lambda p, n, le, l: bounds.grid_closed_form(p["m"], p["k"], le, l), False),
    "grid_asymptotic": (lambda p, n, le, l: bounds.grid_asymptotic(n, le, l), False),
    "thin_grid": (lambda p, n, le, l: bounds.thin_grid_closed_form(n, p["k"], le, l), False),
    "ring": (lambda p, n, le, l: bounds.ring_closed_form(n, _ring_f(p), le, l), False),
    "ring_alpha": (lambda p, n, le, l: bounds.ring_alpha_closed_form(n, p.get("alpha", 0.0), le, l), False),
    "fixed_d_ring": (lambda p, n, le, l: bounds.fixed_d_ring_closed_form(n, p["f"], le, l), False),
    "fully_connected": (lambda p, n, le, l: bounds.fully_connected_closed_form(n, le, l), False),
    "hypercube": (lambda p, n, le, l: bounds.hypercube_closed_form(p["m"], le, l), False),
    "log": (lambda p, n, le, l: (le / l) * bounds.log_reference(n), False),
    "loglog": (lambda p, n, le, l: (le / l) * bounds.loglog_reference(n), False),
    "ddim": (lambda p, n, le, l: bounds.ddim_closed_form(p["m"], p["d"], le, l), True),
}

# references used by growth-curve plots, not upper bounds
REFERENCE_VARIANTS = {"log", "loglog", "ring_alpha", "fixed_d_ring", "grid_asymptotic", "thin_grid"}


def closed_form_value(variant: str, params: Dict[str, Any], n: int, lam_e: float, lam: float) -> Tuple[float, bool]:
    """(value, conjecture) of one closed-form variant at normalized parameters."""
    if variant not in CLOSED_FORMS:
        raise ValidationError(f"unknown closed form {variant!r}; known: {sorted(CLOSED_FORMS)}")
    func, conjecture = CLOSED_FORMS[variant]
    return float(func(params, n, lam_e, lam)), conjecture


def derive_seed(seed: int, index: int) -> int:
    """Per-point seed from the experiment seed and the point index."""
    return int(np.random.SeedSequence([seed, index]).generate_state(1, dtype=np.uint32)[0])


@dataclass
class ResultTable:
    """Rows of one experiment run, already sorted."""
    experiment: str
    schema_version: int
    rows: List[Dict[str, Any]] = field(default_factory=list)

    def by_method(self, method: Union[Method, str]) -> List[Dict[str, Any]]:
        method = Method(method).value
        return [row for row in self.rows if row["method"] == method]

    @property
    def errors(self) -> List[Dict[str, Any]]:
        return [row for row in self.rows if row["error"]]


def _base_row(spec: ExperimentSpec, params: Dict[str, Any], n: int, method: Method, seed: int) -> Dict[str, Any]:
    row = {column: None for column in COLUMNS}
    row.update({
        "schema": get_config().harness.schema_version,
        "experiment": spec.name,
        "family": spec.family.value,
        "params": format_params(params),
        "n": n,
        "method": method.value,
        "variant": "",
        "seed": seed,
        "conjecture": False,
        "error": "",
    })
    return row


def _evaluate_point(spec: ExperimentSpec, index: int, point: Dict[str, Any]) -> List[Dict[str, Any]]:
    """Rows of one sweep point; failures land in the error column."""
    seed = derive_seed(spec.resolved_seed, index)
    check_size = bool({Method.EXACT, Method.SIMULATE} & set(spec.methods))
    params = normalize_params(spec.family, point, check_size=check_size)
    n = node_count(spec.family, params)
    lam, lam_e = spec.lambda_, spec.lambda_e
    rows: List[Dict[str, Any]] = []
    graph: Optional[Graph] = None

    def graph_for_point() -> Graph:
        nonlocal graph
        if graph is None:
            graph = build(spec.family, params, lam, lam_e)
        return graph

    with LogContext(experiment=spec.name, point=index, params=format_params(params)):
        for method in sorted(spec.methods, key=METHOD_ORDER.get):
            variants = spec.variants() if method is Method.CLOSED_FORM else ("",)
            for variant in variants:
                row = _base_row(spec, params, n, method, seed)
                row["variant"] = variant
                try:
                    if method is Method.EXACT:
                        row["value"] = exact_single_node(graph_for_point()).value
                    elif method is Method.SIMULATE:
                        report = simulate(graph_for_point(), spec.simulation.to_config(seed))
                        row["value"] = report.age.value
                        row["ci95"] = report.age.ci_halfwidth
                        row["horizon"] = report.config.horizon
                        row["replications"] = report.config.replications
                    elif method is Method.CHAIN:
                        chain = bound_chain_for(spec.family, params, lam_e, lam)
                        row["value"] = chain.v1
                        row["conjecture"] = chain.conjecture
                    else:
                        row["value"], row["conjecture"] = closed_form_value(variant, params, n, lam_e, lam)
                except Exception as e:
                    if isinstance(e, GossipAgeError):
                        logger.warning("sweep point failed", method=method.value, error=e.message)
                    else:
                        logger.exception("sweep point failed", method=method.value)
                    row["error"] = f"{type(e).__name__}: {e}"
                rows.append(row)

    _mark_soundness(rows, get_config().harness.soundness_sigma)
    return rows


def _mark_soundness(rows: List[Dict[str, Any]], sigma: float) -> None:
    """Fill reference and sound on bound rows when an exact or simulated value exists."""
    reference = None
    for method in (Method.EXACT, Method.SIMULATE):
        for row in rows:
            if row["method"] == method.value and row["value"] is not None and reference is None:
                reference = row
    if reference is None:
        return
    slack = sigma * (reference["ci95"] or 0.0)
    for row in rows:
        if row["method"] not in (Method.CHAIN.value, Method.CLOSED_FORM.value) or row["value"] is None:
            continue
        if row["variant"] in REFERENCE_VARIANTS:
            continue
        row["reference"] = reference["value"]
        floor = reference["value"] - slack
        row["sound"] = row["value"] >= floor - EXACT_RTOL * abs(reference["value"])


def _sort_key(row: Dict[str, Any]) -> Tuple:
    params = tuple(sorted(
        (key, float(value)) for key, value in (part.split("=") for part in row["params"].split(";"))
    ))
    return params, METHOD_ORDER[Method(row["method"])], row["variant"]


@log_performance("harness.run")
def run(spec: ExperimentSpec, workers: Optional[int] = None) -> ResultTable:
    """Evaluate every sweep point with every method."""
    workers = workers or get_config().harness.workers
    points = spec.points()
    logger.info("experiment started", experiment=spec.name, points=len(points),
                methods=[m.value for m in spec.methods], seed=spec.resolved_seed)

    if workers > 1 and len(points) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(points)), initializer=init_worker_config,
                                 initargs=(get_config_manager().snapshot(),)) as pool:
            chunks = list(pool.map(_evaluate_point, itertools.repeat(spec), range(len(points)), points))
    else:
        chunks = [_evaluate_point(spec, index, point) for index, point in enumerate(points)]

    rows = sorted((row for chunk in chunks for row in chunk), key=_sort_key)
    table = ResultTable(experiment=spec.name, schema_version=get_config().harness.schema_version, rows=rows)
    if table.errors:
        logger.warning("experiment finished with failed points", experiment=spec.name, failed=len(table.errors))
    return table


def format_value(value: Any) -> str:
    """CSV rendering: repr for floats, lowercase booleans, empty for None."""
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(table: ResultTable, out: Union[str, Path, TextIO, None] = None,
              timestamp: Optional[bool] = None, columns: Sequence[str] = COLUMNS) -> str:
    """Render rows as CSV behind a ``# schema=…`` header line; returns the text."""
    if timestamp is None:
        timestamp = get_config().harness.timestamp_header
    header = f"# schema={table.schema_version} experiment={table.experiment}"
    if timestamp:
        header += f" generated={datetime.now(timezone.utc).isoformat()}"

    buffer = io.StringIO()
    buffer.write(header + "\n")
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(columns)
    for row in table.rows:
        writer.writerow([format_value(row.get(column)) for column in columns])
    text = buffer.getvalue()

    if isinstance(out, (str, Path)):
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)
    elif out is not None:
        out.write(text)
    return text


@dataclass
class CrosscheckReport:
    """Outcome of a crosscheck."""
    table: ResultTable
    violations: List[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.violations

    def raise_for_violations(self) -> None:
        if self.violations:
            raise SoundnessViolation(
                f"{len(self.violations)} soundness violation(s) in {self.table.experiment}",
                violations=self.violations,
            )


def crosscheck(spec: ExperimentSpec, sigma: Optional[float] = None, slack: Optional[float] = None,
               workers: Optional[int] = None) -> CrosscheckReport:
    """Run a spec and check exact/simulated ≤ chain ≤ slack × closed form per point."""
    settings = get_config()
    sigma = settings.harness.soundness_sigma if sigma is None else sigma
    slack = settings.bounds.closed_form_slack if slack is None else slack
    table = run(spec, workers)
    violations: List[str] = []

    for params, group in itertools.groupby(table.rows, key=lambda row: row["params"]):
        rows = list(group)
        for row in rows:
            if row["error"]:
                violations.append(f"{params} {row['method']}{'/' + row['variant'] if row['variant'] else ''}: "
                                  f"{row['error']}")
        found = {(row["method"], row["variant"]): row for row in rows if row["value"] is not None}
        chain = found.get((Method.CHAIN.value, ""))
        exact = found.get((Method.EXACT.value, ""))
        simulated = found.get((Method.SIMULATE.value, ""))
        if chain is None:
            continue
        if exact is not None and chain["value"] < exact["value"] * (1 - EXACT_RTOL):
            violations.append(f"{params}: chain {chain['value']!r} < exact {exact['value']!r}")
        if simulated is not None:
            floor = simulated["value"] - sigma * (simulated["ci95"] or 0.0)
            if chain["value"] < floor:
                violations.append(f"{params}: chain {chain['value']!r} < simulated {simulated['value']!r} "
                                  f"- {sigma}·CI")
        for (method, variant), row in found.items():
            if method != Method.CLOSED_FORM.value or row["conjecture"] or variant in REFERENCE_VARIANTS:
                continue
            if chain["value"] > slack * row["value"]:
                violations.append(f"{params}: chain {chain['value']!r} > {slack} × closed form "
                                  f"{variant} {row['value']!r}")

    if violations:
        logger.error("crosscheck failed", experiment=spec.name, violations=len(violations))
    else:
        logger.info("crosscheck passed", experiment=spec.name, points=len(spec.points()))
    return CrosscheckReport(table=table, violations=violations)


def oracle_agreement(graph: Graph, seeds: Iterable[int], settings: Optional[SimulationSettings] = None,
                     sigma: Optional[float] = None) -> float:
    """Fraction of seeds whose simulated age lies within sigma CI half-widths of the exact age."""
    sigma = get_config().harness.soundness_sigma if sigma is None else sigma
    settings = settings or SimulationSettings()
    exact = exact_single_node(graph).value
    hits = 0
    total = 0
    for seed in seeds:
        report = simulate(graph, settings.to_config(seed))
        total += 1
        if abs(report.age.value - exact) <= sigma * (report.age.ci_halfwidth or 0.0):
            hits += 1
    if not total:
        raise ValidationError("oracle_agreement needs at least one seed")
    return hits / total
