"""
Exact stationary version age of connected node sets on small graphs.

The age of a connected set S satisfies

    v_S = (λe + Σ_{i∈N(S)} λ_i(S) v_{S∪{i}}) / (λ0(S) + Σ_{i∈N(S)} λ_i(S))

with λ0(S) = λ|S|/n and λ_i(S) = Σ_{j∈S} λ_ij. Every term on the right is a
strictly larger connected set, so the recursion terminates at the full set
where v = λe/λ. Values are memoized by bitmask over the connected supersets
reachable from the query set.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Mapping, Optional, Tuple

from .shared.config import get_config
from .shared.error_handler import CapacityError, DisconnectedSetError, NumericalError, validate_int_range
from .shared.logging_utils import get_logger, log_performance
from .subset_geometry import NodeSet, _check_subset, connected_sets_up_to, is_connected, neighbor_mask
from .topology import Graph, iter_nodes

logger = get_logger(__name__)


class AgeKind(str, Enum):
    """Provenance of an age value."""
    EXACT = "exact"
    SIMULATED = "simulated"
    BOUND_UPPER = "bound_upper"
    BOUND_LOWER = "bound_lower"


@dataclass(frozen=True)
class AgeResult:
    """Version age in versions, with provenance."""
    value: float
    kind: AgeKind
    ci_halfwidth: Optional[float] = None
    metadata: Mapping[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class StepSandwich:
    """Single-step lower bound, exact value and single-step upper bound of one set."""
    lower: float
    exact: float
    upper: float


class ExactAgeSolver:
    """Memoized evaluator of the set-age recursion on one graph.

    One solver can answer many queries on the same graph; the memo is shared.
    """

    def __init__(self, g: Graph, memo_cap: Optional[int] = None):
        self.g = g
        self.memo_cap = memo_cap or get_config().limits.exact_memo_cap
        self.memo: Dict[int, float] = {g.all_nodes_mask: g.source_rate / g.gossip_rate}
        self._per_node = g.source_to_node_rate

    def inflow(self, mask: int) -> List[Tuple[int, float]]:
        """(i, λ_i(S)) for every neighbor i of S."""
        out_edges = self.g.out_edges
        flows = []
        for i in iter_nodes(neighbor_mask(self.g, mask)):
            total = 0.0
            for j, rate in out_edges[i]:
                if mask >> j & 1:
                    total += rate
            flows.append((i, total))
        return flows

    def age(self, mask: int) -> float:
        cached = self.memo.get(mask)
        if cached is not None:
            return cached

        numerator = self.g.source_rate
        denominator = self._per_node * bin(mask).count("1")
        for i, rate in self.inflow(mask):
            numerator += rate * self.age(mask | (1 << i))
            denominator += rate
        if denominator <= 0.0:
            raise NumericalError("Isolated set: no source or neighbor inflow",
                                 details={"set": str(NodeSet(mask))})

        value = numerator / denominator
        self.memo[mask] = value
        if len(self.memo) > self.memo_cap:
            raise CapacityError(
                f"Exact solve visited more than {self.memo_cap} connected supersets",
                reached=len(self.memo), cap=self.memo_cap,
            )
        return value

    def step_bounds(self, mask: int) -> StepSandwich:
        """Single-step bounds of S from the exact ages of its one-larger supersets.

        Upper: (λe + |N|·min_i λ_i(S)·max_i v_{S∪i}) / (λ0 + |N|·min_i λ_i(S)).
        Lower: the same with the largest inflow rate and the smallest superset age.
        """
        from .bounds import upper_step, lower_step

        exact = self.age(mask)
        flows = self.inflow(mask)
        lam0 = self._per_node * bin(mask).count("1")
        lam_e = self.g.source_rate
        if not flows:
            value = upper_step(lam_e, lam0, 0, 0.0, 0.0)
            return StepSandwich(value, exact, value)
        next_ages = [self.age(mask | (1 << i)) for i, _ in flows]
        rates = [rate for _, rate in flows]
        upper = upper_step(lam_e, lam0, len(flows), min(rates), max(next_ages))
        lower = lower_step(lam_e, lam0, len(flows), max(rates), min(next_ages))
        return StepSandwich(lower, exact, upper)


def _require_connected(g: Graph, s: NodeSet) -> int:
    mask = _check_subset(g, s)
    if not is_connected(g, mask):
        raise DisconnectedSetError(f"Node set {{{s}}} is not connected",
                                   details={"set": str(s), "family": g.family.value})
    return mask


@log_performance("exact_age.exact_version_age")
def exact_version_age(g: Graph, s: NodeSet, memo_cap: Optional[int] = None,
                      solver: Optional[ExactAgeSolver] = None) -> AgeResult:
    """Exact v_S for a connected nonempty set."""
    mask = _require_connected(g, s)
    solver = solver or ExactAgeSolver(g, memo_cap)
    value = solver.age(mask)
    logger.debug("exact age solved", family=g.family.value, params=g.label, size=len(s),
                 supersets=len(solver.memo), value=value)
    return AgeResult(
        value=value,
        kind=AgeKind.EXACT,
        metadata={"family": g.family.value, "params": g.label, "n": g.n,
                  "set_size": len(s), "supersets": len(solver.memo)},
    )


def exact_single_node(g: Graph, anchor: int = 0, memo_cap: Optional[int] = None) -> AgeResult:
    """Exact age of one node; on built families every node has this age."""
    anchor = validate_int_range("anchor", anchor, 0, g.n - 1)
    return exact_version_age(g, NodeSet.of([anchor]), memo_cap)


def exact_age_table(g: Graph, max_size: int, memo_cap: Optional[int] = None) -> List[Tuple[NodeSet, float]]:
    """(S, v_S) for every connected set of at most max_size nodes."""
    solver = ExactAgeSolver(g, memo_cap)
    return [(s, solver.age(s.mask)) for s in connected_sets_up_to(g, max_size)]


def step_bounds_exact(g: Graph, s: NodeSet, memo_cap: Optional[int] = None) -> StepSandwich:
    """(lower step bound, exact v_S, upper step bound) for a connected set."""
    mask = _require_connected(g, s)
    return ExactAgeSolver(g, memo_cap).step_bounds(mask)
