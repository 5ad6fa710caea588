"""
Connected node sets: enumeration, neighbor and edge counting, the
minimum-incoming-edge formulas per family and a brute-force oracle that
certifies them on small graphs.

Sets are Python int bitmasks (bit i set when node i is a member), wrapped in
NodeSet for the public API.
"""

import itertools
import math
from dataclasses import dataclass
from typing import Any, Iterable, Iterator, List, Mapping, Optional, Tuple, Union

from .shared.config import get_config
from .shared.error_handler import CapacityError, ValidationError, validate_int_range
from .shared.logging_utils import get_logger, log_performance
from .topology import Family, Graph, iter_nodes

logger = get_logger(__name__)


@dataclass(frozen=True)
class NodeSet:
    """Subset of gossiping nodes as a membership bitmask."""
    mask: int

    @classmethod
    def of(cls, nodes: Iterable[int]) -> "NodeSet":
        mask = 0
        for node in nodes:
            if node < 0:
                raise ValidationError(f"Node indices must be nonnegative, got {node}")
            mask |= 1 << int(node)
        return cls(mask)

    @classmethod
    def full(cls, g: Graph) -> "NodeSet":
        return cls(g.all_nodes_mask)

    def nodes(self) -> Tuple[int, ...]:
        return tuple(iter_nodes(self.mask))

    def __len__(self) -> int:
        return bin(self.mask).count("1")

    def __iter__(self) -> Iterator[int]:
        return iter_nodes(self.mask)

    def __contains__(self, node: int) -> bool:
        return bool(self.mask >> node & 1)

    def __or__(self, other: "NodeSet") -> "NodeSet":
        return NodeSet(self.mask | other.mask)

    def add(self, node: int) -> "NodeSet":
        return NodeSet(self.mask | (1 << node))

    def __bool__(self) -> bool:
        return self.mask != 0

    def __str__(self) -> str:
        return " ".join(str(i) for i in self)


@dataclass(frozen=True)
class EdgeCounts:
    """Incoming edges |E(S)|, inner edges |Ē(S)| and neighbors |N(S)| of a set."""
    incoming: int
    inner: int
    neighbors: int


@dataclass(frozen=True)
class IncomingBound:
    """Lower bound on |E(S)| over connected j-sets, with the regime that produced it."""
    value: float
    regime: str
    conjecture: bool = False


def _check_subset(g: Graph, s: NodeSet) -> int:
    if not s:
        raise ValidationError("Node set must be nonempty")
    if s.mask >> g.n:
        raise ValidationError(f"Node set references nodes outside 0..{g.n - 1}")
    return s.mask


def is_connected(g: Graph, s: Union[NodeSet, int]) -> bool:
    """Connectivity of the subgraph induced by s (edges in either direction)."""
    mask = s.mask if isinstance(s, NodeSet) else s
    if not mask:
        return False
    adjacency = g.adjacency_masks
    reached = mask & -mask
    frontier = reached
    while frontier:
        low = frontier & -frontier
        frontier ^= low
        fresh = adjacency[low.bit_length() - 1] & mask & ~reached
        reached |= fresh
        frontier |= fresh
    return reached == mask


def neighbor_mask(g: Graph, mask: int) -> int:
    """Bitmask of nodes outside the set with at least one edge into it."""
    in_masks = g.in_masks
    out = 0
    rest = mask
    while rest:
        low = rest & -rest
        rest ^= low
        out |= in_masks[low.bit_length() - 1]
    return out & ~mask


def neighbor_set(g: Graph, s: NodeSet) -> NodeSet:
    """N(S) = {i ∉ S : λ_i(S) > 0}."""
    return NodeSet(neighbor_mask(g, _check_subset(g, s)))


def edge_counts(g: Graph, s: NodeSet) -> EdgeCounts:
    """Slot-weighted incoming and inner edge counts of s.

    An edge of rate r counts as r / unit_rate parallel edges, so a merged
    wrap-around edge on a k = 2 grid counts twice.
    """
    mask = _check_subset(g, s)
    incoming = 0
    inner_slots = 0
    for j in iter_nodes(mask):
        for i, mult in g.in_slot_edges[j]:
            if mask >> i & 1:
                inner_slots += mult
            else:
                incoming += mult
    return EdgeCounts(incoming=incoming, inner=inner_slots // 2,
                      neighbors=bin(neighbor_mask(g, mask)).count("1"))


def _above(v: int, full: int) -> int:
    return full & ~((1 << (v + 1)) - 1)


def _esu(g: Graph, max_size: int, roots: Iterable[int], every_size: bool) -> Iterator[Tuple[int, int]]:
    """ESU enumeration of connected sets whose smallest member is a root.

    Yields (mask, inner_slots) where inner_slots counts ordered slot pairs
    inside the set divided by two. Each set is produced once.
    """
    adjacency = g.adjacency_masks
    slots = g.slot_edges
    full = g.all_nodes_mask

    def joined(w: int, sub: int) -> int:
        total = 0
        for u, mult in slots[w]:
            if sub >> u & 1:
                total += mult
        return total

    def extend(sub: int, size: int, inner: int, nbhd: int, ext: int, floor: int) -> Iterator[Tuple[int, int]]:
        if every_size or size == max_size:
            yield sub, inner
        if size == max_size:
            return
        while ext:
            low = ext & -ext
            ext ^= low
            w = low.bit_length() - 1
            exclusive = adjacency[w] & ~sub & ~nbhd & floor
            yield from extend(sub | low, size + 1, inner + joined(w, sub),
                              nbhd | adjacency[w], ext | exclusive, floor)

    for v in roots:
        floor = _above(v, full)
        yield from extend(1 << v, 1, 0, adjacency[v], adjacency[v] & floor, floor)


def _anchored(g: Graph, anchor: int, max_size: Optional[int]) -> Iterator[int]:
    """Every connected set containing the anchor, grown one neighbor at a time."""
    adjacency = g.adjacency_masks
    start = 1 << anchor
    stack = [start]
    visited = {start}
    while stack:
        cur = stack.pop()
        yield cur
        if max_size is not None and bin(cur).count("1") >= max_size:
            continue
        frontier = 0
        rest = cur
        while rest:
            low = rest & -rest
            rest ^= low
            frontier |= adjacency[low.bit_length() - 1]
        frontier &= ~cur
        grown = []
        while frontier:
            low = frontier & -frontier
            frontier ^= low
            nxt = cur | low
            if nxt not in visited:
                visited.add(nxt)
                grown.append(nxt)
        stack.extend(reversed(grown))


def enumerate_connected_subsets(g: Graph, *, size: Optional[int] = None, anchor: Optional[int] = None,
                                max_size: Optional[int] = None) -> Iterator[NodeSet]:
    """Stream connected subsets exactly once.

    ``size=j`` yields every connected j-set (j within the size-bounded
    enumeration cap). ``anchor=a`` yields every connected set containing a
    (n within the anchored enumeration cap), optionally up to ``max_size``.
    """
    limits = get_config().limits
    if (size is None) == (anchor is None):
        raise ValidationError("Give exactly one of size or anchor")

    if size is not None:
        size = validate_int_range("size", size, 1, g.n)
        if size > limits.enumeration_size_cap:
            raise CapacityError(
                f"Subset size {size} exceeds the enumeration cap {limits.enumeration_size_cap}",
                reached=size, cap=limits.enumeration_size_cap,
            )
        for mask, _ in _esu(g, size, range(g.n), every_size=False):
            yield NodeSet(mask)
        return

    anchor = validate_int_range("anchor", anchor, 0, g.n - 1)
    if g.n > limits.anchored_enumeration_cap:
        raise CapacityError(
            f"Anchored enumeration needs n <= {limits.anchored_enumeration_cap}, got n={g.n}",
            reached=g.n, cap=limits.anchored_enumeration_cap,
        )
    for mask in _anchored(g, anchor, max_size):
        yield NodeSet(mask)


def connected_sets_up_to(g: Graph, max_size: int) -> Iterator[NodeSet]:
    """Every connected set of at most max_size nodes, grouped by smallest member."""
    limits = get_config().limits
    max_size = validate_int_range("max_size", max_size, 1, g.n)
    if max_size > limits.enumeration_size_cap:
        raise CapacityError(
            f"Subset size {max_size} exceeds the enumeration cap {limits.enumeration_size_cap}",
            reached=max_size, cap=limits.enumeration_size_cap,
        )
    for mask, _ in _esu(g, max_size, range(g.n), every_size=True):
        yield NodeSet(mask)


@log_performance("subset_geometry.min_incoming_bruteforce")
def min_incoming_bruteforce(g: Graph, j: int) -> Tuple[int, NodeSet]:
    """Minimum incoming-edge count over connected j-sets, and the first minimizer.

    Vertex-transitive families only search sets whose smallest node is 0;
    every connected set has a translate of that form.
    """
    limits = get_config().limits
    j = validate_int_range("j", j, 1, g.n)
    if j == g.n:
        return 0, NodeSet.full(g)
    if j > limits.enumeration_size_cap:
        raise CapacityError(
            f"Subset size {j} exceeds the enumeration cap {limits.enumeration_size_cap}",
            reached=j, cap=limits.enumeration_size_cap,
        )

    roots = [0] if g.vertex_transitive else range(g.n)
    degrees = g.degrees.tolist()
    best: Optional[int] = None
    witness = 0
    examined = 0
    for mask, inner in _esu(g, j, roots, every_size=False):
        examined += 1
        if g.vertex_transitive:
            incoming = sum(degrees[i] for i in iter_nodes(mask)) - 2 * inner
        else:
            incoming = edge_counts(g, NodeSet(mask)).incoming
        if best is None or incoming < best:
            best, witness = incoming, mask
    logger.debug("extremal search finished", family=g.family.value, params=g.label, j=j,
                 examined=examined, minimum=best)
    return int(best), NodeSet(witness)


def max_inner_bruteforce(g: Graph, j: int, max_combinations: int = 5_000_000) -> Tuple[int, NodeSet]:
    """Maximum inner-edge count over all j-node induced subgraphs."""
    j = validate_int_range("j", j, 1, g.n)
    total = math.comb(g.n, j)
    if total > max_combinations:
        raise CapacityError(f"C({g.n},{j}) = {total} subsets exceed the cap {max_combinations}",
                            reached=total, cap=max_combinations)
    best, witness = -1, 0
    for nodes in itertools.combinations(range(g.n), j):
        counts = edge_counts(g, NodeSet.of(nodes))
        if counts.inner > best:
            best, witness = counts.inner, NodeSet.of(nodes).mask
    return best, NodeSet(witness)


def digit_sum_h(i: int) -> int:
    """Binary digit sum of i."""
    if i < 0:
        raise ValidationError(f"digit_sum_h needs i >= 0, got {i}")
    return bin(i).count("1")


def hart_sum(j: int) -> int:
    """Σ_{i=0}^{j-1} h(i), the maximum inner-edge count of j hypercube nodes."""
    if j < 1:
        raise ValidationError(f"hart_sum needs j >= 1, got {j}")
    total = 0
    bit = 0
    while (1 << bit) < j:
        period = 1 << (bit + 1)
        half = 1 << bit
        total += (j // period) * half + max(0, j % period - half)
        bit += 1
    return total


def ceil_log2(x: int) -> int:
    """⌈log₂ x⌉ for integers x ≥ 1."""
    return (x - 1).bit_length()


def bush_bound(j: int) -> float:
    """½ j⌈log₂ j⌉, an upper bound on hart_sum(j)."""
    if j < 1:
        raise ValidationError(f"bush_bound needs j >= 1, got {j}")
    return 0.5 * j * ceil_log2(j)


def _ceil_two_sqrt(x: int) -> int:
    """⌈2√x⌉ = ⌈√(4x)⌉ in integer arithmetic."""
    if x <= 0:
        return 0
    return math.isqrt(4 * x - 1) + 1


def grid_thresholds(m: int, k: int) -> Tuple[int, int]:
    """(⌊k²/4⌋, ⌊mk − k²/4⌋): last j of the first and the second grid regime."""
    return (k * k) // 4, (4 * m * k - k * k) // 4


def ring_thresholds(n: int, f: int) -> Tuple[int, int]:
    """(f, n − f): the first regime is j ≤ f, the third j ≥ n − f."""
    return f, n - f


def incoming_bound(family: Union[Family, str], params: Mapping[str, Any], j: int,
                   tight: bool = True) -> IncomingBound:
    """Lower bound on |E(S)| for connected j-sets of a family instance.

    ``tight`` selects the ceiling/Hart forms certified by the oracle; the
    relaxed forms (2√j, mj − j⌈log₂ j⌉, ...) are the ones the bound chains use.
    """
    family = Family(family)

    if family is Family.GRID:
        m, k = int(params["m"]), int(params.get("k", params["m"]))
        n = m * k
        j = validate_int_range("j", j, 1, n)
        t1, t2 = grid_thresholds(m, k)
        rest = n - j
        if j <= t1:
            regime = "spiral"
            value = 2.0 * _ceil_two_sqrt(j) if tight else 2.0 * math.sqrt(j)
        elif j <= t2:
            regime = "band"
            value = 2.0 * k
        else:
            regime = "complement"
            value = 2.0 * _ceil_two_sqrt(rest) if tight else 4.0 * math.isqrt(rest)
        conjecture = False
    elif family is Family.RING:
        n, f = int(params["n"]), int(params["f"])
        j = validate_int_range("j", j, 1, n)
        if j <= f:
            regime = "arc_short"
            value = 2.0 * j * f - j * (j - 1)
        elif j < n - f:
            regime = "arc_middle"
            value = float(f * (f + 1))
        else:
            regime = "arc_long"
            value = 2.0 * (n - j) * f - (n - j) * (n - j - 1)
        conjecture = False
    elif family is Family.UNIT_HYPERCUBE:
        m = int(params["m"])
        n = 1 << m
        j = validate_int_range("j", j, 1, n)
        if j <= n // 2:
            regime, x = "lower_half", j
        else:
            regime, x = "upper_half", n - j
        if x == 0:
            value = 0.0
        elif tight:
            value = float(m * x - 2 * hart_sum(x))
        else:
            value = float(m * x - x * ceil_log2(x))
        conjecture = False
    elif family is Family.TORUS_HYPERCUBE:
        m, d = int(params["m"]), int(params["d"])
        n = m ** d
        j = validate_int_range("j", j, 1, n)
        if j <= n / 2:
            regime, x = "lower_half", j
        else:
            regime, x = "upper_half", n - j
        value = float(x) ** ((d - 1) / d) if x else 0.0
        conjecture = d >= 3
    elif family is Family.FULLY_CONNECTED:
        n = int(params["n"])
        j = validate_int_range("j", j, 1, n)
        regime = "complete"
        value = float(j * (n - j))
        conjecture = False
    else:
        raise ValidationError("No incoming-edge formula for custom graphs")

    if j == n:
        return IncomingBound(0.0, "full", conjecture)
    if value < 1.0:
        # a proper subset of a connected graph has at least one incoming edge
        value = max(value, 1.0)
    return IncomingBound(value, regime, conjecture)


def min_incoming_formula(family: Union[Family, str], params: Mapping[str, Any], j: int,
                         tight: bool = True) -> float:
    """Value of incoming_bound."""
    return incoming_bound(family, params, j, tight).value
