"""
Gossip topologies with exact per-edge Poisson rates.

Every built family is vertex-transitive and every node gossips at total rate
``gossip_rate`` (λ), split evenly over its neighbor slots. The source pushes to
each node at λ/n and updates itself at ``source_rate`` (λe).

Node indexing is fixed so subset fixtures are reproducible:

- ring: node i neighbors i±1 .. i±f (mod n)
- grid(m, k): k rows of m columns, node = row*m + col, wrap-around both ways
- unit hypercube: node label is its m-bit string
- torus hypercube(m, d): node = Σ c_a m^a (coordinate radix)

Parallel wrap-around edges (k = 2 grids, m = 2 tori) are merged by summing rates,
so the per-node out-rate stays λ.
"""

import math
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Any, Dict, Iterable, List, Mapping, Optional, Tuple, Union

import networkx as nx
import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator
from scipy import sparse
from scipy.sparse.csgraph import connected_components

from .shared.config import get_config
from .shared.error_handler import CapacityError, TopologyError, validate_positive
from .shared.logging_utils import get_logger

logger = get_logger(__name__)

# relative tolerance on Σ_j λ_ij = λ after float accumulation
RATE_SUM_RTOL = 1e-9


class Family(str, Enum):
    """Topology families."""
    RING = "ring"
    GRID = "grid"
    UNIT_HYPERCUBE = "unit_hypercube"
    TORUS_HYPERCUBE = "torus_hypercube"
    FULLY_CONNECTED = "fully_connected"
    CUSTOM = "custom"


@dataclass(frozen=True, eq=False)
class Graph:
    """Rate-weighted gossip topology.

    ``rates[i, j]`` is λ_ij, the rate at which node i pushes to node j.
    ``unit_rate`` is the rate of one edge slot of the family; edge counting
    treats an edge of rate r as r / unit_rate parallel edges.
    """
    n: int
    gossip_rate: float
    source_rate: float
    family: Family
    params: Tuple[Tuple[str, Any], ...]
    rates: sparse.csr_matrix = field(repr=False)
    unit_rate: float = 1.0

    @property
    def source_to_node_rate(self) -> float:
        return self.gossip_rate / self.n

    @property
    def params_dict(self) -> Dict[str, Any]:
        return dict(self.params)

    @property
    def label(self) -> str:
        return format_params(self.params_dict)

    @property
    def vertex_transitive(self) -> bool:
        return self.family is not Family.CUSTOM

    @property
    def all_nodes_mask(self) -> int:
        return (1 << self.n) - 1

    def neighbors(self, i: int) -> np.ndarray:
        start, end = self.rates.indptr[i], self.rates.indptr[i + 1]
        return self.rates.indices[start:end]

    def rate(self, i: int, j: int) -> float:
        return float(self.rates[i, j])

    @cached_property
    def out_rates(self) -> np.ndarray:
        """Total push rate of every node."""
        return np.asarray(self.rates.sum(axis=1)).ravel()

    @cached_property
    def multiplicity(self) -> sparse.csr_matrix:
        """Edge slots per ordered pair (rate divided by the unit rate)."""
        mult = self.rates.copy()
        mult.data = np.rint(mult.data / self.unit_rate).astype(np.int64)
        mult.eliminate_zeros()
        return mult

    @cached_property
    def degrees(self) -> np.ndarray:
        """Neighbor slots per node, parallel wrap-around edges counted twice."""
        return np.asarray(self.multiplicity.sum(axis=1)).ravel().astype(np.int64)

    def degree(self, i: int) -> int:
        return int(self.degrees[i])

    @cached_property
    def out_edges(self) -> List[List[Tuple[int, float]]]:
        """Per node, (recipient, λ_ij) pairs."""
        indptr, indices, data = self.rates.indptr, self.rates.indices, self.rates.data
        return [
            list(zip(indices[indptr[i]:indptr[i + 1]].tolist(), data[indptr[i]:indptr[i + 1]].tolist()))
            for i in range(self.n)
        ]

    @cached_property
    def slot_edges(self) -> List[List[Tuple[int, int]]]:
        """Per node, (neighbor, multiplicity) pairs."""
        mult = self.multiplicity
        indptr, indices, data = mult.indptr, mult.indices, mult.data
        return [
            list(zip(indices[indptr[i]:indptr[i + 1]].tolist(), data[indptr[i]:indptr[i + 1]].tolist()))
            for i in range(self.n)
        ]

    @cached_property
    def in_slot_edges(self) -> List[List[Tuple[int, int]]]:
        """Per node j, (sender, multiplicity) pairs of edges entering j."""
        mult = self.multiplicity.T.tocsr()
        indptr, indices, data = mult.indptr, mult.indices, mult.data
        return [
            list(zip(indices[indptr[j]:indptr[j + 1]].tolist(), data[indptr[j]:indptr[j + 1]].tolist()))
            for j in range(self.n)
        ]

    @cached_property
    def in_masks(self) -> List[int]:
        """Per node j, bitmask of nodes i with λ_ij > 0."""
        masks = [0] * self.n
        for i, edges in enumerate(self.out_edges):
            bit = 1 << i
            for j, rate in edges:
                if rate > 0:
                    masks[j] |= bit
        return masks

    @cached_property
    def adjacency_masks(self) -> List[int]:
        """Per node, bitmask of nodes linked to it in either direction."""
        masks = list(self.in_masks)
        for i, edges in enumerate(self.out_edges):
            for j, rate in edges:
                if rate > 0:
                    masks[i] |= 1 << j
        return masks

    def to_networkx(self) -> nx.Graph:
        """Undirected view with the summed slot multiplicity as edge weight."""
        return nx.from_scipy_sparse_array(self.multiplicity.maximum(self.multiplicity.T))

    @classmethod
    def from_rates(cls, n: int, rates: Union[Mapping[Tuple[int, int], float], sparse.spmatrix],
                   gossip_rate: Optional[float] = None, source_rate: Optional[float] = None,
                   unit_rate: Optional[float] = None, label: str = "custom") -> "Graph":
        """Build a custom graph from an explicit rate map.

        Pairs given twice are summed. The unit rate defaults to the smallest
        positive rate so every edge counts at least once.
        """
        if isinstance(rates, Mapping):
            if rates:
                pairs = np.array(list(rates.keys()), dtype=np.int64)
                values = np.array(list(rates.values()), dtype=float)
            else:
                pairs = np.empty((0, 2), dtype=np.int64)
                values = np.empty(0, dtype=float)
            if pairs.size and (pairs.min() < 0 or pairs.max() >= n):
                raise TopologyError("Rate map references nodes outside 0..n-1", family="custom")
            matrix = _assemble(n, pairs[:, 0], pairs[:, 1], values)
        else:
            matrix = sparse.csr_matrix(rates, dtype=float)
            matrix.sum_duplicates()
        if matrix.nnz and matrix.data.min() < 0:
            raise TopologyError("Rates must be nonnegative", family="custom")
        matrix = (matrix - sparse.diags(matrix.diagonal())).tocsr()
        matrix.eliminate_zeros()

        lam, lam_e = _resolve_rates(gossip_rate, source_rate)
        positive = matrix.data[matrix.data > 0]
        graph = cls(
            n=n,
            gossip_rate=lam,
            source_rate=lam_e,
            family=Family.CUSTOM,
            params=(("label", label), ("n", n)),
            rates=matrix.tocsr(),
            unit_rate=float(unit_rate if unit_rate else (positive.min() if positive.size else 1.0)),
        )
        _check_connected(graph)
        return graph

    @classmethod
    def from_networkx(cls, graph: nx.Graph, gossip_rate: Optional[float] = None,
                      source_rate: Optional[float] = None, label: str = "custom") -> "Graph":
        """Build a custom graph where every undirected edge carries λ/Δ each way.

        Δ is the maximum degree, so nodes of lower degree leave part of their
        gossip budget idle. Nodes are relabelled 0..n-1 in sorted order.
        """
        nodes = sorted(graph.nodes())
        index = {node: i for i, node in enumerate(nodes)}
        lam, _ = _resolve_rates(gossip_rate, source_rate)
        max_degree = max((d for _, d in graph.degree()), default=1)
        rate = lam / max_degree
        rates: Dict[Tuple[int, int], float] = {}
        for u, v in graph.edges():
            if u == v:
                continue
            rates[(index[u], index[v])] = rate
            rates[(index[v], index[u])] = rate
        return cls.from_rates(len(nodes), rates, gossip_rate=lam, source_rate=source_rate,
                              unit_rate=rate, label=label)


def format_params(params: Mapping[str, Any]) -> str:
    """Canonical ``key=value;key=value`` rendering used in CSV rows."""
    parts = []
    for key in sorted(params):
        value = params[key]
        if isinstance(value, float) and value.is_integer() and key != "alpha":
            value = int(value)
        parts.append(f"{key}={value}")
    return ";".join(parts)


def ring_degree(n: int, alpha: float, floor: Optional[bool] = None) -> Union[int, float]:
    """f(n) = n^α, floored to an integer in [1, ⌊(n−1)/2⌋] unless floor is off."""
    if floor is None:
        floor = get_config().bounds.floor_ring_degree
    value = float(n) ** float(alpha)
    if not floor:
        return min(max(value, 1.0), (n - 1) / 2)
    f = int(math.floor(value))
    return max(1, min(f, (n - 1) // 2))


def _resolve_rates(gossip_rate: Optional[float], source_rate: Optional[float]) -> Tuple[float, float]:
    rates = get_config().rates
    lam = validate_positive("gossip_rate", rates.gossip_rate if gossip_rate is None else gossip_rate)
    lam_e = validate_positive("source_rate", rates.source_rate if source_rate is None else source_rate,
                              allow_zero=True)
    return lam, lam_e


def _as_int(name: str, value: Any, family: Family) -> int:
    if isinstance(value, bool) or value is None:
        raise TopologyError(f"{family.value}: {name} must be an integer, got {value!r}", family=family.value)
    try:
        number = float(value)
    except (TypeError, ValueError):
        raise TopologyError(f"{family.value}: {name} must be an integer, got {value!r}", family=family.value)
    if not number.is_integer():
        raise TopologyError(f"{family.value}: {name} must be an integer, got {value!r}", family=family.value)
    return int(number)


def normalize_params(family: Union[Family, str], params: Mapping[str, Any],
                     check_size: bool = True) -> Dict[str, Any]:
    """Validate family parameters and resolve derived ones (ring α → f).

    Returns the integer parameter set the builders take. Raises TopologyError
    for ill-posed topologies. ``check_size=False`` skips the node and
    hypercube-dimension caps for callers that never build the graph (bound
    chains reach n = 10⁸).
    """
    family = Family(family)
    limits = get_config().limits
    p = dict(params)

    def need(*names: str) -> None:
        missing = [name for name in names if name not in p]
        if missing:
            raise TopologyError(f"{family.value}: missing parameters {missing}", family=family.value)

    if family is Family.RING:
        need("n")
        n = _as_int("n", p["n"], family)
        if n < 3:
            raise TopologyError(f"ring: n must be >= 3, got {n}", family="ring")
        if "f" in p:
            f = _as_int("f", p["f"], family)
        elif "alpha" in p:
            alpha = float(p["alpha"])
            if not 0.0 <= alpha < 1.0:
                raise TopologyError(f"ring: alpha must lie in [0, 1), got {alpha}", family="ring")
            f = ring_degree(n, alpha, floor=True)
        else:
            raise TopologyError("ring: one of f or alpha is required", family="ring")
        if not 1 <= f <= (n - 1) // 2:
            raise TopologyError(f"ring: f must lie in [1, {(n - 1) // 2}], got {f}", family="ring")
        resolved = {"n": n, "f": f}
        if "alpha" in p and "f" not in p:
            resolved["alpha"] = float(p["alpha"])
        size = n
    elif family is Family.GRID:
        need("m")
        m = _as_int("m", p["m"], family)
        k = _as_int("k", p.get("k", m), family)
        if k < 2 or m < k:
            raise TopologyError(f"grid: need m >= k >= 2, got m={m}, k={k}", family="grid")
        resolved = {"m": m, "k": k}
        size = m * k
    elif family is Family.UNIT_HYPERCUBE:
        need("m")
        m = _as_int("m", p["m"], family)
        if m < 1:
            raise TopologyError(f"unit_hypercube: m must be >= 1, got {m}", family="unit_hypercube")
        if check_size and m > limits.max_hypercube_dim:
            raise CapacityError(
                f"unit_hypercube: m={m} exceeds the configured cap {limits.max_hypercube_dim}",
                reached=m, cap=limits.max_hypercube_dim,
            )
        resolved = {"m": m}
        size = 1 << m
    elif family is Family.TORUS_HYPERCUBE:
        need("m", "d")
        m = _as_int("m", p["m"], family)
        d = _as_int("d", p["d"], family)
        if m < 2 or d < 1:
            raise TopologyError(f"torus_hypercube: need m >= 2 and d >= 1, got m={m}, d={d}",
                                family="torus_hypercube")
        size = m ** d
        resolved = {"m": m, "d": d}
    elif family is Family.FULLY_CONNECTED:
        need("n")
        n = _as_int("n", p["n"], family)
        if n < 2:
            raise TopologyError(f"fully_connected: n must be >= 2, got {n}", family="fully_connected")
        resolved = {"n": n}
        size = n
    else:
        raise TopologyError("custom graphs are built with Graph.from_rates", family="custom")

    if check_size and size > limits.max_nodes:
        raise CapacityError(
            f"{family.value}: n={size} exceeds the configured node cap {limits.max_nodes}",
            reached=size, cap=limits.max_nodes,
        )
    return resolved


def node_count(family: Union[Family, str], params: Mapping[str, Any]) -> int:
    """Node count of a family instance without building it (no node cap)."""
    family = Family(family)
    if family in (Family.RING, Family.FULLY_CONNECTED, Family.CUSTOM):
        return int(params["n"])
    if family is Family.GRID:
        return int(params["m"]) * int(params.get("k", params["m"]))
    if family is Family.UNIT_HYPERCUBE:
        return 1 << int(params["m"])
    return int(params["m"]) ** int(params["d"])


def _assemble(n: int, rows: np.ndarray, cols: np.ndarray, data: np.ndarray) -> sparse.csr_matrix:
    """COO to CSR; duplicate (i, j) entries are summed, merging parallel edges."""
    matrix = sparse.coo_matrix((data, (rows, cols)), shape=(n, n)).tocsr()
    matrix.sum_duplicates()
    matrix.sort_indices()
    return matrix


def _check_connected(graph: Graph) -> None:
    count, _ = connected_components(graph.rates, directed=True, connection="weak")
    if count != 1:
        raise TopologyError(f"{graph.family.value}: graph is not connected ({count} components)",
                            family=graph.family.value, details={"components": int(count)})


def check_invariants(graph: Graph) -> None:
    """Per-node out-rate λ, rate symmetry and connectivity."""
    sums = graph.out_rates
    if not np.allclose(sums, graph.gossip_rate, rtol=RATE_SUM_RTOL, atol=0.0):
        worst = int(np.argmax(np.abs(sums - graph.gossip_rate)))
        raise TopologyError(
            f"{graph.family.value}: node {worst} gossips at {sums[worst]!r}, expected {graph.gossip_rate!r}",
            family=graph.family.value,
        )
    asym = abs(graph.rates - graph.rates.T)
    if asym.nnz and asym.max() > RATE_SUM_RTOL * graph.gossip_rate:
        raise TopologyError(f"{graph.family.value}: rates are not symmetric", family=graph.family.value)
    _check_connected(graph)


def _finish(family: Family, params: Dict[str, Any], n: int, rows: np.ndarray, cols: np.ndarray,
            rate: float, unit_rate: float, lam: float, lam_e: float) -> Graph:
    rates = _assemble(n, rows, cols, np.full(rows.shape[0], rate))
    graph = Graph(
        n=n,
        gossip_rate=lam,
        source_rate=lam_e,
        family=family,
        params=tuple(sorted(params.items())),
        rates=rates,
        unit_rate=unit_rate,
    )
    check_invariants(graph)
    logger.debug("topology built", family=family.value, params=graph.label, n=n, nnz=int(rates.nnz))
    return graph


def build_ring(n: int, f: int, gossip_rate: Optional[float] = None,
               source_rate: Optional[float] = None) -> Graph:
    """Generalized ring: each node pushes to its f nearest nodes on each side at λ/(2f)."""
    params = normalize_params(Family.RING, {"n": n, "f": f})
    n, f = params["n"], params["f"]
    lam, lam_e = _resolve_rates(gossip_rate, source_rate)
    idx = np.arange(n, dtype=np.int64)
    offsets = np.arange(1, f + 1, dtype=np.int64)
    rows = np.concatenate([np.repeat(idx, f), np.repeat(idx, f)])
    cols = np.concatenate([
        ((idx[:, None] + offsets[None, :]) % n).ravel(),
        ((idx[:, None] - offsets[None, :]) % n).ravel(),
    ])
    unit = lam / (2 * f)
    return _finish(Family.RING, params, n, rows, cols, unit, unit, lam, lam_e)


def build_grid(m: int, k: int, gossip_rate: Optional[float] = None,
               source_rate: Optional[float] = None) -> Graph:
    """m×k wrap-around grid (k rows of m nodes), four slots at λ/4."""
    params = normalize_params(Family.GRID, {"m": m, "k": k})
    m, k = params["m"], params["k"]
    lam, lam_e = _resolve_rates(gossip_rate, source_rate)
    n = m * k
    idx = np.arange(n, dtype=np.int64)
    row, col = idx // m, idx % m
    neighbors = [
        row * m + (col + 1) % m,
        row * m + (col - 1) % m,
        ((row + 1) % k) * m + col,
        ((row - 1) % k) * m + col,
    ]
    rows = np.tile(idx, 4)
    cols = np.concatenate(neighbors)
    unit = lam / 4
    return _finish(Family.GRID, params, n, rows, cols, unit, unit, lam, lam_e)


def build_unit_hypercube(m: int, gossip_rate: Optional[float] = None,
                         source_rate: Optional[float] = None) -> Graph:
    """2^m nodes on m-bit labels, Hamming-distance-1 edges at λ/m."""
    params = normalize_params(Family.UNIT_HYPERCUBE, {"m": m})
    m = params["m"]
    lam, lam_e = _resolve_rates(gossip_rate, source_rate)
    n = 1 << m
    idx = np.arange(n, dtype=np.int64)
    rows = np.tile(idx, m)
    cols = np.concatenate([idx ^ (1 << b) for b in range(m)])
    unit = lam / m
    return _finish(Family.UNIT_HYPERCUBE, params, n, rows, cols, unit, unit, lam, lam_e)


def build_torus_hypercube(m: int, d: int, gossip_rate: Optional[float] = None,
                          source_rate: Optional[float] = None) -> Graph:
    """m^d torus, 2d neighbors (±1 per coordinate mod m) at λ/(2d)."""
    params = normalize_params(Family.TORUS_HYPERCUBE, {"m": m, "d": d})
    m, d = params["m"], params["d"]
    lam, lam_e = _resolve_rates(gossip_rate, source_rate)
    n = m ** d
    idx = np.arange(n, dtype=np.int64)
    cols = []
    for axis in range(d):
        stride = m ** axis
        coord = (idx // stride) % m
        cols.append(idx + ((coord + 1) % m - coord) * stride)
        cols.append(idx + ((coord - 1) % m - coord) * stride)
    rows = np.tile(idx, 2 * d)
    unit = lam / (2 * d)
    return _finish(Family.TORUS_HYPERCUBE, params, n, rows, np.concatenate(cols), unit, unit, lam, lam_e)


def build_fully_connected(n: int, gossip_rate: Optional[float] = None,
                          source_rate: Optional[float] = None) -> Graph:
    """Complete graph, λ/(n−1) on every ordered pair."""
    params = normalize_params(Family.FULLY_CONNECTED, {"n": n})
    n = params["n"]
    edge_cap = 8 * get_config().limits.max_nodes
    if n * (n - 1) > edge_cap:
        raise CapacityError(f"fully_connected: {n * (n - 1)} ordered pairs exceed the cap {edge_cap}",
                            reached=n * (n - 1), cap=edge_cap)
    lam, lam_e = _resolve_rates(gossip_rate, source_rate)
    rows, cols = np.nonzero(~np.eye(n, dtype=bool))
    unit = lam / (n - 1)
    return _finish(Family.FULLY_CONNECTED, params, n, rows.astype(np.int64), cols.astype(np.int64),
                   unit, unit, lam, lam_e)


_BUILDERS = {
    Family.RING: lambda p, lam, lam_e: build_ring(p["n"], p["f"], lam, lam_e),
    Family.GRID: lambda p, lam, lam_e: build_grid(p["m"], p["k"], lam, lam_e),
    Family.UNIT_HYPERCUBE: lambda p, lam, lam_e: build_unit_hypercube(p["m"], lam, lam_e),
    Family.TORUS_HYPERCUBE: lambda p, lam, lam_e: build_torus_hypercube(p["m"], p["d"], lam, lam_e),
    Family.FULLY_CONNECTED: lambda p, lam, lam_e: build_fully_connected(p["n"], lam, lam_e),
}


def build(family: Union[Family, str], params: Mapping[str, Any], gossip_rate: Optional[float] = None,
          source_rate: Optional[float] = None) -> Graph:
    """Dispatch to the family builder after resolving derived parameters."""
    family = Family(family)
    resolved = normalize_params(family, params)
    return _BUILDERS[family](resolved, gossip_rate, source_rate)


class TopologyDescriptor(BaseModel):
    """Structured topology description ``{family, params, lambda, lambda_e}``."""

    model_config = ConfigDict(populate_by_name=True, extra="forbid")

    family: Family
    params: Dict[str, float] = Field(default_factory=dict)
    lambda_: Optional[float] = Field(default=None, alias="lambda", gt=0)
    lambda_e: Optional[float] = Field(default=None, ge=0)

    @field_validator("family")
    @classmethod
    def _no_custom(cls, value: Family) -> Family:
        if value is Family.CUSTOM:
            raise ValueError("custom graphs cannot be described by a descriptor")
        return value

    def resolved_params(self) -> Dict[str, Any]:
        return normalize_params(self.family, self.params)

    def build(self) -> Graph:
        return build(self.family, self.params, self.lambda_, self.lambda_e)


def degree_histogram(graph: Graph) -> Dict[int, int]:
    """Neighbor-slot count → number of nodes."""
    values, counts = np.unique(graph.degrees, return_counts=True)
    return {int(v): int(c) for v, c in zip(values, counts)}


def describe(graph: Graph) -> Dict[str, Any]:
    """Summary printed by ``topology inspect``."""
    sums = graph.out_rates
    distinct = np.diff(graph.rates.indptr)
    return {
        "family": graph.family.value,
        "params": graph.label,
        "n": graph.n,
        "lambda": graph.gossip_rate,
        "lambda_e": graph.source_rate,
        "degree_histogram": degree_histogram(graph),
        "distinct_neighbors": {int(v): int(c) for v, c in zip(*np.unique(distinct, return_counts=True))},
        "rate_sum_min": float(sums.min()),
        "rate_sum_max": float(sums.max()),
    }


def iter_nodes(mask: int) -> Iterable[int]:
    """Indices of the set bits of a node mask, ascending."""
    while mask:
        low = mask & -mask
        yield low.bit_length() - 1
        mask ^= low
