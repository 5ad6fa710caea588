"""
Upper bounds on the version age of a single node.

Three layers:

- single-step bounds on v_S from the ages of its one-larger supersets
- bound chains: every chain has the shape

      v_j = (num_j + c_j v_{j+1}) / (j/n + c_j),   v_n = λe/λ

  iterated from j = n−1 down to 1, where c_j is a lower bound on the total
  inflow rate into a j-set in units of λ
- closed forms and the constants they use

Chains are evaluated in numpy chunks. A chunk j = lo..hi is the affine map
v_lo = Σ_j P_j a_j + (Π_j b_j) v_{hi+1} with a_j = num_j / (j/n + c_j),
b_j = c_j / (j/n + c_j) and P_j the product of b over lo..j−1, so chains up to
n = 10⁸ stay O(n) with O(chunk) memory. The full chain is kept only up to
``bounds.chain_store_limit``.
"""

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Any, Callable, Dict, List, Mapping, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy import integrate, optimize, special

from .exact_age import AgeKind, AgeResult
from .shared.config import get_config
from .shared.error_handler import NumericalError, ValidationError, validate_int_range, validate_positive
from .shared.logging_utils import get_logger, log_performance
from .subset_geometry import grid_thresholds
from .topology import Family, format_params

logger = get_logger(__name__)

EULER_GAMMA = float(np.euler_gamma)

# 2β′ rounded to three decimals
GRID_ASYMPTOTIC_COEFFICIENT = 3.764

QUAD_TOLERANCE = 1e-8


# --------------------------------------------------------------------------
# single-step bounds
# --------------------------------------------------------------------------

def _step(lam_e: float, lam0: float, count: int, rate: float, v_next: float, name: str) -> float:
    for label, value in (("lam_e", lam_e), ("lam0", lam0), ("rate", rate)):
        validate_positive(label, value, allow_zero=True)
    if count < 0:
        raise ValidationError(f"{name}: neighbor count must be >= 0, got {count}")
    denominator = lam0 + count * rate
    if denominator <= 0.0:
        raise NumericalError(f"{name}: zero denominator (isolated set without source inflow)")
    return (lam_e + count * rate * v_next) / denominator


def upper_step(lam_e: float, lam0: float, neighbor_count: int, min_rate: float, v_next: float) -> float:
    """Upper bound on v_S given min inflow rate and the largest superset age."""
    return _step(lam_e, lam0, neighbor_count, min_rate, v_next, "upper_step")


def lower_step(lam_e: float, lam0: float, neighbor_count: int, max_rate: float, v_next: float) -> float:
    """Lower bound on v_S given max inflow rate and the smallest superset age."""
    return _step(lam_e, lam0, neighbor_count, max_rate, v_next, "lower_step")


# --------------------------------------------------------------------------
# bound chains
# --------------------------------------------------------------------------

class ChainRegime(NamedTuple):
    """j in [start, end] shares one numerator and one coefficient formula."""
    name: str
    start: int
    end: int
    numerator: float
    coefficient: Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class BoundChain:
    """Backward-evaluated bound chain v_n … v_1.

    ``values[j-1]`` is v_j when the chain was stored; ``samples`` always holds
    v at j = n, j = 1 and the first j of every regime.
    """
    family: Family
    params: Mapping[str, Any]
    n: int
    source_rate: float
    gossip_rate: float
    v1: float
    boundaries: Tuple[Tuple[str, int, int], ...]
    samples: Mapping[int, float]
    values: Optional[np.ndarray] = field(default=None, repr=False)
    conjecture: bool = False

    @property
    def label(self) -> str:
        return format_params(self.params)

    def value_at(self, j: int) -> float:
        if j in self.samples:
            return self.samples[j]
        if self.values is None:
            raise ValidationError(f"v_{j} was not kept; chain of n={self.n} stores only regime samples")
        return float(self.values[j - 1])

    def as_age_result(self) -> AgeResult:
        return AgeResult(
            value=self.v1,
            kind=AgeKind.BOUND_UPPER,
            metadata={"family": self.family.value, "params": self.label, "n": self.n,
                      "conjecture": self.conjecture, "method": "chain"},
        )


def _evaluate_chain(family: Family, params: Mapping[str, Any], n: int, lam_e: float, lam: float,
                    regimes: Sequence[ChainRegime], conjecture: bool = False) -> BoundChain:
    settings = get_config().bounds
    ratio = lam_e / lam
    store = n <= settings.chain_store_limit
    chunk = max(1, int(settings.chunk_size))

    values = np.empty(n, dtype=float) if store else None
    if values is not None:
        values[n - 1] = ratio
    samples: Dict[int, float] = {n: ratio}
    boundaries = []
    v = ratio

    for regime in sorted(regimes, key=lambda r: r.end, reverse=True):
        if regime.start > regime.end:
            continue
        boundaries.append((regime.name, regime.start, regime.end))
        hi = regime.end
        while hi >= regime.start:
            lo = max(regime.start, hi - chunk + 1)
            j = np.arange(lo, hi + 1, dtype=float)
            c = np.broadcast_to(np.asarray(regime.coefficient(j), dtype=float), j.shape)
            denominator = j / n + c
            a = regime.numerator / denominator
            b = c / denominator
            if values is not None:
                block = np.empty_like(a)
                for idx in range(a.shape[0] - 1, -1, -1):
                    v = a[idx] + b[idx] * v
                    block[idx] = v
                values[lo - 1:hi] = block
            else:
                prefix = np.empty_like(b)
                prefix[0] = 1.0
                np.cumprod(b[:-1], out=prefix[1:])
                v = float(np.dot(prefix, a) + prefix[-1] * b[-1] * v)
            hi = lo - 1
        samples[regime.start] = float(v)

    if not math.isfinite(v):
        raise NumericalError(f"{family.value} chain diverged", details={"params": format_params(params)})

    samples[1] = float(v)
    logger.debug("bound chain evaluated", family=family.value, params=format_params(params), n=n,
                 v1=v, stored=store)
    return BoundChain(
        family=family,
        params=dict(params),
        n=n,
        source_rate=lam_e,
        gossip_rate=lam,
        v1=float(v),
        boundaries=tuple(boundaries),
        samples=samples,
        values=values,
        conjecture=conjecture,
    )


def _rates(lam_e: Optional[float], lam: Optional[float]) -> Tuple[float, float]:
    defaults = get_config().rates
    lam_e = validate_positive("lambda_e", defaults.source_rate if lam_e is None else lam_e, allow_zero=True)
    lam = validate_positive("lambda", defaults.gossip_rate if lam is None else lam)
    return lam_e, lam


@log_performance("bounds.grid_bound_chain")
def grid_bound_chain(m: int, k: int, lam_e: Optional[float] = None, lam: Optional[float] = None) -> BoundChain:
    """Three-regime grid chain split at ⌊k²/4⌋ and ⌊mk − k²/4⌋."""
    m = validate_int_range("m", m, 2)
    k = validate_int_range("k", k, 2, m)
    lam_e, lam = _rates(lam_e, lam)
    r = lam_e / lam
    n = m * k
    t1, t2 = grid_thresholds(m, k)
    regimes = [
        ChainRegime("spiral", 1, t1, 2.0 * r, np.sqrt),
        ChainRegime("band", t1 + 1, t2, 2.0 * r, lambda j: np.full_like(j, float(k))),
        ChainRegime("complement", t2 + 1, n - 1, r, lambda j: np.floor(np.sqrt(n - j))),
    ]
    return _evaluate_chain(Family.GRID, {"m": m, "k": k}, n, lam_e, lam, regimes)


def _ring_regimes(n: int, f: int, r: float) -> List[ChainRegime]:
    def short(j: np.ndarray) -> np.ndarray:
        return (2.0 * j * f - j * (j - 1.0)) / (2.0 * f)

    def long(j: np.ndarray) -> np.ndarray:
        rest = n - j
        return (2.0 * rest * f - rest * (rest - 1.0)) / (2.0 * f)

    middle = (f + 1.0) / 2.0
    return [
        ChainRegime("arc_short", 1, f, r, short),
        ChainRegime("arc_middle", f + 1, n - f - 1, r, lambda j: np.full_like(j, middle)),
        ChainRegime("arc_long", n - f, n - 1, r, long),
    ]


@log_performance("bounds.ring_bound_chain")
def ring_bound_chain(n: int, f: int, lam_e: Optional[float] = None, lam: Optional[float] = None) -> BoundChain:
    """Generalized ring chain with regimes j ≤ f, f < j < n−f and j ≥ n−f."""
    n = validate_int_range("n", n, 3)
    f = validate_int_range("f", f, 1, (n - 1) // 2)
    lam_e, lam = _rates(lam_e, lam)
    return _evaluate_chain(Family.RING, {"n": n, "f": f}, n, lam_e, lam, _ring_regimes(n, f, lam_e / lam))


@log_performance("bounds.unit_hypercube_bound_chain")
def unit_hypercube_bound_chain(m: int, lam_e: Optional[float] = None, lam: Optional[float] = None) -> BoundChain:
    """Hypercube chain from the relaxed Hart bound, split at 2^{m−1}."""
    m = validate_int_range("m", m, 1, 52)
    lam_e, lam = _rates(lam_e, lam)
    r = lam_e / lam
    n = 1 << m
    half = n // 2

    def lower(j: np.ndarray) -> np.ndarray:
        return j * (m - np.ceil(np.log2(j))) / m

    def upper(j: np.ndarray) -> np.ndarray:
        rest = n - j
        return rest * (m - np.ceil(np.log2(rest))) / m

    regimes = [
        ChainRegime("lower_half", 1, half, r, lower),
        ChainRegime("upper_half", half + 1, n - 1, r, upper),
    ]
    return _evaluate_chain(Family.UNIT_HYPERCUBE, {"m": m}, n, lam_e, lam, regimes)


@log_performance("bounds.ddim_bound_chain")
def ddim_bound_chain(m: int, d: int, lam_e: Optional[float] = None, lam: Optional[float] = None) -> BoundChain:
    """d-dimensional torus chain from the conjectured j^{(d−1)/d} edge bound.

    d = 2 is accepted so the chain can be compared with the grid chain; the
    result is flagged as a conjecture for d ≥ 3.
    """
    m = validate_int_range("m", m, 2)
    d = validate_int_range("d", d, 2)
    lam_e, lam = _rates(lam_e, lam)
    r = lam_e / lam
    n = m ** d
    exponent = (d - 1) / d

    regimes = [
        ChainRegime("lower_half", 1, n // 2, 2.0 * d * r, lambda j: j ** exponent),
        ChainRegime("upper_half", n // 2 + 1, n - 1, 2.0 * d * r, lambda j: (n - j) ** exponent),
    ]
    return _evaluate_chain(Family.TORUS_HYPERCUBE, {"m": m, "d": d}, n, lam_e, lam, regimes,
                           conjecture=d >= 3)


def fully_connected_bound_chain(n: int, lam_e: Optional[float] = None, lam: Optional[float] = None) -> BoundChain:
    """Complete graph: inflow j(n−j)/(n−1) is exact, so this chain equals the exact age."""
    n = validate_int_range("n", n, 2)
    lam_e, lam = _rates(lam_e, lam)
    regimes = [ChainRegime("complete", 1, n - 1, lam_e / lam, lambda j: j * (n - j) / (n - 1.0))]
    return _evaluate_chain(Family.FULLY_CONNECTED, {"n": n}, n, lam_e, lam, regimes)


# --------------------------------------------------------------------------
# closed forms
# --------------------------------------------------------------------------

def grid_closed_form(m: int, k: int, lam_e: Optional[float] = None, lam: Optional[float] = None) -> float:
    """(λe/λ)(2 + β′(mk)^{1/3} + 2√(2π) e^{−k²/(48m)} √m + 8√k)."""
    m = validate_positive("m", m)
    k = validate_positive("k", k)
    lam_e, lam = _rates(lam_e, lam)
    beta_prime = compute_constants().beta_prime
    return (lam_e / lam) * (
        2.0
        + beta_prime * (m * k) ** (1.0 / 3.0)
        + 2.0 * math.sqrt(2.0 * math.pi) * math.exp(-k * k / (48.0 * m)) * math.sqrt(m)
        + 8.0 * math.sqrt(k)
    )


def grid_asymptotic(n: float, lam_e: Optional[float] = None, lam: Optional[float] = None) -> float:
    """3.764 (λe/λ) n^{1/3} for square grids."""
    n = validate_positive("n", n)
    lam_e, lam = _rates(lam_e, lam)
    return GRID_ASYMPTOTIC_COEFFICIENT * (lam_e / lam) * n ** (1.0 / 3.0)


def thin_grid_closed_form(n: float, k: float, lam_e: Optional[float] = None, lam: Optional[float] = None) -> float:
    """2√(2π)(λe/λ)√(n/k), the dominant term when k stays fixed as m grows."""
    n = validate_positive("n", n)
    k = validate_positive("k", k)
    lam_e, lam = _rates(lam_e, lam)
    return 2.0 * math.sqrt(2.0 * math.pi) * (lam_e / lam) * math.sqrt(n / k)


def ring_closed_form(n: float, f: float, lam_e: Optional[float] = None, lam: Optional[float] = None) -> float:
    """(λe/λ)(5 + ln 2 + 2 ln f + γ) + √π (λe/λ) √(n/f)."""
    n = validate_positive("n", n)
    f = validate_positive("f", f)
    if f < 1:
        raise ValidationError(f"f must be >= 1, got {f}")
    lam_e, lam = _rates(lam_e, lam)
    r = lam_e / lam
    return r * (5.0 + math.log(2.0) + 2.0 * math.log(f) + EULER_GAMMA) + math.sqrt(math.pi) * r * math.sqrt(n / f)


def fully_connected_closed_form(n: float, lam_e: Optional[float] = None, lam: Optional[float] = None) -> float:
    """(λe/λ)(2 + ln(n−1))."""
    n = validate_positive("n", n)
    if n < 2:
        raise ValidationError(f"n must be >= 2, got {n}")
    lam_e, lam = _rates(lam_e, lam)
    return (lam_e / lam) * (2.0 + math.log(n - 1.0))


def fixed_d_ring_closed_form(n: float, d: float, lam_e: Optional[float] = None, lam: Optional[float] = None) -> float:
    """√π (λe/λ) √n / d^{3/2} for a ring with a fixed f = d."""
    n = validate_positive("n", n)
    d = validate_positive("d", d)
    lam_e, lam = _rates(lam_e, lam)
    return math.sqrt(math.pi) * (lam_e / lam) * math.sqrt(n) / d ** 1.5


def ring_alpha_closed_form(n: float, alpha: float, lam_e: Optional[float] = None, lam: Optional[float] = None) -> float:
    """√π (λe/λ) n^{(1−α)/2} for f(n) = n^α."""
    n = validate_positive("n", n)
    if not 0.0 <= alpha < 1.0:
        raise ValidationError(f"alpha must lie in [0, 1), got {alpha}")
    lam_e, lam = _rates(lam_e, lam)
    return math.sqrt(math.pi) * (lam_e / lam) * n ** ((1.0 - alpha) / 2.0)


def hypercube_closed_form(m: int, lam_e: Optional[float] = None, lam: Optional[float] = None) -> float:
    """(λe/λ)(3 + (16/3) log₂n + ln 2 · log₂n · log₂log₂n) with log₂n = m."""
    m = validate_int_range("m", m, 1)
    lam_e, lam = _rates(lam_e, lam)
    loglog = math.log2(m) if m > 1 else 0.0
    return (lam_e / lam) * (3.0 + (16.0 / 3.0) * m + math.log(2.0) * m * loglog)


def ddim_closed_form(m: int, d: int, lam_e: Optional[float] = None, lam: Optional[float] = None) -> float:
    """2d (λe/λ)(1 + C_d L_d n^{1/(d+1)}), the leading term of the conjectured torus bound."""
    m = validate_int_range("m", m, 2)
    d = validate_int_range("d", d, 2)
    lam_e, lam = _rates(lam_e, lam)
    consts = compute_constants()
    c_d = consts.c_d.get(d, ddim_c(d))
    l_d = consts.l_d.get(d) or ddim_l(d)[0]
    n = float(m) ** d
    return 2.0 * d * (lam_e / lam) * (1.0 + c_d * l_d * n ** (1.0 / (d + 1)))


def log_reference(n: float) -> float:
    """ln n, the hypercube growth reference."""
    return math.log(validate_positive("n", n))


def loglog_reference(n: float) -> float:
    """ln n · ln ln n, the hypercube upper growth reference."""
    n = validate_positive("n", n)
    if n <= math.e:
        raise ValidationError(f"ln ln n needs n > e, got {n}")
    return math.log(n) * math.log(math.log(n))


# --------------------------------------------------------------------------
# constants
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Constants:
    """Constants of the closed forms."""
    gamma: float
    beta: float
    beta_closed_form: float
    beta_prime: float
    delta_bound: float
    c_d: Mapping[int, float]
    l_d: Mapping[int, float]


def _quad(func: Callable[[float], float], label: str) -> float:
    value, abserr = integrate.quad(func, 0.0, np.inf, epsabs=1e-13, epsrel=1e-12, limit=200)
    if not math.isfinite(value) or abserr > QUAD_TOLERANCE:
        raise NumericalError(f"Quadrature for {label} did not converge", details={"abserr": abserr})
    return float(value)


def ddim_c(d: int) -> float:
    """C_d = e^{(d−1)π²/(6d²)}."""
    return math.exp((d - 1) * math.pi ** 2 / (6.0 * d * d))


def ddim_l(d: int) -> Tuple[float, float]:
    """L_d by quadrature and by its Γ closed form.

    With t = u^d the integral becomes d ∫ e^{−(d/(d+1)) u^{d+1}} du.
    """
    d = validate_int_range("d", d, 1)
    p = d + 1.0
    a = d / p
    quad = _quad(lambda u: d * math.exp(-a * u ** p), f"L_{d}")
    closed = d * special.gamma(1.0 / p) / (p * a ** (1.0 / p))
    return quad, float(closed)


@lru_cache(maxsize=1)
def compute_constants(dims: Tuple[int, ...] = (2, 3, 4, 5)) -> Constants:
    """γ, β (two ways), β′, π²/48 and the per-dimension C_d, L_d."""
    # t = u² removes the t^{-1/2} singularity at 0
    beta = _quad(lambda u: 2.0 * math.exp(-(2.0 / 3.0) * u ** 3), "beta")
    beta_closed = float((2.0 / 3.0) ** (2.0 / 3.0) * special.gamma(1.0 / 3.0))
    if abs(beta - beta_closed) > QUAD_TOLERANCE:
        raise NumericalError("beta quadrature disagrees with its closed form",
                             details={"quadrature": beta, "closed_form": beta_closed})

    delta = math.pi ** 2 / 48.0
    beta_prime = math.exp(-EULER_GAMMA / 2.0) * math.exp(delta) * beta

    l_d = {}
    for d in dims:
        quad, closed = ddim_l(d)
        if abs(quad - closed) > QUAD_TOLERANCE * max(1.0, closed):
            raise NumericalError(f"L_{d} quadrature disagrees with its closed form",
                                 details={"quadrature": quad, "closed_form": closed})
        l_d[d] = quad

    return Constants(
        gamma=EULER_GAMMA,
        beta=beta,
        beta_closed_form=beta_closed,
        beta_prime=beta_prime,
        delta_bound=delta,
        c_d={d: ddim_c(d) for d in dims},
        l_d=l_d,
    )


# --------------------------------------------------------------------------
# ring log/rational crossover
# --------------------------------------------------------------------------

def ring_log_crossover(alpha: float, factor: float = 10.0) -> float:
    """Largest n where √π√(n/f) = factor · 2 ln f with f = n^α.

    Beyond it the rational term of the ring closed form is at least factor
    times the logarithmic term. Returns 0 when that already holds for every n.
    """
    alpha = float(alpha)
    if not 0.0 <= alpha < 1.0:
        raise ValidationError(f"alpha must lie in [0, 1), got {alpha}")
    if alpha == 0.0:
        return 0.0
    factor = validate_positive("factor", factor)
    slope = (1.0 - alpha) / 2.0
    offset = 0.5 * math.log(math.pi) - math.log(2.0 * factor * alpha)

    def gap(x: float) -> float:
        # log of rational term minus log of the scaled log term, x = ln n
        return offset + slope * x - math.log(x)

    x_min = 1.0 / slope
    if gap(x_min) >= 0.0:
        return 0.0
    upper = 2.0 * x_min
    while gap(upper) < 0.0:
        upper *= 2.0
    root = optimize.brentq(gap, x_min, upper, xtol=1e-12, rtol=1e-14, maxiter=500)
    return math.exp(root)
