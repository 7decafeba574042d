"""Renyi-DP accountant for the Poisson-subsampled Gaussian mechanism.

Per-step RDP is computed with the integer-order binomial expansion

    A_alpha = sum_{i=0..alpha} C(alpha, i) q^i (1-q)^(alpha-i) exp((i^2 - i) / (2 sigma^2))
    rdp(alpha) = log(A_alpha) / (alpha - 1)

evaluated entirely in log space (log-sum-exp over the binomial terms), which
stays stable for orders up to 256 and sigma down to 1e-2. Composition over
steps is linear in RDP; conversion to (epsilon, delta)-DP uses the classical
bound

    epsilon = min_alpha [ steps * rdp(alpha) + log(1/delta) / (alpha - 1) ].

Both inversions (target epsilon -> sigma, target epsilon -> q) are bisections,
valid because composed epsilon is monotone non-increasing in sigma and
non-decreasing in q. Everything here is a pure function of its arguments and
safe to call concurrently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import gammaln

# Integer orders only: the binomial expansion is exact there, and this grid
# covers every regime the planner or harness touches.
DEFAULT_ORDERS: tuple[int, ...] = tuple(range(2, 65)) + (128, 256)

SIGMA_BRACKET = (1e-2, 1e3)
SIGMA_REL_TOL = 1e-4
RATE_ABS_TOL = 1e-6
MAX_BISECT_ITERS = 200


class InfeasibleBudgetError(ValueError):
    """The privacy budget cannot be met inside the sigma search bracket."""


@dataclass(frozen=True)
class PrivacyBudget:
    """An (epsilon, delta) target. epsilon may be math.inf (non-private)."""

    epsilon: float
    delta: float

    def __post_init__(self) -> None:
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if not 0 < self.delta < 1:
            raise ValueError(f"delta must be in (0, 1), got {self.delta}")

    @property
    def finite(self) -> bool:
        return math.isfinite(self.epsilon)


@dataclass(frozen=True)
class MechanismParams:
    """One subsampled-Gaussian configuration: rate q, multiplier sigma, steps."""

    q: float
    sigma: float
    steps: int = 1

    def __post_init__(self) -> None:
        if not 0.0 <= self.q <= 1.0:
            raise ValueError(f"sampling probability must be in [0, 1], got {self.q}")
        if not self.sigma > 0:
            raise ValueError(f"noise multiplier must be positive, got {self.sigma}")
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")


@dataclass(frozen=True)
class RdpCurve:
    """Per-order RDP values (nats) of a single mechanism step."""

    orders: tuple[int, ...]
    values: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.orders) == 0:
            raise ValueError("curve needs at least one order")
        if len(self.orders) != len(self.values):
            raise ValueError("orders and values must have the same length")
        _validate_orders(self.orders)
        if any(v < 0 or math.isnan(v) for v in self.values):
            raise ValueError("RDP values must be non-negative")


def _validate_orders(orders) -> tuple[int, ...]:
    out = []
    prev = 1
    for a in orders:
        if isinstance(a, float) and not a.is_integer():
            raise ValueError(f"orders must be integers > 1, got {a}")
        a = int(a)
        if a <= prev:
            raise ValueError("orders must be strictly increasing and > 1")
        out.append(a)
        prev = a
    return tuple(out)


class _TermTable:
    """Precomputed binomial-expansion tables for a fixed order grid.

    Rows are orders, columns the expansion index i padded to the largest
    order; masked cells carry -inf in log_comb so they vanish under
    log-sum-exp.
    """

    def __init__(self, orders: tuple[int, ...]):
        self.orders = np.asarray(orders, dtype=np.float64)
        width = int(self.orders.max()) + 1
        i = np.arange(width, dtype=np.float64)
        alpha = self.orders[:, None]
        ii = np.broadcast_to(i[None, :], (len(orders), width))
        mask = ii <= alpha
        self.log_comb = np.where(
            mask, gammaln(alpha + 1) - gammaln(ii + 1) - gammaln(alpha - ii + 1), -np.inf
        )
        self.i = np.where(mask, ii, 0.0)
        self.alpha_minus_i = np.where(mask, alpha - ii, 0.0)
        self.half_i2_minus_i = np.where(mask, 0.5 * (ii * ii - ii), 0.0)

    def rdp(self, q: float, sigma: float) -> np.ndarray:
        if q == 0.0:
            return np.zeros_like(self.orders)
        if q == 1.0:
            # No subsampling: plain Gaussian RDP alpha / (2 sigma^2).
            return self.orders / (2.0 * sigma * sigma)
        log_terms = (
            self.log_comb
            + self.i * math.log(q)
            + self.alpha_minus_i * math.log1p(-q)
            + self.half_i2_minus_i / (sigma * sigma)
        )
        peak = log_terms.max(axis=1, keepdims=True)
        log_a = peak[:, 0] + np.log(np.exp(log_terms - peak).sum(axis=1))
        return log_a / (self.orders - 1.0)


@lru_cache(maxsize=8)
def _table_for(orders: tuple[int, ...]) -> _TermTable:
    return _TermTable(orders)


def rdp_subsampled_gaussian(
    params: MechanismParams, orders=DEFAULT_ORDERS
) -> RdpCurve:
    """RDP of ONE step of the Poisson-subsampled Gaussian at integer orders.

    Compose over rounds by multiplying the values by the step count (see
    epsilon_from_rdp); params.steps is not consumed here.
    """
    orders = _validate_orders(orders)
    values = _table_for(orders).rdp(params.q, params.sigma)
    return RdpCurve(orders=orders, values=tuple(float(v) for v in values))


def epsilon_from_rdp(
    curve: RdpCurve, steps: int, delta: float
) -> tuple[float, int]:
    """Convert a composed RDP curve to (epsilon, delta)-DP.

    Returns the minimum over orders of steps * rdp(alpha) + log(1/delta) /
    (alpha - 1), together with the minimizing order.
    """
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    if not 0 < delta < 1:
        raise ValueError(f"delta must be in (0, 1), got {delta}")
    orders = np.asarray(curve.orders, dtype=np.float64)
    eps = steps * np.asarray(curve.values) + math.log(1.0 / delta) / (orders - 1.0)
    best = int(np.argmin(eps))
    return float(eps[best]), curve.orders[best]


def composed_epsilon(
    q: float, sigma: float, steps: int, delta: float, orders=DEFAULT_ORDERS
) -> float:
    """Composed (epsilon, delta)-DP of `steps` subsampled-Gaussian rounds."""
    MechanismParams(q=q, sigma=sigma, steps=steps)
    if not 0 < delta < 1:
        raise ValueError(f"delta must be in (0, 1), got {delta}")
    return _epsilon(q, sigma, steps, delta, _table_for(_validate_orders(orders)))


def _epsilon(q: float, sigma: float, steps: int, delta: float, table: _TermTable) -> float:
    eps = steps * table.rdp(q, sigma) + math.log(1.0 / delta) / (table.orders - 1.0)
    return float(eps.min())


def get_noise(
    budget: PrivacyBudget, q: float, steps: int, orders=DEFAULT_ORDERS
) -> float:
    """Smallest noise multiplier in the bracket meeting the budget at rate q.

    Bisection over sigma in [1e-2, 1e3] to relative tolerance 1e-4; the
    returned sigma is always on the compliant side. Raises
    InfeasibleBudgetError when even the bracket ceiling cannot meet the
    budget.
    """
    if not budget.finite:
        raise ValueError("get_noise needs a finite epsilon budget")
    if not 0 < q <= 1:
        raise ValueError(f"sampling probability must be in (0, 1], got {q}")
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    table = _table_for(_validate_orders(orders))
    lo, hi = SIGMA_BRACKET
    if _epsilon(q, hi, steps, budget.delta, table) > budget.epsilon:
        raise InfeasibleBudgetError(
            f"epsilon={budget.epsilon} unreachable at q={q}, steps={steps} "
            f"within sigma <= {hi}"
        )
    if _epsilon(q, lo, steps, budget.delta, table) <= budget.epsilon:
        return lo
    for _ in range(MAX_BISECT_ITERS):
        if hi - lo <= SIGMA_REL_TOL * hi:
            break
        mid = 0.5 * (lo + hi)
        if _epsilon(q, mid, steps, budget.delta, table) <= budget.epsilon:
            hi = mid
        else:
            lo = mid
    return hi


def get_sample_rate(
    budget: PrivacyBudget, sigma: float, steps: int, orders=DEFAULT_ORDERS
) -> float:
    """Largest sampling rate in [0, 1] meeting the budget at multiplier sigma.

    Bisection to absolute tolerance 1e-6 in q, returning the compliant side.
    Returns exactly 1.0 when even q=1 meets the budget (always the case for
    an infinite budget). q=0 samples nothing and leaks nothing, so it
    anchors the compliant end for any positive budget even where the
    order-grid conversion floor log(1/delta)/(alpha_max - 1) exceeds it.
    """
    if sigma <= 0:
        raise ValueError(f"noise multiplier must be positive, got {sigma}")
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    if not budget.finite:
        return 1.0
    table = _table_for(_validate_orders(orders))
    if _epsilon(1.0, sigma, steps, budget.delta, table) <= budget.epsilon:
        return 1.0
    lo, hi = 0.0, 1.0
    for _ in range(MAX_BISECT_ITERS):
        if hi - lo <= RATE_ABS_TOL:
            break
        mid = 0.5 * (lo + hi)
        if _epsilon(mid, sigma, steps, budget.delta, table) <= budget.epsilon:
            lo = mid
        else:
            hi = mid
    return lo
