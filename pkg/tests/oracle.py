"""Independent high-precision reference accountant used only by tests.

Evaluates the subsampled-Gaussian binomial sum directly with mpmath
arbitrary-precision arithmetic (60 significant digits), with no log-sum-exp
tricks and no code shared with the package implementation.
"""

import math

from mpmath import binomial, exp, log, mp, mpf

mp.dps = 60

ORDERS = tuple(range(2, 65)) + (128, 256)


def reference_rdp(q: float, sigma: float, alpha: int):
    """One-step RDP at an integer order, computed in exact-style arithmetic."""
    if q == 0:
        return mpf(0)
    if q == 1:
        return mpf(alpha) / (2 * mpf(sigma) ** 2)
    q = mpf(q)
    sigma = mpf(sigma)
    total = mpf(0)
    for i in range(alpha + 1):
        total += (
            binomial(alpha, i)
            * q**i
            * (1 - q) ** (alpha - i)
            * exp((i * i - i) / (2 * sigma**2))
        )
    return log(total) / (alpha - 1)


def reference_epsilon(q: float, sigma: float, steps: int, delta: float, orders=ORDERS) -> float:
    """Composed (epsilon, delta)-DP via the classical RDP conversion."""
    best = None
    for alpha in orders:
        eps = steps * reference_rdp(q, sigma, alpha) + log(1 / mpf(delta)) / (alpha - 1)
        if best is None or eps < best:
            best = eps
    return float(best)


def reference_noise(
    eps: float, delta: float, q: float, steps: int, lo: float = 1e-2, hi: float = 1e3
) -> float:
    """Tight bisection (80 halvings) for the smallest compliant sigma."""
    if reference_epsilon(q, hi, steps, delta) > eps:
        raise ValueError("infeasible in bracket")
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if reference_epsilon(q, mid, steps, delta) <= eps:
            hi = mid
        else:
            lo = mid
    return hi


def reference_sample_rate(eps: float, delta: float, sigma: float, steps: int) -> float:
    """Tight bisection (50 halvings) for the largest compliant rate."""
    if math.isinf(eps) or reference_epsilon(1.0, sigma, steps, delta) <= eps:
        return 1.0
    lo, hi = 0.0, 1.0
    for _ in range(50):
        mid = 0.5 * (lo + hi)
        if reference_epsilon(mid, sigma, steps, delta) <= eps:
            lo = mid
        else:
            hi = mid
    return lo
