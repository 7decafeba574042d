"""Turns per-group privacy budgets into one noise multiplier and sampling rates.

The planner calibrates a single global noise multiplier sigma from the
strictest finite budget at the target rate q = cohort / population, derives
every group's largest admissible sampling rate at that sigma, and then
shrinks sigma geometrically (factor 0.995) while the population-weighted
expected cohort exceeds the target. A final bisection between the last two
sigma iterates lands the expected cohort within 1e-3 relative of the target.
Shrinking is the right direction: each group's admissible rate grows with
sigma, so the initial calibration starts the expected cohort at or above the
target.

Groups with an infinite budget are pinned at rate 1 and excluded from the
sigma constraint but still count toward the expected cohort. When their
combined size already reaches the target cohort, no sigma can hit the
target; the plan keeps the initial calibration and is flagged
cohort_infeasible instead.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

from .accountant import PrivacyBudget, get_noise, get_sample_rate

SHRINK_FACTOR = 0.995
COHORT_REL_TOL = 1e-3
MAX_PLAN_ITERS = 10_000


@dataclass(frozen=True)
class PrivacyGroupSpec:
    """One budget tier: its epsilon (math.inf allowed) and its client count."""

    epsilon: float
    size: int

    def __post_init__(self) -> None:
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if self.size < 0:
            raise ValueError(f"group size must be >= 0, got {self.size}")


@dataclass(frozen=True)
class SamplingPlan:
    """Planner output: global noise multiplier plus per-group sampling rates.

    cohort_infeasible marks the two degenerate cases (every group
    non-private, or non-private clients alone exceeding the target cohort)
    where the expected cohort cannot be steered to the target.
    """

    sigma_sample: float
    groups: tuple[PrivacyGroupSpec, ...]
    rates: tuple[float, ...]
    expected_cohort: float
    loop_iterations: int
    cohort_infeasible: bool = False

    def rate_for_group(self, group_index: int) -> float:
        return self.rates[group_index]

    def as_dict(self) -> dict:
        return {
            "sigma_sample": self.sigma_sample,
            "groups": [
                {
                    "epsilon": g.epsilon if math.isfinite(g.epsilon) else "inf",
                    "size": g.size,
                    "rate": r,
                }
                for g, r in zip(self.groups, self.rates)
            ],
            "expected_cohort": self.expected_cohort,
            "loop_iterations": self.loop_iterations,
            "cohort_infeasible": self.cohort_infeasible,
        }

    def to_json(self, indent: int | None = 2) -> str:
        return json.dumps(self.as_dict(), indent=indent, sort_keys=True)


def groups_from_client_budgets(
    epsilons,
) -> tuple[tuple[PrivacyGroupSpec, ...], tuple[int, ...]]:
    """Unique-value grouping of per-client budgets.

    Returns the ascending group specs and each client's group index.
    """
    eps = list(epsilons)
    if not eps:
        raise ValueError("need at least one client budget")
    unique = sorted(set(eps))
    index = {e: i for i, e in enumerate(unique)}
    groups = tuple(
        PrivacyGroupSpec(epsilon=e, size=eps.count(e)) for e in unique
    )
    return groups, tuple(index[e] for e in eps)


def _validate_groups(groups, population: int) -> None:
    if not groups:
        raise ValueError("need at least one privacy group")
    prev = 0.0
    for g in groups:
        if not g.epsilon > prev:
            raise ValueError("group epsilons must be strictly increasing")
        prev = g.epsilon
    if sum(g.size for g in groups) != population:
        raise ValueError("group sizes must sum to the population")


def get_group_sampling_rates(
    groups,
    delta: float,
    steps: int,
    cohort: float,
    population: int,
) -> SamplingPlan:
    """Plan sigma and per-group rates so the expected cohort matches the target.

    Deterministic: identical inputs give bit-identical plans. Every finite
    group's composed epsilon at (its rate, sigma_sample, steps, delta) is at
    most its budget, by construction of the rate bisection.
    """
    groups = tuple(groups)
    _validate_groups(groups, population)
    if not 0 < cohort <= population:
        raise ValueError(f"cohort must be in (0, population], got {cohort}")
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")

    finite = [g for g in groups if math.isfinite(g.epsilon)]
    infinite_size = sum(g.size for g in groups if not math.isfinite(g.epsilon))
    q = cohort / population

    if not finite:
        # Non-private population: everyone participates every round.
        return SamplingPlan(
            sigma_sample=0.0,
            groups=groups,
            rates=(1.0,) * len(groups),
            expected_cohort=float(population),
            loop_iterations=0,
            cohort_infeasible=True,
        )

    strictest = PrivacyBudget(epsilon=finite[0].epsilon, delta=delta)
    sigma = get_noise(strictest, q, steps)

    def rates_at(sig: float) -> tuple[float, ...]:
        return tuple(
            get_sample_rate(PrivacyBudget(g.epsilon, delta), sig, steps)
            for g in groups
        )

    def expected(rates) -> float:
        return float(sum(g.size * r for g, r in zip(groups, rates)))

    if len(groups) == 1:
        # Uniform-DP degenerate case: the rate constraint pins q exactly and
        # the calibrated sigma already certifies it.
        return SamplingPlan(
            sigma_sample=sigma,
            groups=groups,
            rates=(q,),
            expected_cohort=float(cohort),
            loop_iterations=0,
        )

    rates = rates_at(sigma)
    iters = 0
    # Covers the within-tolerance case and the (quantization-only) case of
    # starting below target, where raising sigma is never needed for privacy.
    if expected(rates) <= cohort * (1.0 + COHORT_REL_TOL):
        return SamplingPlan(sigma, groups, rates, expected(rates), iters)

    if infinite_size >= cohort:
        # Non-private clients alone exceed the target; no sigma can reduce
        # the average to q. Keep the strictest-budget calibration.
        return SamplingPlan(
            sigma, groups, rates, expected(rates), iters, cohort_infeasible=True
        )

    hi = sigma
    while expected(rates) > cohort:
        hi = sigma
        sigma *= SHRINK_FACTOR
        rates = rates_at(sigma)
        iters += 1
        if iters >= MAX_PLAN_ITERS:
            raise RuntimeError("sampling-rate planning failed to converge")
    lo = sigma

    while abs(expected(rates) - cohort) > COHORT_REL_TOL * cohort:
        if expected(rates) > cohort:
            hi = sigma
        else:
            lo = sigma
        sigma = 0.5 * (lo + hi)
        rates = rates_at(sigma)
        iters += 1
        if iters >= MAX_PLAN_ITERS:
            raise RuntimeError("sampling-rate planning failed to converge")

    return SamplingPlan(sigma, groups, rates, expected(rates), iters)
