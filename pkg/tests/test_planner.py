"""Planner tests: degenerate collapses, budget compliance, and the grid oracle.

The brute-force oracle value below was produced by re-running the planning
loop with a dense geometric sigma grid (ratio 0.9999) in place of the
shrink-plus-bisection schedule; the hybrid must land within 1% of it.
"""

import json
import math

import pytest

from fedidp.accountant import PrivacyBudget, composed_epsilon, get_noise, get_sample_rate
from fedidp.planner import (
    PrivacyGroupSpec,
    SamplingPlan,
    get_group_sampling_rates,
    groups_from_client_budgets,
)

DELTA = 1e-5

# Dense-grid oracle for eps={1,2,3}, sizes={34,43,23}, N=100, c=10, I=100.
ORACLE_SIGMA_ACQUISTI_I100 = 2.929848

ACQUISTI_GROUPS = (
    PrivacyGroupSpec(1.0, 34),
    PrivacyGroupSpec(2.0, 43),
    PrivacyGroupSpec(3.0, 23),
)


@pytest.fixture(scope="module")
def acquisti_plan() -> SamplingPlan:
    return get_group_sampling_rates(ACQUISTI_GROUPS, DELTA, steps=100, cohort=10, population=100)


class TestSingleGroup:
    def test_uniform_collapse_is_exact(self):
        plan = get_group_sampling_rates(
            (PrivacyGroupSpec(1.0, 100),), DELTA, steps=100, cohort=10, population=100
        )
        assert plan.rates == (0.1,)
        assert plan.loop_iterations == 0
        assert not plan.cohort_infeasible
        assert plan.sigma_sample == get_noise(PrivacyBudget(1.0, DELTA), 0.1, 100)
        assert composed_epsilon(0.1, plan.sigma_sample, 100, DELTA) <= 1.0


class TestMixedBudgets:
    def test_rates_ascend_with_budget(self, acquisti_plan):
        q1, q2, q3 = acquisti_plan.rates
        assert q1 < q2 < q3

    def test_expected_cohort_near_target(self, acquisti_plan):
        assert abs(acquisti_plan.expected_cohort - 10.0) <= 0.01
        assert acquisti_plan.expected_cohort == pytest.approx(
            sum(g.size * r for g, r in zip(ACQUISTI_GROUPS, acquisti_plan.rates))
        )

    def test_every_group_budget_is_met(self, acquisti_plan):
        for group, rate in zip(ACQUISTI_GROUPS, acquisti_plan.rates):
            assert composed_epsilon(rate, acquisti_plan.sigma_sample, 100, DELTA) <= group.epsilon

    def test_sigma_matches_grid_oracle(self, acquisti_plan):
        assert acquisti_plan.sigma_sample == pytest.approx(ORACLE_SIGMA_ACQUISTI_I100, rel=0.01)

    def test_rates_are_the_largest_admissible_at_sigma(self, acquisti_plan):
        for group, rate in zip(ACQUISTI_GROUPS, acquisti_plan.rates):
            assert rate == get_sample_rate(
                PrivacyBudget(group.epsilon, DELTA), acquisti_plan.sigma_sample, 100
            )

    def test_deterministic(self, acquisti_plan):
        again = get_group_sampling_rates(ACQUISTI_GROUPS, DELTA, 100, 10, 100)
        assert again == acquisti_plan


class TestInfiniteBudgetGroups:
    def test_all_non_private_flags_and_maximizes(self):
        plan = get_group_sampling_rates(
            (PrivacyGroupSpec(math.inf, 50),), DELTA, steps=100, cohort=10, population=50
        )
        assert plan.cohort_infeasible
        assert plan.rates == (1.0,)
        assert plan.sigma_sample == 0.0
        assert plan.expected_cohort == 50.0

    def test_feasible_mix_hits_target(self):
        groups = (PrivacyGroupSpec(1.0, 90), PrivacyGroupSpec(math.inf, 10))
        plan = get_group_sampling_rates(groups, DELTA, steps=100, cohort=20, population=100)
        assert not plan.cohort_infeasible
        assert plan.rates[1] == 1.0
        assert abs(plan.expected_cohort - 20.0) <= 0.02
        assert composed_epsilon(plan.rates[0], plan.sigma_sample, 100, DELTA) <= 1.0

    def test_oversized_non_private_mass_keeps_calibration(self):
        # The published two-group comparison setup: 5% of 3383 clients are
        # non-private, which already exceeds the 30-client target cohort.
        groups = (PrivacyGroupSpec(0.6, 3214), PrivacyGroupSpec(math.inf, 169))
        plan = get_group_sampling_rates(groups, DELTA, steps=420, cohort=30, population=3383)
        assert plan.cohort_infeasible
        assert plan.loop_iterations == 0
        assert plan.rates[1] == 1.0
        sigma0 = get_noise(PrivacyBudget(0.6, DELTA), 30 / 3383, 420)
        assert plan.sigma_sample == sigma0
        assert plan.rates[0] == get_sample_rate(PrivacyBudget(0.6, DELTA), sigma0, 420)
        assert composed_epsilon(plan.rates[0], plan.sigma_sample, 420, DELTA) <= 0.6
        assert plan.expected_cohort >= 169.0


class TestValidation:
    def test_epsilons_must_ascend(self):
        with pytest.raises(ValueError):
            get_group_sampling_rates(
                (PrivacyGroupSpec(2.0, 50), PrivacyGroupSpec(1.0, 50)), DELTA, 10, 5, 100
            )

    def test_sizes_must_sum_to_population(self):
        with pytest.raises(ValueError):
            get_group_sampling_rates((PrivacyGroupSpec(1.0, 60),), DELTA, 10, 5, 100)

    def test_cohort_bounds(self):
        with pytest.raises(ValueError):
            get_group_sampling_rates((PrivacyGroupSpec(1.0, 100),), DELTA, 10, 0, 100)
        with pytest.raises(ValueError):
            get_group_sampling_rates((PrivacyGroupSpec(1.0, 100),), DELTA, 10, 101, 100)

    def test_group_spec_validation(self):
        with pytest.raises(ValueError):
            PrivacyGroupSpec(0.0, 10)
        with pytest.raises(ValueError):
            PrivacyGroupSpec(1.0, -1)


class TestGroupsFromClientBudgets:
    def test_unique_value_grouping(self):
        budgets = [2.0, 1.0, 2.0, math.inf, 1.0, 1.0]
        groups, index = groups_from_client_budgets(budgets)
        assert groups == (
            PrivacyGroupSpec(1.0, 3),
            PrivacyGroupSpec(2.0, 2),
            PrivacyGroupSpec(math.inf, 1),
        )
        assert index == (1, 0, 1, 2, 0, 0)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            groups_from_client_budgets([])


class TestSerialization:
    def test_json_fields(self, acquisti_plan):
        payload = json.loads(acquisti_plan.to_json())
        assert set(payload) == {
            "sigma_sample",
            "groups",
            "expected_cohort",
            "loop_iterations",
            "cohort_infeasible",
        }
        assert [g["size"] for g in payload["groups"]] == [34, 43, 23]
        assert [g["epsilon"] for g in payload["groups"]] == [1.0, 2.0, 3.0]
        assert payload["sigma_sample"] == acquisti_plan.sigma_sample

    def test_infinite_epsilon_serializes_as_string(self):
        plan = get_group_sampling_rates(
            (PrivacyGroupSpec(math.inf, 10),), DELTA, steps=10, cohort=5, population=10
        )
        payload = json.loads(plan.to_json())
        assert payload["groups"][0]["epsilon"] == "inf"
