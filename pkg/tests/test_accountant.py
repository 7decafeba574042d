"""Accountant tests: closed forms, frozen reference values, and inversions.

Frozen expected values were computed with tests/oracle.py (mpmath, 60
digits) ahead of time; the spot-check test also recomputes a few of them
live.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedidp.accountant import (
    DEFAULT_ORDERS,
    InfeasibleBudgetError,
    MechanismParams,
    PrivacyBudget,
    RdpCurve,
    composed_epsilon,
    epsilon_from_rdp,
    get_noise,
    get_sample_rate,
    rdp_subsampled_gaussian,
)

from oracle import reference_epsilon, reference_rdp

DELTA = 1e-5

# (alpha, rdp) for q=0.01, sigma=1.0, from the mpmath reference.
FROZEN_RDP_Q001_S1 = {
    2: 1.718134220745e-04,
    4: 3.631540489108e-04,
    8: 8.936439076060e-04,
    16: 3.087850783696,
    32: 11.24627593705,
    64: 27.32173187455,
    128: 59.35856863145,
    256: 123.3767703231,
}

# Composed epsilon for (q=0.01, sigma=1.0, steps=1000, delta=1e-5).
FROZEN_EPS_COMPOSED = 2.5383475455

# Exact compliant-boundary sigma for (eps=1, delta=1e-5, q=30/3383, I=420).
FROZEN_SIGMA_BOUNDARY = 1.3397309184

# Exact compliant-boundary rate for eps=3 at that sigma (as returned by
# get_noise) and I=420.
FROZEN_Q3_BOUNDARY = 0.0298751951


class TestRdpCurve:
    def test_zero_rate_leaks_nothing(self):
        curve = rdp_subsampled_gaussian(MechanismParams(q=0.0, sigma=1.0))
        assert all(v == 0.0 for v in curve.values)

    @pytest.mark.parametrize("sigma", [0.5, 1.0, 3.0])
    def test_full_rate_is_plain_gaussian(self, sigma):
        curve = rdp_subsampled_gaussian(MechanismParams(q=1.0, sigma=sigma))
        for alpha, value in zip(curve.orders, curve.values):
            assert value == pytest.approx(alpha / (2 * sigma**2), rel=1e-12)

    def test_matches_frozen_reference_values(self):
        curve = rdp_subsampled_gaussian(MechanismParams(q=0.01, sigma=1.0))
        by_order = dict(zip(curve.orders, curve.values))
        for alpha, expected in FROZEN_RDP_Q001_S1.items():
            assert by_order[alpha] == pytest.approx(expected, rel=1e-9)

    def test_matches_live_reference_at_spot_orders(self):
        for alpha in (2, 16, 64):
            got = rdp_subsampled_gaussian(
                MechanismParams(q=0.03, sigma=1.7), orders=(alpha,)
            ).values[0]
            assert got == pytest.approx(float(reference_rdp(0.03, 1.7, alpha)), rel=1e-10)

    def test_values_non_decreasing_in_order(self):
        for q, sigma in [(0.01, 1.0), (0.1, 4.0), (0.5, 2.0)]:
            curve = rdp_subsampled_gaussian(MechanismParams(q=q, sigma=sigma))
            assert np.all(np.diff(curve.values) >= -1e-12)

    def test_parameter_errors(self):
        with pytest.raises(ValueError):
            MechanismParams(q=1.5, sigma=1.0)
        with pytest.raises(ValueError):
            MechanismParams(q=0.1, sigma=0.0)
        with pytest.raises(ValueError):
            rdp_subsampled_gaussian(MechanismParams(q=0.1, sigma=1.0), orders=(2.5,))
        with pytest.raises(ValueError):
            rdp_subsampled_gaussian(MechanismParams(q=0.1, sigma=1.0), orders=(3, 2))
        with pytest.raises(ValueError):
            RdpCurve(orders=(), values=())


class TestEpsilonFromRdp:
    def test_all_zero_curve_hits_conversion_floor(self):
        curve = RdpCurve(DEFAULT_ORDERS, (0.0,) * len(DEFAULT_ORDERS))
        eps, order = epsilon_from_rdp(curve, steps=7, delta=DELTA)
        assert order == max(DEFAULT_ORDERS)
        assert eps == pytest.approx(math.log(1e5) / (max(DEFAULT_ORDERS) - 1))

    def test_single_order_arithmetic(self):
        eps, order = epsilon_from_rdp(RdpCurve((2,), (0.1,)), steps=10, delta=DELTA)
        assert order == 2
        assert eps == pytest.approx(1.0 + math.log(1e5), rel=1e-12)  # 12.5129...

    def test_composed_matches_frozen_reference(self):
        assert composed_epsilon(0.01, 1.0, 1000, DELTA) == pytest.approx(
            FROZEN_EPS_COMPOSED, rel=1e-8
        )

    def test_composed_matches_live_reference(self):
        for q, sigma, steps in [(0.1, 5.0, 200), (0.02, 1.5, 2000)]:
            assert composed_epsilon(q, sigma, steps, DELTA) == pytest.approx(
                reference_epsilon(q, sigma, steps, DELTA), rel=1e-9
            )

    def test_bad_inputs(self):
        curve = rdp_subsampled_gaussian(MechanismParams(q=0.1, sigma=1.0))
        with pytest.raises(ValueError):
            epsilon_from_rdp(curve, steps=0, delta=DELTA)
        with pytest.raises(ValueError):
            epsilon_from_rdp(curve, steps=10, delta=1.5)


class TestMonotonicity:
    @settings(max_examples=40, deadline=None)
    @given(
        q=st.floats(1e-4, 1.0),
        bump=st.floats(1e-4, 0.5),
        sigma=st.floats(0.1, 50.0),
        steps=st.integers(1, 2000),
    )
    def test_epsilon_non_decreasing_in_q(self, q, bump, sigma, steps):
        hi_q = min(1.0, q + bump)
        assert composed_epsilon(q, sigma, steps, DELTA) <= composed_epsilon(
            hi_q, sigma, steps, DELTA
        ) * (1 + 1e-12)

    @settings(max_examples=40, deadline=None)
    @given(
        q=st.floats(1e-4, 1.0),
        sigma=st.floats(0.1, 50.0),
        factor=st.floats(1.001, 10.0),
        steps=st.integers(1, 2000),
    )
    def test_epsilon_non_increasing_in_sigma(self, q, sigma, factor, steps):
        assert composed_epsilon(q, sigma * factor, steps, DELTA) <= composed_epsilon(
            q, sigma, steps, DELTA
        ) * (1 + 1e-12)

    def test_epsilon_non_decreasing_in_steps(self):
        rng = np.random.default_rng(3)
        for _ in range(25):
            q = float(rng.uniform(1e-3, 1.0))
            sigma = float(rng.uniform(0.2, 20.0))
            steps = int(rng.integers(1, 1000))
            assert composed_epsilon(q, sigma, steps, DELTA) <= composed_epsilon(
                q, sigma, steps + int(rng.integers(1, 500)), DELTA
            ) + 1e-12


class TestGetNoise:
    def test_matches_frozen_boundary(self):
        sigma = get_noise(PrivacyBudget(1.0, DELTA), q=30 / 3383, steps=420)
        assert sigma >= FROZEN_SIGMA_BOUNDARY * (1 - 1e-9)
        assert sigma <= FROZEN_SIGMA_BOUNDARY * (1 + 3e-4)

    def test_round_trip_epsilon(self):
        rng = np.random.default_rng(11)
        for _ in range(10):
            eps = float(rng.uniform(0.3, 10.0))
            q = float(rng.uniform(0.01, 0.5))
            steps = int(rng.integers(10, 800))
            sigma = get_noise(PrivacyBudget(eps, DELTA), q, steps)
            eps_back = composed_epsilon(q, sigma, steps, DELTA)
            assert eps_back <= eps <= eps_back * (1 + 1e-3)

    def test_monotone_in_budget(self):
        sigmas = [
            get_noise(PrivacyBudget(eps, DELTA), q=0.1, steps=100)
            for eps in (0.5, 1.0, 2.0, 4.0, 8.0)
        ]
        assert all(a >= b for a, b in zip(sigmas, sigmas[1:]))

    def test_infeasible_budget_raises(self):
        # Below the conversion floor log(1/delta)/(alpha_max - 1) no sigma helps.
        with pytest.raises(InfeasibleBudgetError):
            get_noise(PrivacyBudget(0.01, DELTA), q=0.1, steps=100)

    def test_rejects_infinite_budget_and_bad_q(self):
        with pytest.raises(ValueError):
            get_noise(PrivacyBudget(math.inf, DELTA), q=0.1, steps=10)
        with pytest.raises(ValueError):
            get_noise(PrivacyBudget(1.0, DELTA), q=0.0, steps=10)


class TestGetSampleRate:
    def test_infinite_budget_joins_every_round(self):
        assert get_sample_rate(PrivacyBudget(math.inf, DELTA), sigma=3.0, steps=100) == 1.0

    def test_matches_frozen_boundary(self):
        sigma = get_noise(PrivacyBudget(1.0, DELTA), q=30 / 3383, steps=420)
        q3 = get_sample_rate(PrivacyBudget(3.0, DELTA), sigma, steps=420)
        assert q3 > 30 / 3383
        assert q3 == pytest.approx(FROZEN_Q3_BOUNDARY, abs=2e-6)

    def test_round_trip_rate(self):
        rng = np.random.default_rng(12)
        for _ in range(10):
            eps = float(rng.uniform(0.3, 8.0))
            q0 = float(rng.uniform(0.01, 0.6))
            steps = int(rng.integers(10, 600))
            sigma = get_noise(PrivacyBudget(eps, DELTA), q0, steps)
            q_back = get_sample_rate(PrivacyBudget(eps, DELTA), sigma, steps)
            assert q_back == pytest.approx(q0, abs=1e-4)

    def test_rate_one_when_budget_is_loose(self):
        # Huge sigma satisfies a moderate budget even at q=1.
        assert get_sample_rate(PrivacyBudget(5.0, DELTA), sigma=500.0, steps=10) == 1.0

    def test_compliant_side(self):
        sigma = 2.5
        for eps in (0.7, 1.3, 2.9):
            q = get_sample_rate(PrivacyBudget(eps, DELTA), sigma, steps=150)
            if 0 < q < 1:
                assert composed_epsilon(q, sigma, 150, DELTA) <= eps
