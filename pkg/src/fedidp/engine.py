"""Federated round loop with per-client Poisson sampling and DP aggregation.

Each round: every client joins independently with its own probability, the
sampled clients run local SGD, their updates are clipped to the current norm
bound, the server averages the clipped sum over the EXPECTED cohort size
(a data-independent denominator), adds Gaussian noise scaled by the global
noise multiplier, applies the averaged update, and geometrically adapts the
clip norm toward a target quantile of unclipped updates.

Modes share this loop. UNIFORM_DP is the single-group special case of
IDP_SAMPLE. SCALE noises each sampled client's update with its group's own
multiplier instead of noising the aggregate once. NON_PRIVATE disables
clipping, adaptation, and noise.

All randomness is drawn from counter-style streams keyed by
(seed, purpose, round, client), so trajectories are bit-reproducible and
independent of execution order, and noise draws never depend on which
clients were sampled or what they sent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from .accountant import PrivacyBudget, get_noise
from .data import FederatedDataset
from .model import ModelConfig, ParamVector, evaluate, init_params, local_sgd
from .planner import PrivacyGroupSpec, SamplingPlan


class Mode(str, Enum):
    IDP_SAMPLE = "IDP_SAMPLE"
    UNIFORM_DP = "UNIFORM_DP"
    SCALE = "SCALE"
    NON_PRIVATE = "NON_PRIVATE"


# RNG stream purposes.
_INIT, _SAMPLE, _LOCAL, _NOISE, _COUNT, _SCALE_NOISE = range(6)


def _rng(*key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(key))


@dataclass(frozen=True)
class ClipState:
    """Adaptive-clipping state: norm bound plus quantile-tracking knobs."""

    clip_norm: float
    target_quantile: float = 0.5
    clip_lr: float = 0.2
    count_noise_std: float = 0.0

    def __post_init__(self) -> None:
        if not self.clip_norm > 0:
            raise ValueError("clip norm must stay positive")
        if not 0 < self.target_quantile < 1:
            raise ValueError("target quantile must be in (0, 1)")
        if self.clip_lr <= 0 or self.count_noise_std < 0:
            raise ValueError("invalid clip adaptation parameters")


@dataclass
class RoundMetrics:
    round_index: int
    sampled_count: int
    expected_count: float
    clip_norm_used: float
    noise_std_applied: float
    mean_update_norm: float
    train_loss: float
    eval_loss: float
    eval_accuracy: float


@dataclass(frozen=True)
class EngineConfig:
    mode: Mode
    rounds: int
    server_lr: float = 1.0
    client_epochs: int = 2
    client_batch_size: int = 32
    client_lr: float = 0.05
    hidden_dims: tuple[int, ...] = (64,)
    clip_norm_init: float = 0.1
    clip_quantile: float = 0.5
    clip_lr: float = 0.2
    count_noise_frac: float = 0.05
    eval_interval: int = 1
    seed: int = 1

    def __post_init__(self) -> None:
        if self.rounds < 1:
            raise ValueError("need at least one round")
        if self.server_lr <= 0 or self.client_lr <= 0:
            raise ValueError("learning rates must be positive")
        object.__setattr__(self, "mode", Mode(self.mode))
        object.__setattr__(self, "hidden_dims", tuple(self.hidden_dims))


@dataclass(frozen=True)
class ScalePlan:
    """Per-group noise multipliers at one uniform sampling rate."""

    rate: float
    groups: tuple[PrivacyGroupSpec, ...]
    sigmas: tuple[float, ...]

    def sigma_for_group(self, group_index: int) -> float:
        return self.sigmas[group_index]


def non_private_plan(groups, cohort: float, population: int) -> SamplingPlan:
    """Pseudo-plan for the non-private baseline: no noise, uniform rate c/N."""
    groups = tuple(groups)
    q = cohort / population
    return SamplingPlan(
        sigma_sample=0.0,
        groups=groups,
        rates=(q,) * len(groups),
        expected_cohort=float(cohort),
        loop_iterations=0,
    )


def scale_baseline_plan(
    groups, delta: float, steps: int, cohort: float, population: int
) -> ScalePlan:
    """Noise-scaling baseline: everyone samples at c/N, noise varies by group."""
    groups = tuple(groups)
    q = cohort / population
    sigmas = tuple(
        get_noise(PrivacyBudget(g.epsilon, delta), q, steps)
        if math.isfinite(g.epsilon)
        else 0.0
        for g in groups
    )
    return ScalePlan(rate=q, groups=groups, sigmas=sigmas)


def sample_clients(rates: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Poisson sampling: independent Bernoulli(q_i) per client, may be empty."""
    rates = np.asarray(rates, dtype=np.float64)
    if (rates < 0).any() or (rates > 1).any():
        raise ValueError("sampling rates must be in [0, 1]")
    return np.flatnonzero(rng.random(len(rates)) < rates)


def clip_update(delta: np.ndarray, clip_norm: float) -> tuple[np.ndarray, bool]:
    """Scales delta onto the L2 ball of radius clip_norm.

    Also reports whether the update was already inside the ball, which feeds
    the quantile adaptation.
    """
    if not clip_norm > 0:
        raise ValueError("clip norm must be positive")
    norm = float(np.linalg.norm(delta))
    if norm <= clip_norm:
        return delta, True
    return delta * (clip_norm / norm), False


def delta_noise_multiplier(sigma: float, count_noise_std: float) -> float:
    """Noise share left for the update after paying for the noised count.

    The joint release of (clipped sum, clipped count) at overall multiplier
    sigma requires update noise (sigma^-2 - (2 sigma_b)^-2)^-1/2; valid only
    while sigma < 2 sigma_b.
    """
    if sigma == 0.0:
        return 0.0
    if count_noise_std == 0.0:
        return sigma
    if sigma >= 2.0 * count_noise_std:
        raise ValueError(
            f"noise split needs sigma < 2 * count_noise_std, got "
            f"{sigma} >= {2.0 * count_noise_std}"
        )
    return (sigma**-2 - (2.0 * count_noise_std) ** -2) ** -0.5


def aggregate_and_noise(
    updates,
    sigma: float,
    clip_norm: float,
    expected_count: float,
    rng: np.random.Generator,
    dim: int,
    count_noise_std: float = 0.0,
) -> np.ndarray:
    """Noisy mean over the EXPECTED cohort size (fixed denominator).

    Returns (sum of updates + N(0, (sigma_delta * clip_norm)^2 I)) /
    expected_count. With sigma == 0 this is the exact sum over the expected
    count; an empty update list then yields the zero vector.
    """
    if expected_count <= 0:
        raise ValueError("expected count must be positive")
    if sigma < 0:
        raise ValueError("noise multiplier must be >= 0")
    total = np.zeros(dim, dtype=np.float64)
    for u in updates:
        if u.shape != (dim,):
            raise ValueError("update dimension mismatch")
        total += u
    if sigma > 0:
        if not math.isfinite(clip_norm):
            raise ValueError("noising requires a finite clip norm")
        sigma_delta = delta_noise_multiplier(sigma, count_noise_std)
        total += rng.normal(0.0, sigma_delta * clip_norm, size=dim)
    return total / expected_count


def adapt_clip_norm(
    state: ClipState,
    below_count: int,
    expected_count: float,
    rng: np.random.Generator,
) -> ClipState:
    """Geometric step of the clip norm toward the target unclipped quantile.

    The below-threshold count is noised (count_noise_std), normalized by the
    expected cohort, and the norm moves by exp(-clip_lr * (fraction -
    target)); it can never reach zero.
    """
    if expected_count <= 0:
        raise ValueError("expected count must be positive")
    noisy = float(below_count)
    if state.count_noise_std > 0:
        noisy += rng.normal(0.0, state.count_noise_std)
    fraction = noisy / expected_count
    new_norm = state.clip_norm * math.exp(
        -state.clip_lr * (fraction - state.target_quantile)
    )
    return replace(state, clip_norm=new_norm)


def _client_rates(data: FederatedDataset, plan) -> np.ndarray:
    if isinstance(plan, SamplingPlan):
        rates = np.array(
            [plan.rate_for_group(s.group_index) for s in data.shards], dtype=np.float64
        )
    else:
        rates = np.full(data.num_clients, plan.rate, dtype=np.float64)
    for shard, rate in zip(data.shards, rates):
        shard.sampling_rate = float(rate)
    return rates


def _check_plan(config: EngineConfig, plan) -> None:
    if config.mode is Mode.SCALE:
        if not isinstance(plan, ScalePlan):
            raise ValueError("SCALE mode needs a ScalePlan")
        return
    if not isinstance(plan, SamplingPlan):
        raise ValueError(f"{config.mode.value} mode needs a SamplingPlan")
    if config.mode is Mode.NON_PRIVATE and plan.sigma_sample != 0.0:
        raise ValueError("NON_PRIVATE mode needs a zero-noise plan")
    if config.mode is not Mode.NON_PRIVATE and plan.sigma_sample <= 0.0:
        raise ValueError(f"{config.mode.value} mode needs a positive noise multiplier")


def run_training(
    config: EngineConfig,
    data: FederatedDataset,
    plan,
    local_update_fn=None,
) -> tuple[ParamVector, list[RoundMetrics]]:
    """Runs the full round loop; returns final parameters and round metrics.

    `plan` is a SamplingPlan (IDP_SAMPLE / UNIFORM_DP / NON_PRIVATE) or a
    ScalePlan (SCALE). `local_update_fn(params, shard, config, seed)` can
    replace the local SGD step, e.g. to verify that the noise stream does
    not depend on client updates.
    """
    _check_plan(config, plan)
    rates = _client_rates(data, plan)
    expected = float(rates.sum())
    if expected <= 0:
        raise ValueError("expected cohort is zero; no client can ever be sampled")

    model_cfg = ModelConfig(
        input_dim=data.dim,
        hidden_dims=config.hidden_dims,
        num_classes=data.num_classes,
    )
    params = init_params(model_cfg, np.random.SeedSequence((config.seed, _INIT)))
    dim = params.layout.size

    private = config.mode is not Mode.NON_PRIVATE
    sigma = plan.sigma_sample if isinstance(plan, SamplingPlan) else 0.0
    if private:
        count_noise_std = config.count_noise_frac * expected
        if sigma > 0 and sigma >= 2.0 * count_noise_std:
            # Small expected cohorts make the published 0.05*E count noise too
            # weak for the split formula; raising it keeps the split valid.
            count_noise_std = sigma
        clip_state = ClipState(
            clip_norm=config.clip_norm_init,
            target_quantile=config.clip_quantile,
            clip_lr=config.clip_lr,
            count_noise_std=count_noise_std,
        )
    else:
        clip_state = ClipState(clip_norm=math.inf)

    if local_update_fn is None:
        def local_update_fn(p, shard, cfg, seed):
            return local_sgd(
                p,
                shard.features,
                shard.labels,
                epochs=cfg.client_epochs,
                batch_size=cfg.client_batch_size,
                lr=cfg.client_lr,
                seed=seed,
            )

    history: list[RoundMetrics] = []
    for rnd in range(1, config.rounds + 1):
        sampled = sample_clients(rates, _rng(config.seed, _SAMPLE, rnd))

        updates: list[np.ndarray] = []
        norms: list[float] = []
        losses: list[float] = []
        below = 0
        for cid in sampled:
            shard = data.shards[cid]
            delta = local_update_fn(
                params, shard, config, np.random.SeedSequence((config.seed, _LOCAL, rnd, int(cid)))
            )
            clipped, was_below = clip_update(delta.values, clip_state.clip_norm)
            below += was_below
            if config.mode is Mode.SCALE:
                sigma_p = plan.sigma_for_group(shard.group_index)
                if sigma_p > 0:
                    clipped = clipped + _rng(
                        config.seed, _SCALE_NOISE, rnd, int(cid)
                    ).normal(0.0, sigma_p * clip_state.clip_norm, size=dim)
            updates.append(clipped)
            norms.append(min(delta.norm(), clip_state.clip_norm))
            losses.append(evaluate(params, shard.features, shard.labels)[0])

        mean_update = aggregate_and_noise(
            updates,
            sigma,
            clip_state.clip_norm,
            expected,
            _rng(config.seed, _NOISE, rnd),
            dim,
            count_noise_std=clip_state.count_noise_std if private else 0.0,
        )
        params = ParamVector(params.values + config.server_lr * mean_update, params.layout)

        if config.mode is Mode.SCALE:
            applied = (
                math.sqrt(
                    sum(plan.sigma_for_group(data.shards[c].group_index) ** 2 for c in sampled)
                )
                * clip_state.clip_norm
                / expected
            )
        elif sigma > 0:
            applied = (
                delta_noise_multiplier(sigma, clip_state.count_noise_std)
                * clip_state.clip_norm
                / expected
            )
        else:
            applied = 0.0

        clip_norm_used = clip_state.clip_norm
        if private:
            clip_state = adapt_clip_norm(
                clip_state, below, expected, _rng(config.seed, _COUNT, rnd)
            )

        if rnd % config.eval_interval == 0 or rnd == config.rounds:
            eval_loss, eval_acc = evaluate(params, data.test.features, data.test.labels)
        else:
            eval_loss, eval_acc = math.nan, math.nan

        history.append(
            RoundMetrics(
                round_index=rnd,
                sampled_count=len(sampled),
                expected_count=expected,
                clip_norm_used=clip_norm_used,
                noise_std_applied=applied,
                mean_update_norm=float(np.mean(norms)) if norms else 0.0,
                train_loss=float(np.mean(losses)) if losses else math.nan,
                eval_loss=eval_loss,
                eval_accuracy=eval_acc,
            )
        )

    return params, history
