"""Off-policy estimators, bootstrap bound and rollout gate."""

import itertools
import random

import numpy as np
import pytest

from app.config import GateSettings
from app.schemas import GateReason, GateRecommendation, OPEReport
from services.ope import (
    LoggedRow,
    bootstrap_lcb,
    EXHAUSTIVE_MAX_N,
    bootstrap_means,
    dr_contributions,
    dr_with_bound,
    estimate_dr,
    estimate_ips,
    estimate_snips,
    evaluate_gate,
    nearest_rank,
)


def _random_rows(seed: int, n: int = 60) -> list[LoggedRow]:
    rng = np.random.default_rng(seed)
    return [
        LoggedRow(
            context_ref=f"e{i}",
            action=f"m{i % 4}",
            behavior_propensity=float(rng.uniform(0.2, 1.0)),
            target_propensity=float(rng.uniform(0.0, 1.0)),
            reward=float(rng.uniform(-1.0, 1.0)),
            reward_model_chosen=float(rng.uniform(-1.0, 1.0)),
            reward_model_policy=float(rng.uniform(-1.0, 1.0)),
        )
        for i in range(n)
    ]


@pytest.mark.parametrize("seed", range(5))
def test_estimators_match_their_definitions(seed):
    """IPS, SNIPS and DR agree with a direct vectorized computation."""

    rows = _random_rows(seed)
    mu = np.array([r.behavior_propensity for r in rows])
    pi = np.array([r.target_propensity for r in rows])
    reward = np.array([r.reward for r in rows])
    q_chosen = np.array([r.reward_model_chosen for r in rows])
    q_policy = np.array([r.reward_model_policy for r in rows])
    w = pi / mu

    assert estimate_ips(rows) == pytest.approx(np.mean(w * reward))
    assert estimate_snips(rows) == pytest.approx(np.sum(w * reward) / np.sum(w))
    assert estimate_dr(rows) == pytest.approx(np.mean(q_policy + w * (reward - q_chosen)))


def test_dr_without_reward_model_equals_ips():
    """With q-hat identically zero, DR reduces to IPS."""

    rows = [
        LoggedRow(r.context_ref, r.action, r.behavior_propensity, r.target_propensity, r.reward)
        for r in _random_rows(11)
    ]
    assert estimate_dr(rows) == pytest.approx(estimate_ips(rows))


def test_snips_of_constant_reward_is_that_constant():
    """Self-normalization returns c whenever every reward is c."""

    rows = [
        LoggedRow(r.context_ref, r.action, r.behavior_propensity, max(r.target_propensity, 0.1), 0.35)
        for r in _random_rows(3)
    ]
    assert estimate_snips(rows) == pytest.approx(0.35)


def test_weight_cap_limits_dr_terms():
    """Capped contributions use min(weight, cap)."""

    row = LoggedRow("e", "m", behavior_propensity=0.1, target_propensity=1.0, reward=1.0)
    assert dr_contributions([row]) == [pytest.approx(10.0)]
    assert dr_contributions([row], weight_cap=2.0) == [pytest.approx(2.0)]


def test_estimators_reject_bad_input():
    """Empty logs and zero behavior propensity are errors."""

    with pytest.raises(ValueError):
        estimate_ips([])
    with pytest.raises(ValueError):
        estimate_dr([LoggedRow("e", "m", behavior_propensity=0.0, target_propensity=0.5, reward=0.0)])
    with pytest.raises(ValueError):
        LoggedRow("e", "m", behavior_propensity=1.0, target_propensity=0.5, reward=2.0)


def test_tiny_bootstrap_is_exhaustive():
    """n=2 enumerates all four resamples; the 5th percentile is the minimum."""

    means = bootstrap_means([0.0, 1.0], resamples=1000, seed=7)
    assert sorted(means.tolist()) == [0.0, 0.5, 0.5, 1.0]
    assert bootstrap_lcb([0.0, 1.0]) == 0.0


def test_bootstrap_is_seeded_and_conservative():
    """Same seed gives the same bound, and the bound sits below the mean."""

    contributions = dr_contributions(_random_rows(5))
    first = bootstrap_lcb(contributions, resamples=500, seed=7)
    second = bootstrap_lcb(contributions, resamples=500, seed=7)
    assert first == second
    assert first <= float(np.mean(contributions))
    with pytest.raises(ValueError):
        bootstrap_lcb([])


def test_nearest_rank():
    """Nearest-rank percentile over a small sample; empty input yields zero."""

    values = [float(v) for v in range(1, 21)]
    assert nearest_rank(values, 0.95) == 19.0
    assert nearest_rank(values, 1.0) == 20.0
    assert nearest_rank([5.0], 0.95) == 5.0
    assert nearest_rank([], 0.95) == 0.0


GOOD = dict(n_rows=80, support=80, fp_rate=0.0, lcb_95=0.5, dr=0.6, baseline_value=0.2, latency_p95=20.0)


@pytest.mark.parametrize(
    "changes, low_risk, rl_control, recommendation, reason",
    [
        ({}, True, False, GateRecommendation.ELIGIBLE_FOR_CANARY, GateReason.ELIGIBLE),
        ({"support": 49}, True, False, GateRecommendation.BLOCKED, GateReason.INSUFFICIENT_SUPPORT),
        ({"insufficient_data": True}, True, False, GateRecommendation.BLOCKED, GateReason.INSUFFICIENT_SUPPORT),
        ({"fp_rate": 0.03}, True, False, GateRecommendation.BLOCKED, GateReason.FALSE_POSITIVE_RISK),
        ({"lcb_95": 0.21}, True, False, GateRecommendation.HOLD_SHADOW, GateReason.LCB_BELOW_BASELINE),
        ({"latency_p95": 150.0}, True, False, GateRecommendation.BLOCKED, GateReason.OPERATIONAL_SAFETY),
        ({}, False, False, GateRecommendation.BLOCKED, GateReason.OPERATIONAL_SAFETY),
        ({}, True, True, GateRecommendation.BLOCKED, GateReason.OPERATIONAL_SAFETY),
        (
            {"support": 10, "fp_rate": 0.5, "lcb_95": 0.0},
            False,
            True,
            GateRecommendation.BLOCKED,
            GateReason.INSUFFICIENT_SUPPORT,
        ),
        ({"fp_rate": 0.5, "lcb_95": 0.0}, True, False, GateRecommendation.BLOCKED, GateReason.FALSE_POSITIVE_RISK),
    ],
)
def test_gate_checks_in_order(changes, low_risk, rl_control, recommendation, reason):
    """The first failing check decides the verdict."""

    report = OPEReport(**{**GOOD, **changes})
    verdict = evaluate_gate(report, GateSettings(), low_risk=low_risk, rl_control=rl_control)
    assert verdict.recommendation is recommendation
    assert verdict.reason is reason


def _small_log(rng: random.Random) -> list[LoggedRow]:
    grid = (0.0, 0.25, 0.5, 0.75, 1.0)
    return [
        LoggedRow(
            context_ref=f"e{i}",
            action="m0",
            behavior_propensity=rng.choice(grid[1:]),
            target_propensity=rng.choice(grid),
            reward=rng.choice((-1.0, -0.5, 0.0, 0.5, 1.0)),
            reward_model_chosen=rng.choice(grid),
            reward_model_policy=rng.choice(grid),
        )
        for i in range(rng.randint(1, 5))
    ]


def test_estimators_agree_with_hand_sums_over_many_small_logs():
    """Plain loops over 300 small logs reproduce IPS, SNIPS and DR."""

    rng = random.Random(2024)
    for _ in range(300):
        rows = _small_log(rng)
        n = len(rows)
        ips = sum(r.target_propensity / r.behavior_propensity * r.reward for r in rows) / n
        dr = sum(
            r.reward_model_policy + r.target_propensity / r.behavior_propensity * (r.reward - r.reward_model_chosen)
            for r in rows
        ) / n
        assert estimate_ips(rows) == pytest.approx(ips)
        assert estimate_dr(rows) == pytest.approx(dr)

        total_weight = sum(r.target_propensity / r.behavior_propensity for r in rows)
        if total_weight > 0:
            snips = sum(r.target_propensity / r.behavior_propensity * r.reward for r in rows) / total_weight
            assert estimate_snips(rows) == pytest.approx(snips)


def test_exhaustive_bootstrap_matches_enumeration_over_many_small_logs():
    """For n <= 4 every resample is enumerated, so the bound is an exact order statistic."""

    rng = random.Random(7)
    for _ in range(100):
        values = [rng.choice((-1.0, -0.5, 0.0, 0.5, 1.0)) for _ in range(rng.randint(1, 4))]
        n = len(values)
        means = sorted(sum(values[i] for i in idx) / n for idx in itertools.product(range(n), repeat=n))
        expected = means[max(1, -(-5 * len(means) // 100)) - 1]
        assert bootstrap_lcb(values, resamples=1000, seed=3) == pytest.approx(expected)


def test_lower_bound_never_exceeds_dr_across_logs():
    """The reported bound stays at or below DR on every log, including tiny ones."""

    settings = GateSettings(resamples=200)
    rng = random.Random(99)
    for _ in range(150):
        rows = _small_log(rng)
        dr, lcb = dr_with_bound(rows, settings)
        assert dr == pytest.approx(estimate_dr(rows))
        assert lcb <= dr


def test_large_inputs_are_sampled_not_enumerated():
    """Past the exhaustive cutoff the bootstrap draws exactly `resamples` seeded means."""

    values = [float(i % 3) - 1.0 for i in range(EXHAUSTIVE_MAX_N + 1)]
    first = bootstrap_means(values, resamples=50, seed=4)
    assert first.shape == (50,)
    assert np.array_equal(first, bootstrap_means(values, resamples=50, seed=4))
    assert bootstrap_means([0.5] * 400, resamples=20, seed=1).tolist() == [0.5] * 20
