"""Shadow bandit update and scoring."""

import numpy as np
import pytest

from app.schemas import FEATURE_DIM, BanditHyper
from services import bandit


def _unit(index: int) -> list[float]:
    phi = [0.0] * FEATURE_DIM
    phi[index] = 1.0
    return phi


@pytest.mark.parametrize("updates", [1, 10, 100])
def test_repeated_unit_reward_has_closed_form(updates):
    """n rewards of 1 on a unit feature give theta = n / (1 + n) with lambda = 1."""

    state = bandit.initial_state()
    for _ in range(updates):
        state = bandit.update(state, _unit(0), reward=1.0, learnable=True, confidence=1.0)

    theta = bandit.theta(state)
    assert theta[0] == pytest.approx(updates / (1 + updates))
    assert np.all(theta[1:] == 0.0)
    assert state.n[0] == updates
    assert state.n[1] == 0


def test_non_learnable_feedback_returns_same_state():
    """Non-learnable feedback leaves A, b and n untouched."""

    state = bandit.initial_state()
    assert bandit.update(state, _unit(3), reward=1.0, learnable=False, confidence=1.0) is state


def test_confidence_scales_the_update():
    """Half-confidence moves b half as far."""

    full = bandit.update(bandit.initial_state(), _unit(2), 1.0, True, 1.0)
    half = bandit.update(bandit.initial_state(), _unit(2), 1.0, True, 0.5)
    assert half.b[2] == pytest.approx(full.b[2] / 2)
    assert half.A[2] == pytest.approx(1.5)


@pytest.mark.parametrize("reward, confidence", [(1.5, 1.0), (0.5, 1.2), (0.5, -0.1)])
def test_update_rejects_out_of_range_inputs(reward, confidence):
    """Rewards and confidences outside their ranges are errors."""

    with pytest.raises(ValueError):
        bandit.update(bandit.initial_state(), _unit(0), reward, True, confidence)


def test_shadow_residual_is_bounded():
    """The residual never exceeds delta_max and the shadow score stays clipped."""

    state = bandit.initial_state(hyper=BanditHyper(delta_max=0.05))
    for _ in range(50):
        state = bandit.update(state, [1.0] * FEATURE_DIM, 1.0, True, 1.0)
    high = bandit.shadow_score(state, 0.99, [1.0] * FEATURE_DIM)
    assert high.delta == pytest.approx(0.05)
    assert high.shadow_score == 0.999

    fresh = bandit.shadow_score(bandit.initial_state(), 0.5, [0.0] * FEATURE_DIM)
    assert fresh.mu == 0.0
    assert fresh.uncertainty == 0.0
    assert fresh.shadow_score == 0.5


def test_shadow_score_checks_dimensions():
    """A short feature vector is rejected."""

    with pytest.raises(ValueError):
        bandit.shadow_score(bandit.initial_state(), 0.5, [0.0] * 3)


def test_propensities():
    """Target is a softmax summing to one; behavior is one-hot on rank 1."""

    target = bandit.target_propensities([0.9, 0.5, 0.1], temperature=0.2)
    assert sum(target) == pytest.approx(1.0)
    assert target[0] > target[1] > target[2]
    assert target[0] / target[1] == pytest.approx(np.exp(2.0))
    assert bandit.behavior_propensities(3) == [1.0, 0.0, 0.0]
    with pytest.raises(ValueError):
        bandit.target_propensities([], 0.2)
    with pytest.raises(ValueError):
        bandit.target_propensities([0.5], 0.0)
