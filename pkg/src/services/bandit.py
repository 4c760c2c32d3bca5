"""Diagonal LinUCB-style residual policy scored in shadow mode."""
from __future__ import annotations

from dataclasses import dataclass
import math
from typing import Sequence

import numpy as np

from app.schemas import FEATURE_DIM, BanditHyper, BanditState
from services.features import FeatureVector

SCORE_CEILING = 0.999


@dataclass(frozen=True)
class ShadowScore:
    """Residual estimate for one candidate."""

    mu: float
    uncertainty: float
    delta: float
    shadow_score: float


def initial_state(
    lam: float = 1.0,
    hyper: BanditHyper | None = None,
    dim: int = FEATURE_DIM,
) -> BanditState:
    """Ridge initialization: A = lambda, b = 0, n = 0 per dimension."""

    return BanditState(
        A=[float(lam)] * dim,
        b=[0.0] * dim,
        n=[0] * dim,
        lam=lam,
        hyper=hyper or BanditHyper(),
    )


def _as_array(features: FeatureVector | Sequence[float]) -> np.ndarray:
    if isinstance(features, FeatureVector):
        return features.as_array()
    return np.asarray(features, dtype=np.float64)


def theta(state: BanditState) -> np.ndarray:
    return np.asarray(state.b, dtype=np.float64) / np.asarray(state.A, dtype=np.float64)


def shadow_score(state: BanditState, s0: float, features: FeatureVector | Sequence[float]) -> ShadowScore:
    phi = _as_array(features)
    A = np.asarray(state.A, dtype=np.float64)
    b = np.asarray(state.b, dtype=np.float64)
    if phi.shape != A.shape:
        raise ValueError(f"feature dimension {phi.shape[0]} does not match bandit dimension {A.shape[0]}")
    hyper = state.hyper
    mu = float(np.dot(b / A, phi))
    uncertainty = float(math.sqrt(float(np.sum(phi * phi / A))))
    delta = float(np.clip(hyper.gamma * (mu + hyper.alpha * uncertainty), -hyper.delta_max, hyper.delta_max))
    score = float(np.clip(s0 + delta, 0.0, SCORE_CEILING))
    return ShadowScore(mu=mu, uncertainty=uncertainty, delta=delta, shadow_score=score)


def target_propensities(shadow_scores: Sequence[float], temperature: float) -> list[float]:
    """Softmax over shadow scores at the given temperature."""

    if len(shadow_scores) == 0:
        raise ValueError("target_propensities requires at least one candidate")
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    logits = np.asarray(shadow_scores, dtype=np.float64) / temperature
    weights = np.exp(logits - logits.max())
    return (weights / weights.sum()).tolist()


def behavior_propensities(count: int) -> list[float]:
    """The deterministic ranker puts all mass on rank 1."""

    return [1.0 if rank == 0 else 0.0 for rank in range(count)]


def update(
    state: BanditState,
    features: FeatureVector | Sequence[float],
    reward: float,
    learnable: bool,
    confidence: float,
) -> BanditState:
    """Confidence-weighted diagonal update; non-learnable feedback returns the same state."""

    if not learnable:
        return state
    if not -1.0 <= reward <= 1.0:
        raise ValueError("reward must lie in [-1, 1]")
    if not 0.0 <= confidence <= 1.0:
        raise ValueError("confidence must lie in [0, 1]")
    phi = _as_array(features)
    A = np.asarray(state.A, dtype=np.float64)
    b = np.asarray(state.b, dtype=np.float64)
    n = np.asarray(state.n, dtype=np.int64)
    touched = np.abs(phi) > 0
    A = A + confidence * phi * phi
    b = b + confidence * reward * phi
    n = n + touched.astype(np.int64)
    return state.model_copy(update={"A": A.tolist(), "b": b.tolist(), "n": n.tolist()})
