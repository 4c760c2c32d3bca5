"""Feature extraction, deterministic ranking and decision-surface tests."""

import pytest

from app.config import RankerSettings
from app.schemas import FEATURE_DIM, DecisionKind, MatchRequest, SessionInfo
from services.features import FeatureVector, extract_features
from services.normalize import normalize_context
from services.ranking import (
    RankedCandidate,
    RankingService,
    Thresholds,
    decide,
    retrieve_candidates,
    score_candidate,
    specificity,
)
from tests.fixtures import dqn_query, dqn_resolution, memory_from, td3_rival


def _ranked(memory_id: str, score: float, *, specific: bool = True, rank: int = 1) -> RankedCandidate:
    memory = memory_from(dqn_resolution(), memory_id=memory_id)
    return RankedCandidate(
        memory=memory, score=score, features=FeatureVector.zeros(), specificity_ok=specific, rank=rank
    )


def test_features_are_bounded_and_deterministic():
    """Eighteen components in [-1, 1], identical across calls."""

    profile = normalize_context(dqn_query())
    memory = memory_from(dqn_resolution())
    first = extract_features(profile, memory)
    second = extract_features(profile, memory)

    assert len(first.values) == FEATURE_DIM == 18
    assert first == second
    assert all(-1.0 <= value <= 1.0 for value in first.values)
    assert first["algorithm_family"] == 1.0
    assert first["scope"] == 1.0


def test_theory_dimensions_can_be_disabled():
    """The ablation switch zeroes the theory-aware components."""

    profile = normalize_context(dqn_query())
    features = extract_features(profile, memory_from(dqn_resolution()), theory_metadata=False)
    for name in ("problem_family", "algorithm_family", "theory", "validation_tier"):
        assert features[name] == 0.0


def test_matching_memory_beats_hard_negative():
    """The lexically close TD3 rival loses on algorithm and root cause."""

    service = RankingService(RankerSettings())
    profile = normalize_context(dqn_query())
    positive = memory_from(dqn_resolution())
    rival = memory_from(td3_rival())

    ranked = service.rank(profile, [rival, positive])
    decision = service.decide(ranked)

    assert [candidate.memory_id for candidate in ranked] == [positive.memory_id, rival.memory_id]
    assert ranked[1].features["algorithm_family"] == -1.0
    assert ranked[1].features["root_cause"] == -1.0
    assert decision.kind is DecisionKind.MATCH
    assert decision.top.memory_id == positive.memory_id
    assert decision.margin >= service.thresholds.tau_margin


def test_hard_negative_alone_never_matches():
    """Without the right memory the rival is not presented as a match."""

    service = RankingService(RankerSettings())
    profile = normalize_context(dqn_query())
    decision = service.decide(service.rank(profile, [memory_from(td3_rival())]))
    assert decision.kind is not DecisionKind.MATCH


def test_scope_conflict_vetoes_specificity():
    """A memory from another project cannot be surfaced whatever its score."""

    profile = normalize_context(dqn_query())
    foreign = memory_from(dqn_resolution(project_scope="other-project"))
    assert not specificity(profile, foreign)

    service = RankingService(RankerSettings())
    decision = service.decide(service.rank(profile, [foreign]))
    assert decision.kind is DecisionKind.ABSTAIN
    assert decision.visible == ()


def test_exception_conflict_vetoes_specificity():
    """A different stored exception type is a hard conflict."""

    profile = normalize_context(dqn_query())
    other = memory_from(dqn_resolution(error_text="KeyError: loss diverges after 4000 updates"))
    assert not specificity(profile, other)


def test_rl_memory_needs_matching_domain_for_plain_queries():
    """An RL-control memory is incompatible with a non-RL query of another problem family."""

    plain = normalize_context(
        MatchRequest(
            error_text="FloatingPointError: loss diverges after 4000 updates",
            project_scope="rl-lab",
            session=SessionInfo(session_id="q", user_id="dev"),
        )
    )
    assert not specificity(plain, memory_from(dqn_resolution()))


def test_scope_partition_drops_foreign_memories():
    """With partitioning on, conflicting scopes never reach the prefilter."""

    profile = normalize_context(dqn_query())
    local = memory_from(dqn_resolution())
    foreign = memory_from(dqn_resolution(project_scope="other-project", pattern_id="elsewhere"))

    assert {m.memory_id for m in retrieve_candidates(profile, [local, foreign], 8)} == {
        local.memory_id,
        foreign.memory_id,
    }
    partitioned = retrieve_candidates(profile, [local, foreign], 8, scope_partition=True)
    assert [m.memory_id for m in partitioned] == [local.memory_id]
    with pytest.raises(ValueError):
        retrieve_candidates(profile, [local], 0)


def test_decide_thresholds_and_margin():
    """Match needs tau_accept and tau_margin; below tau_weak abstains."""

    thresholds = Thresholds()
    assert decide([], thresholds).kind is DecisionKind.ABSTAIN
    assert decide([_ranked("a", 0.9), _ranked("b", 0.5, rank=2)], thresholds).kind is DecisionKind.MATCH
    assert decide([_ranked("a", 0.9), _ranked("b", 0.85, rank=2)], thresholds).kind is DecisionKind.AMBIGUOUS
    assert decide([_ranked("a", 0.5)], thresholds).kind is DecisionKind.AMBIGUOUS
    assert decide([_ranked("a", 0.3)], thresholds).kind is DecisionKind.ABSTAIN
    assert decide([_ranked("a", 0.9, specific=False)], thresholds).kind is DecisionKind.ABSTAIN


def test_visible_candidates_skip_weak_runners_up():
    """Only candidates at or above tau_weak are shown, at most `visible`."""

    ranked = [
        _ranked("a", 0.9),
        _ranked("b", 0.5, rank=2),
        _ranked("c", 0.2, rank=3),
        _ranked("d", 0.45, rank=4),
    ]
    decision = decide(ranked, Thresholds(), visible=3)
    assert [candidate.memory_id for candidate in decision.visible] == ["a", "b"]


def test_equal_scores_break_ties_by_memory_id():
    """Identical memories under different ids rank in id order with zero margin."""

    service = RankingService(RankerSettings())
    profile = normalize_context(dqn_query())
    first = memory_from(dqn_resolution(variant_id="b"))
    second = memory_from(dqn_resolution(variant_id="a"))
    ranked = service.rank(profile, [first, second])

    assert [candidate.memory_id for candidate in ranked] == ["dqn-terminal-mask/a", "dqn-terminal-mask/b"]
    decision = service.decide(ranked)
    assert decision.margin == 0.0
    assert decision.kind is DecisionKind.AMBIGUOUS


def test_scores_are_clipped():
    """The weighted sum never leaves [0, 0.999]."""

    assert score_candidate([1.0] * FEATURE_DIM, [1.0] * FEATURE_DIM) == 0.999
    assert score_candidate([-1.0] * FEATURE_DIM, [1.0] * FEATURE_DIM) == 0.0


def test_thresholds_validate_ordering():
    """tau_weak above tau_accept is rejected."""

    with pytest.raises(ValueError):
        Thresholds(tau_accept=0.3, tau_weak=0.5)


def test_unknown_weight_keys_are_logged_and_ignored(caplog):
    """A typo in the weight table is reported instead of silently dropped."""

    with caplog.at_level("WARNING", logger="services.ranking"):
        service = RankingService(RankerSettings(weights={"lexical": 0.5, "lexcial": 0.4}))

    assert service.weights[0] == 0.5
    assert sum(service.weights) == 0.5
    assert "lexcial" in caplog.text
