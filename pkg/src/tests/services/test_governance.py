"""Tier promotion caps, review tokens, lifecycle gating and theory anchors."""

import pytest

from app.schemas import (
    AnchorRef,
    AuditFinding,
    LifecycleState,
    ReviewState,
    Severity,
    TheoryClaim,
    TheoryObligation,
    ValidationPayload,
    ValidationTier,
)
from orchestrator.exceptions import InvalidArgumentsError, ReviewRequiredError, UnknownMemoryError
from services.codec import canonical_loads
from services.governance import ReviewTokens, evaluate_promotion
from tests.fixtures import dqn_resolution, make_container

EVIDENCE = ValidationPayload(seeds=[0, 1], commands=["pytest tests/test_dqn.py"])


@pytest.mark.parametrize(
    "requested, payload, findings, review, applied",
    [
        (ValidationTier.VERIFIED, EVIDENCE, [], ReviewState.APPROVED, ValidationTier.VERIFIED),
        (ValidationTier.VERIFIED, EVIDENCE, [], ReviewState.PENDING, ValidationTier.SEEDED_RUN),
        (ValidationTier.VERIFIED, ValidationPayload(), [], ReviewState.APPROVED, ValidationTier.SMOKE),
        (
            ValidationTier.REVIEWED,
            EVIDENCE,
            [AuditFinding(finding="mask ignored on truncation", severity=Severity.MAJOR)],
            ReviewState.APPROVED,
            ValidationTier.SEEDED_RUN,
        ),
        (
            ValidationTier.REVIEWED,
            EVIDENCE,
            [AuditFinding(finding="typo", severity=Severity.MINOR)],
            ReviewState.APPROVED,
            ValidationTier.REVIEWED,
        ),
        (
            ValidationTier.REVIEWED,
            EVIDENCE,
            [AuditFinding(finding="closed", severity=Severity.CRITICAL, open=False)],
            ReviewState.APPROVED,
            ValidationTier.REVIEWED,
        ),
        (ValidationTier.SMOKE, EVIDENCE, [], ReviewState.PENDING, ValidationTier.SMOKE),
        (None, EVIDENCE, [], ReviewState.APPROVED, ValidationTier.UNTESTED),
    ],
)
def test_promotion_is_capped_by_evidence(requested, payload, findings, review, applied):
    """Missing evidence, blocking findings and pending review each cap the tier."""

    decision = evaluate_promotion(requested, payload, findings, [], review)
    assert decision.applied is applied
    assert decision.applied.rank <= decision.requested.rank


def test_promotion_records_every_triggered_cap():
    """The strictest cap wins and every rule that fired is listed."""

    decision = evaluate_promotion(ValidationTier.VERIFIED, ValidationPayload(), [], [], ReviewState.PENDING)
    assert decision.applied is ValidationTier.SMOKE
    assert decision.caps == ("missing_evidence", "unapproved_review")


@pytest.mark.parametrize(
    "payload",
    [
        ValidationPayload(commands=["pytest"]),
        ValidationPayload(seeds=[0, 1]),
    ],
)
def test_partial_evidence_still_caps_at_smoke(payload):
    """Seeds without commands, or commands without seeds, is missing evidence."""

    decision = evaluate_promotion(ValidationTier.VERIFIED, payload, [], [], ReviewState.APPROVED)
    assert decision.applied is ValidationTier.SMOKE
    assert decision.caps == ("missing_evidence",)


def test_artifacts_are_provenance_only():
    """Artifacts ride along on the decision without moving the tier."""

    with_artifacts = evaluate_promotion(
        ValidationTier.VERIFIED, EVIDENCE, [], ["runs/dqn/seed0.csv"], ReviewState.APPROVED
    )
    without = evaluate_promotion(ValidationTier.VERIFIED, EVIDENCE, [], [], ReviewState.APPROVED)
    assert with_artifacts.applied is without.applied is ValidationTier.VERIFIED
    assert with_artifacts.artifacts == ("runs/dqn/seed0.csv",)


def test_review_tokens_bind_reviewer_and_memory():
    """Tokens verify only for their memory, their secret and a configured reviewer."""

    tokens = ReviewTokens("secret", ["alice"])
    token = tokens.issue("alice", "m/1")

    assert tokens.verify(token, "m/1") == "alice"
    assert tokens.verify(token, "m/2") is None
    assert tokens.verify(None, "m/1") is None
    assert ReviewTokens("other-secret", ["alice"]).verify(token, "m/1") is None
    assert ReviewTokens("secret", ["bob"]).verify(token, "m/1") is None
    with pytest.raises(InvalidArgumentsError):
        tokens.issue("mallory", "m/1")


async def test_approved_resolution_keeps_requested_tier(tmp_path):
    """A valid review token lifts the pending-review cap at write time."""

    container = await make_container(tmp_path)
    pending = await container.runner.record_resolution(dqn_resolution())
    assert pending.applied_tier is ValidationTier.SEEDED_RUN

    request = dqn_resolution(variant_id="v2")
    metadata = request.rl_metadata.model_copy(update={"validation_tier": ValidationTier.VERIFIED})
    token = container.governance.tokens.issue("alice", "dqn-terminal-mask/v2")
    approved = await container.runner.record_resolution(
        request.model_copy(update={"rl_metadata": metadata, "review_token": token})
    )
    assert approved.applied_tier is ValidationTier.VERIFIED
    memory = container.store.state.memories["dqn-terminal-mask/v2"]
    assert memory.governance.review_state is ReviewState.APPROVED
    await container.shutdown()


async def test_gated_transitions_need_a_review_token(tmp_path):
    """merge, split and demote require approval; review and retain do not."""

    container = await make_container(tmp_path)
    await container.runner.record_resolution(dqn_resolution())
    governance = container.governance
    memory_id = "dqn-terminal-mask/v1"

    with pytest.raises(ReviewRequiredError):
        governance.transition_lifecycle(memory_id, LifecycleState.DEMOTE, actor="dev")
    assert governance.transition_lifecycle(memory_id, LifecycleState.REVIEW, actor="dev") is LifecycleState.REVIEW

    token = governance.tokens.issue("alice", memory_id)
    governance.transition_lifecycle(memory_id, LifecycleState.MERGE, actor="dev", review_token=token)
    assert container.store.state.memories[memory_id].governance.lifecycle is LifecycleState.MERGE

    with pytest.raises(UnknownMemoryError):
        governance.transition_lifecycle("nope/v1", LifecycleState.RETAIN, actor="dev")
    await container.shutdown()


async def test_anchor_registry_overlays_shipped_entries(tmp_path):
    """Registered anchors survive a restart and export in obligation-id order."""

    container = await make_container(tmp_path)
    shipped = container.anchors.get("td_target")
    assert shipped is not None
    assert shipped.obligation.problem_family == "value_based"

    obligation = TheoryObligation(
        objective="clipped surrogate objective",
        equation_text="L = E[min(r A, clip(r, 1 - eps, 1 + eps) A)]",
        problem_family="policy_gradient",
        theory_claim_type=TheoryClaim.OBJECTIVE_TERM,
    )
    anchor = AnchorRef(file="agents/ppo_loss.py", symbol="clipped_loss", check_name="ratio_clipping")
    container.governance.register_anchor("ppo_clip", obligation, [anchor], actor="alice")
    with pytest.raises(InvalidArgumentsError):
        container.governance.register_anchor("empty", obligation, [], actor="alice")
    await container.shutdown()

    reopened = await make_container(tmp_path)
    found = reopened.anchors.query(problem_family="policy_gradient")
    assert [entry.obligation_id for entry in found] == ["ppo_clip"]
    exported = canonical_loads(reopened.anchors.export())
    assert [entry["obligation_id"] for entry in exported["anchors"]] == ["ppo_clip", "td_target"]
    await reopened.shutdown()
