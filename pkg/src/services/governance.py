"""Validation-tier promotion, theory anchors, and the review-gated memory lifecycle."""
from __future__ import annotations

from dataclasses import dataclass, field
import logging
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

from itsdangerous import BadSignature, URLSafeSerializer

from app.config import GovernanceSettings
from app.schemas import (
    AnchorRef,
    AuditFinding,
    EventKind,
    GovernanceAction,
    GovernanceEvent,
    LifecycleState,
    MemoryRecord,
    ReviewState,
    RlControlMetadata,
    TheoryAnchor,
    TheoryClaim,
    TheoryObligation,
    ValidationPayload,
    ValidationTier,
)
from orchestrator.exceptions import InvalidArgumentsError, ReviewRequiredError, UnknownMemoryError
from services.codec import canonical_dumps, canonical_loads

logger = logging.getLogger(__name__)

REVIEW_SALT = "memctl-review"
GATED_STATES = frozenset({LifecycleState.MERGE, LifecycleState.SPLIT, LifecycleState.DEMOTE})
DEFAULT_TIER_CAPS: Mapping[str, ValidationTier] = {
    "missing_evidence": ValidationTier.SMOKE,
    "blocking_finding": ValidationTier.SEEDED_RUN,
    "unapproved_review": ValidationTier.SEEDED_RUN,
}


@dataclass(frozen=True)
class PromotionDecision:
    requested: ValidationTier
    applied: ValidationTier
    caps: tuple[str, ...] = field(default_factory=tuple)
    artifacts: tuple[str, ...] = field(default_factory=tuple)


def evaluate_promotion(
    requested_tier: Optional[ValidationTier],
    validation_payload: ValidationPayload,
    audit_findings: Sequence[AuditFinding],
    artifacts: Sequence[str],
    review_state: ReviewState,
    *,
    tier_caps: Mapping[str, ValidationTier] | None = None,
    blocking_severities: Iterable[str] = ("major", "critical"),
) -> PromotionDecision:
    """Cap the requested tier by the evidence actually present.

    Artifacts never move the tier; they are carried on the decision as provenance.
    Seeds and commands are both required evidence.
    """

    caps_table = dict(DEFAULT_TIER_CAPS)
    caps_table.update({rule: ValidationTier(tier) for rule, tier in (tier_caps or {}).items()})
    requested = requested_tier or ValidationTier.UNTESTED
    blocking = set(blocking_severities)

    triggered: list[str] = []
    if not validation_payload.seeds or not validation_payload.commands:
        triggered.append("missing_evidence")
    if any(finding.open and finding.severity.value in blocking for finding in audit_findings):
        triggered.append("blocking_finding")
    if review_state is not ReviewState.APPROVED:
        triggered.append("unapproved_review")

    applied = requested
    for rule in triggered:
        cap = caps_table.get(rule)
        if cap is not None and cap.rank < applied.rank:
            applied = cap
    return PromotionDecision(
        requested=requested, applied=applied, caps=tuple(triggered), artifacts=tuple(artifacts)
    )


def apply_promotion(
    requested_tier: Optional[ValidationTier],
    validation_payload: ValidationPayload,
    audit_findings: Sequence[AuditFinding],
    artifacts: Sequence[str],
    review_state: ReviewState,
    **kwargs,
) -> ValidationTier:
    return evaluate_promotion(
        requested_tier, validation_payload, audit_findings, artifacts, review_state, **kwargs
    ).applied


class ReviewTokens:
    """Signed reviewer approvals bound to one memory id."""

    def __init__(self, secret: str, reviewers: Iterable[str]) -> None:
        self._serializer = URLSafeSerializer(secret, salt=REVIEW_SALT)
        self._reviewers = frozenset(reviewers)

    def issue(self, reviewer: str, memory_id: str) -> str:
        if reviewer not in self._reviewers:
            raise InvalidArgumentsError(f"{reviewer!r} is not a configured reviewer", reason="unknown_reviewer")
        return self._serializer.dumps({"reviewer": reviewer, "memory_id": memory_id})

    def verify(self, token: Optional[str], memory_id: str) -> Optional[str]:
        """Reviewer name for a valid token, else None."""

        if not token:
            return None
        try:
            data = self._serializer.loads(token)
        except BadSignature:
            logger.warning("rejected review token for %s: bad signature", memory_id)
            return None
        if not isinstance(data, dict) or data.get("memory_id") != memory_id:
            logger.warning("rejected review token for %s: memory mismatch", memory_id)
            return None
        if data.get("reviewer") not in self._reviewers:
            logger.warning("rejected review token for %s: reviewer not configured", memory_id)
            return None
        return data["reviewer"]


def load_anchor_file(path: str | Path) -> list[TheoryAnchor]:
    data = canonical_loads(Path(path).read_bytes())
    entries = data.get("anchors", []) if isinstance(data, dict) else data
    return [TheoryAnchor.model_validate(entry) for entry in entries]


class AnchorRegistry:
    """Shipped anchors overlaid by anchors registered through the log."""

    def __init__(self, store, shipped: Sequence[TheoryAnchor] = ()) -> None:
        self._store = store
        self._shipped = {anchor.obligation_id: anchor for anchor in shipped}

    @classmethod
    def from_path(cls, store, path: Optional[str | Path]) -> "AnchorRegistry":
        shipped: list[TheoryAnchor] = []
        if path and Path(path).exists():
            shipped = load_anchor_file(path)
            logger.info("loaded %s shipped theory anchors from %s", len(shipped), path)
        return cls(store, shipped)

    def entries(self) -> dict[str, TheoryAnchor]:
        merged = dict(self._shipped)
        merged.update(self._store.state.anchors)
        return merged

    def get(self, obligation_id: str) -> Optional[TheoryAnchor]:
        return self.entries().get(obligation_id)

    def query(
        self,
        *,
        problem_family: Optional[str] = None,
        theory_claim_type: Optional[TheoryClaim] = None,
    ) -> list[TheoryAnchor]:
        found = []
        for obligation_id in sorted(self.entries()):
            anchor = self.entries()[obligation_id]
            if problem_family and anchor.obligation.problem_family != problem_family:
                continue
            if theory_claim_type and anchor.obligation.theory_claim_type != theory_claim_type:
                continue
            found.append(anchor)
        return found

    def export(self) -> bytes:
        entries = self.entries()
        return canonical_dumps({"anchors": [entries[key] for key in sorted(entries)]})


class GovernanceService:
    """Writes every promotion, transition and anchor registration as a governance event."""

    def __init__(self, store, settings: GovernanceSettings, registry: AnchorRegistry) -> None:
        self._store = store
        self._settings = settings
        self.registry = registry
        self.tokens = ReviewTokens(settings.review_secret.get_secret_value(), settings.reviewers)

    def evaluate(self, metadata: RlControlMetadata, review_state: ReviewState) -> PromotionDecision:
        return evaluate_promotion(
            metadata.validation_tier,
            metadata.validation_payload,
            metadata.audit_findings,
            metadata.artifacts,
            review_state,
            tier_caps={rule: ValidationTier(tier) for rule, tier in self._settings.tier_caps.items()},
            blocking_severities=self._settings.blocking_severities,
        )

    def record_promotion(self, memory: MemoryRecord, decision: PromotionDecision, *, actor: str) -> None:
        """Audit event for a promotion decision already applied to `memory`."""

        meta = memory.metadata
        event = GovernanceEvent(
            action=GovernanceAction.PROMOTION,
            actor=actor,
            memory_id=memory.memory_id,
            inputs={
                "requested_tier": decision.requested.value,
                "review_state": memory.governance.review_state.value,
                "seeds": len(meta.validation_payload.seeds),
                "commands": len(meta.validation_payload.commands),
                "open_findings": [f.severity.value for f in meta.audit_findings if f.open],
                "artifacts": list(decision.artifacts),
            },
            outcome={"applied_tier": decision.applied.value, "caps": list(decision.caps)},
        )
        self._store.append(EventKind.GOVERNANCE, event, session_id=memory.governance.session_id)

    def transition_lifecycle(
        self,
        memory_id: str,
        target_state: LifecycleState,
        actor: str,
        review_token: Optional[str] = None,
    ) -> LifecycleState:
        memory = self._store.state.memories.get(memory_id)
        if memory is None:
            raise UnknownMemoryError(memory_id)
        reviewer = self.tokens.verify(review_token, memory_id)
        if target_state in GATED_STATES and reviewer is None:
            raise ReviewRequiredError(memory_id, target_state.value)
        previous = memory.governance.lifecycle
        event = GovernanceEvent(
            action=GovernanceAction.TRANSITION,
            actor=actor,
            memory_id=memory_id,
            inputs={"from": previous.value, "target_state": target_state.value, "reviewer": reviewer},
            outcome={"state": target_state.value},
        )
        self._store.append(EventKind.GOVERNANCE, event, session_id=memory.governance.session_id)
        logger.info("memory %s lifecycle %s -> %s by %s", memory_id, previous.value, target_state.value, actor)
        return target_state

    def register_anchor(
        self,
        obligation_id: str,
        obligation: TheoryObligation,
        anchors: Sequence[AnchorRef],
        actor: str,
    ) -> TheoryAnchor:
        if not anchors:
            raise InvalidArgumentsError("at least one anchor is required", reason="empty_anchors")
        entry = TheoryAnchor(obligation_id=obligation_id, obligation=obligation, anchors=list(anchors))
        replaced = self.registry.get(obligation_id) is not None
        event = GovernanceEvent(
            action=GovernanceAction.REGISTER_ANCHOR,
            actor=actor,
            inputs={"anchor": entry.model_dump(mode="json")},
            outcome={"replaced": replaced, "anchors": len(entry.anchors)},
        )
        self._store.append(EventKind.GOVERNANCE, event)
        return entry

    def import_anchors(self, path: str | Path, actor: str) -> list[TheoryAnchor]:
        return [
            self.register_anchor(anchor.obligation_id, anchor.obligation, anchor.anchors, actor)
            for anchor in load_anchor_file(path)
        ]
