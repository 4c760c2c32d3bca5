"""Delayed-reward linking of verified resolutions to earlier retrieval events."""
from __future__ import annotations

from dataclasses import dataclass
import logging
import re
from typing import Callable, Optional, Protocol, Sequence
from uuid import uuid4

from app.config import LinkerSettings
from app.schemas import (
    ClaimResult,
    DelayedLink,
    EventKind,
    FeedbackSource,
    FeedbackType,
    IdempotenceKey,
    LinkOutcome,
    MemoryGovernance,
    MemoryPattern,
    MemoryRecord,
    MemoryVariant,
    QueryProfile,
    ResolutionAck,
    ResolutionRequest,
    ResolutionSummary,
    RetrievalEvent,
    ReviewState,
    RlControlMetadata,
)
from orchestrator.exceptions import UnknownRetrievalEventError
from services.feedback import FeedbackService
from services.governance import GovernanceService
from services.normalize import Normalizer, context_text, cosine

logger = logging.getLogger(__name__)

EXPLICIT_CONFIDENCE = 1.0
IMPLICIT_CONFIDENCE = 0.75
MS_PER_HOUR = 3_600_000

WRONG_NOTES_RE = re.compile(r"wrong memory|false positive|memory was wrong|not applicable", re.IGNORECASE)


class _PatternRef(Protocol):
    pattern_id: str
    variant_id: Optional[str]


@dataclass(frozen=True)
class LinkSelection:
    event: Optional[RetrievalEvent]
    confidence: float


def compatibility(profile: QueryProfile, event: RetrievalEvent) -> float:
    """0.4 [same repo] + 0.3 [same project] + 0.3 cosine of token signatures."""

    other = event.profile
    same_repo = profile.scope.repo is not None and profile.scope.repo == other.scope.repo
    same_project = profile.scope.project is not None and profile.scope.project == other.scope.project
    return 0.4 * same_repo + 0.3 * same_project + 0.3 * cosine(profile.token_signature, other.token_signature)


def select_link_event(
    explicit_id: Optional[str],
    resolution_profile: QueryProfile,
    recent: Sequence[RetrievalEvent],
    *,
    lookup: Optional[Callable[[str], Optional[RetrievalEvent]]] = None,
    now_ms: Optional[int] = None,
    window_hours: float = 24.0,
    min_compatibility: float = 0.3,
) -> LinkSelection:
    """Pick the retrieval event a resolution should be credited to.

    `recent` is newest first. An explicit id wins outright; otherwise the
    best same-session event inside the window, ties going to the newer one.
    """

    if explicit_id:
        event = lookup(explicit_id) if lookup is not None else None
        if event is None:
            event = next((item for item in recent if item.retrieval_event_id == explicit_id), None)
        if event is None:
            raise UnknownRetrievalEventError(explicit_id)
        return LinkSelection(event, EXPLICIT_CONFIDENCE)

    session_id = resolution_profile.session.session_id
    horizon = None if now_ms is None else now_ms - int(window_hours * MS_PER_HOUR)
    best: Optional[RetrievalEvent] = None
    best_eta = float("-inf")
    for event in recent:
        if event.session.session_id != session_id:
            continue
        if horizon is not None and event.timestamp_ms < horizon:
            continue
        eta = compatibility(resolution_profile, event)
        if eta < min_compatibility:
            continue
        if eta > best_eta:
            best, best_eta = event, eta
    if best is None:
        return LinkSelection(None, 0.0)
    return LinkSelection(best, IMPLICIT_CONFIDENCE)


def infer_implicit_type(top_candidate: Optional[_PatternRef], summary: ResolutionSummary) -> FeedbackType:
    if summary.marked_wrong or WRONG_NOTES_RE.search(summary.notes or ""):
        return FeedbackType.FALSE_POSITIVE
    if top_candidate is None or top_candidate.pattern_id != summary.pattern_id:
        return FeedbackType.CANDIDATE_REJECTED
    if top_candidate.variant_id and summary.variant_id and top_candidate.variant_id != summary.variant_id:
        return FeedbackType.CANDIDATE_REJECTED
    return FeedbackType.FIX_VERIFIED


class LinkerService:
    """Stores resolutions as memories and turns them into delayed feedback."""

    def __init__(
        self,
        store,
        settings: LinkerSettings,
        normalizer: Normalizer,
        feedback: FeedbackService,
        governance: GovernanceService,
    ) -> None:
        self._store = store
        self._settings = settings
        self._normalizer = normalizer
        self._feedback = feedback
        self._governance = governance

    def record_resolution(self, request: ResolutionRequest) -> ResolutionAck:
        context = self._normalizer.redact(request)
        profile = self._normalizer.profile(context)
        state = self._store.state
        # An unknown explicit id must fail before anything is written.
        if request.explicit_event_id and request.explicit_event_id not in state.retrievals:
            raise UnknownRetrievalEventError(request.explicit_event_id)

        memory, decision = self._build_memory(request, context, profile)
        self._store.append(
            EventKind.MEMORY_UPSERT, memory, session_id=request.session.session_id
        )
        self._governance.record_promotion(memory, decision, actor=request.session.user_id)
        applied_tier = memory.metadata.applied_tier

        if not self._settings.enabled:
            return self._no_link(memory, applied_tier)
        selection = select_link_event(
            request.explicit_event_id,
            profile,
            state.recent_events(self._settings.window_events),
            lookup=state.retrievals.get,
            now_ms=self._store.now_ms(),
            window_hours=self._settings.window_hours,
            min_compatibility=self._settings.min_compatibility,
        )
        if selection.event is None:
            return self._no_link(memory, applied_tier)

        event = selection.event
        top = event.candidates[0] if event.candidates else None
        summary = ResolutionSummary(
            pattern_id=request.pattern_id,
            variant_id=request.variant_id,
            notes=request.notes,
            marked_wrong=request.marked_wrong,
        )
        implicit_type = infer_implicit_type(top, summary)
        key = IdempotenceKey(
            retrieval_event_id=event.retrieval_event_id,
            pattern_id=request.pattern_id,
            variant_id=request.variant_id,
            feedback_type=implicit_type,
        )
        canonical = self._feedback.normalizer.normalize(
            implicit_type.value, source=FeedbackSource.IMPLICIT_DELAYED
        )
        feedback_event_id = uuid4().hex
        link = DelayedLink(
            retrieval_event_id=event.retrieval_event_id,
            link_confidence=selection.confidence,
            implicit_type=implicit_type,
            resolution_summary=summary,
            key=key,
            feedback_event_id=feedback_event_id,
        )
        claim = self._store.check_and_claim_link(key, link, session_id=request.session.session_id)
        if claim is ClaimResult.ALREADY_PRESENT:
            logger.warning("delayed link %s already recorded; skipping feedback", key.token())
            outcome = LinkOutcome.DUPLICATE
        else:
            self._feedback.record(
                event,
                top,
                canonical,
                confidence=selection.confidence,
                feedback_event_id=feedback_event_id,
                link_key=key.token(),
            )
            outcome = LinkOutcome.LINKED
            logger.info(
                "resolution %s linked to %s as %s (kappa=%.2f)",
                memory.memory_id,
                event.retrieval_event_id,
                implicit_type.value,
                selection.confidence,
            )
        return ResolutionAck(
            outcome=outcome,
            link_confidence=selection.confidence,
            implicit_type=implicit_type,
            memory_id=memory.memory_id,
            retrieval_event_id=event.retrieval_event_id,
            applied_tier=applied_tier,
        )

    def _no_link(self, memory: MemoryRecord, applied_tier) -> ResolutionAck:
        logger.info("resolution %s stored without a link", memory.memory_id)
        return ResolutionAck(
            outcome=LinkOutcome.NO_LINK,
            link_confidence=0.0,
            memory_id=memory.memory_id,
            applied_tier=applied_tier,
        )

    def _build_memory(self, request: ResolutionRequest, context, profile: QueryProfile):
        memory_id = request.memory_id or f"{request.pattern_id}/{request.variant_id}"
        previous = self._store.state.memories.get(memory_id)
        now = self._store.now_ms()

        reviewer = self._governance.tokens.verify(request.review_token, memory_id)
        if reviewer is not None:
            review_state = ReviewState.APPROVED
        elif previous is not None:
            review_state = previous.governance.review_state
        else:
            review_state = ReviewState.PENDING

        metadata = request.rl_metadata or RlControlMetadata()
        decision = self._governance.evaluate(metadata, review_state)
        metadata = metadata.model_copy(update={"applied_tier": decision.applied})

        exceptions = profile.entities.get("exception", [])
        pattern = MemoryPattern(
            pattern_id=request.pattern_id,
            text=context_text(context),
            error_family=profile.error_family,
            root_cause_class=request.root_cause_class or profile.root_cause_class,
            exception_type=exceptions[0] if exceptions else None,
            command=profile.command,
            paths=list(profile.scope.paths),
            entities=profile.entities,
            project_scope=profile.scope.project,
            repo=profile.scope.repo,
        )
        governance = MemoryGovernance(
            session_id=request.session.session_id,
            user_id=request.session.user_id,
            confidence=request.confidence,
            lifecycle=previous.governance.lifecycle if previous else MemoryGovernance().lifecycle,
            review_state=review_state,
            negative_families=sorted(set(request.negative_families)),
            created_at_ms=previous.governance.created_at_ms if previous else now,
            updated_at_ms=now,
        )
        memory = MemoryRecord(
            memory_id=memory_id,
            pattern=pattern,
            variant=MemoryVariant(variant_id=request.variant_id, fix_summary=request.fix_summary),
            metadata=metadata,
            governance=governance,
        )
        return memory, decision
