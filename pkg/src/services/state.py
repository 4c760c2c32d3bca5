"""Materialized store state and the reducer that folds log records into it."""
from __future__ import annotations

from typing import Optional

from pydantic import BaseModel, Field, ValidationError

from app.schemas import (
    AlgorithmFamily,
    BanditSnapshot,
    BanditState,
    DelayedLink,
    ErrorFamily,
    EventKind,
    EventRecord,
    FeedbackEvent,
    FeedbackType,
    GovernanceAction,
    GovernanceEvent,
    LifecycleState,
    MemoryRecord,
    MemoryStats,
    OpeReportRecord,
    RetrievalEvent,
    TheoryAnchor,
)
from orchestrator.exceptions import DuplicateEventError, SchemaViolationError
from services import bandit

PAYLOAD_MODELS: dict[EventKind, type[BaseModel]] = {
    EventKind.MEMORY_UPSERT: MemoryRecord,
    EventKind.RETRIEVAL: RetrievalEvent,
    EventKind.FEEDBACK: FeedbackEvent,
    EventKind.DELAYED_LINK: DelayedLink,
    EventKind.BANDIT_SNAPSHOT: BanditSnapshot,
    EventKind.OPE_REPORT: OpeReportRecord,
    EventKind.GOVERNANCE: GovernanceEvent,
}


class StoreState(BaseModel):
    """Everything derivable from the log; equal logs give equal states."""

    sequence: int = 0
    event_ids: dict[str, int] = Field(default_factory=dict)
    memories: dict[str, MemoryRecord] = Field(default_factory=dict)
    stats: dict[str, MemoryStats] = Field(default_factory=dict)
    retrievals: dict[str, RetrievalEvent] = Field(default_factory=dict)
    retrieval_order: list[str] = Field(default_factory=list)
    feedback: dict[str, FeedbackEvent] = Field(default_factory=dict)
    feedback_by_retrieval: dict[str, list[str]] = Field(default_factory=dict)
    links: dict[str, DelayedLink] = Field(default_factory=dict)
    bandit: BanditState
    bandit_updates: int = 0
    anchors: dict[str, TheoryAnchor] = Field(default_factory=dict)
    latest_report: Optional[OpeReportRecord] = None
    counters: dict[str, int] = Field(default_factory=dict)

    @classmethod
    def empty(cls, initial_bandit: BanditState) -> "StoreState":
        return cls(bandit=initial_bandit)

    def recent_events(self, limit: int) -> list[RetrievalEvent]:
        """Most recent retrieval events, newest first."""

        ids = self.retrieval_order[-limit:] if limit > 0 else []
        return [self.retrievals[event_id] for event_id in reversed(ids)]

    def feedback_for(self, retrieval_event_id: str) -> list[FeedbackEvent]:
        return [self.feedback[fid] for fid in self.feedback_by_retrieval.get(retrieval_event_id, [])]


def parse_payload(record: EventRecord) -> BaseModel:
    model = PAYLOAD_MODELS[record.kind]
    try:
        return model.model_validate(record.payload)
    except ValidationError as exc:
        raise SchemaViolationError(
            f"{record.kind.value} payload failed validation",
            data={"event_id": record.event_id, "errors": exc.errors(include_url=False)},
        ) from exc


def _fold_feedback(state: StoreState, event: FeedbackEvent) -> None:
    state.feedback[event.feedback_event_id] = event
    state.feedback_by_retrieval.setdefault(event.retrieval_event_id, []).append(event.feedback_event_id)
    canonical = event.canonical
    if event.memory_id and canonical.learnable:
        stats = state.stats.setdefault(event.memory_id, MemoryStats())
        stats.total += 1
        if canonical.reward > 0:
            stats.positive += 1
        elif canonical.reward < 0:
            stats.negative += 1
        if canonical.type is FeedbackType.CANDIDATE_ACCEPTED:
            stats.accepted += 1
        elif canonical.type is FeedbackType.CANDIDATE_REJECTED:
            stats.rejected += 1
        elif canonical.type is FeedbackType.FIX_VERIFIED:
            stats.verified += 1
        elif canonical.type is FeedbackType.FALSE_POSITIVE:
            stats.false_positive += 1
            marks = set(stats.false_positive_families)
            if event.error_family is not ErrorFamily.UNKNOWN:
                marks.add(event.error_family.value)
            if event.algorithm_family is not AlgorithmFamily.NONE:
                marks.add(event.algorithm_family.value)
            stats.false_positive_families = sorted(marks)
    if event.bandit_applied and canonical.learnable and event.features is not None:
        state.bandit = bandit.update(state.bandit, event.features, canonical.reward, True, event.confidence)
        state.bandit_updates += 1


def _fold_governance(state: StoreState, event: GovernanceEvent) -> None:
    if event.action is GovernanceAction.REGISTER_ANCHOR:
        anchor = TheoryAnchor.model_validate(event.inputs["anchor"])
        state.anchors[anchor.obligation_id] = anchor
    elif event.action is GovernanceAction.TRANSITION and event.memory_id in state.memories:
        memory = state.memories[event.memory_id]
        governance = memory.governance.model_copy(
            update={"lifecycle": LifecycleState(event.outcome["state"])}
        )
        state.memories[event.memory_id] = memory.model_copy(update={"governance": governance})


def apply_event(state: StoreState, record: EventRecord, payload: Optional[BaseModel] = None) -> None:
    """Fold one record into `state` in place; validation happens before any mutation."""

    if record.event_id in state.event_ids:
        raise DuplicateEventError(record.event_id)
    payload = payload if payload is not None else parse_payload(record)

    if record.kind is EventKind.MEMORY_UPSERT:
        state.memories[payload.memory_id] = payload
        state.stats.setdefault(payload.memory_id, MemoryStats())
    elif record.kind is EventKind.RETRIEVAL:
        state.retrievals[payload.retrieval_event_id] = payload
        state.retrieval_order.append(payload.retrieval_event_id)
    elif record.kind is EventKind.FEEDBACK:
        _fold_feedback(state, payload)
    elif record.kind is EventKind.DELAYED_LINK:
        state.links[payload.key.token()] = payload
    elif record.kind is EventKind.BANDIT_SNAPSHOT:
        state.bandit = payload.state
        state.bandit_updates = payload.updates
    elif record.kind is EventKind.OPE_REPORT:
        state.latest_report = payload
    elif record.kind is EventKind.GOVERNANCE:
        _fold_governance(state, payload)

    state.event_ids[record.event_id] = record.sequence
    state.sequence = record.sequence
    state.counters[record.kind.value] = state.counters.get(record.kind.value, 0) + 1
