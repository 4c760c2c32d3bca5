"""Builds the retrieval event and appends it before anything is returned."""
from __future__ import annotations

import logging
import time

from app.schemas import DecisionRecord, EventKind, LoggedCandidate, RetrievalEvent
from orchestrator.state import MatchState, NodeDeps
from services import bandit

logger = logging.getLogger(__name__)


def build_node(deps: NodeDeps):
    async def persist(state: MatchState) -> MatchState:
        ranked = state["ranked"]
        decision = state["decision"]
        shadow = state.get("shadow", {})
        behavior = bandit.behavior_propensities(len(ranked))
        logged = [
            LoggedCandidate(
                memory_id=candidate.memory_id,
                pattern_id=candidate.memory.pattern.pattern_id,
                variant_id=candidate.memory.variant.variant_id,
                rank=candidate.rank,
                score=candidate.score,
                features=list(candidate.features.values),
                specificity_ok=candidate.specificity_ok,
                behavior_propensity=propensity,
                memory_kind=candidate.memory.metadata.memory_kind,
                shadow=shadow.get(candidate.memory_id),
            )
            for candidate, propensity in zip(ranked, behavior)
        ]
        request = state["request"]
        event = RetrievalEvent(
            retrieval_event_id=state["retrieval_event_id"],
            session=request.session,
            timestamp_ms=state["timestamp_ms"],
            context=state["context"].context_fields(),
            profile=state["profile"],
            candidates=logged,
            decision=DecisionRecord(
                kind=decision.kind,
                top_score=decision.top_score,
                margin=decision.margin,
                visible_ids=[candidate.memory_id for candidate in decision.visible],
            ),
            shadow_enabled=state.get("shadow_enabled", False),
            latency_ms=(time.perf_counter() - state["started_at"]) * 1000.0,
        )
        deps.store.append(
            EventKind.RETRIEVAL,
            event,
            session_id=request.session.session_id,
            event_id=event.retrieval_event_id,
        )
        state["logged"] = logged
        state["event"] = event
        return state

    return persist
