"""High-level tool runner built on top of the match graph and the store services."""
from __future__ import annotations

import logging
import time
from uuid import uuid4

from app.schemas import (
    FeedbackAck,
    FeedbackRequest,
    HealthResponse,
    MatchRequest,
    MatchResponse,
    MetricsRequest,
    MetricsResponse,
    ResolutionAck,
    ResolutionRequest,
    TelemetryEntry,
    TelemetrySummary,
    VisibleCandidate,
)
from orchestrator.state import MatchState, NodeDeps
from services.feedback import FeedbackService
from services.features import MS_PER_DAY, recency_feature
from services.linker import LinkerService
from services.ope import OpeService
from services.ranking import RankedCandidate

logger = logging.getLogger(__name__)

SUMMARY_CHARS = 240


def candidate_summary(candidate: RankedCandidate) -> str:
    text = candidate.memory.variant.fix_summary or candidate.memory.pattern.text
    return " ".join(text.split())[:SUMMARY_CHARS]


class MemoryRunner:
    """Coordinates the match graph, feedback, linking and reporting for each tool call."""

    def __init__(
        self,
        graph,
        deps: NodeDeps,
        feedback: FeedbackService,
        linker: LinkerService,
        ope: OpeService,
    ) -> None:
        self._graph = graph
        self._deps = deps
        self._feedback = feedback
        self._linker = linker
        self._ope = ope
        self._started = time.monotonic()

    async def match(self, request: MatchRequest) -> MatchResponse:
        state: MatchState = {
            "retrieval_event_id": uuid4().hex,
            "request": request,
            "started_at": time.perf_counter(),
            "timestamp_ms": self._deps.store.now_ms(),
            "shadow_enabled": self._deps.settings.bandit.enabled,
        }
        result: MatchState = await self._graph.ainvoke(state)
        decision = result["decision"]
        event = result["event"]
        shadow = result.get("shadow", {})
        logger.info(
            "retrieval %s session=%s decision=%s top=%.4f candidates=%s latency_ms=%.2f",
            event.retrieval_event_id,
            request.session.session_id,
            decision.kind.value,
            decision.top_score,
            len(result["ranked"]),
            event.latency_ms,
        )
        entries = None
        if request.options.include_telemetry:
            entries = [
                TelemetryEntry(memory_id=logged.memory_id, **logged.shadow.model_dump())
                for logged in result["logged"]
                if logged.shadow is not None
            ]
        return MatchResponse(
            decision=decision.kind,
            top_score=decision.top_score,
            margin=decision.margin,
            candidates=[self._visible(candidate, event.timestamp_ms) for candidate in decision.visible],
            retrieval_event_id=event.retrieval_event_id,
            telemetry=TelemetrySummary(
                shadow_enabled=event.shadow_enabled,
                scored=len(shadow),
                behavior_propensity=result["logged"][0].behavior_propensity if result["logged"] else 0.0,
                entries=entries,
            ),
        )

    async def feedback(self, request: FeedbackRequest) -> FeedbackAck:
        return self._feedback.submit(request)

    async def record_resolution(self, request: ResolutionRequest) -> ResolutionAck:
        return self._linker.record_resolution(request)

    async def metrics(self, request: MetricsRequest) -> MetricsResponse:
        return self._ope.metrics(request.window, request.persist)

    async def health(self) -> HealthResponse:
        store = self._deps.store
        return HealthResponse(
            store_open=store.is_open,
            log_sequence=store.sequence,
            bandit_dims=len(store.state.bandit.A),
            config_digest=self._deps.settings.digest(),
            uptime_s=round(time.monotonic() - self._started, 3),
            memories=len(store.state.memories),
        )

    def _visible(self, candidate: RankedCandidate, now_ms: int) -> VisibleCandidate:
        age_ms = max(0, now_ms - candidate.memory.governance.updated_at_ms)
        return VisibleCandidate(
            memory_id=candidate.memory_id,
            rank=candidate.rank,
            score=candidate.score,
            summary=candidate_summary(candidate),
            validation_tier=candidate.memory.metadata.applied_tier,
            recency=recency_feature(age_ms / MS_PER_DAY),
        )
