"""LangGraph state + dependency containers for the match pipeline."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, TypedDict

from app.config import Settings
from app.schemas import (
    Context,
    LoggedCandidate,
    MatchRequest,
    MemoryRecord,
    QueryProfile,
    RetrievalEvent,
    ShadowEntry,
)
from services.normalize import Normalizer
from services.ranking import Decision, RankedCandidate, RankingService
from services.storage import EventStore


class MatchState(TypedDict, total=False):
    """State passed between match pipeline nodes."""

    retrieval_event_id: str
    request: MatchRequest
    started_at: float
    timestamp_ms: int
    context: Context
    profile: QueryProfile
    candidates: list[MemoryRecord]
    ranked: list[RankedCandidate]
    decision: Decision
    shadow_enabled: bool
    shadow: dict[str, ShadowEntry]
    logged: list[LoggedCandidate]
    event: RetrievalEvent


@dataclass
class NodeDeps:
    """Dependencies injected into node functions."""

    settings: Settings
    store: EventStore
    normalizer: Normalizer
    ranking: RankingService
    k: Optional[int] = None
