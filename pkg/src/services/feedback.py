"""Canonical feedback normalization: alias resolution, reward map, and learnability."""
from __future__ import annotations

from dataclasses import dataclass
import logging
import re
from typing import Mapping, Optional
from uuid import uuid4

from app.config import BanditSettings
from app.schemas import (
    BanditSnapshot,
    CanonicalFeedback,
    EventKind,
    FeedbackAck,
    FeedbackAudit,
    FeedbackEvent,
    FeedbackRequest,
    FeedbackSource,
    FeedbackType,
    LoggedCandidate,
    RetrievalEvent,
)
from orchestrator.exceptions import UnknownFeedbackLabelError, UnknownMemoryError, UnknownRetrievalEventError

logger = logging.getLogger(__name__)

NEUTRAL = "neutral"

DEFAULT_REWARDS: Mapping[FeedbackType, float] = {
    FeedbackType.FIX_VERIFIED: 1.0,
    FeedbackType.FALSE_POSITIVE: -1.0,
    FeedbackType.CANDIDATE_ACCEPTED: 0.35,
    FeedbackType.CANDIDATE_REJECTED: -0.60,
    FeedbackType.MERGE_CONFIRMED: 0.40,
    FeedbackType.MERGE_REJECTED: -0.40,
    FeedbackType.SPLIT_CONFIRMED: 0.40,
    FeedbackType.SPLIT_REJECTED: -0.40,
}

BUILTIN_ALIASES: Mapping[str, str] = {
    "accepted_helpful": FeedbackType.CANDIDATE_ACCEPTED.value,
    "accepted_unhelpful": FeedbackType.CANDIDATE_REJECTED.value,
    "rejected": FeedbackType.CANDIDATE_REJECTED.value,
    NEUTRAL: NEUTRAL,
}

_SEPARATORS_RE = re.compile(r"[\s\-]+")


def label_key(raw_label: str) -> str:
    """Case-insensitive key that treats hyphens, spaces and underscores alike."""

    return _SEPARATORS_RE.sub("_", raw_label.strip().lower())


def clip_reward(value: float) -> float:
    return min(1.0, max(-1.0, float(value)))


@dataclass(frozen=True)
class _Resolution:
    type: FeedbackType
    learnable: bool
    reward: float


class FeedbackNormalizer:
    """Resolves raw labels against canonical names, built-in aliases and configured aliases."""

    def __init__(self, aliases: Mapping[str, str] | None = None) -> None:
        table: dict[str, str] = {feedback_type.value: feedback_type.value for feedback_type in FeedbackType}
        table.update({label_key(alias): target for alias, target in BUILTIN_ALIASES.items()})
        for alias, target in (aliases or {}).items():
            key = label_key(alias)
            if key in table:
                # Configured aliases extend the table; built-ins stay authoritative.
                continue
            resolved = label_key(target)
            if resolved not in table:
                raise ValueError(f"alias {alias!r} targets unknown label {target!r}")
            table[key] = table[resolved]
        self._table = table

    @property
    def accepted_labels(self) -> list[str]:
        return sorted(self._table)

    def _resolve(self, raw_label: str) -> _Resolution:
        target = self._table.get(label_key(raw_label))
        if target is None:
            raise UnknownFeedbackLabelError(raw_label, self.accepted_labels)
        if target == NEUTRAL:
            # Non-evaluative: recorded under the accepted slot, never learned from.
            return _Resolution(FeedbackType.CANDIDATE_ACCEPTED, False, 0.0)
        feedback_type = FeedbackType(target)
        return _Resolution(feedback_type, True, DEFAULT_REWARDS[feedback_type])

    def normalize(
        self,
        raw_label: str,
        override_reward: Optional[float] = None,
        *,
        source: FeedbackSource = FeedbackSource.EXPLICIT,
    ) -> CanonicalFeedback:
        if not raw_label or not raw_label.strip():
            raise UnknownFeedbackLabelError(raw_label, self.accepted_labels)
        resolved = self._resolve(raw_label)
        reward = resolved.reward
        override_used = override_reward is not None
        if override_used:
            reward = clip_reward(override_reward)
        return CanonicalFeedback(
            type=resolved.type,
            reward=reward,
            learnable=resolved.learnable,
            audit=FeedbackAudit(raw_label=raw_label, override_reward_used=override_used, source=source),
        )


def normalize_feedback(
    raw_label: str,
    override_reward: Optional[float] = None,
    *,
    aliases: Mapping[str, str] | None = None,
    source: FeedbackSource = FeedbackSource.EXPLICIT,
) -> CanonicalFeedback:
    return FeedbackNormalizer(aliases).normalize(raw_label, override_reward, source=source)


class FeedbackService:
    """Persists canonical feedback and decides whether it reaches the bandit."""

    def __init__(self, store, normalizer: FeedbackNormalizer, bandit_settings: BanditSettings) -> None:
        self._store = store
        self.normalizer = normalizer
        self._bandit = bandit_settings

    def submit(self, request: FeedbackRequest) -> FeedbackAck:
        """Explicit feedback on a logged retrieval; link confidence is 1."""

        event = self._store.state.retrievals.get(request.retrieval_event_id)
        if event is None:
            raise UnknownRetrievalEventError(request.retrieval_event_id)
        canonical = self.normalizer.normalize(request.raw_label, request.override_reward)
        candidate = event.candidate(request.memory_ref)
        if request.memory_ref is not None and candidate is None:
            raise UnknownMemoryError(request.memory_ref)
        recorded = self.record(event, candidate, canonical, confidence=1.0)
        return FeedbackAck(
            feedback_event_id=recorded.feedback_event_id,
            canonical_type=canonical.type,
            reward=canonical.reward,
            learnable=canonical.learnable,
            bandit_updated=recorded.bandit_applied,
        )

    def record(
        self,
        event: RetrievalEvent,
        candidate: Optional[LoggedCandidate],
        canonical: CanonicalFeedback,
        *,
        confidence: float,
        feedback_event_id: Optional[str] = None,
        link_key: Optional[str] = None,
    ) -> FeedbackEvent:
        features = list(candidate.features) if candidate is not None else None
        applied = bool(self._bandit.enabled and canonical.learnable and features is not None and confidence > 0)
        feedback = FeedbackEvent(
            feedback_event_id=feedback_event_id or uuid4().hex,
            retrieval_event_id=event.retrieval_event_id,
            memory_id=candidate.memory_id if candidate is not None else None,
            canonical=canonical,
            confidence=confidence,
            features=features,
            bandit_applied=applied,
            decision_kind=event.decision.kind,
            error_family=event.profile.error_family,
            algorithm_family=event.profile.rl_hints.algorithm_family,
            link_key=link_key,
        )
        self._store.append(
            EventKind.FEEDBACK,
            feedback,
            session_id=event.session.session_id,
            event_id=feedback.feedback_event_id,
        )
        logger.info(
            "feedback %s on %s: %s reward=%.2f learnable=%s bandit=%s",
            feedback.feedback_event_id,
            event.retrieval_event_id,
            canonical.type.value,
            canonical.reward,
            canonical.learnable,
            applied,
        )
        if applied:
            self._maybe_snapshot_bandit()
        return feedback

    def _maybe_snapshot_bandit(self) -> None:
        every = self._bandit.snapshot_every
        state = self._store.state
        if every and state.bandit_updates % every == 0:
            snapshot = BanditSnapshot(updates=state.bandit_updates, state=state.bandit)
            self._store.append(EventKind.BANDIT_SNAPSHOT, snapshot)
