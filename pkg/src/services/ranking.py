"""Deterministic candidate retrieval, weighted scoring, and the decision surface."""
from __future__ import annotations

from dataclasses import dataclass, field
import logging
from typing import Iterable, Mapping, MutableMapping, Optional, Sequence

import numpy as np

from app.config import RankerSettings
from app.schemas import (
    FEATURE_NAMES,
    AlgorithmFamily,
    DecisionKind,
    ErrorFamily,
    MemoryKind,
    MemoryRecord,
    MemoryStats,
    QueryProfile,
)
from services.features import (
    FeatureVector,
    agreement,
    exception_relation,
    extract_features,
    path_relation,
    scope_relation,
)
from services.normalize import cosine, token_signature

logger = logging.getLogger(__name__)

SCORE_CEILING = 0.999
STATIC_RAG_DIMENSIONS = ("lexical", "dense")


@dataclass(frozen=True)
class RankedCandidate:
    memory: MemoryRecord
    score: float
    features: FeatureVector
    specificity_ok: bool
    rank: int

    @property
    def memory_id(self) -> str:
        return self.memory.memory_id


@dataclass(frozen=True)
class Thresholds:
    tau_accept: float = 0.60
    tau_weak: float = 0.35
    tau_margin: float = 0.10

    def __post_init__(self) -> None:
        if not 0 < self.tau_weak <= self.tau_accept < 1:
            raise ValueError("thresholds must satisfy 0 < tau_weak <= tau_accept < 1")
        if not 0 < self.tau_margin < 1:
            raise ValueError("tau_margin must lie in (0, 1)")


@dataclass(frozen=True)
class Decision:
    kind: DecisionKind
    top_score: float
    margin: float
    visible: tuple[RankedCandidate, ...] = field(default_factory=tuple)

    @property
    def top(self) -> Optional[RankedCandidate]:
        return self.visible[0] if self.visible else None


def score_candidate(features: FeatureVector | Sequence[float], weights: Sequence[float]) -> float:
    """clip(w . phi, 0, 0.999)"""

    phi = features.as_array() if isinstance(features, FeatureVector) else np.asarray(features, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if phi.shape != w.shape:
        raise ValueError(f"feature dimension {phi.shape} does not match weight dimension {w.shape}")
    return float(np.clip(float(np.dot(w, phi)), 0.0, SCORE_CEILING))


def domain_compatible(profile: QueryProfile, memory: MemoryRecord) -> bool:
    meta = memory.metadata
    if meta.memory_kind is not MemoryKind.RL_CONTROL:
        return True
    if profile.rl_hints.algorithm_family is not AlgorithmFamily.NONE:
        return True
    return bool(meta.problem_family) and meta.problem_family == profile.rl_hints.problem_family


def specificity(profile: QueryProfile, memory: MemoryRecord) -> bool:
    """False on any hard conflict: scope, path together with command, exception type, or domain."""

    if scope_relation(profile.scope, memory.pattern.project_scope, memory.pattern.repo) < 0:
        return False
    if path_relation(profile, memory) < 0 and agreement(profile.command, memory.pattern.command) < 0:
        return False
    if exception_relation(profile, memory) < 0:
        return False
    return domain_compatible(profile, memory)


def _shares_entity(query: Mapping[str, list[str]], stored: Mapping[str, list[str]]) -> bool:
    return any(set(values) & set(stored.get(slot, ())) for slot, values in query.items())


def prefilter_score(profile: QueryProfile, memory: MemoryRecord, min_cosine: float = 0.1) -> Optional[float]:
    """Prefilter cosine when the memory passes the cheap filter, else None."""

    similarity = cosine(profile.token_signature, token_signature(memory.pattern.text))
    family_hit = (
        profile.error_family is not ErrorFamily.UNKNOWN and profile.error_family == memory.pattern.error_family
    )
    if family_hit or similarity >= min_cosine or _shares_entity(profile.entities, memory.pattern.entities):
        return similarity
    return None


def retrieve_candidates(
    profile: QueryProfile,
    bank: Iterable[MemoryRecord],
    k: int,
    *,
    min_cosine: float = 0.1,
    scope_partition: bool = False,
) -> list[MemoryRecord]:
    """Up to k prefilter-passing memories ordered by (cosine desc, memory_id asc)."""

    if k < 1:
        raise ValueError("k must be at least 1")
    passing: list[tuple[float, str, MemoryRecord]] = []
    for memory in bank:
        if scope_partition and scope_relation(profile.scope, memory.pattern.project_scope, memory.pattern.repo) < 0:
            continue
        similarity = prefilter_score(profile, memory, min_cosine)
        if similarity is not None:
            passing.append((similarity, memory.memory_id, memory))
    passing.sort(key=lambda item: (-item[0], item[1]))
    return [memory for _, _, memory in passing[:k]]


def decide(
    ranked: Sequence[RankedCandidate],
    thresholds: Thresholds,
    visible: int = 3,
    *,
    enforce_specificity: bool = True,
) -> Decision:
    if not ranked:
        return Decision(kind=DecisionKind.ABSTAIN, top_score=0.0, margin=0.0)
    top = ranked[0]
    second = ranked[1].score if len(ranked) > 1 else 0.0
    margin = top.score - second
    specific = top.specificity_ok or not enforce_specificity

    if top.score < thresholds.tau_weak or not specific:
        return Decision(kind=DecisionKind.ABSTAIN, top_score=top.score, margin=margin)
    if top.score >= thresholds.tau_accept and margin >= thresholds.tau_margin:
        kind = DecisionKind.MATCH
    else:
        kind = DecisionKind.AMBIGUOUS
    shown = [top] + [c for c in ranked[1:visible] if c.score >= thresholds.tau_weak]
    return Decision(kind=kind, top_score=top.score, margin=margin, visible=tuple(shown))


class RankingService:
    """Scores candidates with fixed weights; this is the deployed behavior policy."""

    def __init__(self, settings: RankerSettings, *, theory_metadata: bool = True) -> None:
        self._settings = settings
        self._theory_metadata = theory_metadata
        self.thresholds = Thresholds(settings.tau_accept, settings.tau_weak, settings.tau_margin)
        weights = self._sanitize_weights(settings.weights)
        if settings.static_rag:
            weights = {name: (weights[name] if name in STATIC_RAG_DIMENSIONS else 0.0) for name in FEATURE_NAMES}
        self.weights: tuple[float, ...] = tuple(weights[name] for name in FEATURE_NAMES)

    @property
    def settings(self) -> RankerSettings:
        return self._settings

    def retrieve(self, profile: QueryProfile, bank: Iterable[MemoryRecord], k: Optional[int] = None) -> list[MemoryRecord]:
        return retrieve_candidates(
            profile,
            bank,
            k or self._settings.k,
            min_cosine=self._settings.prefilter_cosine,
            scope_partition=self._settings.scope_partition,
        )

    def rank(
        self,
        profile: QueryProfile,
        candidates: Sequence[MemoryRecord],
        stats: Mapping[str, MemoryStats] | None = None,
        now_ms: Optional[int] = None,
    ) -> list[RankedCandidate]:
        stats = stats or {}
        scored = []
        for memory in candidates:
            features = extract_features(
                profile,
                memory,
                stats=stats.get(memory.memory_id),
                now_ms=now_ms,
                theory_metadata=self._theory_metadata,
            )
            score = score_candidate(features, self.weights)
            scored.append((score, memory.memory_id, memory, features))
            logger.debug("candidate %s score=%.4f", memory.memory_id, score)
        scored.sort(key=lambda item: (-item[0], item[1]))
        return [
            RankedCandidate(
                memory=memory,
                score=score,
                features=features,
                specificity_ok=specificity(profile, memory),
                rank=index + 1,
            )
            for index, (score, _, memory, features) in enumerate(scored)
        ]

    def decide(self, ranked: Sequence[RankedCandidate]) -> Decision:
        return decide(
            ranked,
            self.thresholds,
            self._settings.visible,
            enforce_specificity=not self._settings.static_rag,
        )

    def _sanitize_weights(self, weights: Mapping[str, float] | None) -> dict[str, float]:
        sanitized: MutableMapping[str, float] = {name: 0.0 for name in FEATURE_NAMES}
        for name, value in (weights or {}).items():
            if name not in sanitized:
                logger.warning("Ignoring weight for unknown feature %s", name)
                continue
            try:
                sanitized[name] = float(value)
            except (TypeError, ValueError):
                logger.warning("Ignoring non-numeric weight for %s: %r", name, value)
                continue
        return dict(sanitized)
