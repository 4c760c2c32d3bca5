"""Bounded per-candidate feature vectors for the deterministic ranker and the bandit."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
import hashlib
from typing import Mapping, Optional

import numpy as np

from app.schemas import (
    FEATURE_DIM,
    FEATURE_NAMES,
    AlgorithmFamily,
    ErrorFamily,
    MemoryKind,
    MemoryRecord,
    MemoryStats,
    QueryProfile,
    RootCause,
    ScopeInfo,
    SessionInfo,
)
from orchestrator.exceptions import InvalidAgeError
from services.normalize import cosine, path_compatible, paths_compatible, token_signature

HASH_BUCKETS = 256
MS_PER_DAY = 86_400_000
RECENCY_HALF_LIFE_DAYS = 30.0
STRENGTH_PRIOR = 5.0
THEORY_DIMENSIONS = ("problem_family", "algorithm_family", "theory", "validation_tier")


@dataclass(frozen=True)
class FeatureVector:
    """Fixed-order vector over FEATURE_NAMES with every component in [-1, 1]."""

    values: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.values) != FEATURE_DIM:
            raise ValueError(f"expected {FEATURE_DIM} feature values, got {len(self.values)}")
        for name, value in zip(FEATURE_NAMES, self.values):
            if not -1.0 <= value <= 1.0:
                raise ValueError(f"feature {name}={value} outside [-1, 1]")

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, float]) -> "FeatureVector":
        return cls(tuple(float(mapping.get(name, 0.0)) for name in FEATURE_NAMES))

    @classmethod
    def zeros(cls) -> "FeatureVector":
        return cls((0.0,) * FEATURE_DIM)

    def __getitem__(self, name: str) -> float:
        return self.values[FEATURE_NAMES.index(name)]

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=np.float64)

    def as_dict(self) -> dict[str, float]:
        return dict(zip(FEATURE_NAMES, self.values))


@dataclass(frozen=True)
class FeedbackAggregates:
    confidence: float = 0.5
    strength: float = 0.0
    success_ratio: float = 0.5
    rejection_ratio: float = 0.0
    age_days: float = 0.0

    def __post_init__(self) -> None:
        for name in ("confidence", "strength", "success_ratio", "rejection_ratio"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name}={value} outside [0, 1]")
        if self.age_days < 0:
            raise ValueError("age_days must be non-negative")

    @classmethod
    def from_stats(
        cls,
        memory: MemoryRecord,
        stats: Optional[MemoryStats],
        now_ms: Optional[int] = None,
    ) -> "FeedbackAggregates":
        stats = stats or MemoryStats()
        total = stats.total
        age_ms = max(0, (now_ms or memory.governance.updated_at_ms) - memory.governance.updated_at_ms)
        return cls(
            confidence=memory.governance.confidence,
            strength=total / (total + STRENGTH_PRIOR),
            success_ratio=(stats.positive + 1) / (total + 2),
            rejection_ratio=(stats.negative / total) if total else 0.0,
            age_days=age_ms / MS_PER_DAY,
        )


def recency_feature(age_days: float) -> float:
    if age_days < 0:
        raise InvalidAgeError(age_days)
    return 1.0 / (1.0 + age_days / RECENCY_HALF_LIFE_DAYS)


def feedback_feature(agg: FeedbackAggregates) -> float:
    raw = 0.42 * agg.confidence + 0.33 * agg.strength + 0.25 * agg.success_ratio - 0.22 * agg.rejection_ratio
    return min(1.0, max(0.0, raw))


@lru_cache(maxsize=16384)
def _bucket(token: str) -> int:
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=4).digest()
    return int.from_bytes(digest, "big") % HASH_BUCKETS


def hashed_vector(signature: Mapping[str, float]) -> np.ndarray:
    vector = np.zeros(HASH_BUCKETS, dtype=np.float64)
    for token in sorted(signature):
        vector[_bucket(token)] += signature[token]
    return vector


def dense_similarity(left: Mapping[str, float], right: Mapping[str, float]) -> float:
    a, b = hashed_vector(left), hashed_vector(right)
    denom = float(np.linalg.norm(a) * np.linalg.norm(b))
    if denom == 0.0:
        return 0.0
    return float(min(1.0, max(0.0, float(np.dot(a, b)) / denom)))


def agreement(left: Optional[str], right: Optional[str]) -> float:
    """1 equal, 0 when either side is unknown, -1 on conflict."""

    if not left or not right:
        return 0.0
    return 1.0 if left == right else -1.0


def _enum_value(value, unknown) -> Optional[str]:
    if value is None or value == unknown:
        return None
    return value.value if hasattr(value, "value") else str(value)


def scope_relation(scope: ScopeInfo, project: Optional[str], repo: Optional[str]) -> float:
    if scope.project and project:
        return 1.0 if scope.project == project else -1.0
    if scope.repo and repo:
        return 1.0 if path_compatible(scope.repo, repo) else -1.0
    return 0.0


def session_relation(session: SessionInfo, memory: MemoryRecord) -> float:
    owner = memory.governance
    if session.session_id and session.session_id == owner.session_id:
        return 1.0
    if session.user_id and owner.user_id and session.user_id != owner.user_id:
        return -1.0
    return 0.0


def exception_relation(profile: QueryProfile, memory: MemoryRecord) -> float:
    query = profile.entities.get("exception") or []
    stored = memory.pattern.exception_type
    if not query or not stored:
        return 0.0
    return 1.0 if stored in query else -1.0


def path_relation(profile: QueryProfile, memory: MemoryRecord) -> float:
    if not profile.scope.paths or not memory.pattern.paths:
        return 0.0
    return 1.0 if paths_compatible(profile.scope.paths, memory.pattern.paths) else -1.0


def entity_jaccard(query: Mapping[str, list[str]], stored: Mapping[str, list[str]]) -> float:
    shared = sorted(set(query) & set(stored))
    if not shared:
        return 0.0
    left = {(slot, value) for slot in shared for value in query[slot]}
    right = {(slot, value) for slot in shared for value in stored[slot]}
    union = left | right
    return len(left & right) / len(union) if union else 0.0


def query_memory_kind(profile: QueryProfile) -> MemoryKind:
    if profile.rl_hints.algorithm_family is AlgorithmFamily.NONE:
        return MemoryKind.GENERAL
    return MemoryKind.RL_CONTROL


def negative_marks(memory: MemoryRecord, stats: Optional[MemoryStats]) -> set[str]:
    marks = set(memory.governance.negative_families)
    if stats:
        marks.update(stats.false_positive_families)
    return marks


def extract_features(
    profile: QueryProfile,
    memory: MemoryRecord,
    session: Optional[SessionInfo] = None,
    *,
    stats: Optional[MemoryStats] = None,
    now_ms: Optional[int] = None,
    theory_metadata: bool = True,
) -> FeatureVector:
    """Deterministic 18-dimensional feature vector for one (query, memory) pair."""

    session = session or profile.session
    meta = memory.metadata
    memory_signature = token_signature(memory.pattern.text)
    aggregates = FeedbackAggregates.from_stats(memory, stats, now_ms)
    hints = profile.rl_hints

    marks = negative_marks(memory, stats)
    flagged = profile.error_family.value in marks or (
        hints.algorithm_family is not AlgorithmFamily.NONE and hints.algorithm_family.value in marks
    )

    values = {
        "lexical": cosine(profile.token_signature, memory_signature),
        "dense": dense_similarity(profile.token_signature, memory_signature),
        "exception": exception_relation(profile, memory),
        "command": agreement(profile.command, memory.pattern.command),
        "path": path_relation(profile, memory),
        "entity": entity_jaccard(profile.entities, memory.pattern.entities),
        "scope": scope_relation(profile.scope, memory.pattern.project_scope, memory.pattern.repo),
        "family": agreement(
            _enum_value(profile.error_family, ErrorFamily.UNKNOWN),
            _enum_value(memory.pattern.error_family, ErrorFamily.UNKNOWN),
        ),
        "root_cause": agreement(
            _enum_value(profile.root_cause_class, RootCause.UNKNOWN),
            _enum_value(memory.pattern.root_cause_class, RootCause.UNKNOWN),
        ),
        "feedback": feedback_feature(aggregates),
        "success_prior": aggregates.success_ratio,
        "negative_applicability": -1.0 if flagged else 0.0,
        "session": session_relation(session, memory),
        "memory_kind": agreement(query_memory_kind(profile).value, meta.memory_kind.value),
        "problem_family": agreement(hints.problem_family, meta.problem_family),
        "algorithm_family": agreement(
            _enum_value(hints.algorithm_family, AlgorithmFamily.NONE),
            _enum_value(meta.algorithm_family, AlgorithmFamily.NONE),
        ),
        "theory": agreement(
            _enum_value(hints.theory_claim_type, None),
            _enum_value(meta.theory_claim_type, None),
        ),
        "validation_tier": meta.applied_tier.rank / 4.0,
    }
    if not theory_metadata:
        for name in THEORY_DIMENSIONS:
            values[name] = 0.0
    return FeatureVector.from_mapping({name: min(1.0, max(-1.0, value)) for name, value in values.items()})
