"""Pydantic schemas for tool payloads and persisted log records."""
from __future__ import annotations

from enum import Enum
from typing import Any, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

SCHEMA_VERSION = 1

FEATURE_NAMES: tuple[str, ...] = (
    "lexical",
    "dense",
    "exception",
    "command",
    "path",
    "entity",
    "scope",
    "family",
    "root_cause",
    "feedback",
    "success_prior",
    "negative_applicability",
    "session",
    "memory_kind",
    "problem_family",
    "algorithm_family",
    "theory",
    "validation_tier",
)
FEATURE_DIM = len(FEATURE_NAMES)


class EventKind(str, Enum):
    MEMORY_UPSERT = "memory_upsert"
    RETRIEVAL = "retrieval"
    FEEDBACK = "feedback"
    DELAYED_LINK = "delayed_link"
    BANDIT_SNAPSHOT = "bandit_snapshot"
    OPE_REPORT = "ope_report"
    GOVERNANCE = "governance"


class ErrorFamily(str, Enum):
    EXCEPTION = "exception"
    TEST_FAILURE = "test_failure"
    BUILD_FAILURE = "build_failure"
    RUNTIME_DIVERGENCE = "runtime_divergence"
    CONFIG = "config"
    PATH_OR_SCOPE = "path_or_scope"
    UNKNOWN = "unknown"


class RootCause(str, Enum):
    TERMINAL_MASK = "terminal_mask"
    TARGET_NETWORK = "target_network"
    GRADIENT_FLOW = "gradient_flow"
    OBJECTIVE_TERM = "objective_term"
    NORMALIZATION = "normalization"
    DATA_PLUMBING = "data_plumbing"
    ENVIRONMENT_API = "environment_api"
    UNKNOWN = "unknown"


class AlgorithmFamily(str, Enum):
    DQN = "dqn"
    PPO = "ppo"
    SAC = "sac"
    TD3 = "td3"
    GAE = "gae"
    A2C = "a2c"
    VTRACE = "vtrace"
    GENERIC_RL = "generic_rl"
    NONE = "none"


class TheoryClaim(str, Enum):
    UPDATE_EQUATION = "update_equation"
    OBJECTIVE_TERM = "objective_term"
    MASKING = "masking"
    GRADIENT_BOUNDARY = "gradient_boundary"
    EVALUATION_PROTOCOL = "evaluation_protocol"


class ValidationTier(str, Enum):
    UNTESTED = "untested"
    SMOKE = "smoke"
    SEEDED_RUN = "seeded_run"
    REVIEWED = "reviewed"
    VERIFIED = "verified"

    @property
    def rank(self) -> int:
        return TIER_ORDER.index(self)


TIER_ORDER: tuple[ValidationTier, ...] = (
    ValidationTier.UNTESTED,
    ValidationTier.SMOKE,
    ValidationTier.SEEDED_RUN,
    ValidationTier.REVIEWED,
    ValidationTier.VERIFIED,
)


class MemoryKind(str, Enum):
    GENERAL = "general"
    RL_CONTROL = "rl_control"


class LifecycleState(str, Enum):
    RETAIN = "retain"
    MERGE = "merge"
    SPLIT = "split"
    DEMOTE = "demote"
    REVIEW = "review"


class ReviewState(str, Enum):
    PENDING = "pending"
    APPROVED = "approved"


class Severity(str, Enum):
    MINOR = "minor"
    MAJOR = "major"
    CRITICAL = "critical"


class DecisionKind(str, Enum):
    MATCH = "match"
    AMBIGUOUS = "ambiguous"
    ABSTAIN = "abstain"


class FeedbackType(str, Enum):
    FIX_VERIFIED = "fix_verified"
    FALSE_POSITIVE = "false_positive"
    CANDIDATE_ACCEPTED = "candidate_accepted"
    CANDIDATE_REJECTED = "candidate_rejected"
    MERGE_CONFIRMED = "merge_confirmed"
    MERGE_REJECTED = "merge_rejected"
    SPLIT_CONFIRMED = "split_confirmed"
    SPLIT_REJECTED = "split_rejected"


class FeedbackSource(str, Enum):
    EXPLICIT = "explicit"
    IMPLICIT_DELAYED = "implicit_delayed"


class ClaimResult(str, Enum):
    CLAIMED = "claimed"
    ALREADY_PRESENT = "already_present"


class LinkOutcome(str, Enum):
    LINKED = "linked"
    NO_LINK = "no_link"
    DUPLICATE = "duplicate"


class GateRecommendation(str, Enum):
    HOLD_SHADOW = "hold_shadow"
    BLOCKED = "blocked"
    ELIGIBLE_FOR_CANARY = "eligible_for_canary"


class GateReason(str, Enum):
    INSUFFICIENT_SUPPORT = "insufficient_support"
    FALSE_POSITIVE_RISK = "false_positive_risk"
    LCB_BELOW_BASELINE = "lcb_below_baseline"
    OPERATIONAL_SAFETY = "operational_safety"
    ELIGIBLE = "eligible"


class GovernanceAction(str, Enum):
    PROMOTION = "promotion"
    TRANSITION = "transition"
    REGISTER_ANCHOR = "register_anchor"


# --- context and profile -------------------------------------------------


class SessionInfo(BaseModel):
    session_id: str = "default"
    user_id: str = "local"


class ExecContext(BaseModel):
    stack_frames: list[str] = Field(default_factory=list)
    env_tags: list[str] = Field(default_factory=list)


class Context(BaseModel):
    """Raw developer context observed by the agent."""

    error_text: str = ""
    query_text: str = ""
    project_scope: Optional[str] = None
    repo_root: Optional[str] = None
    repo_paths: list[str] = Field(default_factory=list)
    exec_context: Optional[ExecContext] = None
    session: SessionInfo = Field(default_factory=SessionInfo)

    def context_fields(self) -> dict[str, Any]:
        return self.model_dump(include=set(Context.model_fields))


class ScopeInfo(BaseModel):
    project: Optional[str] = None
    repo: Optional[str] = None
    paths: list[str] = Field(default_factory=list)


class RlHints(BaseModel):
    algorithm_family: AlgorithmFamily = AlgorithmFamily.NONE
    problem_family: Optional[str] = None
    runtime_stage: str = "unknown"
    validation_tier: Optional[ValidationTier] = None
    theory_claim_type: Optional[TheoryClaim] = None


class QueryProfile(BaseModel):
    """Normalized view of a Context used for retrieval and linking."""

    model_config = ConfigDict(frozen=True)

    error_family: ErrorFamily = ErrorFamily.UNKNOWN
    root_cause_class: RootCause = RootCause.UNKNOWN
    entities: dict[str, list[str]] = Field(default_factory=dict)
    token_signature: dict[str, float] = Field(default_factory=dict)
    scope: ScopeInfo = Field(default_factory=ScopeInfo)
    rl_hints: RlHints = Field(default_factory=RlHints)
    command: Optional[str] = None
    session: SessionInfo = Field(default_factory=SessionInfo)

    @property
    def exception_type(self) -> Optional[str]:
        values = self.entities.get("exception") or []
        return values[0] if values else None


# --- memories ------------------------------------------------------------


class ValidationPayload(BaseModel):
    seeds: list[int | str] = Field(default_factory=list)
    commands: list[str] = Field(default_factory=list)
    results_digest: Optional[str] = None


class AuditFinding(BaseModel):
    finding: str
    severity: Severity
    open: bool = True


class RlControlMetadata(BaseModel):
    """Theory-to-code metadata; mandatory pieces enforced for rl_control memories."""

    memory_kind: MemoryKind = MemoryKind.GENERAL
    problem_family: Optional[str] = None
    algorithm_family: AlgorithmFamily = AlgorithmFamily.NONE
    theory_claim_type: Optional[TheoryClaim] = None
    validation_tier: Optional[ValidationTier] = None
    applied_tier: ValidationTier = ValidationTier.UNTESTED
    runtime_stage: Optional[str] = None
    artifacts: list[str] = Field(default_factory=list)
    validation_payload: ValidationPayload = Field(default_factory=ValidationPayload)
    audit_findings: list[AuditFinding] = Field(default_factory=list)

    @model_validator(mode="after")
    def _require_rl_fields(self) -> "RlControlMetadata":
        if self.memory_kind is MemoryKind.RL_CONTROL:
            missing = [
                name
                for name in ("problem_family", "theory_claim_type", "validation_tier")
                if getattr(self, name) is None
            ]
            if missing:
                raise ValueError(f"rl_control memories require {', '.join(missing)}")
        return self


class MemoryPattern(BaseModel):
    pattern_id: str
    text: str = ""
    error_family: ErrorFamily = ErrorFamily.UNKNOWN
    root_cause_class: RootCause = RootCause.UNKNOWN
    exception_type: Optional[str] = None
    command: Optional[str] = None
    paths: list[str] = Field(default_factory=list)
    entities: dict[str, list[str]] = Field(default_factory=dict)
    project_scope: Optional[str] = None
    repo: Optional[str] = None


class MemoryVariant(BaseModel):
    variant_id: str
    fix_summary: str = ""
    commands: list[str] = Field(default_factory=list)


class MemoryGovernance(BaseModel):
    session_id: str = "default"
    user_id: str = "local"
    confidence: float = Field(default=0.5, ge=0.0, le=1.0)
    lifecycle: LifecycleState = LifecycleState.RETAIN
    review_state: ReviewState = ReviewState.PENDING
    negative_families: list[str] = Field(default_factory=list)
    created_at_ms: int = 0
    updated_at_ms: int = 0


class MemoryRecord(BaseModel):
    """A stored failure pattern plus its fix variant, metadata, and governance."""

    memory_id: str
    pattern: MemoryPattern
    variant: MemoryVariant
    metadata: RlControlMetadata = Field(default_factory=RlControlMetadata)
    governance: MemoryGovernance = Field(default_factory=MemoryGovernance)


class MemoryStats(BaseModel):
    """Feedback aggregates folded from feedback events."""

    total: int = 0
    positive: int = 0
    negative: int = 0
    accepted: int = 0
    rejected: int = 0
    verified: int = 0
    false_positive: int = 0
    false_positive_families: list[str] = Field(default_factory=list)


# --- log envelope ----------------------------------------------------------


class EventRecord(BaseModel):
    """One framed entry of the append-only log."""

    event_id: str = Field(min_length=1)
    kind: EventKind
    sequence: int = Field(default=0, ge=0)
    timestamp_ms: int = Field(ge=0)
    session_id: str = ""
    schema_version: int = SCHEMA_VERSION
    payload: dict[str, Any]


# --- retrieval and feedback log records -----------------------------------


class ShadowEntry(BaseModel):
    mu: float
    uncertainty: float
    delta: float
    shadow_score: float
    target_propensity: float


class LoggedCandidate(BaseModel):
    memory_id: str
    pattern_id: str
    variant_id: str
    rank: int
    score: float
    features: list[float]
    specificity_ok: bool
    behavior_propensity: float
    memory_kind: MemoryKind = MemoryKind.GENERAL
    shadow: Optional[ShadowEntry] = None


class DecisionRecord(BaseModel):
    kind: DecisionKind
    top_score: float
    margin: float
    visible_ids: list[str] = Field(default_factory=list)


class RetrievalEvent(BaseModel):
    retrieval_event_id: str
    session: SessionInfo
    timestamp_ms: int
    context: Context
    profile: QueryProfile
    candidates: list[LoggedCandidate] = Field(default_factory=list)
    decision: DecisionRecord
    shadow_enabled: bool
    latency_ms: float = 0.0

    def candidate(self, memory_id: str | None) -> Optional[LoggedCandidate]:
        if memory_id is None:
            return self.candidates[0] if self.candidates else None
        return next((c for c in self.candidates if c.memory_id == memory_id), None)


class FeedbackAudit(BaseModel):
    raw_label: str
    override_reward_used: bool = False
    source: FeedbackSource = FeedbackSource.EXPLICIT


class CanonicalFeedback(BaseModel):
    type: FeedbackType
    reward: float = Field(ge=-1.0, le=1.0)
    learnable: bool
    audit: FeedbackAudit


class FeedbackEvent(BaseModel):
    feedback_event_id: str
    retrieval_event_id: str
    memory_id: Optional[str] = None
    canonical: CanonicalFeedback
    confidence: float = Field(ge=0.0, le=1.0)
    features: Optional[list[float]] = None
    bandit_applied: bool = False
    decision_kind: DecisionKind
    error_family: ErrorFamily = ErrorFamily.UNKNOWN
    algorithm_family: AlgorithmFamily = AlgorithmFamily.NONE
    link_key: Optional[str] = None


class IdempotenceKey(BaseModel):
    model_config = ConfigDict(frozen=True)

    retrieval_event_id: str
    pattern_id: str
    variant_id: str
    feedback_type: FeedbackType

    def token(self) -> str:
        return "|".join(
            (self.retrieval_event_id, self.pattern_id, self.variant_id, self.feedback_type.value)
        )


class ResolutionSummary(BaseModel):
    pattern_id: str
    variant_id: str
    notes: str = ""
    marked_wrong: bool = False


class DelayedLink(BaseModel):
    retrieval_event_id: str
    link_confidence: float
    implicit_type: FeedbackType
    resolution_summary: ResolutionSummary
    key: IdempotenceKey
    feedback_event_id: str

    @field_validator("link_confidence")
    @classmethod
    def _known_confidence(cls, value: float) -> float:
        if value not in (1.0, 0.75):
            raise ValueError("link_confidence must be 1.0 or 0.75")
        return value


# --- bandit / ope ----------------------------------------------------------


class BanditHyper(BaseModel):
    gamma: float = 0.5
    alpha: float = 1.0
    delta_max: float = 0.05
    temperature: float = 0.2
    top_kb: int = 8


class BanditState(BaseModel):
    A: list[float]
    b: list[float]
    n: list[int]
    lam: float = Field(gt=0)
    hyper: BanditHyper = Field(default_factory=BanditHyper)


class BanditSnapshot(BaseModel):
    updates: int
    state: BanditState


class OPEReport(BaseModel):
    n_rows: int = 0
    ips: float = 0.0
    snips: float = 0.0
    dr: float = 0.0
    lcb_95: float = 0.0
    support: int = 0
    fp_rate: float = 0.0
    latency_p95: float = 0.0
    baseline_value: float = 0.0
    insufficient_data: bool = False


class GateVerdict(BaseModel):
    recommendation: GateRecommendation
    reason: GateReason


class OpeReportRecord(BaseModel):
    report: OPEReport
    verdict: GateVerdict
    window: Optional[int] = None
    low_risk: bool = False
    rl_control: bool = False


# --- governance ------------------------------------------------------------


class TheoryObligation(BaseModel):
    objective: str
    equation_text: str
    assumptions: list[str] = Field(default_factory=list)
    problem_family: Optional[str] = None
    theory_claim_type: Optional[TheoryClaim] = None

    @field_validator("equation_text")
    @classmethod
    def _non_empty(cls, value: str) -> str:
        if not value.strip():
            raise ValueError("equation_text must be non-empty")
        return value


class AnchorRef(BaseModel):
    file: str
    symbol: str
    line: Optional[int] = None
    check_name: str


class TheoryAnchor(BaseModel):
    obligation_id: str
    obligation: TheoryObligation
    anchors: list[AnchorRef]

    @field_validator("anchors")
    @classmethod
    def _at_least_one(cls, value: list[AnchorRef]) -> list[AnchorRef]:
        if not value:
            raise ValueError("at least one anchor is required")
        return value


class GovernanceEvent(BaseModel):
    action: GovernanceAction
    actor: str
    memory_id: Optional[str] = None
    inputs: dict[str, Any] = Field(default_factory=dict)
    outcome: dict[str, Any] = Field(default_factory=dict)


# --- tool surface ----------------------------------------------------------


class MatchOptions(BaseModel):
    include_telemetry: bool = False
    k: Optional[int] = Field(default=None, ge=1)


class MatchRequest(Context):
    """Arguments of issue_match."""

    options: MatchOptions = Field(default_factory=MatchOptions)


class VisibleCandidate(BaseModel):
    memory_id: str
    rank: int
    score: float
    summary: str
    validation_tier: ValidationTier
    recency: float


class TelemetryEntry(BaseModel):
    memory_id: str
    mu: float
    uncertainty: float
    delta: float
    shadow_score: float
    target_propensity: float


class TelemetrySummary(BaseModel):
    shadow_enabled: bool
    scored: int
    behavior_propensity: float
    entries: Optional[list[TelemetryEntry]] = None


class MatchResponse(BaseModel):
    decision: DecisionKind
    top_score: float
    margin: float
    candidates: list[VisibleCandidate] = Field(default_factory=list)
    retrieval_event_id: str
    telemetry: TelemetrySummary


class FeedbackRequest(BaseModel):
    """Arguments of issue_feedback."""

    retrieval_event_id: str
    memory_ref: Optional[str] = None
    raw_label: str = Field(min_length=1)
    override_reward: Optional[float] = Field(default=None, allow_inf_nan=False)


class FeedbackAck(BaseModel):
    feedback_event_id: str
    canonical_type: FeedbackType
    reward: float
    learnable: bool
    bandit_updated: bool


class ResolutionRequest(Context):
    """Arguments of issue_record_resolution: a verified fix plus its context."""

    pattern_id: str = Field(min_length=1)
    variant_id: str = Field(min_length=1)
    memory_id: Optional[str] = None
    fix_summary: str = ""
    notes: str = ""
    marked_wrong: bool = False
    explicit_event_id: Optional[str] = None
    root_cause_class: Optional[RootCause] = None
    rl_metadata: Optional[RlControlMetadata] = None
    negative_families: list[str] = Field(default_factory=list)
    confidence: float = Field(default=0.5, ge=0.0, le=1.0)
    review_token: Optional[str] = None


class ResolutionAck(BaseModel):
    outcome: LinkOutcome
    link_confidence: float
    implicit_type: Optional[FeedbackType] = None
    memory_id: str
    retrieval_event_id: Optional[str] = None
    applied_tier: ValidationTier


class MetricsRequest(BaseModel):
    window: Optional[int] = Field(default=None, ge=1)
    persist: bool = True


class TelemetryCounters(BaseModel):
    retrieval_events: int = 0
    feedback_events: int = 0
    learnable_feedback_events: int = 0
    bandit_updates: int = 0
    delayed_links: int = 0
    memories: int = 0
    feedback_write_rate: float = 0.0
    contextual_stats_update_rate: float = 0.0
    decisions: dict[str, int] = Field(default_factory=dict)


class MetricsResponse(BaseModel):
    report: OPEReport
    verdict: GateVerdict
    counters: TelemetryCounters


class HealthRequest(BaseModel):
    pass


class HealthResponse(BaseModel):
    store_open: bool
    log_sequence: int
    bandit_dims: int
    config_digest: str
    uptime_s: float
    memories: int
