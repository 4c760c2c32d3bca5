"""Off-policy evaluation of the shadow policy and the conservative rollout gate."""
from __future__ import annotations

from dataclasses import dataclass
import itertools
import logging
import math
from typing import Optional, Sequence

import numpy as np

from app.config import GateSettings
from app.schemas import (
    DecisionKind,
    EventKind,
    FeedbackType,
    GateReason,
    GateRecommendation,
    GateVerdict,
    MemoryKind,
    MetricsResponse,
    OPEReport,
    OpeReportRecord,
    RetrievalEvent,
    TelemetryCounters,
)
from services.state import StoreState

logger = logging.getLogger(__name__)

EXHAUSTIVE_MAX_N = 6


@dataclass(frozen=True)
class LoggedRow:
    """One logged decision with its observed reward and reward-model terms."""

    context_ref: str
    action: str
    behavior_propensity: float
    target_propensity: float
    reward: float
    reward_model_chosen: float = 0.0
    reward_model_policy: float = 0.0
    supported: bool = True
    memory_kind: MemoryKind = MemoryKind.GENERAL

    def __post_init__(self) -> None:
        if not 0.0 <= self.behavior_propensity <= 1.0:
            raise ValueError("behavior_propensity must lie in [0, 1]")
        if not 0.0 <= self.target_propensity <= 1.0:
            raise ValueError("target_propensity must lie in [0, 1]")
        if not -1.0 <= self.reward <= 1.0:
            raise ValueError("reward must lie in [-1, 1]")

    @property
    def weight(self) -> float:
        return self.target_propensity / self.behavior_propensity


def _check_rows(rows: Sequence[LoggedRow]) -> None:
    if not rows:
        raise ValueError("at least one logged row is required")
    if any(row.behavior_propensity <= 0 for row in rows):
        raise ValueError("every row needs a positive behavior propensity")


def estimate_ips(rows: Sequence[LoggedRow]) -> float:
    _check_rows(rows)
    return float(np.mean([row.weight * row.reward for row in rows]))


def estimate_snips(rows: Sequence[LoggedRow]) -> float:
    _check_rows(rows)
    weights = np.array([row.weight for row in rows])
    total = float(weights.sum())
    if total <= 0:
        raise ValueError("total importance weight is zero")
    rewards = np.array([row.reward for row in rows])
    return float(np.dot(weights, rewards) / total)


def dr_contributions(rows: Sequence[LoggedRow], weight_cap: Optional[float] = None) -> list[float]:
    """Per-row doubly robust terms, optionally with importance weights capped."""

    _check_rows(rows)
    values = []
    for row in rows:
        weight = row.weight if weight_cap is None else min(row.weight, weight_cap)
        values.append(row.reward_model_policy + weight * (row.reward - row.reward_model_chosen))
    return values


def estimate_dr(rows: Sequence[LoggedRow]) -> float:
    return float(np.mean(dr_contributions(rows)))


def bootstrap_means(contributions: Sequence[float], resamples: int, seed: int) -> np.ndarray:
    """Resampled means; small inputs are enumerated exhaustively instead of sampled."""

    values = np.asarray(contributions, dtype=np.float64)
    n = values.size
    if n <= EXHAUSTIVE_MAX_N and n ** n <= resamples:
        return np.array([values[list(index)].mean() for index in itertools.product(range(n), repeat=n)])
    rng = np.random.default_rng(seed)
    return values[rng.integers(0, n, size=(resamples, n))].mean(axis=1)


def bootstrap_lcb(
    contributions: Sequence[float],
    level: float = 0.95,
    resamples: int = 1000,
    seed: int = 7,
) -> float:
    if len(contributions) == 0:
        raise ValueError("bootstrap needs at least one contribution")
    if resamples < 1:
        raise ValueError("resamples must be at least 1")
    means = bootstrap_means(contributions, resamples, seed)
    return float(np.percentile(means, 100.0 * (1.0 - level), method="inverted_cdf"))


def nearest_rank(values: Sequence[float], quantile: float) -> float:
    if not values:
        return 0.0
    ordered = sorted(values)
    rank = max(1, math.ceil(quantile * len(ordered)))
    return float(ordered[rank - 1])


def evaluate_gate(report: OPEReport, settings: GateSettings, *, low_risk: bool, rl_control: bool) -> GateVerdict:
    """Checks run in a fixed order and the first failure decides."""

    if report.insufficient_data or report.support < settings.n_min:
        return GateVerdict(recommendation=GateRecommendation.BLOCKED, reason=GateReason.INSUFFICIENT_SUPPORT)
    if report.fp_rate > settings.rho_max:
        return GateVerdict(recommendation=GateRecommendation.BLOCKED, reason=GateReason.FALSE_POSITIVE_RISK)
    if report.lcb_95 <= report.baseline_value + settings.epsilon:
        return GateVerdict(recommendation=GateRecommendation.HOLD_SHADOW, reason=GateReason.LCB_BELOW_BASELINE)
    if report.latency_p95 > settings.latency_max_ms or not low_risk or rl_control:
        return GateVerdict(recommendation=GateRecommendation.BLOCKED, reason=GateReason.OPERATIONAL_SAFETY)
    return GateVerdict(recommendation=GateRecommendation.ELIGIBLE_FOR_CANARY, reason=GateReason.ELIGIBLE)


def reward_model(score: float) -> float:
    return float(np.clip(2.0 * score - 1.0, -1.0, 1.0))


def window_events(state: StoreState, window: Optional[int] = None) -> list[RetrievalEvent]:
    ids = state.retrieval_order if window is None else state.retrieval_order[-window:]
    return [state.retrievals[event_id] for event_id in ids]


def row_for_event(state: StoreState, event: RetrievalEvent) -> Optional[LoggedRow]:
    learnable = [fb for fb in state.feedback_for(event.retrieval_event_id) if fb.canonical.learnable]
    if not learnable:
        return None
    latest = learnable[-1]
    chosen = event.candidate(latest.memory_id) if latest.memory_id else None
    if chosen is None:
        return None
    policy_value = sum(
        candidate.shadow.target_propensity * reward_model(candidate.score)
        for candidate in event.candidates
        if candidate.shadow is not None
    )
    return LoggedRow(
        context_ref=event.retrieval_event_id,
        action=chosen.memory_id,
        behavior_propensity=chosen.behavior_propensity,
        target_propensity=chosen.shadow.target_propensity if chosen.shadow else 0.0,
        reward=latest.canonical.reward,
        reward_model_chosen=reward_model(chosen.score),
        reward_model_policy=float(np.clip(policy_value, -1.0, 1.0)),
        supported=chosen.shadow is not None,
        memory_kind=chosen.memory_kind,
    )


def build_rows(state: StoreState, events: Sequence[RetrievalEvent]) -> list[LoggedRow]:
    """Estimation rows; zero behavior propensity rows are dropped."""

    rows = []
    for event in events:
        row = row_for_event(state, event)
        if row is not None and row.behavior_propensity > 0:
            rows.append(row)
    return rows


def false_positive_rate(state: StoreState, events: Sequence[RetrievalEvent]) -> float:
    judged = flagged = 0
    for event in events:
        if event.decision.kind is not DecisionKind.MATCH:
            continue
        feedback = state.feedback_for(event.retrieval_event_id)
        if not feedback:
            continue
        judged += 1
        if any(fb.canonical.type is FeedbackType.FALSE_POSITIVE for fb in feedback):
            flagged += 1
    return flagged / judged if judged else 0.0


def dr_with_bound(rows: Sequence[LoggedRow], settings: GateSettings) -> tuple[float, float]:
    """DR estimate and its bootstrap lower bound, never above the estimate itself."""

    dr = estimate_dr(rows)
    lcb = bootstrap_lcb(
        dr_contributions(rows, settings.weight_cap),
        resamples=settings.resamples,
        seed=settings.seed,
    )
    return dr, min(lcb, dr)


def build_report(
    state: StoreState,
    settings: GateSettings,
    window: Optional[int] = None,
) -> tuple[OPEReport, bool]:
    """OPE report over the window plus the rl_control flag for the gate."""

    events = window_events(state, window)
    rows = build_rows(state, events)
    latency_p95 = nearest_rank([event.latency_ms for event in events], 0.95)
    fp_rate = false_positive_rate(state, events)
    rl_control = any(row.memory_kind is MemoryKind.RL_CONTROL for row in rows)
    if not rows:
        return OPEReport(fp_rate=fp_rate, latency_p95=latency_p95, insufficient_data=True), rl_control

    dr, lcb = dr_with_bound(rows, settings)
    weights_positive = sum(row.weight for row in rows) > 0
    report = OPEReport(
        n_rows=len(rows),
        ips=estimate_ips(rows),
        snips=estimate_snips(rows) if weights_positive else 0.0,
        dr=dr,
        lcb_95=lcb,
        support=sum(
            1 for row in rows if row.supported and row.target_propensity >= settings.support_min_propensity
        ),
        fp_rate=fp_rate,
        latency_p95=latency_p95,
        baseline_value=float(np.mean([row.reward for row in rows])),
    )
    return report, rl_control


def telemetry_counters(state: StoreState) -> TelemetryCounters:
    retrievals = len(state.retrievals)
    with_feedback = with_update = 0
    decisions: dict[str, int] = {}
    for event in state.retrievals.values():
        decisions[event.decision.kind.value] = decisions.get(event.decision.kind.value, 0) + 1
        feedback = state.feedback_for(event.retrieval_event_id)
        if feedback:
            with_feedback += 1
        if any(fb.bandit_applied for fb in feedback):
            with_update += 1
    return TelemetryCounters(
        retrieval_events=retrievals,
        feedback_events=len(state.feedback),
        learnable_feedback_events=sum(1 for fb in state.feedback.values() if fb.canonical.learnable),
        bandit_updates=state.bandit_updates,
        delayed_links=len(state.links),
        memories=len(state.memories),
        feedback_write_rate=with_feedback / retrievals if retrievals else 0.0,
        contextual_stats_update_rate=with_update / retrievals if retrievals else 0.0,
        decisions=dict(sorted(decisions.items())),
    )


class OpeService:
    """Builds the report over the live store and optionally logs it."""

    def __init__(self, store, settings: GateSettings) -> None:
        self._store = store
        self._settings = settings

    def metrics(self, window: Optional[int] = None, persist: bool = True) -> MetricsResponse:
        state = self._store.state
        report, rl_control = build_report(state, self._settings, window)
        verdict = evaluate_gate(report, self._settings, low_risk=self._settings.low_risk, rl_control=rl_control)
        if persist:
            record = OpeReportRecord(
                report=report,
                verdict=verdict,
                window=window,
                low_risk=self._settings.low_risk,
                rl_control=rl_control,
            )
            self._store.append(EventKind.OPE_REPORT, record)
        logger.info(
            "ope report rows=%s support=%s dr=%.4f lcb=%.4f -> %s (%s)",
            report.n_rows,
            report.support,
            report.dr,
            report.lcb_95,
            verdict.recommendation.value,
            verdict.reason.value,
        )
        return MetricsResponse(report=report, verdict=verdict, counters=telemetry_counters(state))
