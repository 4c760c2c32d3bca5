"""Per-case verdicts and the run-level benchmark report."""
from __future__ import annotations

import hashlib
from typing import Any, Optional

from pydantic import BaseModel, Field

from app.schemas import DecisionKind, GateVerdict, OPEReport, TelemetryCounters
from services.codec import canonical_dumps
from services.ope import nearest_rank

# Suite-relative targets recorded next to the measured values.
TARGETS: dict[str, float] = {
    "accuracy_non_injected_min": 0.95,
    "hard_negative_fp_rate_max": 0.0,
    "injected_as_scripted_min": 1.0,
    "match_latency_p95_ms_max": 100.0,
}


class CaseVerdict(BaseModel):
    case_id: str
    family: str
    expected_decision: DecisionKind
    decision: DecisionKind
    expected_memory_id: Optional[str] = None
    top_memory_id: Optional[str] = None
    candidate_ids: list[str] = Field(default_factory=list)
    correct: bool
    hard_negative: bool = False
    hard_negative_hit: bool = False
    injected_bug_family: Optional[str] = None
    feedback_written: bool = False
    script_errors: list[str] = Field(default_factory=list)


class LatencyStats(BaseModel):
    calls: int
    mean_ms: float
    p95_ms: float


class RunReport(BaseModel):
    mode: str
    cases: int
    expected_decision_accuracy: float
    accuracy_non_injected: float
    injected_as_scripted: float
    hard_negative_fp_rate: float
    failure_abstain_rate: float
    feedback_write_rate: float
    contextual_stats_update_rate: float
    latency: dict[str, LatencyStats] = Field(default_factory=dict)
    decision_digest: str
    ope: Optional[OPEReport] = None
    verdict: Optional[GateVerdict] = None
    counters: Optional[TelemetryCounters] = None
    targets: dict[str, float] = Field(default_factory=lambda: dict(TARGETS))
    verdicts: list[CaseVerdict] = Field(default_factory=list)


def is_correct(
    expected_decision: DecisionKind,
    decision: DecisionKind,
    expected_memory_id: Optional[str],
    top_memory_id: Optional[str],
) -> bool:
    """Decision kind must match; the top memory must too when the case names one."""

    if decision is not expected_decision:
        return False
    return expected_memory_id is None or top_memory_id == expected_memory_id


def decision_digest(verdicts: list[CaseVerdict]) -> str:
    stream = [[v.case_id, v.decision.value, v.candidate_ids] for v in verdicts]
    return hashlib.sha256(canonical_dumps(stream)).hexdigest()


def latency_stats(samples: dict[str, list[float]]) -> dict[str, LatencyStats]:
    stats: dict[str, LatencyStats] = {}
    for tool, values in sorted(samples.items()):
        if not values:
            continue
        stats[tool] = LatencyStats(
            calls=len(values),
            mean_ms=sum(values) / len(values),
            p95_ms=nearest_rank(values, 0.95),
        )
    return stats


def _rate(numerator: int, denominator: int) -> float:
    return numerator / denominator if denominator else 0.0


def compute_metrics(
    mode: str,
    verdicts: list[CaseVerdict],
    latencies: dict[str, list[float]],
    *,
    counters: Optional[TelemetryCounters] = None,
    ope: Optional[OPEReport] = None,
    verdict: Optional[GateVerdict] = None,
) -> RunReport:
    if not verdicts:
        raise ValueError("compute_metrics needs at least one case verdict")
    n = len(verdicts)
    plain = [v for v in verdicts if v.injected_bug_family is None]
    injected = [v for v in verdicts if v.injected_bug_family is not None]
    hard = [v for v in verdicts if v.hard_negative]
    failure_abstains = sum(
        1 for v in verdicts if v.expected_decision is not DecisionKind.ABSTAIN and v.decision is DecisionKind.ABSTAIN
    )
    update_rate = counters.contextual_stats_update_rate if counters else 0.0
    return RunReport(
        mode=mode,
        cases=n,
        expected_decision_accuracy=_rate(sum(v.correct for v in verdicts), n),
        accuracy_non_injected=_rate(sum(v.correct for v in plain), len(plain)),
        injected_as_scripted=_rate(sum(v.correct and not v.script_errors for v in injected), len(injected)),
        hard_negative_fp_rate=_rate(sum(v.hard_negative_hit for v in hard), len(hard)),
        failure_abstain_rate=_rate(failure_abstains, n),
        feedback_write_rate=_rate(sum(v.feedback_written for v in verdicts), n),
        contextual_stats_update_rate=update_rate,
        latency=latency_stats(latencies),
        decision_digest=decision_digest(verdicts),
        ope=ope,
        verdict=verdict,
        counters=counters,
        verdicts=verdicts,
    )


def summary_rows(report: RunReport) -> list[dict[str, Any]]:
    """Headline metrics paired with their targets, for the Markdown summary."""

    match_p95 = report.latency.get("issue_match")
    return [
        {
            "metric": "accuracy (non-injected)",
            "value": report.accuracy_non_injected,
            "target": f">= {TARGETS['accuracy_non_injected_min']:.2f}",
            "ok": report.accuracy_non_injected >= TARGETS["accuracy_non_injected_min"],
        },
        {
            "metric": "hard-negative FP rate",
            "value": report.hard_negative_fp_rate,
            "target": f"= {TARGETS['hard_negative_fp_rate_max']:.3f}",
            "ok": report.hard_negative_fp_rate <= TARGETS["hard_negative_fp_rate_max"],
        },
        {
            "metric": "injected families as scripted",
            "value": report.injected_as_scripted,
            "target": f">= {TARGETS['injected_as_scripted_min']:.2f}",
            "ok": report.injected_as_scripted >= TARGETS["injected_as_scripted_min"],
        },
        {
            "metric": "issue_match p95 latency (ms)",
            "value": match_p95.p95_ms if match_p95 else 0.0,
            "target": f"< {TARGETS['match_latency_p95_ms_max']:.0f}",
            "ok": match_p95 is None or match_p95.p95_ms < TARGETS["match_latency_p95_ms_max"],
        },
    ]
