"""Benchmark case records and the canonical JSON-lines case file."""
from __future__ import annotations

from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, Field

from app.schemas import DecisionKind, MatchRequest, ResolutionRequest
from orchestrator.exceptions import SchemaViolationError
from services.codec import canonical_loads, canonical_text

GENERATOR_VERSION = 1
CASE_FILE_KIND = "memctl-bench-cases"

# Algorithm-family composition of the 200-case suite, in generation order.
COMPOSITION: dict[str, int] = {
    "a2c": 8,
    "dqn": 25,
    "gae": 9,
    "generic_rl": 28,
    "ppo": 28,
    "sac": 29,
    "td3": 25,
    "vtrace": 8,
    "non_rl": 40,
}
INJECTED_FAMILIES = (
    "path_mount",
    "feedback_alias_not_canonical",
    "missing_project_scope",
    "command_path_mismatch",
)


class ScriptStep(BaseModel):
    """Extra interaction replayed after the graded match in online_shadow mode."""

    tool: Literal["issue_feedback", "issue_record_resolution"]
    raw_label: Optional[str] = None
    resolution: Optional[ResolutionRequest] = None
    explicit: bool = False
    expect_error: Optional[str] = None


class BenchmarkCase(BaseModel):
    case_id: str
    algorithm_family: str
    seeded_memories: list[ResolutionRequest]
    query: MatchRequest
    expected_decision: DecisionKind
    expected_memory_id: Optional[str] = None
    hard_negative: bool = False
    hard_negative_memory_id: Optional[str] = None
    grader_label: str = "fix_verified"
    feedback_script: list[ScriptStep] = Field(default_factory=list)
    injected_bug_family: Optional[str] = None


class CaseFileHeader(BaseModel):
    kind: str = CASE_FILE_KIND
    generator_version: int = GENERATOR_VERSION
    seed: int
    cases: int


def dump_cases(header: CaseFileHeader, cases: list[BenchmarkCase]) -> bytes:
    lines = [canonical_text(header)]
    lines.extend(canonical_text(case.model_dump(mode="json")) for case in cases)
    return ("\n".join(lines) + "\n").encode("utf-8")


def write_cases(path: str | Path, header: CaseFileHeader, cases: list[BenchmarkCase]) -> Path:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_bytes(dump_cases(header, cases))
    return target


def read_cases(path: str | Path) -> tuple[CaseFileHeader, list[BenchmarkCase]]:
    lines = [line for line in Path(path).read_text(encoding="utf-8").splitlines() if line.strip()]
    if not lines:
        raise SchemaViolationError(f"case file {path} is empty")
    try:
        header = CaseFileHeader.model_validate(canonical_loads(lines[0]))
        cases = [BenchmarkCase.model_validate(canonical_loads(line)) for line in lines[1:]]
    except ValueError as exc:
        raise SchemaViolationError(f"case file {path} failed validation: {exc}") from exc
    if header.kind != CASE_FILE_KIND or header.cases != len(cases):
        raise SchemaViolationError(f"case file {path} header does not describe its cases")
    return header, cases
