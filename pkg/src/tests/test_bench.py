"""Benchmark generation, case files, metrics and in-process replay."""

from collections import Counter

import pytest

from app.schemas import DecisionKind, EventKind
from bench.cases import COMPOSITION, INJECTED_FAMILIES, dump_cases, read_cases, write_cases
from bench.cli import main, render_summary
from bench.generator import generate_cases
from bench.metrics import CaseVerdict, compute_metrics, is_correct
from bench.replay import MODES, load_config, replay, resolve_mode
from orchestrator.exceptions import SchemaViolationError
from services.storage import LOG_NAME, iter_frames

SEED = 20240601


@pytest.fixture(scope="module")
def generated():
    return generate_cases(SEED)


def test_suite_composition(generated):
    """200 cases in the fixed family mix, 80 hard negatives, every injected family present."""

    header, cases = generated
    assert header.cases == len(cases) == 200
    assert Counter(case.algorithm_family for case in cases) == COMPOSITION
    assert sum(case.hard_negative for case in cases) == 80
    assert len({case.case_id for case in cases}) == 200

    injected = Counter(case.injected_bug_family for case in cases if case.injected_bug_family)
    assert set(injected) == set(INJECTED_FAMILIES)
    assert sum(injected.values()) == COMPOSITION["non_rl"]

    for case in cases:
        if case.hard_negative:
            assert case.hard_negative_memory_id != case.expected_memory_id
            assert len(case.seeded_memories) == 2
        if case.expected_decision is DecisionKind.ABSTAIN:
            assert case.expected_memory_id is None


def test_generation_is_byte_deterministic(generated):
    """The same seed produces the same case file; another seed does not."""

    header, cases = generated
    again = generate_cases(SEED)
    other = generate_cases(SEED + 1)
    assert dump_cases(header, cases) == dump_cases(*again)
    assert dump_cases(header, cases) != dump_cases(*other)


def test_case_file_round_trip(generated, tmp_path):
    """write_cases then read_cases returns equal records."""

    header, cases = generated
    path = write_cases(tmp_path / "cases.jsonl", header, cases[:5])
    assert path.read_bytes().count(b"\n") == 6
    with pytest.raises(SchemaViolationError):
        read_cases(path)

    path = write_cases(tmp_path / "cases.jsonl", header.model_copy(update={"cases": 5}), cases[:5])
    read_header, read_back = read_cases(path)
    assert read_header.seed == SEED
    assert read_back == cases[:5]


def test_read_cases_rejects_bad_files(tmp_path):
    """Empty files and undecodable lines are schema violations."""

    empty = tmp_path / "empty.jsonl"
    empty.write_text("\n")
    with pytest.raises(SchemaViolationError):
        read_cases(empty)

    broken = tmp_path / "broken.jsonl"
    broken.write_text('{"seed": 1, "cases": 1}\n{"case_id": "x"}\n')
    with pytest.raises(SchemaViolationError):
        read_cases(broken)


def _verdict(case_id, expected, decision, *, expected_id=None, top=None, **extra):
    return CaseVerdict(
        case_id=case_id,
        family=extra.pop("family", "dqn"),
        expected_decision=expected,
        decision=decision,
        expected_memory_id=expected_id,
        top_memory_id=top,
        correct=is_correct(expected, decision, expected_id, top),
        **extra,
    )


def test_compute_metrics_rates():
    """Accuracy splits, hard-negative FP rate and failure abstains are counted per case."""

    verdicts = [
        _verdict("a", DecisionKind.MATCH, DecisionKind.MATCH, expected_id="m", top="m", feedback_written=True),
        _verdict(
            "b",
            DecisionKind.MATCH,
            DecisionKind.MATCH,
            expected_id="m",
            top="hn",
            hard_negative=True,
            hard_negative_hit=True,
            feedback_written=True,
        ),
        _verdict("c", DecisionKind.MATCH, DecisionKind.ABSTAIN, expected_id="m", hard_negative=True),
        _verdict(
            "d",
            DecisionKind.MATCH,
            DecisionKind.MATCH,
            expected_id="p",
            top="p",
            family="non_rl",
            injected_bug_family="path_mount",
            script_errors=["issue_feedback: expected unknown_feedback_label"],
        ),
    ]
    report = compute_metrics("offline_full", verdicts, {"issue_match": [1.0, 2.0, 30.0]})

    assert report.cases == 4
    assert report.expected_decision_accuracy == pytest.approx(0.5)
    assert report.accuracy_non_injected == pytest.approx(1 / 3)
    assert report.injected_as_scripted == 0.0
    assert report.hard_negative_fp_rate == pytest.approx(0.5)
    assert report.failure_abstain_rate == pytest.approx(0.25)
    assert report.feedback_write_rate == pytest.approx(0.5)
    assert report.latency["issue_match"].p95_ms == 30.0
    assert report.latency["issue_match"].calls == 3

    text = render_summary(report)
    assert "offline_full" in text
    assert "| c | dqn |" in text
    with pytest.raises(ValueError):
        compute_metrics("offline_full", [], {})


def test_resolve_mode_accepts_hyphens():
    """Mode names fold hyphens; unknown names are errors."""

    assert resolve_mode("online-shadow") is MODES["online_shadow"]
    with pytest.raises(ValueError):
        resolve_mode("canary")


def _subset(cases):
    """One of each RL case kind from the first family plus one per injected family."""

    rl = [case for case in cases if case.algorithm_family == "a2c"]
    plain = [case for case in cases if case.algorithm_family == "non_rl"][: len(INJECTED_FAMILIES)]
    return rl + plain


async def test_rl_cases_replay_as_expected(generated, tmp_path):
    """Hard negatives, ambiguous pairs and archived scopes produce their expected decisions."""

    cases = [case for case in _subset(generated[1]) if case.injected_bug_family is None]
    report = await replay(cases, MODES["offline_full"], load_config(), tmp_path)

    assert report.expected_decision_accuracy == 1.0
    assert report.hard_negative_fp_rate == 0.0
    kinds = {verdict.expected_decision for verdict in report.verdicts}
    assert kinds == {DecisionKind.MATCH, DecisionKind.AMBIGUOUS, DecisionKind.ABSTAIN}


async def test_shadow_mode_leaves_decisions_unchanged(generated, tmp_path):
    """Control, full and online-shadow replays yield the same decision digest."""

    cases = _subset(generated[1])
    config = load_config()
    control = await replay(cases, MODES["offline_control"], config, tmp_path / "control")
    full = await replay(cases, MODES["offline_full"], config, tmp_path / "full")
    online = await replay(cases, MODES["online_shadow"], config, tmp_path / "online")

    assert control.decision_digest == full.decision_digest == online.decision_digest
    assert control.counters.bandit_updates == 0
    assert full.counters.retrieval_events == len(cases)
    assert all(not verdict.script_errors for verdict in online.verdicts)
    assert online.counters.delayed_links >= 1


def _scan_rates(store_dir):
    """Feedback-bearing and bandit-updating fractions of retrievals, read straight from the log."""

    retrievals: set[str] = set()
    with_feedback: set[str] = set()
    with_update: set[str] = set()
    for frame in iter_frames((store_dir / LOG_NAME).read_bytes()):
        payload = frame.record.payload
        if frame.record.kind is EventKind.RETRIEVAL:
            retrievals.add(payload["retrieval_event_id"])
        elif frame.record.kind is EventKind.FEEDBACK:
            with_feedback.add(payload["retrieval_event_id"])
            if payload["bandit_applied"]:
                with_update.add(payload["retrieval_event_id"])
    return len(with_feedback) / len(retrievals), len(with_update) / len(retrievals)


async def test_full_suite_control_and_full_agree(generated, tmp_path):
    """On all 200 default-seed cases the shadow learner changes no decision and accuracy holds."""

    cases = generated[1]
    config = load_config()
    control = await replay(cases, MODES["offline_control"], config, tmp_path / "control")
    full = await replay(cases, MODES["offline_full"], config, tmp_path / "full")

    assert control.decision_digest == full.decision_digest
    assert full.accuracy_non_injected >= 0.95
    assert control.accuracy_non_injected == full.accuracy_non_injected
    assert full.hard_negative_fp_rate == 0.0

    assert control.contextual_stats_update_rate == 0.0
    write_rate, update_rate = _scan_rates(tmp_path / "full" / "store")
    assert full.counters.feedback_write_rate == pytest.approx(write_rate)
    assert full.contextual_stats_update_rate == pytest.approx(update_rate)
    assert 0.0 < update_rate < write_rate


async def test_live_replay_matches_in_process_replay(generated, tmp_path):
    """A spawned server over stdio reaches the same decisions as the in-process router."""

    cases = _subset(generated[1])
    config = load_config()
    live = await replay(cases, MODES["live_full"], config, tmp_path / "live")
    local = await replay(cases, MODES["offline_full"], config, tmp_path / "local")

    assert live.decision_digest == local.decision_digest
    assert live.expected_decision_accuracy == local.expected_decision_accuracy
    assert live.counters.retrieval_events == len(cases)
    assert live.latency["issue_match"].calls == len(cases)

def test_cli_generate_and_summarize(tmp_path):
    """`generate` writes a readable case file; `summarize` of a bad report fails cleanly."""

    out = tmp_path / "cases.jsonl"
    assert main(["--log-level", "WARNING", "generate", "--seed", "7", "--out", str(out)]) == 0
    header, cases = read_cases(out)
    assert header.seed == 7
    assert len(cases) == 200

    bad = tmp_path / "report.json"
    bad.write_text("{}")
    assert main(["summarize", "--report", str(bad)]) == 2
