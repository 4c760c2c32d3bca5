"""Replay a case file against the pipeline, in-process or over live stdio JSON-RPC."""
from __future__ import annotations

from dataclasses import dataclass
import json
import logging
import os
from pathlib import Path
import sys
import time
from typing import Any, Optional, Protocol

import anyio
from anyio.abc import Process
from anyio.streams.buffered import BufferedByteReceiveStream

from app.config import Settings
from app.routes import router
from app.schemas import DecisionKind, GateVerdict, OPEReport, TelemetryCounters
from bench.cases import BenchmarkCase, ScriptStep
from bench.metrics import CaseVerdict, RunReport, compute_metrics, is_correct
from orchestrator.exceptions import MemctlError, ServerSpawnError
from services.codec import canonical_text
from services.container import AppContainer

logger = logging.getLogger(__name__)

SRC_DIR = Path(__file__).resolve().parents[1]
DEFAULT_BENCH_CONFIG = Path(__file__).resolve().parent / "data" / "bench.json"
MAX_LINE_BYTES = 16 * 1024 * 1024
CALL_TIMEOUT_S = 30.0
PROGRESS_EVERY = 50


@dataclass(frozen=True)
class ReplayMode:
    name: str
    live: bool
    bandit: bool
    scripts: bool


MODES: dict[str, ReplayMode] = {
    "offline_control": ReplayMode("offline_control", live=False, bandit=False, scripts=False),
    "offline_full": ReplayMode("offline_full", live=False, bandit=True, scripts=False),
    "online_shadow": ReplayMode("online_shadow", live=False, bandit=True, scripts=True),
    "live_control": ReplayMode("live_control", live=True, bandit=False, scripts=False),
    "live_full": ReplayMode("live_full", live=True, bandit=True, scripts=False),
}


def resolve_mode(name: str) -> ReplayMode:
    key = name.strip().lower().replace("-", "_")
    if key not in MODES:
        raise ValueError(f"unknown replay mode {name!r}; expected one of {sorted(MODES)}")
    return MODES[key]


def load_config(path: Optional[str | Path] = None) -> dict[str, Any]:
    source = Path(path) if path else DEFAULT_BENCH_CONFIG
    return json.loads(source.read_text(encoding="utf-8"))


def mode_config(base: dict[str, Any], mode: ReplayMode, workdir: Path) -> dict[str, Any]:
    """Server config for one run: a fresh store plus the mode's bandit switch."""

    config = dict(base)
    config["store_dir"] = str(workdir / "store")
    config["bandit"] = {**base.get("bandit", {}), "enabled": mode.bandit}
    if mode.live:
        config["log_level"] = "WARNING"
    return config


class ToolClient(Protocol):
    async def call(self, tool: str, arguments: dict[str, Any]) -> dict[str, Any]: ...


class InProcessClient:
    """Calls the tool router directly against an in-process container."""

    def __init__(self, config: dict[str, Any]) -> None:
        self._container = AppContainer(Settings(**config))

    async def __aenter__(self) -> "InProcessClient":
        await self._container.startup()
        return self

    async def __aexit__(self, *exc_info) -> None:
        await self._container.shutdown()

    async def call(self, tool: str, arguments: dict[str, Any]) -> dict[str, Any]:
        result = await router.call(self._container.runner, tool, arguments)
        return result.model_dump(mode="json")


class LiveClient:
    """Spawns `python -m app.main` and speaks newline-delimited JSON-RPC to it."""

    def __init__(self, config: dict[str, Any], workdir: Path) -> None:
        self._config_path = workdir / "server-config.json"
        self._config = config
        self._process: Optional[Process] = None
        self._reader: Optional[BufferedByteReceiveStream] = None
        self._next_id = 0

    async def __aenter__(self) -> "LiveClient":
        self._config_path.parent.mkdir(parents=True, exist_ok=True)
        self._config_path.write_text(canonical_text(self._config) + "\n", encoding="utf-8")
        env = dict(os.environ)
        env["PYTHONPATH"] = os.pathsep.join(filter(None, [str(SRC_DIR), env.get("PYTHONPATH")]))
        try:
            self._process = await anyio.open_process(
                [sys.executable, "-m", "app.main", "--config", str(self._config_path)],
                env=env,
                stderr=None,
            )
        except OSError as exc:
            raise ServerSpawnError(f"could not start memctl server: {exc}") from exc
        self._reader = BufferedByteReceiveStream(self._process.stdout)
        await self._request("initialize", {"protocolVersion": "2024-11-05"})
        return self

    async def __aexit__(self, *exc_info) -> None:
        if self._process is None:
            return
        await self._process.stdin.aclose()
        with anyio.move_on_after(CALL_TIMEOUT_S) as scope:
            await self._process.wait()
        if scope.cancelled_caught:
            logger.warning("memctl server did not exit after stdin closed; killing it")
            self._process.kill()
        await self._process.aclose()

    async def _request(self, method: str, params: dict[str, Any]) -> Any:
        assert self._process is not None and self._reader is not None
        self._next_id += 1
        message = {"jsonrpc": "2.0", "id": self._next_id, "method": method, "params": params}
        await self._process.stdin.send((canonical_text(message) + "\n").encode("utf-8"))
        try:
            with anyio.fail_after(CALL_TIMEOUT_S):
                line = await self._reader.receive_until(b"\n", MAX_LINE_BYTES)
        except (anyio.EndOfStream, anyio.IncompleteRead) as exc:
            raise ServerSpawnError("memctl server closed its stdout") from exc
        response = json.loads(line)
        if "error" in response:
            error = response["error"]
            reason = (error.get("data") or {}).get("reason")
            raise MemctlError(error.get("message", "tool call failed"), reason=reason)
        return response["result"]

    async def call(self, tool: str, arguments: dict[str, Any]) -> dict[str, Any]:
        result = await self._request("tools/call", {"name": tool, "arguments": arguments})
        return result["structuredContent"]


class Replayer:
    """Drives one mode over a case list and accumulates verdicts and latencies."""

    def __init__(self, client: ToolClient, mode: ReplayMode) -> None:
        self._client = client
        self._mode = mode
        self.latencies: dict[str, list[float]] = {}

    async def call(self, tool: str, arguments: dict[str, Any]) -> dict[str, Any]:
        started = time.perf_counter()
        try:
            return await self._client.call(tool, arguments)
        finally:
            self.latencies.setdefault(tool, []).append((time.perf_counter() - started) * 1000.0)

    async def run_case(self, case: BenchmarkCase) -> CaseVerdict:
        for memory in case.seeded_memories:
            await self.call("issue_record_resolution", memory.model_dump(mode="json", exclude_none=True))

        response = await self.call("issue_match", case.query.model_dump(mode="json", exclude_none=True))
        decision = DecisionKind(response["decision"])
        candidate_ids = [candidate["memory_id"] for candidate in response["candidates"]]
        top = candidate_ids[0] if candidate_ids and decision is not DecisionKind.ABSTAIN else None
        event_id = response["retrieval_event_id"]

        feedback_written = False
        if top is not None:
            if top == case.expected_memory_id:
                label = case.grader_label
            elif top == case.hard_negative_memory_id:
                label = "false_positive"
            else:
                label = "candidate_rejected"
            await self.call(
                "issue_feedback", {"retrieval_event_id": event_id, "memory_ref": top, "raw_label": label}
            )
            feedback_written = True

        script_errors: list[str] = []
        if self._mode.scripts:
            for step in case.feedback_script:
                written = await self._run_step(step, event_id, top, script_errors)
                feedback_written = feedback_written or written

        return CaseVerdict(
            case_id=case.case_id,
            family=case.algorithm_family,
            expected_decision=case.expected_decision,
            decision=decision,
            expected_memory_id=case.expected_memory_id,
            top_memory_id=top,
            candidate_ids=candidate_ids,
            correct=is_correct(case.expected_decision, decision, case.expected_memory_id, top),
            hard_negative=case.hard_negative,
            hard_negative_hit=case.hard_negative and top is not None and top == case.hard_negative_memory_id,
            injected_bug_family=case.injected_bug_family,
            feedback_written=feedback_written,
            script_errors=script_errors,
        )

    async def _run_step(self, step: ScriptStep, event_id: str, top: Optional[str], errors: list[str]) -> bool:
        if step.tool == "issue_feedback":
            arguments = {"retrieval_event_id": event_id, "raw_label": step.raw_label}
            if top is not None:
                arguments["memory_ref"] = top
        else:
            request = step.resolution
            if step.explicit:
                request = request.model_copy(update={"explicit_event_id": event_id})
            arguments = request.model_dump(mode="json", exclude_none=True)
        try:
            result = await self.call(step.tool, arguments)
        except MemctlError as exc:
            if exc.reason != step.expect_error:
                errors.append(f"{step.tool}: {exc.reason}")
            return False
        if step.expect_error:
            errors.append(f"{step.tool}: expected {step.expect_error}")
        if step.tool == "issue_feedback":
            return True
        return result.get("outcome") == "linked"


async def replay(
    cases: list[BenchmarkCase],
    mode: ReplayMode,
    config: dict[str, Any],
    workdir: Path,
) -> RunReport:
    run_config = mode_config(config, mode, workdir)
    client = LiveClient(run_config, workdir) if mode.live else InProcessClient(run_config)
    verdicts: list[CaseVerdict] = []
    async with client:
        replayer = Replayer(client, mode)
        for index, case in enumerate(cases, start=1):
            verdicts.append(await replayer.run_case(case))
            if index % PROGRESS_EVERY == 0:
                logger.info("%s: %s/%s cases replayed", mode.name, index, len(cases))
        metrics = await replayer.call("issue_metrics", {"persist": True})
        await replayer.call("issue_health", {})

    report = compute_metrics(
        mode.name,
        verdicts,
        replayer.latencies,
        counters=TelemetryCounters.model_validate(metrics["counters"]),
        ope=OPEReport.model_validate(metrics["report"]),
        verdict=GateVerdict.model_validate(metrics["verdict"]),
    )
    logger.info(
        "%s finished: accuracy %.3f, hard-negative fp %.3f, gate %s",
        mode.name,
        report.expected_decision_accuracy,
        report.hard_negative_fp_rate,
        report.verdict.recommendation.value if report.verdict else "n/a",
    )
    return report
