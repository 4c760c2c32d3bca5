"""Tool registry for the memctl JSON-RPC surface."""
from __future__ import annotations

from dataclasses import dataclass
import logging
from typing import Any, Awaitable, Callable

from pydantic import BaseModel, ValidationError

from app.schemas import (
    FeedbackRequest,
    HealthRequest,
    MatchRequest,
    MetricsRequest,
    ResolutionRequest,
)
from orchestrator.exceptions import InvalidArgumentsError, UnknownToolError
from orchestrator.runner import MemoryRunner
from services.codec import canonical_loads, canonical_text

logger = logging.getLogger(__name__)

Handler = Callable[[MemoryRunner, BaseModel], Awaitable[BaseModel]]


@dataclass(frozen=True)
class Tool:
    name: str
    description: str
    model: type[BaseModel]
    handler: Handler

    def describe(self) -> dict[str, Any]:
        return {"name": self.name, "description": self.description, "inputSchema": self.model.model_json_schema()}


class ToolRouter:
    """Validates tool arguments against their pydantic model before dispatching."""

    def __init__(self) -> None:
        self._tools: dict[str, Tool] = {}

    def tool(self, name: str, description: str, model: type[BaseModel]):
        def register(handler: Handler) -> Handler:
            self._tools[name] = Tool(name=name, description=description, model=model, handler=handler)
            return handler

        return register

    def __contains__(self, name: str) -> bool:
        return name in self._tools

    def list_tools(self) -> list[dict[str, Any]]:
        return [tool.describe() for tool in self._tools.values()]

    def parse(self, name: str, arguments: Any) -> tuple[Tool, BaseModel]:
        tool = self._tools.get(name)
        if tool is None:
            raise UnknownToolError(name)
        if arguments is None:
            arguments = {}
        if not isinstance(arguments, dict):
            raise InvalidArgumentsError(f"{name} arguments must be an object")
        try:
            return tool, tool.model.model_validate(arguments)
        except ValidationError as exc:
            raise InvalidArgumentsError(
                f"invalid arguments for {name}",
                data={"errors": canonical_loads(exc.json(include_url=False))},
            ) from exc

    async def call(self, runner: MemoryRunner, name: str, arguments: Any) -> BaseModel:
        tool, payload = self.parse(name, arguments)
        return await tool.handler(runner, payload)


def tool_result(result: BaseModel) -> dict[str, Any]:
    """MCP-style tool result carrying both text and structured content."""

    return {
        "content": [{"type": "text", "text": canonical_text(result)}],
        "structuredContent": result.model_dump(mode="json"),
        "isError": False,
    }


router = ToolRouter()


@router.tool(
    "issue_match",
    "Match a developer context against stored memories and log the decision.",
    MatchRequest,
)
async def issue_match(runner: MemoryRunner, request: MatchRequest) -> BaseModel:
    return await runner.match(request)


@router.tool(
    "issue_feedback",
    "Attach explicit feedback to a logged retrieval event.",
    FeedbackRequest,
)
async def issue_feedback(runner: MemoryRunner, request: FeedbackRequest) -> BaseModel:
    return await runner.feedback(request)


@router.tool(
    "issue_record_resolution",
    "Store a verified fix as a memory and link it to an earlier retrieval.",
    ResolutionRequest,
)
async def issue_record_resolution(runner: MemoryRunner, request: ResolutionRequest) -> BaseModel:
    return await runner.record_resolution(request)


@router.tool(
    "issue_metrics",
    "Off-policy evaluation report, rollout gate verdict and telemetry counters.",
    MetricsRequest,
)
async def issue_metrics(runner: MemoryRunner, request: MetricsRequest) -> BaseModel:
    return await runner.metrics(request)


@router.tool("issue_health", "Store, bandit and configuration health.", HealthRequest)
async def issue_health(runner: MemoryRunner, request: HealthRequest) -> BaseModel:
    return await runner.health()
