"""Newline-delimited JSON-RPC 2.0 loop over stdio."""
from __future__ import annotations

import json
import logging
import sys
from typing import Any, Awaitable, Callable, Optional, TextIO

import anyio

from app.routes import ToolRouter, router as default_router, tool_result
from orchestrator.exceptions import (
    INTERNAL_ERROR,
    INVALID_REQUEST,
    PARSE_ERROR,
    MemctlError,
    UnknownToolError,
)
from services.codec import canonical_text
from services.container import AppContainer

logger = logging.getLogger(__name__)

PROTOCOL_VERSION = "2024-11-05"
SERVER_NAME = "memctl"
SERVER_VERSION = "0.1.0"


def rpc_error(rpc_id: Any, code: int, message: str, data: Optional[dict] = None) -> dict[str, Any]:
    error: dict[str, Any] = {"code": code, "message": message}
    if data:
        error["data"] = data
    return {"jsonrpc": "2.0", "id": rpc_id, "error": error}


def rpc_result(rpc_id: Any, result: Any) -> dict[str, Any]:
    return {"jsonrpc": "2.0", "id": rpc_id, "result": result}


class StdioServer:
    """Processes one request at a time, in arrival order."""

    def __init__(self, container: AppContainer, tools: ToolRouter = default_router) -> None:
        self._container = container
        self._tools = tools
        self._methods: dict[str, Callable[[dict], Awaitable[Any]]] = {
            "initialize": self._initialize,
            "tools/list": self._list_tools,
            "tools/call": self._call_tool,
            "ping": self._ping,
        }

    async def handle_line(self, line: str) -> Optional[dict[str, Any]]:
        """Response for one input line, or None for notifications and blank lines."""

        if not line.strip():
            return None
        try:
            message = json.loads(line)
        except ValueError as exc:
            return rpc_error(None, PARSE_ERROR, f"parse error: {exc}")
        return await self.handle_message(message)

    async def handle_message(self, message: Any) -> Optional[dict[str, Any]]:
        if not isinstance(message, dict) or message.get("jsonrpc") != "2.0" or not isinstance(
            message.get("method"), str
        ):
            rpc_id = message.get("id") if isinstance(message, dict) else None
            return rpc_error(rpc_id, INVALID_REQUEST, "invalid request")
        method = message["method"]
        is_notification = "id" not in message
        rpc_id = message.get("id")
        params = message.get("params") or {}
        try:
            result = await self._dispatch(method, params)
        except MemctlError as exc:
            logger.info("%s failed: %s (%s)", method, exc, exc.reason)
            return None if is_notification else rpc_error(rpc_id, exc.rpc_code, str(exc), exc.to_rpc_data())
        except Exception as exc:
            logger.exception("unhandled error in %s", method)
            return None if is_notification else rpc_error(rpc_id, INTERNAL_ERROR, f"internal error: {exc}")
        return None if is_notification else rpc_result(rpc_id, result)

    async def _dispatch(self, method: str, params: Any) -> Any:
        if method.startswith("notifications/"):
            return None
        handler = self._methods.get(method)
        if handler is not None:
            return await handler(params if isinstance(params, dict) else {})
        if method in self._tools:
            result = await self._tools.call(self._container.runner, method, params)
            return result.model_dump(mode="json")
        raise UnknownToolError(method)

    async def _initialize(self, params: dict) -> dict[str, Any]:
        return {
            "protocolVersion": params.get("protocolVersion", PROTOCOL_VERSION),
            "capabilities": {"tools": {"listChanged": False}},
            "serverInfo": {"name": SERVER_NAME, "version": SERVER_VERSION},
        }

    async def _list_tools(self, params: dict) -> dict[str, Any]:
        return {"tools": self._tools.list_tools()}

    async def _call_tool(self, params: dict) -> dict[str, Any]:
        name = params.get("name")
        if not isinstance(name, str):
            raise UnknownToolError(str(name))
        result = await self._tools.call(self._container.runner, name, params.get("arguments"))
        return tool_result(result)

    async def _ping(self, params: dict) -> dict[str, Any]:
        return {}

    async def serve(self, stdin: TextIO = sys.stdin, stdout: TextIO = sys.stdout) -> None:
        await self._container.startup()
        try:
            while True:
                line = await anyio.to_thread.run_sync(stdin.readline)
                if not line:
                    break
                response = await self.handle_line(line)
                if response is not None:
                    stdout.write(canonical_text(response) + "\n")
                    stdout.flush()
        finally:
            await self._container.shutdown()
            logger.info("stdin closed; memctl server stopped")
