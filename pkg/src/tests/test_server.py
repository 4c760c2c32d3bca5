"""JSON-RPC framing, dispatch and error mapping of the stdio server."""

import io
import json

import pytest

from app.server import StdioServer
from orchestrator.exceptions import INVALID_PARAMS, INVALID_REQUEST, METHOD_NOT_FOUND, PARSE_ERROR
from services.container import AppContainer
from tests.fixtures import dqn_query, dqn_resolution, make_container, make_settings

TOOLS = {"issue_match", "issue_feedback", "issue_record_resolution", "issue_metrics", "issue_health"}


def _line(method, params=None, rpc_id=1):
    message = {"jsonrpc": "2.0", "method": method}
    if params is not None:
        message["params"] = params
    if rpc_id is not None:
        message["id"] = rpc_id
    return json.dumps(message)


@pytest.fixture
async def server(tmp_path):
    container = await make_container(tmp_path)
    yield StdioServer(container)
    await container.shutdown()


async def test_parse_error(server):
    """Malformed JSON yields -32700 with a null id."""

    response = await server.handle_line("{not json")
    assert response["error"]["code"] == PARSE_ERROR
    assert response["id"] is None


@pytest.mark.parametrize(
    "payload",
    [
        {"method": "ping", "id": 3},
        {"jsonrpc": "1.0", "method": "ping", "id": 3},
        {"jsonrpc": "2.0", "id": 3},
        {"jsonrpc": "2.0", "method": 7, "id": 3},
    ],
)
async def test_invalid_requests(server, payload):
    """Envelopes without jsonrpc 2.0 and a string method are rejected."""

    response = await server.handle_line(json.dumps(payload))
    assert response["error"]["code"] == INVALID_REQUEST
    assert response["id"] == 3


async def test_non_object_message(server):
    """A bare JSON array is an invalid request."""

    response = await server.handle_line("[1, 2]")
    assert response["error"]["code"] == INVALID_REQUEST


async def test_blank_lines_and_notifications_get_no_reply(server):
    """Blank input and id-less messages are silent."""

    assert await server.handle_line("   \n") is None
    assert await server.handle_line(_line("notifications/initialized", rpc_id=None)) is None
    assert await server.handle_line(_line("issue_health", rpc_id=None)) is None


async def test_initialize_and_list_tools(server):
    """The handshake echoes the protocol version and lists the five tools."""

    init = await server.handle_line(_line("initialize", {"protocolVersion": "2024-11-05"}))
    assert init["result"]["protocolVersion"] == "2024-11-05"
    assert init["result"]["serverInfo"]["name"] == "memctl"

    listed = await server.handle_line(_line("tools/list", rpc_id=2))
    tools = listed["result"]["tools"]
    assert {tool["name"] for tool in tools} == TOOLS
    assert all("inputSchema" in tool for tool in tools)


async def test_unknown_method_and_tool(server):
    """Unknown methods and tool names map to -32601."""

    response = await server.handle_line(_line("issue_unknown"))
    assert response["error"]["code"] == METHOD_NOT_FOUND
    assert response["error"]["data"]["reason"] == "unknown_method"

    response = await server.handle_line(_line("tools/call", {"name": "nope", "arguments": {}}))
    assert response["error"]["code"] == METHOD_NOT_FOUND


async def test_tools_call_round_trip(server):
    """Resolution, match and feedback through tools/call with structured content."""

    resolution = dqn_resolution().model_dump(mode="json", exclude_none=True)
    recorded = await server.handle_line(
        _line("tools/call", {"name": "issue_record_resolution", "arguments": resolution})
    )
    assert recorded["result"]["structuredContent"]["outcome"] == "no_link"
    assert recorded["result"]["isError"] is False

    query = dqn_query().model_dump(mode="json", exclude_none=True)
    matched = await server.handle_line(_line("tools/call", {"name": "issue_match", "arguments": query}, rpc_id=2))
    content = matched["result"]["structuredContent"]
    assert content["decision"] == "match"
    assert json.loads(matched["result"]["content"][0]["text"]) == content

    feedback = await server.handle_line(
        _line(
            "issue_feedback",
            {"retrieval_event_id": content["retrieval_event_id"], "raw_label": "Fix-Verified"},
            rpc_id=3,
        )
    )
    assert feedback["result"]["canonical_type"] == "fix_verified"


async def test_invalid_arguments_carry_reasons(server):
    """Schema failures and domain errors map to -32602 with a reason."""

    bad_schema = await server.handle_line(_line("issue_feedback", {"raw_label": "fix_verified"}))
    assert bad_schema["error"]["code"] == INVALID_PARAMS
    assert bad_schema["error"]["data"]["reason"] == "invalid_arguments"
    assert bad_schema["error"]["data"]["errors"]

    unknown_label = await server.handle_line(
        _line("issue_feedback", {"retrieval_event_id": "missing", "raw_label": "fix_verified"})
    )
    assert unknown_label["error"]["data"]["reason"] == "unknown_retrieval_event"

    empty = await server.handle_line(_line("issue_match", {"error_text": ""}))
    assert empty["error"]["data"]["reason"] == "empty_context"

    not_object = await server.handle_line(_line("tools/call", {"name": "issue_health", "arguments": [1]}))
    assert not_object["error"]["code"] == INVALID_PARAMS


async def test_serve_loop_processes_lines_in_order(tmp_path):
    """serve() answers each request line and closes the store at EOF."""

    container = AppContainer(make_settings(tmp_path))
    stdin = io.StringIO(
        "\n".join(
            [
                _line("initialize", {}, rpc_id=1),
                _line("notifications/initialized", rpc_id=None),
                _line("issue_health", {}, rpc_id=2),
                "",
            ]
        )
    )
    stdout = io.StringIO()
    await StdioServer(container).serve(stdin, stdout)

    replies = [json.loads(line) for line in stdout.getvalue().splitlines()]
    assert [reply["id"] for reply in replies] == [1, 2]
    assert replies[1]["result"]["store_open"] is True
    assert not container.store.is_open
