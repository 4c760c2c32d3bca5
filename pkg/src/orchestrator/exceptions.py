"""Custom exceptions shared by the pipeline, services, and the RPC surface."""
from __future__ import annotations

from typing import Any, Optional

PARSE_ERROR = -32700
INVALID_REQUEST = -32600
METHOD_NOT_FOUND = -32601
INVALID_PARAMS = -32602
INTERNAL_ERROR = -32000


class MemctlError(RuntimeError):
    """Base error carrying a machine-readable reason and JSON-RPC code."""

    reason = "internal_error"
    rpc_code = INTERNAL_ERROR

    def __init__(self, message: str, *, reason: Optional[str] = None, data: Optional[dict[str, Any]] = None):
        super().__init__(message)
        if reason is not None:
            self.reason = reason
        self.data = data or {}

    def to_rpc_data(self) -> dict[str, Any]:
        return {"reason": self.reason, **self.data}


class InvalidArgumentsError(MemctlError):
    reason = "invalid_arguments"
    rpc_code = INVALID_PARAMS


class UnknownToolError(MemctlError):
    reason = "unknown_method"
    rpc_code = METHOD_NOT_FOUND

    def __init__(self, name: str):
        super().__init__(f"unknown method or tool {name!r}", data={"name": name})


class EmptyContextError(InvalidArgumentsError):
    reason = "empty_context"

    def __init__(self) -> None:
        super().__init__("error_text and query_text are both empty")


class InvalidAgeError(InvalidArgumentsError):
    reason = "invalid_age"

    def __init__(self, age_days: float):
        super().__init__(f"age_days must be non-negative, got {age_days}")
        self.age_days = age_days


class UnknownFeedbackLabelError(InvalidArgumentsError):
    reason = "unknown_feedback_label"

    def __init__(self, label: str, accepted: list[str]):
        super().__init__(
            f"unknown feedback label {label!r}; accepted: {', '.join(accepted)}",
            data={"label": label, "accepted": accepted},
        )
        self.label = label
        self.accepted = accepted


class UnknownRetrievalEventError(InvalidArgumentsError):
    reason = "unknown_retrieval_event"

    def __init__(self, event_id: str):
        super().__init__(f"retrieval event {event_id} not found", data={"retrieval_event_id": event_id})
        self.event_id = event_id


class UnknownMemoryError(InvalidArgumentsError):
    reason = "unknown_memory"

    def __init__(self, memory_id: str):
        super().__init__(f"memory {memory_id} not found", data={"memory_id": memory_id})
        self.memory_id = memory_id


class ReviewRequiredError(InvalidArgumentsError):
    reason = "review_required"

    def __init__(self, memory_id: str, target_state: str):
        super().__init__(
            f"transition of {memory_id} to {target_state} requires a valid review token",
            data={"memory_id": memory_id, "target_state": target_state},
        )


class StoreError(MemctlError):
    reason = "storage_failure"


class StoreClosedError(StoreError):
    reason = "store_closed"


class DuplicateEventError(StoreError):
    reason = "duplicate_event_id"

    def __init__(self, event_id: str):
        super().__init__(f"event {event_id} already present", data={"event_id": event_id})


class SchemaViolationError(StoreError):
    reason = "schema_violation"


class StoreCorruptionError(StoreError):
    reason = "corrupt_record"

    def __init__(self, sequence: int, offset: int, detail: str):
        super().__init__(
            f"corrupt record at sequence {sequence} (byte {offset}): {detail}",
            data={"sequence": sequence, "offset": offset},
        )
        self.sequence = sequence
        self.offset = offset


class ServerSpawnError(MemctlError):
    reason = "server_spawn_failure"
