"""Append-only event log with length-prefixed canonical JSON framing."""
from __future__ import annotations

from dataclasses import dataclass
import hashlib
import logging
import os
from pathlib import Path
import struct
import threading
import time
from typing import Callable, Iterator, Optional
from uuid import uuid4

from pydantic import BaseModel, ValidationError

from app.schemas import (
    BanditState,
    ClaimResult,
    DelayedLink,
    EventKind,
    EventRecord,
    IdempotenceKey,
)
from orchestrator.exceptions import (
    DuplicateEventError,
    MemctlError,
    StoreClosedError,
    StoreCorruptionError,
    StoreError,
)
from services import bandit
from services.codec import canonical_dumps, canonical_loads
from services.state import StoreState, apply_event, parse_payload

logger = logging.getLogger(__name__)

FRAME_HEADER = struct.Struct(">I")
LOG_NAME = "events.log"
SNAPSHOT_NAME = "snapshot.json"


def now_ms() -> int:
    return int(time.time() * 1000)


@dataclass(frozen=True)
class Frame:
    """One decoded log record and where it sits in the file."""

    record: EventRecord
    offset: int
    end: int


def encode_frame(record: EventRecord) -> bytes:
    body = canonical_dumps(record)
    return FRAME_HEADER.pack(len(body)) + body


def iter_frames(data: bytes, start: int = 0, start_sequence: int = 0) -> Iterator[Frame]:
    """Decode frames from `data`; raises StoreCorruptionError at the first bad one."""

    offset, sequence = start, start_sequence
    size = len(data)
    while offset < size:
        expected = sequence + 1
        if offset + FRAME_HEADER.size > size:
            raise StoreCorruptionError(expected, offset, "torn frame header")
        (length,) = FRAME_HEADER.unpack_from(data, offset)
        end = offset + FRAME_HEADER.size + length
        if end > size:
            raise StoreCorruptionError(expected, offset, "torn frame body")
        try:
            record = EventRecord.model_validate(canonical_loads(data[offset + FRAME_HEADER.size : end]))
        except (ValueError, ValidationError) as exc:
            raise StoreCorruptionError(expected, offset, f"undecodable record: {exc}") from exc
        if record.sequence != expected:
            raise StoreCorruptionError(expected, offset, f"sequence {record.sequence} out of order")
        yield Frame(record=record, offset=offset, end=end)
        offset, sequence = end, expected


class EventStore:
    """Single-writer event store; every append is durable before it is applied."""

    def __init__(
        self,
        directory: str | Path,
        *,
        initial_bandit: Optional[BanditState] = None,
        fsync: bool = True,
        snapshot_every: int = 500,
        repair_truncate: bool = False,
        clock: Callable[[], int] = now_ms,
    ) -> None:
        self.directory = Path(directory)
        self.log_path = self.directory / LOG_NAME
        self.snapshot_path = self.directory / SNAPSHOT_NAME
        self._initial_bandit = initial_bandit or bandit.initial_state()
        self._fsync = fsync
        self._snapshot_every = snapshot_every
        self._repair_truncate = repair_truncate
        self._clock = clock
        self._lock = threading.RLock()
        self._handle = None
        self._size = 0
        self._hasher = hashlib.sha256()
        self._appends_since_snapshot = 0
        self._state = StoreState.empty(self._initial_bandit)

    # --- lifecycle ---------------------------------------------------------

    @property
    def is_open(self) -> bool:
        return self._handle is not None

    @property
    def sequence(self) -> int:
        return self._state.sequence

    @property
    def initial_bandit(self) -> BanditState:
        return self._initial_bandit

    def now_ms(self) -> int:
        return self._clock()

    @property
    def state(self) -> StoreState:
        """Live materialized state; callers must treat it as read-only."""

        return self._state

    def open(self) -> "EventStore":
        with self._lock:
            if self.is_open:
                return self
            self.directory.mkdir(parents=True, exist_ok=True)
            self.log_path.touch(exist_ok=True)
            self._state = self.load_state()
            self._handle = open(self.log_path, "ab")
            logger.info(
                "event store open at %s (sequence=%s, memories=%s, bytes=%s)",
                self.directory,
                self._state.sequence,
                len(self._state.memories),
                self._size,
            )
            return self

    def close(self) -> None:
        with self._lock:
            if self._handle is not None:
                self._handle.close()
                self._handle = None

    def __enter__(self) -> "EventStore":
        return self.open()

    def __exit__(self, *exc_info) -> None:
        self.close()

    # --- writes ------------------------------------------------------------

    def new_record(
        self,
        kind: EventKind,
        payload: BaseModel | dict,
        *,
        session_id: str = "",
        event_id: Optional[str] = None,
    ) -> EventRecord:
        if isinstance(payload, BaseModel):
            payload = payload.model_dump(mode="json")
        return EventRecord(
            event_id=event_id or uuid4().hex,
            kind=kind,
            timestamp_ms=self._clock(),
            session_id=session_id,
            payload=payload,
        )

    def append_event(self, record: EventRecord) -> int:
        """Durably append `record` and fold it into state; returns its sequence number."""

        with self._lock:
            if not self.is_open:
                raise StoreClosedError("event store is not open")
            record = record.model_copy(update={"sequence": self._state.sequence + 1})
            typed = parse_payload(record)
            record = record.model_copy(update={"payload": typed.model_dump(mode="json")})
            if record.event_id in self._state.event_ids:
                raise DuplicateEventError(record.event_id)
            frame = encode_frame(record)
            offset = self._size
            try:
                self._handle.write(frame)
                self._handle.flush()
                if self._fsync:
                    os.fsync(self._handle.fileno())
            except OSError as exc:
                self._rollback(offset)
                raise StoreError(f"append of {record.event_id} failed: {exc}") from exc
            apply_event(self._state, record, typed)
            self._size += len(frame)
            self._hasher.update(frame)
            self._appends_since_snapshot += 1
            if self._snapshot_every and self._appends_since_snapshot >= self._snapshot_every:
                self.write_snapshot()
            return record.sequence

    def append(
        self,
        kind: EventKind,
        payload: BaseModel | dict,
        *,
        session_id: str = "",
        event_id: Optional[str] = None,
    ) -> EventRecord:
        record = self.new_record(kind, payload, session_id=session_id, event_id=event_id)
        sequence = self.append_event(record)
        return record.model_copy(update={"sequence": sequence})

    def check_and_claim_link(self, key: IdempotenceKey, link: DelayedLink, *, session_id: str = "") -> ClaimResult:
        """Append `link` unless a delayed link with the same key already exists."""

        if link.key != key:
            raise ValueError("link record does not carry the claimed key")
        with self._lock:
            if key.token() in self._state.links:
                return ClaimResult.ALREADY_PRESENT
            self.append(EventKind.DELAYED_LINK, link, session_id=session_id)
            return ClaimResult.CLAIMED

    def _rollback(self, offset: int) -> None:
        try:
            self._handle.truncate(offset)
            self._handle.flush()
        except OSError:
            logger.exception("could not truncate %s back to %s bytes", self.log_path, offset)

    # --- reads -------------------------------------------------------------

    def read_bytes(self) -> bytes:
        return self.log_path.read_bytes() if self.log_path.exists() else b""

    def iter_records(self) -> Iterator[EventRecord]:
        for frame in iter_frames(self.read_bytes()):
            yield frame.record

    def load_state(self, repair_truncate: Optional[bool] = None) -> StoreState:
        """Replay the log (from a verified snapshot when one covers a prefix)."""

        repair = self._repair_truncate if repair_truncate is None else repair_truncate
        data = self.read_bytes()
        state, start = self._load_snapshot(data)
        hasher = hashlib.sha256(data[:start])
        offset = start
        try:
            for frame in iter_frames(data, start, state.sequence):
                try:
                    apply_event(state, frame.record)
                except MemctlError as exc:
                    raise StoreCorruptionError(frame.record.sequence, frame.offset, str(exc)) from exc
                hasher.update(data[frame.offset : frame.end])
                offset = frame.end
        except StoreCorruptionError as exc:
            if not repair:
                raise
            logger.warning(
                "truncating %s from byte %s to %s: %s", self.log_path, len(data), offset, exc
            )
            with open(self.log_path, "r+b") as handle:
                handle.truncate(offset)
        self._size = offset
        self._hasher = hasher
        return state

    # --- snapshots ---------------------------------------------------------

    def _load_snapshot(self, data: bytes) -> tuple[StoreState, int]:
        empty = StoreState.empty(self._initial_bandit)
        if not self.snapshot_path.exists():
            return empty, 0
        try:
            snapshot = canonical_loads(self.snapshot_path.read_bytes())
            covered = int(snapshot["covered_bytes"])
            if covered > len(data) or hashlib.sha256(data[:covered]).hexdigest() != snapshot["log_digest"]:
                logger.info("ignoring stale snapshot at %s", self.snapshot_path)
                return empty, 0
            state = StoreState.model_validate(snapshot["state"])
            if state.sequence != int(snapshot["covered_sequence"]):
                return empty, 0
        except (ValueError, KeyError, TypeError, ValidationError):
            logger.warning("ignoring unreadable snapshot at %s", self.snapshot_path)
            return empty, 0
        return state, covered

    def write_snapshot(self) -> Path:
        with self._lock:
            body = {
                "covered_bytes": self._size,
                "covered_sequence": self._state.sequence,
                "log_digest": self._hasher.hexdigest(),
                "state": self._state,
            }
            tmp = self.snapshot_path.with_suffix(".tmp")
            tmp.write_bytes(canonical_dumps(body))
            os.replace(tmp, self.snapshot_path)
            self._appends_since_snapshot = 0
            logger.debug("snapshot written at sequence %s", self._state.sequence)
            return self.snapshot_path
