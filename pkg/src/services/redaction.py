"""Redaction hooks applied to contexts before they are profiled or persisted."""
from __future__ import annotations

import logging
import re
from typing import Iterable

from app.schemas import Context, ExecContext

logger = logging.getLogger(__name__)

REDACTED = "[REDACTED]"


class Redactor:
    """Replaces configured secret patterns in free-text context fields."""

    def __init__(self, patterns: Iterable[str]) -> None:
        self._patterns = [re.compile(pattern) for pattern in patterns]

    def redact_text(self, text: str) -> str:
        for pattern in self._patterns:
            text = pattern.sub(REDACTED, text)
        return text

    def redact_context(self, ctx: Context) -> Context:
        if not self._patterns:
            return ctx
        updates: dict = {
            "error_text": self.redact_text(ctx.error_text),
            "query_text": self.redact_text(ctx.query_text),
        }
        if ctx.exec_context is not None:
            updates["exec_context"] = ExecContext(
                stack_frames=[self.redact_text(frame) for frame in ctx.exec_context.stack_frames],
                env_tags=[self.redact_text(tag) for tag in ctx.exec_context.env_tags],
            )
        redacted = ctx.model_copy(update=updates)
        if redacted.error_text != ctx.error_text or redacted.query_text != ctx.query_text:
            logger.debug("redacted secrets from context in session %s", ctx.session.session_id)
        return redacted
