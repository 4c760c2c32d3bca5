"""Redacts the incoming context and maps it to a query profile."""
from __future__ import annotations

import logging

from orchestrator.state import MatchState, NodeDeps

logger = logging.getLogger(__name__)


def build_node(deps: NodeDeps):
    """Return normalize node."""

    async def normalize(state: MatchState) -> MatchState:
        context = deps.normalizer.redact(state["request"])
        profile = deps.normalizer.profile(context)
        state["context"] = context
        state["profile"] = profile
        logger.debug(
            "retrieval %s profile family=%s algorithm=%s",
            state["retrieval_event_id"],
            profile.error_family.value,
            profile.rl_hints.algorithm_family.value,
        )
        return state

    return normalize
