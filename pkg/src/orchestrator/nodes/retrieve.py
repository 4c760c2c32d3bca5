"""Prefilters the memory bank down to at most k candidates."""
from __future__ import annotations

import logging

from orchestrator.state import MatchState, NodeDeps

logger = logging.getLogger(__name__)


def build_node(deps: NodeDeps):
    async def retrieve(state: MatchState) -> MatchState:
        bank = deps.store.state.memories.values()
        k = state["request"].options.k or deps.k
        candidates = deps.ranking.retrieve(state["profile"], bank, k)
        state["candidates"] = candidates
        logger.debug("retrieval %s kept %s of %s memories", state["retrieval_event_id"], len(candidates), len(bank))
        return state

    return retrieve
