"""Applies the threshold rule and the specificity veto."""
from __future__ import annotations

import logging

from orchestrator.state import MatchState, NodeDeps

logger = logging.getLogger(__name__)


def build_node(deps: NodeDeps):
    async def decide(state: MatchState) -> MatchState:
        decision = deps.ranking.decide(state["ranked"])
        state["decision"] = decision
        logger.debug(
            "retrieval %s decided %s (top=%.4f margin=%.4f)",
            state["retrieval_event_id"],
            decision.kind.value,
            decision.top_score,
            decision.margin,
        )
        return state

    return decide
