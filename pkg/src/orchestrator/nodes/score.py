"""Deterministic weighted scoring of the retrieved candidates."""
from __future__ import annotations

from orchestrator.state import MatchState, NodeDeps


def build_node(deps: NodeDeps):
    async def score(state: MatchState) -> MatchState:
        state["ranked"] = deps.ranking.rank(
            state["profile"],
            state["candidates"],
            deps.store.state.stats,
            state["timestamp_ms"],
        )
        return state

    return score
