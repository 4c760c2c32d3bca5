"""Scores the leading candidates with the residual bandit; never changes the decision."""
from __future__ import annotations

from app.schemas import ShadowEntry
from orchestrator.state import MatchState, NodeDeps
from services import bandit


def build_node(deps: NodeDeps):
    async def shadow(state: MatchState) -> MatchState:
        ranked = state["ranked"]
        entries: dict[str, ShadowEntry] = {}
        if ranked:
            current = deps.store.state.bandit
            scored = ranked[: current.hyper.top_kb]
            results = [bandit.shadow_score(current, candidate.score, candidate.features) for candidate in scored]
            propensities = bandit.target_propensities(
                [result.shadow_score for result in results], current.hyper.temperature
            )
            for candidate, result, propensity in zip(scored, results, propensities):
                entries[candidate.memory_id] = ShadowEntry(
                    mu=result.mu,
                    uncertainty=result.uncertainty,
                    delta=result.delta,
                    shadow_score=result.shadow_score,
                    target_propensity=propensity,
                )
        state["shadow"] = entries
        return state

    return shadow
