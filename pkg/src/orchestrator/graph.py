"""LangGraph wiring for issue_match."""
from __future__ import annotations

from langgraph.graph import END, StateGraph

from orchestrator.nodes import decide, normalize, persist, retrieve, score, shadow
from orchestrator.state import MatchState, NodeDeps


def _after_decide(state: MatchState) -> str:
    return "shadow" if state.get("shadow_enabled") else "persist"


def build_graph(deps: NodeDeps):
    """Return the compiled normalize -> retrieve -> score -> decide -> shadow -> persist graph."""

    graph = StateGraph(MatchState)
    graph.add_node("normalize", normalize.build_node(deps))
    graph.add_node("retrieve", retrieve.build_node(deps))
    graph.add_node("score", score.build_node(deps))
    graph.add_node("decide", decide.build_node(deps))
    graph.add_node("shadow", shadow.build_node(deps))
    graph.add_node("persist", persist.build_node(deps))

    graph.set_entry_point("normalize")

    graph.add_edge("normalize", "retrieve")
    graph.add_edge("retrieve", "score")
    graph.add_edge("score", "decide")
    graph.add_conditional_edges("decide", _after_decide, {"shadow": "shadow", "persist": "persist"})
    graph.add_edge("shadow", "persist")
    graph.add_edge("persist", END)

    return graph.compile()
