"""Node exports for easy imports."""
from . import decide, normalize, persist, retrieve, score, shadow

__all__ = [
    "decide",
    "normalize",
    "persist",
    "retrieve",
    "score",
    "shadow",
]
