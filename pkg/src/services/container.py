"""Application container wiring configuration."""
from __future__ import annotations

import logging

from app.config import Settings
from app.schemas import BanditHyper
from orchestrator.graph import build_graph
from orchestrator.runner import MemoryRunner
from orchestrator.state import NodeDeps
from services import bandit
from services.feedback import FeedbackNormalizer, FeedbackService
from services.governance import AnchorRegistry, GovernanceService
from services.linker import LinkerService
from services.normalize import Lexicon, Normalizer
from services.ope import OpeService
from services.ranking import RankingService
from services.redaction import Redactor
from services.storage import EventStore

logger = logging.getLogger(__name__)


class AppContainer:
    """Simple service locator shared by the stdio server and the admin CLI."""

    def __init__(self, settings: Settings) -> None:
        self.settings = settings
        hyper = BanditHyper(
            gamma=settings.bandit.gamma,
            alpha=settings.bandit.alpha,
            delta_max=settings.bandit.delta_max,
            temperature=settings.bandit.temperature,
            top_kb=settings.bandit.top_kb,
        )
        self.store = EventStore(
            settings.store_dir,
            initial_bandit=bandit.initial_state(settings.bandit.lam, hyper),
            fsync=settings.store.fsync,
            snapshot_every=settings.store.snapshot_every,
            repair_truncate=settings.store.repair_truncate,
        )
        self.normalizer = Normalizer(Lexicon.load(settings.lexicon_path), Redactor(settings.redact_patterns))
        self.ranking = RankingService(settings.ranker, theory_metadata=settings.features.theory_metadata)
        self.feedback = FeedbackService(
            self.store, FeedbackNormalizer(settings.feedback.aliases), settings.bandit
        )
        self.anchors = AnchorRegistry.from_path(self.store, settings.anchors_path)
        self.governance = GovernanceService(self.store, settings.governance, self.anchors)
        self.linker = LinkerService(
            self.store, settings.linker, self.normalizer, self.feedback, self.governance
        )
        self.ope = OpeService(self.store, settings.gate)
        node_deps = NodeDeps(
            settings=settings,
            store=self.store,
            normalizer=self.normalizer,
            ranking=self.ranking,
        )
        self.graph = build_graph(node_deps)
        self.runner = MemoryRunner(self.graph, node_deps, self.feedback, self.linker, self.ope)

    async def startup(self) -> None:
        """Open the event store and replay it into memory."""

        self.store.open()
        logger.info("memctl ready (config digest %s)", self.settings.digest()[:12])

    async def shutdown(self) -> None:
        self.store.close()
