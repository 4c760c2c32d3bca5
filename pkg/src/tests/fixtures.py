"""Reusable test fixtures."""
from pathlib import Path
from typing import Any

from app.config import Settings
from app.schemas import (
    AlgorithmFamily,
    Context,
    ExecContext,
    MatchRequest,
    MemoryGovernance,
    MemoryKind,
    MemoryPattern,
    MemoryRecord,
    MemoryVariant,
    ResolutionRequest,
    RlControlMetadata,
    RootCause,
    SessionInfo,
    TheoryClaim,
    ValidationPayload,
    ValidationTier,
)
from services.container import AppContainer
from services.normalize import context_text, normalize_context

DQN_ERROR = (
    "FloatingPointError: DQN loss diverges after 4000 updates and q values explode; "
    "terminal mask is missing so targets bootstrap past terminal states"
)


def make_settings(tmp_path: Path, **overrides: Any) -> Settings:
    """Test settings on a throwaway store; fsync and snapshots off for speed."""

    data: dict[str, Any] = {
        "store_dir": str(tmp_path / "store"),
        "log_level": "DEBUG",
        "store": {"fsync": False, "snapshot_every": 0},
        "governance": {"reviewers": ["alice"], "review_secret": "test-secret"},
    }
    data.update(overrides)
    return Settings(**data)


async def make_container(tmp_path: Path, **overrides: Any) -> AppContainer:
    container = AppContainer(make_settings(tmp_path, **overrides))
    await container.startup()
    return container


def dqn_resolution(session_id: str = "seed", **updates: Any) -> ResolutionRequest:
    request = ResolutionRequest(
        error_text=DQN_ERROR,
        project_scope="rl-lab",
        repo_root="/work/rl-lab",
        repo_paths=["agents/dqn_update.py"],
        exec_context=ExecContext(
            stack_frames=['File "agents/dqn_update.py", line 88, in compute_targets'],
            env_tags=["python train_dqn.py --seed 0"],
        ),
        session=SessionInfo(session_id=session_id, user_id="dev"),
        pattern_id="dqn-terminal-mask",
        variant_id="v1",
        fix_summary="multiply the next-state value by (1 - done) before bootstrapping",
        root_cause_class=RootCause.TERMINAL_MASK,
        rl_metadata=RlControlMetadata(
            memory_kind=MemoryKind.RL_CONTROL,
            problem_family="value_based",
            algorithm_family=AlgorithmFamily.DQN,
            theory_claim_type=TheoryClaim.MASKING,
            validation_tier=ValidationTier.SEEDED_RUN,
            validation_payload=ValidationPayload(seeds=[0, 1, 2], commands=["python train_dqn.py"]),
        ),
        confidence=0.8,
    )
    return request.model_copy(update=updates)


def dqn_query(session_id: str = "query", **updates: Any) -> MatchRequest:
    request = MatchRequest(
        error_text=DQN_ERROR.replace("4000", "5200"),
        query_text="seen this before?",
        project_scope="rl-lab",
        repo_root="/work/rl-lab",
        repo_paths=["agents/dqn_update.py"],
        exec_context=ExecContext(
            stack_frames=['File "agents/dqn_update.py", line 91, in compute_targets'],
            env_tags=["python train_dqn.py --seed 0"],
        ),
        session=SessionInfo(session_id=session_id, user_id="dev"),
    )
    return request.model_copy(update=updates)


def td3_rival(**updates: Any) -> ResolutionRequest:
    """Lexically close to the DQN context but a different algorithm and root cause."""

    return dqn_resolution(
        error_text=(
            "FloatingPointError: TD3 loss diverges after 3100 updates and q values explode; "
            "target policy noise is not clipped before the target critic evaluation"
        ),
        repo_paths=["agents/td3_target.py"],
        exec_context=ExecContext(env_tags=["python train_td3.py --seed 0"]),
        pattern_id="td3-noise-clip",
        root_cause_class=RootCause.TARGET_NETWORK,
        rl_metadata=RlControlMetadata(
            memory_kind=MemoryKind.RL_CONTROL,
            problem_family="actor_critic",
            algorithm_family=AlgorithmFamily.TD3,
            theory_claim_type=TheoryClaim.UPDATE_EQUATION,
            validation_tier=ValidationTier.SEEDED_RUN,
            validation_payload=ValidationPayload(seeds=[0], commands=["python train_td3.py"]),
        ),
    ).model_copy(update=updates)


def memory_from(request: ResolutionRequest, **updates: Any) -> MemoryRecord:
    """MemoryRecord built the way the resolution path stores it, without a store."""

    ctx = Context.model_validate(request.model_dump(include=set(Context.model_fields)))
    profile = normalize_context(ctx)
    exceptions = profile.entities.get("exception", [])
    metadata = request.rl_metadata or RlControlMetadata()
    memory = MemoryRecord(
        memory_id=f"{request.pattern_id}/{request.variant_id}",
        pattern=MemoryPattern(
            pattern_id=request.pattern_id,
            text=context_text(ctx),
            error_family=profile.error_family,
            root_cause_class=request.root_cause_class or profile.root_cause_class,
            exception_type=exceptions[0] if exceptions else None,
            command=profile.command,
            paths=profile.scope.paths,
            entities=profile.entities,
            project_scope=profile.scope.project,
            repo=profile.scope.repo,
        ),
        variant=MemoryVariant(variant_id=request.variant_id, fix_summary=request.fix_summary),
        metadata=metadata.model_copy(update={"applied_tier": metadata.validation_tier or ValidationTier.UNTESTED}),
        governance=MemoryGovernance(
            session_id=request.session.session_id,
            user_id=request.session.user_id,
            confidence=request.confidence,
        ),
    )
    return memory.model_copy(update=updates)
