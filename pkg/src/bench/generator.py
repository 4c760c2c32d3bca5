"""Deterministic generator for the 200-case developer-memory benchmark.

Cases are built from a small catalogue of RL bug scenarios plus four injected
non-RL bug families. Every random choice comes from one ``random.Random(seed)``
so equal seeds give byte-identical case files.
"""
from __future__ import annotations

from dataclasses import dataclass
import logging
import random
from typing import Optional

from app.schemas import (
    AlgorithmFamily,
    DecisionKind,
    ExecContext,
    MatchRequest,
    MemoryKind,
    ResolutionRequest,
    RlControlMetadata,
    RootCause,
    SessionInfo,
    TheoryClaim,
    ValidationPayload,
    ValidationTier,
)
from bench.cases import COMPOSITION, INJECTED_FAMILIES, BenchmarkCase, CaseFileHeader, ScriptStep
from services.normalize import PROBLEM_FAMILIES

logger = logging.getLogger(__name__)

BENCH_USER = "bench"
RL_EXCEPTION = "FloatingPointError"
# Share of graded interactions that carry a learnable label; the rest are neutral.
LEARNABLE_SHARE = 0.605
LEARNABLE_LABELS = ("fix_verified", "Fix Verified", "candidate_accepted", "accepted-helpful")
ALIAS_LABELS = ("Accepted Helpful", "ACCEPTED-HELPFUL", "Fix-Verified", "candidate accepted")

HARD_NEGATIVE_PARTNER: dict[str, str] = {
    "dqn": "td3",
    "td3": "sac",
    "sac": "td3",
    "ppo": "a2c",
    "a2c": "ppo",
    "gae": "vtrace",
    "vtrace": "gae",
    "generic_rl": "dqn",
}


@dataclass(frozen=True)
class Scenario:
    key: str
    cause: str
    root_cause: RootCause
    theory: TheoryClaim
    module: str
    function: str
    fix: str


@dataclass(frozen=True)
class AlgorithmProfile:
    label: str
    symptom: str
    scenarios: tuple[Scenario, ...]


# Symptoms carry the error family cue only; causes carry the root-cause and theory cues.
ALGORITHMS: dict[str, AlgorithmProfile] = {
    "a2c": AlgorithmProfile(
        "A2C",
        "{alg} policy collapses after {n} updates and the critic output explodes",
        (
            Scenario(
                "critic-leak",
                "value targets are not detached so the critic gradient flows into the actor",
                RootCause.GRADIENT_FLOW,
                TheoryClaim.GRADIENT_BOUNDARY,
                "a2c_update.py",
                "compute_losses",
                "wrap the bootstrapped value target in torch.no_grad",
            ),
            Scenario(
                "entropy-sign",
                "entropy bonus is added with the wrong sign",
                RootCause.OBJECTIVE_TERM,
                TheoryClaim.OBJECTIVE_TERM,
                "a2c_loss.py",
                "policy_loss",
                "subtract the entropy bonus from the policy loss",
            ),
        ),
    ),
    "dqn": AlgorithmProfile(
        "DQN",
        "{alg} loss diverges after {n} updates and q values explode",
        (
            Scenario(
                "terminal-mask",
                "terminal mask is missing so targets bootstrap past terminal states",
                RootCause.TERMINAL_MASK,
                TheoryClaim.MASKING,
                "dqn_update.py",
                "compute_targets",
                "multiply the next-state value by (1 - done) before bootstrapping",
            ),
            Scenario(
                "stale-target",
                "target network is never synced because the polyak soft update is skipped in the td target",
                RootCause.TARGET_NETWORK,
                TheoryClaim.UPDATE_EQUATION,
                "dqn_target.py",
                "sync_target",
                "call sync_target every 1000 steps with tau 0.005",
            ),
        ),
    ),
    "gae": AlgorithmProfile(
        "GAE",
        "{alg} advantages explode after {n} updates",
        (
            Scenario(
                "done-mask",
                "done mask is not applied so advantages bootstrap past episode boundaries",
                RootCause.TERMINAL_MASK,
                TheoryClaim.MASKING,
                "gae.py",
                "compute_advantages",
                "reset the running advantage at every done flag",
            ),
            Scenario(
                "early-normalize",
                "advantage normalization runs before the lambda recursion in the update equation",
                RootCause.NORMALIZATION,
                TheoryClaim.UPDATE_EQUATION,
                "gae_normalize.py",
                "normalize_advantages",
                "normalize advantages after the lambda recursion",
            ),
        ),
    ),
    "generic_rl": AlgorithmProfile(
        "",
        "{alg} episode returns collapse after {n} updates",
        (
            Scenario(
                "buffer-index",
                "replay buffer indexing returns stale transitions to the bellman backup",
                RootCause.DATA_PLUMBING,
                TheoryClaim.UPDATE_EQUATION,
                "buffer.py",
                "sample_batch",
                "wrap the write cursor modulo capacity before sampling",
            ),
            Scenario(
                "step-api",
                "env.step returns the gymnasium 5-tuple but the loop unpacks four values",
                RootCause.ENVIRONMENT_API,
                TheoryClaim.EVALUATION_PROTOCOL,
                "loop.py",
                "run_episode",
                "unpack terminated and truncated separately from env.step",
            ),
        ),
    ),
    "ppo": AlgorithmProfile(
        "PPO",
        "{alg} policy loss spikes after {n} updates and the kl estimate explodes",
        (
            Scenario(
                "clip-range",
                "ratio clipping uses the wrong clip range in the surrogate objective",
                RootCause.OBJECTIVE_TERM,
                TheoryClaim.OBJECTIVE_TERM,
                "ppo_loss.py",
                "clipped_loss",
                "clamp the ratio to [1 - eps, 1 + eps] before taking the minimum",
            ),
            Scenario(
                "batch-normalize",
                "advantage normalization is computed over the whole buffer in the update rule",
                RootCause.NORMALIZATION,
                TheoryClaim.UPDATE_EQUATION,
                "ppo_batch.py",
                "minibatch_advantages",
                "normalize advantages per minibatch",
            ),
        ),
    ),
    "sac": AlgorithmProfile(
        "SAC",
        "{alg} critic loss diverges after {n} updates and log alpha explodes",
        (
            Scenario(
                "alpha-sign",
                "entropy temperature loss uses the wrong sign on log alpha",
                RootCause.OBJECTIVE_TERM,
                TheoryClaim.OBJECTIVE_TERM,
                "sac_alpha.py",
                "alpha_loss",
                "negate the temperature objective and detach the log probabilities",
            ),
            Scenario(
                "online-polyak",
                "polyak soft update is applied to the online critic in the bellman backup",
                RootCause.TARGET_NETWORK,
                TheoryClaim.UPDATE_EQUATION,
                "sac_target.py",
                "soft_update",
                "apply the soft update to the target critic parameters only",
            ),
        ),
    ),
    "td3": AlgorithmProfile(
        "TD3",
        "{alg} critic loss diverges after {n} updates and q values explode",
        (
            Scenario(
                "noise-clip",
                "target policy noise is not clipped before the target critic evaluation in the bellman backup",
                RootCause.TARGET_NETWORK,
                TheoryClaim.UPDATE_EQUATION,
                "td3_target.py",
                "smoothed_target",
                "clip the target policy noise to [-0.5, 0.5]",
            ),
            Scenario(
                "actor-leak",
                "actor loss leaks into the critic because the critic output is not detached",
                RootCause.GRADIENT_FLOW,
                TheoryClaim.GRADIENT_BOUNDARY,
                "td3_actor.py",
                "actor_loss",
                "detach the critic parameters during the delayed actor update",
            ),
        ),
    ),
    "vtrace": AlgorithmProfile(
        "V-trace",
        "{alg} learner loss diverges after {n} updates on IMPALA actors",
        (
            Scenario(
                "rho-clip",
                "importance weight clipping is skipped in the update rule",
                RootCause.NORMALIZATION,
                TheoryClaim.UPDATE_EQUATION,
                "vtrace.py",
                "vtrace_targets",
                "clip rho and c at 1.0 before the backward recursion",
            ),
            Scenario(
                "actor-done",
                "discounts ignore the done mask at actor boundaries",
                RootCause.TERMINAL_MASK,
                TheoryClaim.MASKING,
                "vtrace_discount.py",
                "discounts",
                "zero the discount wherever the done mask is set",
            ),
        ),
    ),
}


@dataclass(frozen=True)
class InjectedBug:
    error: str
    exception: str
    module: str
    command: str
    fix: str


INJECTED: dict[str, InjectedBug] = {
    "path_mount": InjectedBug(
        "OperationalError: unable to open database file {root}/data/memory.db while loading the sqlite store (attempt {n})",
        "OperationalError",
        "data/memory.db",
        "python scripts/load_store.py",
        "resolve the database path against the canonical repository root",
    ),
    "feedback_alias_not_canonical": InjectedBug(
        "KeyError: 'accepted-helpful' while mapping feedback labels in label_map.py (batch {n})",
        "KeyError",
        "app/label_map.py",
        "pytest tests/test_labels.py",
        "fold feedback label spellings onto canonical names before lookup",
    ),
    "missing_project_scope": InjectedBug(
        "ValueError: project scope missing for cache path resolution in cache_paths.py (run {n})",
        "ValueError",
        "app/cache_paths.py",
        "python scripts/warm_cache.py",
        "fall back to the repository root when the project scope is absent",
    ),
    "command_path_mismatch": InjectedBug(
        "ModuleNotFoundError: No module named 'memctl_plugins' while collecting tests/test_plugins.py (pass {n})",
        "ModuleNotFoundError",
        "tests/test_plugins.py",
        "pytest tests/test_plugins.py",
        "install the package in editable mode so the plugins module resolves",
    ),
}

DISTRACTOR_ERROR = "TypeError: cannot read properties of undefined while bundling ui/index.ts with npm (job {n})"


def _alg_text(template: str, label: str, n: int) -> str:
    return template.format(alg=label, n=n).strip()


class _CaseBuilder:
    """Stateful walk over the composition; owns the rng and the per-kind counters."""

    def __init__(self, seed: int) -> None:
        self.rng = random.Random(seed)
        self.rl_index = 0
        self.plain_index = 0

    # --- shared pieces -------------------------------------------------

    def _grader_label(self) -> str:
        if self.rng.random() < LEARNABLE_SHARE:
            return self.rng.choice(LEARNABLE_LABELS)
        return "neutral"

    def _updates(self) -> int:
        return self.rng.randrange(200, 50_000)

    @staticmethod
    def _session(kind: str, case_id: str) -> SessionInfo:
        return SessionInfo(session_id=f"{kind}-{case_id}", user_id=BENCH_USER)

    # --- RL cases ------------------------------------------------------

    def _rl_error(self, family: str, scenario: Scenario, label: Optional[str] = None) -> str:
        profile = ALGORITHMS[family]
        symptom = _alg_text(profile.symptom, profile.label if label is None else label, self._updates())
        return f"{RL_EXCEPTION}: {symptom}; {scenario.cause}"

    @staticmethod
    def _rl_metadata(family: str, scenario: Scenario, command: str) -> RlControlMetadata:
        algorithm = AlgorithmFamily(family)
        return RlControlMetadata(
            memory_kind=MemoryKind.RL_CONTROL,
            problem_family=PROBLEM_FAMILIES[algorithm],
            algorithm_family=algorithm,
            theory_claim_type=scenario.theory,
            validation_tier=ValidationTier.SEEDED_RUN,
            runtime_stage="training",
            validation_payload=ValidationPayload(seeds=[0, 1, 2], commands=[command]),
        )

    def _rl_seed(
        self,
        case_id: str,
        family: str,
        scenario: Scenario,
        *,
        pattern_id: str,
        variant_id: str,
        error_text: str,
        project: str,
        repo: str,
    ) -> ResolutionRequest:
        command = f"python train_{family}.py --seed 0"
        return ResolutionRequest(
            error_text=error_text,
            project_scope=project,
            repo_root=repo,
            repo_paths=[f"agents/{scenario.module}"],
            exec_context=ExecContext(
                stack_frames=[f'File "agents/{scenario.module}", line {self.rng.randrange(20, 400)}, in {scenario.function}'],
                env_tags=[command],
            ),
            session=self._session("seed", case_id),
            pattern_id=pattern_id,
            variant_id=variant_id,
            fix_summary=scenario.fix,
            root_cause_class=scenario.root_cause,
            rl_metadata=self._rl_metadata(family, scenario, command),
            confidence=0.8,
        )

    def _rl_case(self, family: str, index: int) -> BenchmarkCase:
        case_id = f"{family}-{index:03d}"
        project, repo = f"bench-{case_id}", f"/work/{case_id}"
        scenario = self.rng.choice(ALGORITHMS[family].scenarios)
        pattern_id = f"{case_id}-{scenario.key}"
        hard_negative = self.rl_index % 2 == 0
        slot = self.rl_index // 2
        self.rl_index += 1
        grader_label = self._grader_label()

        seed_error = self._rl_error(family, scenario)
        query = MatchRequest(
            error_text=self._rl_error(family, scenario),
            query_text="seen this before?",
            project_scope=project,
            repo_root=repo,
            repo_paths=[f"agents/{scenario.module}"],
            exec_context=ExecContext(
                stack_frames=[f'File "agents/{scenario.module}", line {self.rng.randrange(20, 400)}, in {scenario.function}'],
                env_tags=[f"python train_{family}.py --seed 0"],
            ),
            session=self._session("case", case_id),
        )
        seed_kwargs = dict(error_text=seed_error, project=project, repo=repo)

        if hard_negative:
            positive = self._rl_seed(case_id, family, scenario, pattern_id=pattern_id, variant_id="v1", **seed_kwargs)
            partner = HARD_NEGATIVE_PARTNER[family]
            rival = next(s for s in ALGORITHMS[partner].scenarios if s.root_cause is not scenario.root_cause)
            negative = self._rl_seed(
                case_id,
                partner,
                rival,
                pattern_id=f"{case_id}-hn-{partner}",
                variant_id="v1",
                error_text=f"{RL_EXCEPTION}: {_alg_text(ALGORITHMS[family].symptom, ALGORITHMS[partner].label, self._updates())}; {rival.cause}",
                project=project,
                repo=repo,
            )
            script = []
            if slot % 2 == 0:
                script.append(ScriptStep(tool="issue_record_resolution", resolution=positive, explicit=True))
            return BenchmarkCase(
                case_id=case_id,
                algorithm_family=family,
                seeded_memories=[positive, negative],
                query=query,
                expected_decision=DecisionKind.MATCH,
                expected_memory_id=f"{pattern_id}/v1",
                hard_negative=True,
                hard_negative_memory_id=f"{case_id}-hn-{partner}/v1",
                grader_label=grader_label,
                feedback_script=script,
            )

        if slot % 5 == 1:
            first = self._rl_seed(case_id, family, scenario, pattern_id=pattern_id, variant_id="a", **seed_kwargs)
            # Identical context, so both variants score the same and only the fix differs.
            second = first.model_copy(update={"variant_id": "b", "fix_summary": f"{scenario.fix} (alternate)"})
            seeds = [first, second]
            return BenchmarkCase(
                case_id=case_id,
                algorithm_family=family,
                seeded_memories=seeds,
                query=query,
                expected_decision=DecisionKind.AMBIGUOUS,
                expected_memory_id=f"{pattern_id}/a",
                grader_label=grader_label,
            )
        if slot % 5 == 3:
            archived = self._rl_seed(
                case_id,
                family,
                scenario,
                pattern_id=pattern_id,
                variant_id="v1",
                error_text=seed_error,
                project=f"{project}-archive",
                repo=f"{repo}-archive",
            )
            return BenchmarkCase(
                case_id=case_id,
                algorithm_family=family,
                seeded_memories=[archived],
                query=query,
                expected_decision=DecisionKind.ABSTAIN,
                grader_label=grader_label,
            )

        positive = self._rl_seed(case_id, family, scenario, pattern_id=pattern_id, variant_id="v1", **seed_kwargs)
        script = []
        if slot % 3 == 0:
            # Same session as the query, so the delayed linker picks it up implicitly.
            follow_up = positive.model_copy(update={"session": query.session, "confidence": 0.9})
            script.append(ScriptStep(tool="issue_record_resolution", resolution=follow_up))
        return BenchmarkCase(
            case_id=case_id,
            algorithm_family=family,
            seeded_memories=[positive],
            query=query,
            expected_decision=DecisionKind.MATCH,
            expected_memory_id=f"{pattern_id}/v1",
            grader_label=grader_label,
            feedback_script=script,
        )

    # --- injected non-RL cases ----------------------------------------

    def _plain_case(self, index: int) -> BenchmarkCase:
        case_id = f"non_rl-{index:03d}"
        bug_family = INJECTED_FAMILIES[self.plain_index % len(INJECTED_FAMILIES)]
        self.plain_index += 1
        bug = INJECTED[bug_family]
        project = f"bench-{case_id}"
        posix_root = f"/work/{case_id}"
        grader_label = self.rng.choice(ALIAS_LABELS) if bug_family == "feedback_alias_not_canonical" else self._grader_label()

        seed_root, query_root = posix_root, posix_root
        seed_path, query_path = bug.module, bug.module
        seed_command, query_command = bug.command, bug.command
        query_project: Optional[str] = project
        if bug_family == "path_mount":
            seed_root = f"C:\\work\\{case_id}"
            query_root = f"/mnt/c/work/{case_id}"
            seed_path = bug.module.replace("/", "\\")
        elif bug_family == "missing_project_scope":
            query_project = None
        elif bug_family == "command_path_mismatch":
            seed_path = f"{posix_root}/{bug.module}"
            query_command = f"python -m {bug.command}"

        seed = ResolutionRequest(
            error_text=bug.error.format(root=seed_root, n=self._updates()),
            project_scope=project,
            repo_root=seed_root,
            repo_paths=[seed_path],
            exec_context=ExecContext(env_tags=[seed_command]),
            session=self._session("seed", case_id),
            pattern_id=f"{case_id}-{bug_family.replace('_', '-')}",
            variant_id="v1",
            fix_summary=bug.fix,
            confidence=0.7,
        )
        distractor = ResolutionRequest(
            error_text=DISTRACTOR_ERROR.format(n=self._updates()),
            project_scope=project,
            repo_root=seed_root,
            repo_paths=["ui/index.ts"],
            exec_context=ExecContext(env_tags=["npm run build"]),
            session=self._session("seed", case_id),
            pattern_id=f"{case_id}-distractor",
            variant_id="v1",
            fix_summary="pin the bundler version",
        )
        query = MatchRequest(
            error_text=bug.error.format(root=query_root, n=self._updates()),
            query_text="same thing again?",
            project_scope=query_project,
            repo_root=query_root,
            repo_paths=[query_path],
            exec_context=ExecContext(env_tags=[query_command]),
            session=self._session("case", case_id),
        )
        script = []
        if bug_family == "feedback_alias_not_canonical":
            script = [
                ScriptStep(tool="issue_feedback", raw_label=self.rng.choice(ALIAS_LABELS)),
                (
                    ScriptStep(tool="issue_feedback", raw_label="Not-A-Label", expect_error="unknown_feedback_label")
                    if index % 5 == 0
                    else ScriptStep(tool="issue_feedback", raw_label="neutral")
                ),
            ]
        return BenchmarkCase(
            case_id=case_id,
            algorithm_family="non_rl",
            seeded_memories=[seed, distractor],
            query=query,
            expected_decision=DecisionKind.MATCH,
            expected_memory_id=f"{seed.pattern_id}/v1",
            grader_label=grader_label,
            feedback_script=script,
            injected_bug_family=bug_family,
        )

    def build(self) -> list[BenchmarkCase]:
        cases: list[BenchmarkCase] = []
        for family, count in COMPOSITION.items():
            for index in range(count):
                cases.append(self._plain_case(index) if family == "non_rl" else self._rl_case(family, index))
        return cases


def generate_cases(seed: int) -> tuple[CaseFileHeader, list[BenchmarkCase]]:
    cases = _CaseBuilder(seed).build()
    logger.info(
        "generated %s cases (%s hard negatives) from seed %s",
        len(cases),
        sum(case.hard_negative for case in cases),
        seed,
    )
    return CaseFileHeader(seed=seed, cases=len(cases)), cases
