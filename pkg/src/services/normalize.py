"""Context normalization: cue lexicon, token signatures, and path canonicalization."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
import json
import logging
import math
from pathlib import Path
import posixpath
import re
from typing import Iterable, Mapping, Optional

from app.schemas import (
    AlgorithmFamily,
    Context,
    ErrorFamily,
    QueryProfile,
    RlHints,
    RootCause,
    ScopeInfo,
    TheoryClaim,
    ValidationTier,
)
from orchestrator.exceptions import EmptyContextError

logger = logging.getLogger(__name__)

TOKEN_SPLIT_RE = re.compile(r"[^0-9a-z]+")
STOPWORDS = frozenset(
    """
    a an and are as at be but by for from has have in into is it its of on or so than that the their then
    there these this to was were when where which while will with after before not no does did do if
    """.split()
)
EXCEPTION_RE = re.compile(r"\b([A-Z][A-Za-z0-9]*(?:Error|Exception|Warning))\b")
SYMBOL_RE = re.compile(r"['\"`]([A-Za-z_][A-Za-z0-9_.]*)['\"`]")
FILE_RE = re.compile(
    r"([A-Za-z0-9_.\-]+\.(?:py|pyi|yaml|yml|json|toml|cfg|ini|db|sqlite|sqlite3|sh|csv))\b"
)
FRAME_FUNCTION_RE = re.compile(r"\bin\s+([A-Za-z_][A-Za-z0-9_]*)")
WSL_MOUNT_RE = re.compile(r"^/mnt/([a-zA-Z])(?=/|$)")
DRIVE_RE = re.compile(r"^([a-zA-Z]):(?=/|$)")

PROBLEM_FAMILIES: Mapping[AlgorithmFamily, str] = {
    AlgorithmFamily.DQN: "value_based",
    AlgorithmFamily.PPO: "policy_gradient",
    AlgorithmFamily.A2C: "policy_gradient",
    AlgorithmFamily.SAC: "actor_critic",
    AlgorithmFamily.TD3: "actor_critic",
    AlgorithmFamily.GAE: "advantage_estimation",
    AlgorithmFamily.VTRACE: "off_policy_correction",
    AlgorithmFamily.GENERIC_RL: "generic_rl",
}
DEFAULT_LEXICON_PATH = Path(__file__).resolve().parents[1] / "app" / "data" / "lexicon.json"


# --- tokens ----------------------------------------------------------------


def tokenize(text: str) -> list[str]:
    return [token for token in TOKEN_SPLIT_RE.split(text.lower()) if token and token not in STOPWORDS]


@lru_cache(maxsize=4096)
def _signature_items(text: str) -> tuple[tuple[str, float], ...]:
    counts: dict[str, int] = {}
    for token in tokenize(text):
        counts[token] = counts.get(token, 0) + 1
    if not counts:
        return ()
    norm = math.sqrt(sum(count * count for count in counts.values()))
    return tuple((token, counts[token] / norm) for token in sorted(counts))


def token_signature(text: str) -> dict[str, float]:
    """Term frequencies normalized to unit L2 norm; empty text gives an empty vector."""

    return dict(_signature_items(text or ""))


def cosine(left: Mapping[str, float], right: Mapping[str, float]) -> float:
    if not left or not right:
        return 0.0
    if len(left) > len(right):
        left, right = right, left
    dot = sum(weight * right.get(token, 0.0) for token, weight in left.items())
    left_norm = math.sqrt(sum(w * w for w in left.values()))
    right_norm = math.sqrt(sum(w * w for w in right.values()))
    if left_norm == 0 or right_norm == 0:
        return 0.0
    return max(0.0, min(1.0, dot / (left_norm * right_norm)))


# --- paths -----------------------------------------------------------------


def is_absolute(path: str) -> bool:
    return path.startswith("/") or bool(DRIVE_RE.match(path))


def normalize_path(path: str, root: Optional[str] = None) -> str:
    """Canonical forward-slash path; WSL mounts and drive letters fold together."""

    value = path.strip().replace("\\", "/")
    if not value:
        return ""
    value = WSL_MOUNT_RE.sub(lambda m: f"{m.group(1).lower()}:", value)
    if not is_absolute(value) and root:
        value = f"{normalize_path(root)}/{value}"
    drive = DRIVE_RE.match(value)
    if drive:
        # Windows paths compare case-insensitively.
        value = value.lower()
    value = posixpath.normpath(value)
    if value.startswith("//"):
        value = "/" + value.lstrip("/")
    return value


def path_compatible(left: str, right: str) -> bool:
    """Equal, or one contains the other at a segment boundary."""

    if left == right:
        return True
    shorter, longer = sorted((left, right), key=len)
    return longer.startswith(shorter.rstrip("/") + "/")


def paths_compatible(left: Iterable[str], right: Iterable[str]) -> bool:
    right = list(right)
    return any(path_compatible(a, b) for a in left for b in right)


# --- lexicon ---------------------------------------------------------------


@dataclass(frozen=True)
class LexiconRule:
    slot: str
    value: str
    patterns: tuple[re.Pattern[str], ...]

    def hits(self, text: str) -> int:
        return sum(len(pattern.findall(text)) for pattern in self.patterns)


@dataclass(frozen=True)
class CueHit:
    slot: str
    value: str
    pattern: str
    count: int


class Lexicon:
    """Versioned keyword rules; rule order inside a slot is its priority."""

    def __init__(self, rules: list[LexiconRule], version: str = "unversioned") -> None:
        self.version = version
        self._rules = rules

    @classmethod
    def from_mapping(cls, data: Mapping) -> "Lexicon":
        rules = [
            LexiconRule(
                slot=entry["slot"],
                value=entry["value"],
                patterns=tuple(re.compile(pattern) for pattern in entry["patterns"]),
            )
            for entry in data.get("rules", [])
        ]
        return cls(rules, version=str(data.get("version", "unversioned")))

    @classmethod
    def load(cls, path: str | Path | None = None) -> "Lexicon":
        source = Path(path) if path else DEFAULT_LEXICON_PATH
        lexicon = cls.from_mapping(json.loads(source.read_text(encoding="utf-8")))
        logger.info("loaded lexicon %s (%s rules) from %s", lexicon.version, len(lexicon._rules), source)
        return lexicon

    def rules(self, slot: str) -> list[LexiconRule]:
        return [rule for rule in self._rules if rule.slot == slot]

    def first_hit(self, slot: str, text: str) -> Optional[str]:
        for rule in self.rules(slot):
            if rule.hits(text):
                return rule.value
        return None

    def best_hit(self, slot: str, text: str, *, fallback: Optional[str] = None) -> Optional[str]:
        """Value with the most hits; ties go to lexicon order. `fallback` wins only when alone."""

        best_value, best_hits = None, 0
        fallback_hits = 0
        for rule in self.rules(slot):
            hits = rule.hits(text)
            if rule.value == fallback:
                fallback_hits = hits
                continue
            if hits > best_hits:
                best_value, best_hits = rule.value, hits
        if best_value is None and fallback_hits:
            return fallback
        return best_value

    def cue_hits(self, text: str) -> list[CueHit]:
        lowered = text.lower()
        found: list[CueHit] = []
        for rule in self._rules:
            for pattern in rule.patterns:
                count = len(pattern.findall(lowered))
                if count:
                    found.append(CueHit(rule.slot, rule.value, pattern.pattern, count))
        return found


@lru_cache(maxsize=8)
def _cached_lexicon(path: str) -> Lexicon:
    return Lexicon.load(path)


def default_lexicon() -> Lexicon:
    return _cached_lexicon(str(DEFAULT_LEXICON_PATH))


# --- profiling -------------------------------------------------------------


def _ordered_unique(values: Iterable[str]) -> list[str]:
    return list(dict.fromkeys(value for value in values if value))


def context_text(ctx: Context) -> str:
    parts = [ctx.error_text, ctx.query_text]
    if ctx.exec_context:
        parts.extend(ctx.exec_context.stack_frames)
        parts.extend(ctx.exec_context.env_tags)
    return "\n".join(part for part in parts if part)


def extract_entities(ctx: Context, text: str) -> dict[str, list[str]]:
    entities: dict[str, list[str]] = {}
    exceptions = _ordered_unique(EXCEPTION_RE.findall(text))
    if exceptions:
        entities["exception"] = exceptions
    symbols = _ordered_unique(SYMBOL_RE.findall(text))
    if symbols:
        entities["symbol"] = symbols
    files = [name.replace("\\", "/").rsplit("/", 1)[-1].lower() for name in FILE_RE.findall(text)]
    files += [normalize_path(path).rsplit("/", 1)[-1].lower() for path in ctx.repo_paths if path.strip()]
    files = _ordered_unique(name for name in files if "." in name)
    if files:
        entities["file"] = files
    if ctx.exec_context:
        functions = _ordered_unique(
            match for frame in ctx.exec_context.stack_frames for match in FRAME_FUNCTION_RE.findall(frame)
        )
        if functions:
            entities["function"] = functions
    return entities


def normalize_context(ctx: Context, lexicon: Optional[Lexicon] = None) -> QueryProfile:
    """Map a raw context to its QueryProfile; deterministic for equal inputs."""

    if not ctx.error_text.strip() and not ctx.query_text.strip():
        raise EmptyContextError()
    lexicon = lexicon or default_lexicon()
    text = context_text(ctx)
    lowered = text.lower()

    error_family = lexicon.first_hit("error_family", lowered)
    root_cause = lexicon.best_hit("root_cause", lowered)
    algorithm = lexicon.best_hit("algorithm_family", lowered, fallback=AlgorithmFamily.GENERIC_RL.value)
    theory = lexicon.best_hit("theory_claim", lowered)
    stage = lexicon.best_hit("runtime_stage", lowered)
    tier = lexicon.best_hit("validation_tier", lowered)
    command = lexicon.first_hit("command", lowered)

    algorithm_family = AlgorithmFamily(algorithm) if algorithm else AlgorithmFamily.NONE
    repo = normalize_path(ctx.repo_root) if ctx.repo_root and ctx.repo_root.strip() else None
    paths = sorted({normalize_path(path, repo) for path in ctx.repo_paths if path.strip()})
    project = ctx.project_scope.strip() if ctx.project_scope and ctx.project_scope.strip() else None

    return QueryProfile(
        error_family=ErrorFamily(error_family) if error_family else ErrorFamily.UNKNOWN,
        root_cause_class=RootCause(root_cause) if root_cause else RootCause.UNKNOWN,
        entities=extract_entities(ctx, text),
        token_signature=token_signature(text),
        scope=ScopeInfo(project=project, repo=repo, paths=paths),
        rl_hints=RlHints(
            algorithm_family=algorithm_family,
            problem_family=PROBLEM_FAMILIES.get(algorithm_family),
            runtime_stage=stage or "unknown",
            validation_tier=ValidationTier(tier) if tier else None,
            theory_claim_type=TheoryClaim(theory) if theory else None,
        ),
        command=command,
        session=ctx.session,
    )


class Normalizer:
    """Holds the configured lexicon and redaction hooks for the pipeline."""

    def __init__(self, lexicon: Lexicon, redactor=None) -> None:
        self.lexicon = lexicon
        self._redactor = redactor

    def redact(self, ctx: Context) -> Context:
        if self._redactor is None:
            return ctx
        return self._redactor.redact_context(ctx)

    def profile(self, ctx: Context) -> QueryProfile:
        return normalize_context(ctx, self.lexicon)
