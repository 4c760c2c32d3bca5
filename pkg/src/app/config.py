"""Application configuration helpers."""
from __future__ import annotations

import hashlib
import json
import os
from functools import lru_cache
from pathlib import Path
from typing import Optional

from pydantic import BaseModel, ConfigDict, Field, SecretStr, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from app.schemas import FEATURE_NAMES

CONFIG_ENV = "MEMCTL_CONFIG"
DATA_DIR = Path(__file__).resolve().parent / "data"

DEFAULT_WEIGHTS: dict[str, float] = {
    "lexical": 0.18,
    "dense": 0.07,
    "exception": 0.10,
    "command": 0.06,
    "path": 0.06,
    "entity": 0.08,
    "scope": 0.08,
    "family": 0.10,
    "root_cause": 0.08,
    "feedback": 0.06,
    "success_prior": 0.04,
    "negative_applicability": 0.10,
    "session": 0.02,
    "memory_kind": 0.03,
    "problem_family": 0.05,
    "algorithm_family": 0.10,
    "theory": 0.04,
    "validation_tier": 0.03,
}

DEFAULT_REDACT_PATTERNS = [
    r"sk-[A-Za-z0-9_\-]{16,}",
    r"AKIA[0-9A-Z]{16}",
    r"(?i)bearer\s+[A-Za-z0-9._\-]{12,}",
    r"(?i)(password|passwd|secret|token)\s*[=:]\s*\S+",
]


class _Section(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


class StoreSettings(_Section):
    fsync: bool = True
    snapshot_every: int = Field(default=500, ge=0, description="Write snapshot.json every N appends; 0 disables.")
    repair_truncate: bool = False


class RankerSettings(_Section):
    tau_accept: float = 0.60
    tau_weak: float = 0.35
    tau_margin: float = 0.10
    weights: dict[str, float] = Field(default_factory=lambda: dict(DEFAULT_WEIGHTS))
    k: int = Field(default=32, ge=1)
    visible: int = Field(default=3, ge=1)
    prefilter_cosine: float = Field(default=0.1, ge=0.0, le=1.0)
    scope_partition: bool = False
    static_rag: bool = False

    @field_validator("weights")
    @classmethod
    def _known_dimensions(cls, value: dict[str, float]) -> dict[str, float]:
        unknown = sorted(set(value) - set(FEATURE_NAMES))
        if unknown:
            raise ValueError(f"unknown weight dimensions: {', '.join(unknown)}")
        merged = dict(DEFAULT_WEIGHTS)
        merged.update({name: float(weight) for name, weight in value.items()})
        return merged

    @model_validator(mode="after")
    def _check_thresholds(self) -> "RankerSettings":
        if not 0 < self.tau_weak <= self.tau_accept < 1:
            raise ValueError("thresholds must satisfy 0 < tau_weak <= tau_accept < 1")
        if not 0 < self.tau_margin < 1:
            raise ValueError("tau_margin must lie in (0, 1)")
        return self


class BanditSettings(_Section):
    enabled: bool = True
    lam: float = Field(default=1.0, gt=0)
    gamma: float = 0.5
    alpha: float = 1.0
    delta_max: float = Field(default=0.05, ge=0)
    temperature: float = Field(default=0.2, gt=0)
    top_kb: int = Field(default=8, ge=1)
    snapshot_every: int = Field(default=50, ge=0)


class LinkerSettings(_Section):
    enabled: bool = True
    window_events: int = Field(default=50, ge=1)
    window_hours: float = Field(default=24.0, gt=0)
    min_compatibility: float = 0.3


class FeedbackSettings(_Section):
    aliases: dict[str, str] = Field(default_factory=dict)


class GateSettings(_Section):
    n_min: int = 50
    rho_max: float = 0.02
    epsilon: float = 0.01
    latency_max_ms: float = 100.0
    resamples: int = Field(default=1000, ge=1)
    seed: int = 7
    weight_cap: float = Field(default=10.0, gt=0)
    support_min_propensity: float = 0.01
    low_risk: bool = False


class GovernanceSettings(_Section):
    reviewers: list[str] = Field(default_factory=list)
    review_secret: SecretStr = SecretStr("memctl-local-review")
    blocking_severities: list[str] = Field(default_factory=lambda: ["major", "critical"])
    tier_caps: dict[str, str] = Field(
        default_factory=lambda: {
            "missing_evidence": "smoke",
            "blocking_finding": "seeded_run",
            "unapproved_review": "seeded_run",
        }
    )


class FeatureSettings(_Section):
    theory_metadata: bool = True


class Settings(BaseSettings):
    """Server settings: JSON config file, MEMCTL_* environment, then defaults."""

    store_dir: Path = Path("./data/memctl")
    lexicon_path: Path = DATA_DIR / "lexicon.json"
    anchors_path: Optional[Path] = DATA_DIR / "anchors.json"
    redact_patterns: list[str] = Field(default_factory=lambda: list(DEFAULT_REDACT_PATTERNS))
    log_level: str = "INFO"
    store: StoreSettings = Field(default_factory=StoreSettings)
    ranker: RankerSettings = Field(default_factory=RankerSettings)
    bandit: BanditSettings = Field(default_factory=BanditSettings)
    linker: LinkerSettings = Field(default_factory=LinkerSettings)
    feedback: FeedbackSettings = Field(default_factory=FeedbackSettings)
    gate: GateSettings = Field(default_factory=GateSettings)
    governance: GovernanceSettings = Field(default_factory=GovernanceSettings)
    features: FeatureSettings = Field(default_factory=FeatureSettings)

    model_config = SettingsConfigDict(
        env_prefix="MEMCTL_",
        env_nested_delimiter="__",
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
        frozen=True,
    )

    def digest(self) -> str:
        """Stable fingerprint of the effective configuration (secrets masked)."""

        from services.codec import canonical_dumps

        return hashlib.sha256(canonical_dumps(self.model_dump(mode="json"))).hexdigest()


def load_settings(config_path: str | Path | None = None, **overrides) -> Settings:
    """Build settings from an explicit path, $MEMCTL_CONFIG, or defaults."""

    path = config_path or os.environ.get(CONFIG_ENV)
    data: dict = {}
    if path:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    data.update(overrides)
    return Settings(**data)


@lru_cache(maxsize=1)
def get_settings() -> Settings:
    """Return a cached Settings instance to avoid repeated parsing."""
    return load_settings()
