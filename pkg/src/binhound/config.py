"""Central configuration with declared defaults.

Every tunable that the pipeline depends on lives here so tests can pin it
and deployments can override it from a JSON file. None of these numbers is
authoritative beyond this artifact; they are engineering defaults chosen
from common practice and are documented in docs/CONFIG.md.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict, replace
from pathlib import Path


@dataclass
class RetrievalConfig:
    bm25_k1: float = 1.2
    bm25_b: float = 0.75
    rrf_k: int = 60
    top_k: int = 5
    dedup_cosine: float = 0.95          # near-duplicate threshold
    confidence_floor_ratio: float = 0.05  # drop items below 5% of max confidence
    chunk_window: int = 512
    chunk_stride: int = 256
    embed_dim: int = 768
    excerpt_chars: int = 240


@dataclass
class GateConfig:
    weights: tuple = (0.20, 0.25, 0.15, 0.10, 0.30)
    tau_accept: float = 0.75
    tau_retry: float = 0.45
    # d1: distinct-token ratio saturates to 1.0 at this value
    density_saturation: float = 0.6
    # d4 trapezoid on word count: 0 outside (min, max), 1 on [lo, hi]
    length_min_words: int = 20
    length_plateau_lo: int = 80
    length_plateau_hi: int = 1200
    length_max_words: int = 2000
    feedback_dim_floor: float = 0.5     # dims below this are named in retry feedback
    refusal_patterns: tuple = (
        "i cannot assist with this request",
        "i can't help with",
        "i cannot help with",
        "as an ai",
        "i'm unable to assist",
    )


@dataclass
class DifficultyConfig:
    # saturating normalizers for the raw count inputs
    code_length_saturation: int = 200_000   # chars
    import_saturation: int = 100
    technique_saturation: int = 20
    weights: tuple = (1 / 6,) * 6
    tier_beginner_below: float = 0.35
    tier_intermediate_below: float = 0.70


# prompt-level difficulty: code length / function-import count / technique
# count only, the three sample-intrinsic signals
PROMPT_DIFFICULTY_WEIGHTS = (1 / 3, 1 / 3, 1 / 3, 0.0, 0.0, 0.0)


@dataclass
class EngineConfig:
    cache_size: int = 1024
    cache_dir: str | None = None        # optional on-disk cache persistence
    retry_budget: int = 1
    prompt_token_budget: int = 4000
    adapter_timeout_s: float = 10.0
    sample_size_cap: int = 5 * 1024 * 1024   # uploads above this are rejected
    required_sections: tuple = (
        "Triage summary",
        "Key findings",
        "Technique mapping",
        "Detection guidance",
        "Assessment",
    )
    generator_endpoint: str | None = None    # chat-completion URL for a real model
    model_id: str = "deterministic-template"


@dataclass
class ServiceConfig:
    host: str = "127.0.0.1"
    port: int = 8750
    workers: int = 8                    # concurrent analyses allowed
    state_dir: str = "binhound_state"
    schema_version: str = "1"
    static_dir: str | None = None       # built console assets, served at /


@dataclass
class Config:
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    gate: GateConfig = field(default_factory=GateConfig)
    difficulty: DifficultyConfig = field(default_factory=DifficultyConfig)
    engine: EngineConfig = field(default_factory=EngineConfig)
    service: ServiceConfig = field(default_factory=ServiceConfig)

    @classmethod
    def load(cls, path: str | Path) -> "Config":
        """Load a JSON config file; unknown keys are rejected."""
        raw = json.loads(Path(path).read_text())
        cfg = cls()
        sections = {
            "retrieval": RetrievalConfig,
            "gate": GateConfig,
            "difficulty": DifficultyConfig,
            "engine": EngineConfig,
            "service": ServiceConfig,
        }
        for name, overrides in raw.items():
            if name not in sections:
                raise ValueError(f"unknown config section: {name}")
            base = getattr(cfg, name)
            known = set(asdict(base))
            bad = set(overrides) - known
            if bad:
                raise ValueError(f"unknown keys in [{name}]: {sorted(bad)}")
            # JSON has no tuples; coerce list overrides back
            coerced = {
                k: tuple(v) if isinstance(getattr(base, k), tuple) else v
                for k, v in overrides.items()
            }
            setattr(cfg, name, replace(base, **coerced))
        return cfg

    def dump(self) -> dict:
        return asdict(self)


DEFAULT_CONFIG = Config()
