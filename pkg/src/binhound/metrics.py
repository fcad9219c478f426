"""Difficulty scoring, dataset balance statistics, and set-based P/R/F1."""
from __future__ import annotations

import math
from collections import Counter, defaultdict
from dataclasses import dataclass
from enum import Enum

from .config import DifficultyConfig, DEFAULT_CONFIG
from .errors import EmptyInput, WeightSumViolation


class Tier(Enum):
    BEGINNER = "beginner"
    INTERMEDIATE = "intermediate"
    EXPERT = "expert"


@dataclass(frozen=True)
class DifficultyInput:
    code_length_chars: int
    import_count: int
    technique_count: int
    family_rarity: float      # 1 = rarest
    severity: float
    obfuscation_level: float

    def __post_init__(self):
        if min(self.code_length_chars, self.import_count, self.technique_count) < 0:
            raise ValueError("counts must be >= 0")
        for name in ("family_rarity", "severity", "obfuscation_level"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0,1], got {v}")


@dataclass(frozen=True)
class DifficultyScore:
    score: float
    tier: Tier


@dataclass(frozen=True)
class BalanceRow:
    category: str
    total_samples: int
    family_count: int
    entropy: float
    evenness: float | None    # None when only one family
    top_family_share: float


def shannon_entropy(counts: list[int]) -> float:
    """H = -sum(p_i * log2 p_i) over count proportions, in bits."""
    if not counts:
        raise EmptyInput("entropy of empty count list")
    if any(c < 1 for c in counts):
        raise ValueError("all counts must be >= 1")
    total = sum(counts)
    return -sum((c / total) * math.log2(c / total) for c in counts)


def pielou_evenness(counts: list[int]) -> float | None:
    """J' = H / log2 S; undefined (None) when there is a single family."""
    h = shannon_entropy(counts)
    s = len(counts)
    if s == 1:
        return None
    return h / math.log2(s)


def _check_weights(weights, expected_len: int) -> None:
    if len(weights) != expected_len:
        raise WeightSumViolation(f"need {expected_len} weights, got {len(weights)}")
    if any(w < 0 for w in weights):
        raise WeightSumViolation("weights must be non-negative")
    if abs(sum(weights) - 1.0) > 1e-9:
        raise WeightSumViolation(f"weights sum to {sum(weights)}, expected 1")


def _log_saturate(value: int, saturation: int) -> float:
    """log1p map reaching 1.0 at the saturation point, clamped above it."""
    if value <= 0:
        return 0.0
    return min(1.0, math.log1p(value) / math.log1p(saturation))


def difficulty_score(inp: DifficultyInput, weights=None,
                     config: DifficultyConfig | None = None) -> DifficultyScore:
    """Weighted sum of six normalized components mapped onto three tiers.

    Counts normalize through saturating maps (log-scale for code length and
    imports, linear for the technique tally); the remaining components are
    already in [0,1].
    """
    cfg = config or DEFAULT_CONFIG.difficulty
    weights = tuple(weights) if weights is not None else cfg.weights
    _check_weights(weights, 6)
    components = (
        _log_saturate(inp.code_length_chars, cfg.code_length_saturation),
        _log_saturate(inp.import_count, cfg.import_saturation),
        min(1.0, inp.technique_count / cfg.technique_saturation),
        inp.family_rarity,
        inp.severity,
        inp.obfuscation_level,
    )
    score = sum(w * c for w, c in zip(weights, components))
    if score < cfg.tier_beginner_below:
        tier = Tier.BEGINNER
    elif score < cfg.tier_intermediate_below:
        tier = Tier.INTERMEDIATE
    else:
        tier = Tier.EXPERT
    return DifficultyScore(score=score, tier=tier)


def prf_metrics(predicted: set, gold: set) -> tuple[float, float, float]:
    """Set precision, recall, and F1; empty predictions score zero precision."""
    if not gold:
        raise EmptyInput("gold set must be non-empty")
    predicted = set(predicted)
    gold = set(gold)
    hit = len(predicted & gold)
    precision = hit / len(predicted) if predicted else 0.0
    recall = hit / len(gold)
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def balance_report(dataset: list[tuple]) -> list[BalanceRow]:
    """Per-category family counts with entropy and evenness.

    Input rows are (category, family) label pairs; output rows sort by
    total sample count descending, category ascending on ties.
    """
    per_cat: dict[str, Counter] = defaultdict(Counter)
    for category, family in dataset:
        per_cat[category][family] += 1

    rows = []
    for category, families in per_cat.items():
        counts = list(families.values())
        total = sum(counts)
        rows.append(BalanceRow(
            category=category,
            total_samples=total,
            family_count=len(counts),
            entropy=shannon_entropy(counts),
            evenness=pielou_evenness(counts),
            top_family_share=max(counts) / total,
        ))
    rows.sort(key=lambda r: (-r.total_samples, r.category))
    return rows
