"""Five-dimension response quality gate with threshold routing.

A response is scored on information density, structural completeness,
repetition, length sanity, and evidence alignment; the weighted score routes
it to acceptance, one feedback-guided retry, or a template fallback. Refusal
detection runs before scoring so canned declines never reach the gate.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, fields

from .config import GateConfig, DEFAULT_CONFIG
from .errors import ThresholdOrderViolation, WeightSumViolation
from .ioc import ProvenanceLabel, validate_all

from enum import Enum


class Decision(Enum):
    ACCEPT = "accept"
    RETRY_WITH_FEEDBACK = "retry_with_feedback"
    TEMPLATE_FALLBACK = "template_fallback"


@dataclass(frozen=True)
class QualityDimensions:
    d1_information_density: float
    d2_structural_completeness: float
    d3_repetition_penalty: float
    d4_length_sanity: float
    d5_evidence_alignment: float

    def as_tuple(self) -> tuple:
        return (self.d1_information_density, self.d2_structural_completeness,
                self.d3_repetition_penalty, self.d4_length_sanity,
                self.d5_evidence_alignment)


@dataclass(frozen=True)
class QualityVerdict:
    sigma: float
    decision: Decision
    feedback: tuple = ()


_WORDS = re.compile(r"\S+")
_SENTENCE_SPLIT = re.compile(r"[.!?\n]+")


def _information_density(text: str, saturation: float) -> float:
    tokens = _WORDS.findall(text.lower())
    if not tokens:
        return 0.0
    return min(1.0, (len(set(tokens)) / len(tokens)) / saturation)


def _structural_completeness(text: str, required_sections) -> float:
    if not required_sections:
        return 1.0
    folded = text.casefold()
    present = sum(1 for h in required_sections if h.casefold() in folded)
    return present / len(required_sections)


def _repetition(text: str) -> float:
    sentences = [" ".join(s.casefold().split())
                 for s in _SENTENCE_SPLIT.split(text)]
    sentences = [s for s in sentences if s]
    if not sentences:
        return 1.0
    return len(set(sentences)) / len(sentences)


def _length_sanity(text: str, cfg: GateConfig) -> float:
    wc = len(_WORDS.findall(text))
    if wc < cfg.length_min_words or wc > cfg.length_max_words:
        return 0.0
    if cfg.length_plateau_lo <= wc <= cfg.length_plateau_hi:
        return 1.0
    if wc < cfg.length_plateau_lo:
        return (wc - cfg.length_min_words) / (cfg.length_plateau_lo - cfg.length_min_words)
    return (cfg.length_max_words - wc) / (cfg.length_max_words - cfg.length_plateau_hi)


def _evidence_alignment(text: str, transcript) -> float:
    """Fraction of indicators that are not Invalid; 1.0 with none present.

    Invalid is a purely syntactic or range judgment, so this dimension needs
    no knowledge store; a transcript still upgrades matches to Verified.
    """
    validated = validate_all(text, knowledge=None, transcript=transcript)
    if not validated:
        return 1.0
    ok = sum(1 for v in validated if v.label is not ProvenanceLabel.INVALID)
    return ok / len(validated)


def score_dimensions(response: str, bundle=None, transcript=None,
                     required_sections=(), config: GateConfig | None = None) -> QualityDimensions:
    """Score the five quality dimensions of a response.

    The context bundle parameter is part of the gate interface for scorers
    that weigh retrieved evidence; the shipped dimensions only need the
    response text and optional transcript.
    """
    del bundle
    cfg = config or DEFAULT_CONFIG.gate
    return QualityDimensions(
        d1_information_density=_information_density(response, cfg.density_saturation),
        d2_structural_completeness=_structural_completeness(response, required_sections),
        d3_repetition_penalty=_repetition(response),
        d4_length_sanity=_length_sanity(response, cfg),
        d5_evidence_alignment=_evidence_alignment(response, transcript),
    )


def weighted_quality(dims: QualityDimensions, weights=None) -> float:
    weights = tuple(weights) if weights is not None else DEFAULT_CONFIG.gate.weights
    if len(weights) != 5 or any(w < 0 for w in weights):
        raise WeightSumViolation("need 5 non-negative weights")
    if abs(sum(weights) - 1.0) > 1e-9:
        raise WeightSumViolation(f"weights sum to {sum(weights)}, expected 1")
    return sum(w * d for w, d in zip(weights, dims.as_tuple()))


def gate(sigma: float, tau_accept: float | None = None, tau_retry: float | None = None,
         dims: QualityDimensions | None = None,
         config: GateConfig | None = None) -> QualityVerdict:
    """Route a quality score: accept, retry once with feedback, or fall back.

    Boundaries follow the >= convention on both thresholds. Retry verdicts
    name every dimension scoring below the feedback floor when dimensions
    are supplied.
    """
    cfg = config or DEFAULT_CONFIG.gate
    tau_accept = cfg.tau_accept if tau_accept is None else tau_accept
    tau_retry = cfg.tau_retry if tau_retry is None else tau_retry
    if not 0.0 <= tau_retry <= tau_accept <= 1.0:
        raise ThresholdOrderViolation(
            f"need 0 <= tau_retry <= tau_accept <= 1, got {tau_retry}/{tau_accept}")

    if sigma >= tau_accept:
        return QualityVerdict(sigma=sigma, decision=Decision.ACCEPT)
    feedback = ()
    if dims is not None:
        feedback = tuple(f.name for f in fields(QualityDimensions)
                         if getattr(dims, f.name) < cfg.feedback_dim_floor)
    if sigma >= tau_retry:
        return QualityVerdict(sigma=sigma, decision=Decision.RETRY_WITH_FEEDBACK,
                              feedback=feedback)
    return QualityVerdict(sigma=sigma, decision=Decision.TEMPLATE_FALLBACK,
                          feedback=feedback)


def detect_refusal(text: str, patterns=None) -> bool:
    """True for empty or whitespace output and for canned refusal phrasing."""
    if not text.strip():
        return True
    folded = text.casefold()
    for pattern in (patterns if patterns is not None else DEFAULT_CONFIG.gate.refusal_patterns):
        if pattern.casefold() in folded:
            return True
    return False
