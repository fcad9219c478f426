"""Structured four-step report assembly from a transcript and a response."""
from __future__ import annotations

from ..binscan import size_class
from ..errors import MissingTranscript
from ..ioc import IndicatorKind, ProvenanceLabel
from .types import (
    AnalysisResponse,
    StructuredReport,
    ThreatLevel,
    Transcript,
    VerdictFlag,
)

# Categories of matched API behavior that answer the step-2 questions.
_PROCESS_CATEGORIES = {"process", "memory"}
_NETWORK_CATEGORIES = {"network"}
_REGISTRY_CATEGORIES = {"registry"}

_GENERIC_GUIDANCE = ("Verify the sample hash against intelligence feeds, review "
                     "outbound connections, and keep the host isolated until the "
                     "verdict is confirmed.")


def _yes_no(flag: bool) -> str:
    return "Yes" if flag else "No"


def threat_level(transcript: Transcript) -> ThreatLevel:
    """Rubric: capability matches outrank individual suspicious imports."""
    high = sum(1 for m in transcript.capability_matches if m.risk == "high")
    if high >= 2:
        return ThreatLevel.CRITICAL
    if high >= 1:
        return ThreatLevel.HIGH
    risky_apis = [f for f in transcript.suspicious_apis if f.risk != "low"]
    if risky_apis or transcript.capability_matches:
        return ThreatLevel.MEDIUM
    return ThreatLevel.LOW


def verdict_flag(transcript: Transcript, level: ThreatLevel,
                 family_category: str) -> VerdictFlag:
    if transcript.failed_fraction >= 0.5:
        return VerdictFlag.INCONCLUSIVE
    if level is not ThreatLevel.LOW:
        return VerdictFlag.MALICIOUS
    if family_category not in ("benign", "unknown"):
        return VerdictFlag.MALICIOUS
    return VerdictFlag.BENIGN


def assemble_report(transcript: Transcript, response: AnalysisResponse,
                    label=None) -> StructuredReport:
    """Populate the four report steps from static evidence.

    The attribution label is optional; without one the classification
    falls back to capability-implied categories or unknown. MITRE mappings
    come strictly from the response's validated technique indicators, so a
    mapping can never appear without surviving validation.
    """
    if transcript is None:
        raise MissingTranscript("report assembly needs a static-analysis transcript")
    pe = transcript.pe

    functions_detected = 0
    if transcript.fcg_summary is not None:
        functions_detected = transcript.fcg_summary.nodes
    elif pe is not None:
        functions_detected = sum(len(e.functions) for e in pe.imports)

    step1 = {
        "size_bytes": pe.size_bytes if pe else None,
        "size_class": size_class(pe.size_bytes).value if pe else None,
        "architecture": pe.architecture.value if pe else "unknown",
        "entry_point": pe.entry_point if pe else 0,
        "functions_detected": functions_detected,
        "imphash": pe.imphash if pe else None,
        "sha256": transcript.sha256,
        "sections": [s.name for s in pe.sections] if pe else [],
        "overall_entropy": pe.overall_entropy if pe else None,
    }

    categories = {f.category for f in transcript.suspicious_apis}
    step2 = {
        "functions_examined": functions_detected,
        "process_manipulation": _yes_no(bool(categories & _PROCESS_CATEGORIES)),
        "network_api": _yes_no(bool(categories & _NETWORK_CATEGORIES)),
        "registry_api": _yes_no(bool(categories & _REGISTRY_CATEGORIES)),
        "suspicious_apis": [f.to_dict() for f in transcript.suspicious_apis],
        "capabilities": [m.to_dict() for m in transcript.capability_matches],
        "graphs": transcript.graph_digest(),
    }

    usable = [v for v in response.validated_indicators
              if v.label is not ProvenanceLabel.INVALID]
    mitre = []
    for v in usable:
        if v.indicator.kind is IndicatorKind.MITRE_TECHNIQUE \
                and v.indicator.normalized not in mitre:
            mitre.append(v.indicator.normalized)
    step3 = {
        "indicators": [
            {"kind": v.indicator.kind.value, "text": v.indicator.normalized,
             "label": v.label.value, "evidence_ref": v.evidence_ref}
            for v in usable
        ],
        "api_patterns": [f.name for f in transcript.suspicious_apis],
        "mitre_mapping": mitre,
    }

    if label is not None:
        family, category = label.family, label.category
        attribution_source = label.source.value
    else:
        family, category, attribution_source = "unknown", "unknown", "none"

    level = threat_level(transcript)
    flag = verdict_flag(transcript, level, category)
    guidance_lines = [m.guidance for m in transcript.capability_matches] or \
        [_GENERIC_GUIDANCE]

    step4 = {
        "classification": {"family": family, "category": category},
        "attribution_source": attribution_source,
        "threat_level": level.value,
        "verdict": flag.value,
        "rationale": _rationale(transcript, level),
    }

    return StructuredReport(
        step1_file_triage=step1,
        step2_code_behavior=step2,
        step3_indicators=step3,
        step4_assessment=step4,
        classification={"family": family, "category": category},
        threat_level=level,
        mitre_mappings=tuple(mitre),
        detection_guidance=" ".join(guidance_lines),
        verdict_flag=flag,
    )


def _rationale(transcript: Transcript, level: ThreatLevel) -> str:
    caps = [m.rule for m in transcript.capability_matches]
    if caps:
        return (f"Capability rules matched: {', '.join(caps)}; threat level "
                f"{level.value} follows from their risk ratings.")
    risky = [f.name for f in transcript.suspicious_apis if f.risk != "low"]
    if risky:
        return (f"No full capability chain matched, but risk-bearing imports "
                f"({', '.join(risky[:6])}) keep the sample at {level.value}.")
    return "No risk-bearing imports or capability chains were observed."
