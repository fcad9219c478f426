"""Domain types for the analysis pipeline: requests, transcripts, responses."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum

from ..binscan import PeMetadata
from ..gate import Decision, QualityVerdict
from ..ioc import Indicator, IndicatorKind, ProvenanceLabel, ValidatedIndicator


class ThreatLevel(Enum):
    LOW = "low"
    MEDIUM = "medium"
    HIGH = "high"
    CRITICAL = "critical"


class VerdictFlag(Enum):
    MALICIOUS = "malicious"
    BENIGN = "benign"
    INCONCLUSIVE = "inconclusive"


@dataclass(frozen=True)
class AnalysisRequest:
    """A user query, an optional binary sample, or both."""
    query: str = ""
    sample: bytes | None = None
    model_id: str = "deterministic-template"
    want_report: bool = True

    def __post_init__(self):
        if not self.query.strip() and self.sample is None:
            raise ValueError("request needs a non-empty query or a sample")


@dataclass(frozen=True)
class TranscriptItem:
    item_id: str
    kind: str        # pe | code | security
    content: str


@dataclass(frozen=True)
class GraphSummary:
    """Node/edge estimate for a control-flow or function-call graph."""
    nodes: int
    edges: int
    hotspots: tuple = ()

    def to_dict(self) -> dict:
        return {"nodes": self.nodes, "edges": self.edges,
                "hotspots": list(self.hotspots)}


@dataclass(frozen=True)
class ApiFinding:
    """One imported function matched against the API-behavior collection."""
    name: str
    risk: str                 # low | medium | high
    category: str             # behavior group, e.g. network, registry
    technique: str | None     # ATT&CK id when the collection maps one
    note: str

    def to_dict(self) -> dict:
        return {"name": self.name, "risk": self.risk, "category": self.category,
                "technique": self.technique, "note": self.note}


@dataclass(frozen=True)
class CapabilityMatch:
    """A capability rule whose required imports are all present."""
    rule: str
    risk: str
    technique: str | None
    matched_apis: tuple
    description: str
    guidance: str

    def to_dict(self) -> dict:
        return {"rule": self.rule, "risk": self.risk, "technique": self.technique,
                "matched_apis": list(self.matched_apis),
                "description": self.description, "guidance": self.guidance}


@dataclass
class Transcript:
    """Everything the static tool chain produced for one sample.

    A field is None (or empty) exactly when its tool failed or had nothing
    to report; tool_status records which happened.
    """
    pe: PeMetadata | None = None
    decompiled_c: str | None = None
    assembly: str | None = None
    cfg_summary: GraphSummary | None = None
    fcg_summary: GraphSummary | None = None
    suspicious_apis: list = field(default_factory=list)
    capability_matches: list = field(default_factory=list)
    tool_status: dict = field(default_factory=dict)
    sha256: str | None = None

    @property
    def items(self) -> list[TranscriptItem]:
        """Evidence-shaped view consumed by retrieval and IoC verification."""
        out: list[TranscriptItem] = []
        if self.pe is not None:
            out.append(TranscriptItem("pe:metadata", "pe", _pe_digest(self.pe)))
            if self.pe.strings:
                out.append(TranscriptItem("strings:sample", "security",
                                          "\n".join(self.pe.strings)))
        if self.decompiled_c:
            out.append(TranscriptItem("code:decompiled", "code", self.decompiled_c))
        if self.assembly:
            out.append(TranscriptItem("asm:listing", "code", self.assembly))
        if self.cfg_summary is not None or self.fcg_summary is not None:
            out.append(TranscriptItem("graph:summary", "code", self.graph_digest()))
        if self.suspicious_apis:
            lines = [f"{f.name} (risk {f.risk}, {f.technique or 'unmapped'}): {f.note}"
                     for f in self.suspicious_apis]
            out.append(TranscriptItem("apis:suspicious", "security", "\n".join(lines)))
        if self.capability_matches:
            lines = [f"{m.rule} (risk {m.risk}, {m.technique or 'unmapped'}): "
                     f"{m.description} [{', '.join(m.matched_apis)}]"
                     for m in self.capability_matches]
            out.append(TranscriptItem("caps:matches", "security", "\n".join(lines)))
        return out

    def graph_digest(self) -> str:
        parts = []
        if self.cfg_summary is not None:
            g = self.cfg_summary
            parts.append(f"CFG estimate: {g.nodes} blocks, {g.edges} edges")
        if self.fcg_summary is not None:
            g = self.fcg_summary
            hot = f", hotspots: {', '.join(g.hotspots)}" if g.hotspots else ""
            parts.append(f"FCG estimate: {g.nodes} functions, {g.edges} calls{hot}")
        return "; ".join(parts)

    @property
    def failed_fraction(self) -> float:
        if not self.tool_status:
            return 0.0
        failed = sum(1 for ok in self.tool_status.values() if not ok)
        return failed / len(self.tool_status)


def _pe_digest(pe: PeMetadata) -> str:
    libs = ", ".join(sorted({i.library for i in pe.imports})) or "none"
    return (f"PE {pe.architecture.value}, {pe.size_bytes} bytes, "
            f"entry 0x{pe.entry_point:X}, {len(pe.sections)} sections, "
            f"{sum(len(i.functions) for i in pe.imports)} imports from {libs}, "
            f"imphash {pe.imphash or 'n/a'}, entropy {pe.overall_entropy:.2f}")


@dataclass(frozen=True)
class CacheKey:
    key: str  # 64-hex digest


@dataclass(frozen=True)
class EvidenceCitation:
    source: str
    ref: str
    excerpt: str
    confidence: float

    def to_dict(self) -> dict:
        return {"source": self.source, "ref": self.ref,
                "excerpt": self.excerpt, "confidence": self.confidence}


@dataclass(frozen=True)
class StructuredReport:
    step1_file_triage: dict
    step2_code_behavior: dict
    step3_indicators: dict
    step4_assessment: dict
    classification: dict              # {"family": ..., "category": ...}
    threat_level: ThreatLevel
    mitre_mappings: tuple
    detection_guidance: str
    verdict_flag: VerdictFlag

    def to_dict(self) -> dict:
        return {
            "step1_file_triage": self.step1_file_triage,
            "step2_code_behavior": self.step2_code_behavior,
            "step3_indicators": self.step3_indicators,
            "step4_assessment": self.step4_assessment,
            "classification": self.classification,
            "threat_level": self.threat_level.value,
            "mitre_mappings": list(self.mitre_mappings),
            "detection_guidance": self.detection_guidance,
            "verdict_flag": self.verdict_flag.value,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "StructuredReport":
        return cls(
            step1_file_triage=d["step1_file_triage"],
            step2_code_behavior=d["step2_code_behavior"],
            step3_indicators=d["step3_indicators"],
            step4_assessment=d["step4_assessment"],
            classification=d["classification"],
            threat_level=ThreatLevel(d["threat_level"]),
            mitre_mappings=tuple(d["mitre_mappings"]),
            detection_guidance=d["detection_guidance"],
            verdict_flag=VerdictFlag(d["verdict_flag"]),
        )

    def to_markdown(self) -> str:
        s1, s2 = self.step1_file_triage, self.step2_code_behavior
        lines = [
            "**Step 1: File Triage**",
            "File characteristics:",
            "",
            f"- **Size:** {s1['size_bytes']:,} bytes",
            f"- **Architecture:** {s1['architecture']}",
            f"- **Entry point:** 0x{s1['entry_point']:X}",
            f"- **Functions detected:** {s1['functions_detected']}",
            "",
            "**Step 2: Code & Behavior Analysis**",
            f"Examining decompiled code ({s2['functions_examined']} functions) for:",
            "",
            f"- **Process manipulation:** {s2['process_manipulation']}",
            f"- **Network API:** {s2['network_api']}",
            f"- **Registry API:** {s2['registry_api']}",
            "",
            "**Step 3: Indicator Identification**",
        ]
        indicators = self.step3_indicators.get("indicators", [])
        if indicators:
            lines.append("Validated indicators:")
            lines.append("")
            for ind in indicators:
                lines.append(f"- **{ind['kind']}:** {ind['text']} [{ind['label']}]")
        else:
            lines.append("No validated indicators were identified.")
        if self.mitre_mappings:
            lines.append("")
            lines.append(f"- **MITRE ATT&CK mapping:** {', '.join(self.mitre_mappings)}")
        lines += [
            "",
            "**Step 4: Assessment & Classification**",
            "Based on the above analysis:",
            "",
            f"**Classification:** {self.classification['family']} "
            f"({self.classification['category']})",
            "",
            f"**Threat Level:** {self.threat_level.value.capitalize()}",
            "",
            f"**{self.verdict_flag.value.capitalize()}**",
        ]
        if self.detection_guidance:
            lines += ["", "**Detection guidance:** " + self.detection_guidance]
        return "\n".join(lines)


@dataclass(frozen=True)
class AnalysisResponse:
    answer: str
    validated_indicators: tuple = ()
    bundle_refs: tuple = ()           # EvidenceCitation
    verdict: QualityVerdict | None = None
    report: StructuredReport | None = None
    specialist: str | None = None
    from_cache: bool = False
    notes: tuple = ()                 # degradations hit along the way

    def to_dict(self) -> dict:
        return {
            "answer": self.answer,
            "validated_indicators": [
                {
                    "kind": v.indicator.kind.value,
                    "raw": v.indicator.raw,
                    "normalized": v.indicator.normalized,
                    "span": list(v.indicator.span),
                    "label": v.label.value,
                    "evidence_ref": v.evidence_ref,
                    "reason": v.reason,
                }
                for v in self.validated_indicators
            ],
            "bundle_refs": [c.to_dict() for c in self.bundle_refs],
            "verdict": None if self.verdict is None else {
                "sigma": self.verdict.sigma,
                "decision": self.verdict.decision.value,
                "feedback": list(self.verdict.feedback),
            },
            "report": None if self.report is None else self.report.to_dict(),
            "specialist": self.specialist,
            "from_cache": self.from_cache,
            "notes": list(self.notes),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "AnalysisResponse":
        validated = tuple(
            ValidatedIndicator(
                indicator=Indicator(
                    kind=IndicatorKind(v["kind"]), raw=v["raw"],
                    normalized=v["normalized"], span=tuple(v["span"]),
                ),
                label=ProvenanceLabel(v["label"]),
                evidence_ref=v["evidence_ref"], reason=v["reason"],
            )
            for v in d["validated_indicators"]
        )
        verdict = None
        if d.get("verdict") is not None:
            verdict = QualityVerdict(
                sigma=d["verdict"]["sigma"],
                decision=Decision(d["verdict"]["decision"]),
                feedback=tuple(d["verdict"]["feedback"]),
            )
        report = None
        if d.get("report") is not None:
            report = StructuredReport.from_dict(d["report"])
        return cls(
            answer=d["answer"],
            validated_indicators=validated,
            bundle_refs=tuple(EvidenceCitation(**c) for c in d["bundle_refs"]),
            verdict=verdict,
            report=report,
            specialist=d.get("specialist"),
            from_cache=d.get("from_cache", False),
            notes=tuple(d.get("notes", ())),
        )
