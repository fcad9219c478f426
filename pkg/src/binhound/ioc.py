"""Indicator extraction and provenance validation.

Ten indicator classes are pulled from free text with non-overlapping,
longest-match-first spans, then each is validated into one of three
provenance labels: Verified (backed by a knowledge document or transcript
item), ValidUnverified (well-formed but unsupported), or Invalid (fails a
syntax or range check, always with a reason).
"""
from __future__ import annotations

import datetime
import re
from dataclasses import dataclass
from enum import Enum

from .errors import SpanMismatch

__all__ = [
    "IndicatorKind",
    "Indicator",
    "ProvenanceLabel",
    "ValidatedIndicator",
    "extract_indicators",
    "validate_indicator",
    "validate_all",
    "annotate_response",
    "strip_annotations",
]


class IndicatorKind(Enum):
    MITRE_TECHNIQUE = "mitre_technique"
    CVE = "cve"
    CWE = "cwe"
    CAPEC = "capec"
    CVSS_VECTOR = "cvss_vector"
    IP_ADDRESS = "ip_address"
    FILE_HASH = "file_hash"
    URL = "url"
    EMAIL = "email"
    PORT = "port"


class ProvenanceLabel(Enum):
    VERIFIED = "verified"
    VALID_UNVERIFIED = "unverified"
    INVALID = "invalid"


@dataclass(frozen=True)
class Indicator:
    kind: IndicatorKind
    raw: str
    normalized: str
    span: tuple  # (start, end) character offsets into the source text


@dataclass(frozen=True)
class ValidatedIndicator:
    indicator: Indicator
    label: ProvenanceLabel
    evidence_ref: str | None = None   # doc_id or transcript item id, Verified only
    reason: str | None = None


# Extraction grammars. Order is the tiebreak for identical spans; overlap
# resolution itself is longest-match-first at each position.
_PATTERNS: list[tuple[IndicatorKind, re.Pattern]] = [
    (IndicatorKind.URL,
     re.compile(r"\b(?:https?|ftp)://[^\s<>\"'\)\]]+", re.IGNORECASE)),
    (IndicatorKind.CVSS_VECTOR,
     re.compile(r"\bCVSS:3\.[01]/[A-Za-z]{1,3}:[A-Za-z](?:/[A-Za-z]{1,3}:[A-Za-z])*",
                re.IGNORECASE)),
    (IndicatorKind.CVE,
     re.compile(r"\bCVE-\d{4}-\d{4,}\b", re.IGNORECASE)),
    (IndicatorKind.CWE,
     re.compile(r"\bCWE-\d+\b", re.IGNORECASE)),
    (IndicatorKind.CAPEC,
     re.compile(r"\bCAPEC-\d+\b", re.IGNORECASE)),
    (IndicatorKind.MITRE_TECHNIQUE,
     re.compile(r"\b[Tt]\d{4}(?:\.\d{3})?\b")),
    (IndicatorKind.EMAIL,
     re.compile(r"\b[A-Za-z0-9._%+-]+@[A-Za-z0-9-]+(?:\.[A-Za-z0-9-]+)*\.[A-Za-z]{2,}\b")),
    (IndicatorKind.FILE_HASH,
     re.compile(r"(?<!\w)(?:[0-9a-fA-F]{64}|[0-9a-fA-F]{40}|[0-9a-fA-F]{32})(?!\w)")),
    (IndicatorKind.IP_ADDRESS,
     re.compile(r"(?<![\d.])\d{1,3}(?:\.\d{1,3}){3}(?![\d.])")),
    (IndicatorKind.PORT,
     re.compile(r"\bport(?:\s+|\s*[:=]\s*)(\d+)\b", re.IGNORECASE)),
]

_URL_TRAILING = ".,;:!?"


def _normalize(kind: IndicatorKind, raw: str, match: re.Match) -> str:
    if kind in (IndicatorKind.MITRE_TECHNIQUE, IndicatorKind.CVE,
                IndicatorKind.CWE, IndicatorKind.CAPEC,
                IndicatorKind.CVSS_VECTOR):
        return raw.upper()
    if kind in (IndicatorKind.FILE_HASH, IndicatorKind.URL, IndicatorKind.EMAIL):
        return raw.lower()
    if kind is IndicatorKind.PORT:
        return match.group(1)
    return raw  # IP addresses keep their literal form


def extract_indicators(text: str) -> list[Indicator]:
    """All non-overlapping indicator matches, left to right.

    When two candidate matches start at the same offset the longer one wins;
    remaining overlaps are dropped in favor of the earlier-starting match.
    """
    candidates = []
    for order, (kind, pattern) in enumerate(_PATTERNS):
        for m in pattern.finditer(text):
            raw = m.group(0)
            end = m.end()
            if kind is IndicatorKind.URL:
                trimmed = raw.rstrip(_URL_TRAILING)
                end -= len(raw) - len(trimmed)
                raw = trimmed
            candidates.append((m.start(), -(end - m.start()), order, end, kind, raw, m))

    candidates.sort(key=lambda c: c[:3])
    out: list[Indicator] = []
    cursor = 0
    for start, _, _, end, kind, raw, m in candidates:
        if start < cursor:
            continue
        out.append(Indicator(kind=kind, raw=raw,
                             normalized=_normalize(kind, raw, m),
                             span=(start, end)))
        cursor = end
    return out


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

# Legal value sets for CVSS v3.x metrics (base, temporal, environmental).
_CVSS_METRICS = {
    "AV": set("NALP"), "AC": set("LH"), "PR": set("NLH"), "UI": set("NR"),
    "S": set("UC"), "C": set("NLH"), "I": set("NLH"), "A": set("NLH"),
    "E": set("XUPFH"), "RL": set("XOTWU"), "RC": set("XURC"),
    "CR": set("XLMH"), "IR": set("XLMH"), "AR": set("XLMH"),
    "MAV": set("XNALP"), "MAC": set("XLH"), "MPR": set("XNLH"),
    "MUI": set("XNR"), "MS": set("XUC"), "MC": set("XNLH"),
    "MI": set("XNLH"), "MA": set("XNLH"),
}

_RESERVED_V4 = (
    ("10.",),
    tuple(f"172.{i}." for i in range(16, 32)),
    ("192.168.",),
    ("127.",),
)


def _range_check(ind: Indicator) -> str | None:
    """Reason string when a range rule is violated, else None."""
    if ind.kind is IndicatorKind.IP_ADDRESS:
        for octet in ind.normalized.split("."):
            if int(octet) > 255:
                return "octet out of range"
    elif ind.kind is IndicatorKind.PORT:
        value = int(ind.normalized)
        if not 1 <= value <= 65535:
            return "port out of range"
    elif ind.kind is IndicatorKind.CVE:
        year = int(ind.normalized.split("-")[1])
        if not 1999 <= year <= datetime.date.today().year + 1:
            return "implausible CVE year"
    elif ind.kind is IndicatorKind.CVSS_VECTOR:
        for pair in ind.normalized.split("/")[1:]:
            metric, _, value = pair.partition(":")
            legal = _CVSS_METRICS.get(metric)
            if legal is None:
                return f"unknown CVSS metric {metric}"
            if value not in legal:
                return f"CVSS metric {metric} value {value} outside legal set"
    return None


def _is_reserved_ip(value: str) -> bool:
    return any(value.startswith(p) for group in _RESERVED_V4 for p in group)


def _knowledge_evidence(ind: Indicator, knowledge) -> str | None:
    """doc_id of a supporting knowledge document, if one exists."""
    if knowledge is None:
        return None
    if ind.kind is IndicatorKind.MITRE_TECHNIQUE:
        doc = knowledge.lookup("attack_techniques", ind.normalized)
    elif ind.kind is IndicatorKind.CWE:
        doc = knowledge.lookup("cwe_weaknesses", ind.normalized)
    elif ind.kind is IndicatorKind.FILE_HASH:
        doc = knowledge.lookup_hash(ind.normalized)
    else:
        doc = None
    return doc.doc_id if doc is not None else None


def _transcript_evidence(ind: Indicator, transcript) -> str | None:
    """Item id of a transcript entry containing the indicator, if any."""
    if transcript is None:
        return None
    needle = ind.normalized.lower()
    for item in transcript.items:
        if needle in item.content.lower():
            return item.item_id
    return None


def validate_indicator(indicator: Indicator, knowledge=None,
                       transcript=None) -> ValidatedIndicator:
    """Attach a provenance label.

    Range violations win over everything; reserved-range IPs are capped at
    ValidUnverified by design since they are weak evidence. May raise
    KnowledgeUnavailable if the store handle is closed; callers degrade to
    ValidUnverified and record that.
    """
    reason = _range_check(indicator)
    if reason is not None:
        return ValidatedIndicator(indicator, ProvenanceLabel.INVALID, reason=reason)

    if indicator.kind is IndicatorKind.IP_ADDRESS and _is_reserved_ip(indicator.normalized):
        return ValidatedIndicator(indicator, ProvenanceLabel.VALID_UNVERIFIED,
                                  reason="reserved range")

    ref = _knowledge_evidence(indicator, knowledge)
    if ref is None:
        ref = _transcript_evidence(indicator, transcript)
    if ref is not None:
        return ValidatedIndicator(indicator, ProvenanceLabel.VERIFIED, evidence_ref=ref)
    return ValidatedIndicator(indicator, ProvenanceLabel.VALID_UNVERIFIED)


def validate_all(text: str, knowledge=None, transcript=None) -> list[ValidatedIndicator]:
    return [validate_indicator(i, knowledge, transcript)
            for i in extract_indicators(text)]


# ---------------------------------------------------------------------------
# Annotation
# ---------------------------------------------------------------------------

_TAG = {
    ProvenanceLabel.VERIFIED: " [verified]",
    ProvenanceLabel.VALID_UNVERIFIED: " [unverified]",
    ProvenanceLabel.INVALID: " [invalid]",
}

_TAG_RE = re.compile(r" \[(?:verified|unverified|invalid)\]")


def annotate_response(text: str, validated: list[ValidatedIndicator]) -> str:
    """Suffix each indicator occurrence with its bracketed label tag.

    Non-indicator text is byte-identical to the input, so stripping the tags
    reproduces it exactly.
    """
    spans = []
    for v in validated:
        start, end = v.indicator.span
        if start < 0 or end > len(text) or text[start:end] != v.indicator.raw:
            raise SpanMismatch(
                f"span ({start}, {end}) does not match {v.indicator.raw!r}")
        spans.append((start, end, _TAG[v.label]))

    spans.sort()
    for (a_start, a_end, _), (b_start, _, _) in zip(spans, spans[1:]):
        if b_start < a_end:
            raise SpanMismatch(f"overlapping spans at {a_start} and {b_start}")

    out = text
    for start, end, tag in reversed(spans):
        out = out[:end] + tag + out[end:]
    return out


def strip_annotations(text: str) -> str:
    return _TAG_RE.sub("", text)
