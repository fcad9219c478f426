"""Prompt assembly and response generation.

The prompt is a deterministic sectioned document; generators receive it as
plain text. The default TemplateGenerator renders analyst-style responses
purely from the prompt's evidence and transcript sections, so the whole
pipeline runs and tests without any model. An HTTP adapter speaks a
chat-completion wire format for real backends.
"""
from __future__ import annotations

import hashlib
import json
import re
import urllib.error
import urllib.request

from dataclasses import dataclass

from ..config import EngineConfig, DEFAULT_CONFIG
from ..errors import GeneratorUnavailable
from ..ioc import extract_indicators
from ..retrieve import ContextBundle
from .types import CacheKey, Transcript

_SECTION_MARK = "## "
_TECHNIQUE = re.compile(r"\bT\d{4}(?:\.\d{3})?\b")


@dataclass(frozen=True)
class NormalizedQuery:
    display: str   # trimmed, whitespace-collapsed, original casing
    key: str       # case-folded except indicator spans, for cache keying


def normalize_query(query: str) -> NormalizedQuery:
    """Collapse whitespace; case-fold for keying with indicators verbatim."""
    display = " ".join(query.split())
    spans = [ind.span for ind in extract_indicators(display)]
    parts = []
    cursor = 0
    for start, end in spans:
        parts.append(display[cursor:start].casefold())
        parts.append(display[start:end])
        cursor = end
    parts.append(display[cursor:].casefold())
    return NormalizedQuery(display=display, key="".join(parts))


def cache_key(query_key: str, sample_digest: str | None, model_id: str) -> CacheKey:
    """Digest over length-prefixed parts, so part boundaries cannot shift."""
    parts = (query_key.encode("utf-8"),
             b"-" if sample_digest is None else sample_digest.encode("ascii"),
             model_id.encode("utf-8"))
    h = hashlib.sha256()
    for part in parts:
        h.update(len(part).to_bytes(8, "big"))
        h.update(part)
    return CacheKey(key=h.hexdigest())


_PREAMBLE = (
    "You are a static malware analysis assistant. Ground every claim in the "
    "evidence provided below, cite evidence references, and never invent "
    "indicators, hashes, or technique identifiers."
)


def format_prompt(query: NormalizedQuery, bundle: ContextBundle,
                  transcript: Transcript | None = None,
                  task: str | None = None,
                  config: EngineConfig | None = None) -> str:
    """Assemble the sectioned prompt document.

    Evidence is budget-capped: when the whole document would exceed the
    configured token budget (approximated as whitespace words), evidence
    items are dropped lowest-confidence-first until it fits.
    """
    cfg = config or DEFAULT_CONFIG.engine

    def render(evidence) -> str:
        lines = [_SECTION_MARK + "role", _PREAMBLE, ""]
        lines += [_SECTION_MARK + "task", task or "general", ""]
        lines.append(_SECTION_MARK + "evidence")
        if evidence:
            for i, item in enumerate(evidence, 1):
                excerpt = " ".join(item.excerpt.split())
                lines.append(f"{i}. [{item.source.value} {item.ref} "
                             f"{item.confidence:.3f}] {excerpt}")
        else:
            lines.append("(no retrieved evidence)")
        lines.append("")
        lines.append(_SECTION_MARK + "transcript")
        if transcript is not None:
            for item in transcript.items:
                if item.item_id in ("code:decompiled", "asm:listing"):
                    continue  # bulky listings ride in as retrieval evidence
                lines.append(f"[{item.item_id}] " + " | ".join(item.content.splitlines()))
        else:
            lines.append("(no sample)")
        lines.append("")
        lines += [_SECTION_MARK + "query", query.display]
        return "\n".join(lines)

    evidence = list(bundle.evidence)
    doc = render(evidence)
    while evidence and len(doc.split()) > cfg.prompt_token_budget:
        weakest = min(range(len(evidence)), key=lambda i: (evidence[i].confidence, -i))
        evidence.pop(weakest)
        doc = render(evidence)
    return doc


def split_prompt(prompt: str) -> dict:
    """Parse a prompt document back into its sections."""
    sections: dict[str, list[str]] = {}
    current: list[str] | None = None
    for line in prompt.splitlines():
        if line.startswith(_SECTION_MARK):
            current = sections.setdefault(line[len(_SECTION_MARK):].strip(), [])
        elif current is not None:
            current.append(line)
    return {name: "\n".join(body).strip() for name, body in sections.items()}


_EVIDENCE_LINE = re.compile(
    r"^\d+\.\s+\[(?P<source>\S+)\s+(?P<ref>\S+)\s+(?P<conf>[\d.]+)\]\s+(?P<excerpt>.*)$")


class TemplateGenerator:
    """Deterministic analyst-response renderer over the prompt document.

    Every sentence it emits traces back to an evidence line, a transcript
    line, or the query itself; it cannot hallucinate because it has nothing
    to draw on but the prompt. Feedback from a retry pass switches on the
    expanded rendering, which quotes more evidence and adds the sections a
    short first pass skipped.
    """

    def __init__(self, sections: tuple | None = None):
        sections = tuple(sections) if sections is not None else \
            DEFAULT_CONFIG.engine.required_sections
        if len(sections) < 5:
            sections = sections + DEFAULT_CONFIG.engine.required_sections[len(sections):]
        self.sections = sections

    def generate(self, prompt: str, feedback: tuple = ()) -> str:
        parts = split_prompt(prompt)
        evidence = []
        for line in parts.get("evidence", "").splitlines():
            m = _EVIDENCE_LINE.match(line)
            if m:
                evidence.append(m.groupdict())
        transcript_lines = [l for l in parts.get("transcript", "").splitlines()
                            if l and not l.startswith("(")]
        query = parts.get("query", "").strip()
        task = parts.get("task", "general").strip()
        expanded = bool(feedback)

        out: list[str] = []
        out.append(self.sections[0])  # triage summary
        if transcript_lines:
            pe_line = next((l for l in transcript_lines if l.startswith("[pe:metadata]")), None)
            if pe_line:
                out.append("The sample parses as " + pe_line.split("] ", 1)[1] + ".")
            cap_line = next((l for l in transcript_lines if l.startswith("[caps:matches]")), None)
            if cap_line:
                rules = re.findall(r"(?:^|\| )([a-z0-9-]+) \(risk", cap_line.split("] ", 1)[1])
                if rules:
                    out.append("Capability rules matched: " + ", ".join(rules) + ".")
        else:
            out.append("No sample was provided, so this answer draws on retrieved "
                       "knowledge alone.")
        if task != "general":
            out.append(f"The question is treated as a {task} task, focusing the "
                       "findings below accordingly.")
        out.append("")

        out.append(self.sections[1])  # key findings
        shown = evidence if expanded else evidence[:5]
        if shown:
            for item in shown:
                out.append(f"- ({item['source']} {item['ref']}, confidence "
                           f"{item['conf']}) {item['excerpt']}")
        else:
            out.append("- No supporting evidence was retrieved for this question.")
        api_line = next((l for l in transcript_lines if l.startswith("[apis:suspicious]")), None)
        if api_line:
            apis = re.findall(r"(?:^|\| )(\w+) \(risk (\w+)", api_line.split("] ", 1)[1])
            risky = [f"{name} ({risk} risk)" for name, risk in apis if risk != "low"]
            if risky:
                out.append("- Risk-bearing imports observed: " + ", ".join(risky) + ".")
        out.append("")

        out.append(self.sections[2])  # technique mapping
        techniques = []
        for item in evidence:
            techniques += _TECHNIQUE.findall(item["excerpt"])
        for line in transcript_lines:
            techniques += _TECHNIQUE.findall(line)
        seen: list[str] = []
        for t in techniques:
            if t not in seen:
                seen.append(t)
        if seen:
            out.append("Observed behavior maps to " + ", ".join(seen[:8]) + ".")
        else:
            out.append("No ATT&CK technique is supported by the available evidence.")
        out.append("")

        out.append(self.sections[3])  # detection guidance
        guidance = [l.split("] ", 1)[1] for l in transcript_lines
                    if l.startswith("[caps:matches]")]
        if guidance:
            for cap in guidance[0].split(" | "):
                rule = cap.split(" (", 1)[0]
                out.append(f"- Monitor for the {rule} pattern and alert on its API "
                           "sequence from unsigned binaries.")
        else:
            out.append("- Standard triage hygiene applies: verify hashes against "
                       "intelligence feeds and review outbound connections.")
        out.append("")

        out.append(self.sections[4])  # assessment
        if transcript_lines:
            out.append("Static evidence above supports the capability and technique "
                       "claims; confidence follows the cited scores, and dynamic "
                       "confirmation in a sandbox would strengthen the verdict.")
        else:
            out.append(f"This answer addresses: {query}")
            out.append("It is grounded entirely in the cited knowledge entries; no "
                       "sample-specific claims are made without a binary to examine.")
        if expanded:
            out.append("Reviewed again after feedback: " + "; ".join(feedback) + ".")
        return "\n".join(out)


class HttpChatGenerator:
    """Chat-completion client for a real model endpoint.

    Sends {model, messages} and reads choices[0].message.content. Any
    transport or schema problem raises GeneratorUnavailable so the caller
    can fall back to the template path.
    """

    def __init__(self, endpoint: str, model_id: str, timeout_s: float = 60.0):
        self.endpoint = endpoint
        self.model_id = model_id
        self.timeout_s = timeout_s

    def generate(self, prompt: str, feedback: tuple = ()) -> str:
        messages = [{"role": "user", "content": prompt}]
        if feedback:
            messages.append({
                "role": "user",
                "content": "Revise: the previous draft failed quality checks: "
                           + "; ".join(feedback),
            })
        body = json.dumps({"model": self.model_id, "messages": messages}).encode("utf-8")
        req = urllib.request.Request(
            self.endpoint, data=body, headers={"Content-Type": "application/json"})
        try:
            with urllib.request.urlopen(req, timeout=self.timeout_s) as resp:
                payload = json.load(resp)
            return payload["choices"][0]["message"]["content"]
        except (urllib.error.URLError, OSError, ValueError, KeyError,
                IndexError, TypeError) as exc:
            raise GeneratorUnavailable(str(exc)) from exc
