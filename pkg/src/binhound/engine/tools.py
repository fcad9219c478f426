"""Static tool chain: parse, decompile, disassemble, summarize, match.

Each tool is an adapter with a name and a run method. The chain isolates
adapters from each other: one failing or timing out marks its status flag
and leaves its transcript field empty, never aborting the whole chain.
The shipped decompiler and disassembler are deterministic renderers over
parsed PE structure, standing in for external reverse-engineering tools;
swapping in subprocess-backed implementations needs no pipeline changes.
"""
from __future__ import annotations

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from importlib import resources

from ..binscan import FileType, PeMetadata, detect_file_type, parse_pe
from ..config import EngineConfig, DEFAULT_CONFIG
from ..errors import AllToolsFailed, BinhoundError, UnsupportedFileType
from ..kb import CollectionKind
from .types import ApiFinding, CapabilityMatch, GraphSummary, Transcript


@dataclass(frozen=True)
class ToolContext:
    sample: bytes
    pe: PeMetadata | None
    knowledge: object | None


def _imported_functions(pe: PeMetadata) -> list[str]:
    return [f for entry in pe.imports for f in entry.functions]


class DecompilerAdapter:
    """Renders a C-like view of the import surface and section layout."""

    name = "decompiler"

    def run(self, ctx: ToolContext) -> str:
        pe = ctx.pe
        if pe is None:
            raise BinhoundError("no parsed PE to decompile")
        lines = ["/* reconstructed interface, not original source */"]
        for entry in pe.imports:
            lines.append(f"/* {entry.library} */")
            for func in entry.functions:
                lines.append(f"extern int {func}();")
        lines.append("")
        lines.append("int entry(void) {")
        for func in _imported_functions(pe)[:24]:
            lines.append(f"    {func}();")
        lines.append("    return 0;")
        lines.append("}")
        return "\n".join(lines)


class DisassemblerAdapter:
    """Emits an entry-stub listing plus the import thunk table."""

    name = "disassembler"

    def run(self, ctx: ToolContext) -> str:
        pe = ctx.pe
        if pe is None:
            raise BinhoundError("no parsed PE to disassemble")
        lines = [f"; entry point 0x{pe.entry_point:08X}"]
        for sec in pe.sections:
            lines.append(f"; section {sec.name} raw=0x{sec.raw_size:X} "
                         f"entropy={sec.entropy:.2f}")
        lines.append("start:")
        lines.append(f"    push ebp" if pe.architecture.value == "x86"
                     else "    sub rsp, 0x28")
        for func in _imported_functions(pe)[:16]:
            lines.append(f"    call [{func}]")
        lines.append("    ret")
        return "\n".join(lines)


# x86 "push ebp; mov ebp, esp" and x64 "sub rsp, imm8" prologue bytes.
_PROLOGUES_X86 = (b"\x55\x8b\xec",)
_PROLOGUES_X64 = (b"\x48\x83\xec", b"\x48\x89\x5c")
_CALL_OPCODE = 0xE8
_JCC_RANGE = range(0x70, 0x80)


def _count_overlapping(data: bytes, needle: bytes) -> int:
    count = start = 0
    while True:
        idx = data.find(needle, start)
        if idx < 0:
            return count
        count += 1
        start = idx + 1


class GraphSummarizerAdapter:
    """Estimates CFG/FCG shape from opcode frequencies in section bytes.

    A byte-level scan is a coarse stand-in for real graph recovery; counts
    are estimates and flagged as such in the transcript.
    """

    name = "graphs"

    def run(self, ctx: ToolContext) -> tuple:
        pe = ctx.pe
        if pe is None:
            raise BinhoundError("no parsed PE to summarize")
        data = ctx.sample
        calls = sum(1 for b in data if b == _CALL_OPCODE)
        branches = sum(1 for b in data if b in _JCC_RANGE)
        prologues = _PROLOGUES_X86 if pe.architecture.value == "x86" else _PROLOGUES_X64
        internal = max(1, sum(_count_overlapping(data, p) for p in prologues))
        imported = sum(len(e.functions) for e in pe.imports)

        cfg = GraphSummary(nodes=internal + branches, edges=branches * 2 + calls)
        hotspots = tuple(_imported_functions(pe)[:3])
        fcg = GraphSummary(nodes=internal + imported,
                           edges=max(calls, imported), hotspots=hotspots)
        return cfg, fcg


class SuspiciousApiAdapter:
    """Intersects imported names with the API-behavior knowledge collection."""

    name = "apis"

    def run(self, ctx: ToolContext) -> list:
        pe = ctx.pe
        if pe is None:
            raise BinhoundError("no parsed PE to match against")
        if ctx.knowledge is None:
            return []
        findings = []
        seen = set()
        for func in _imported_functions(pe):
            if func in seen:
                continue
            seen.add(func)
            doc = ctx.knowledge.lookup(CollectionKind.WIN_API_BEHAVIOR, func)
            if doc is None:
                continue
            tags = {t.split(":", 1)[0]: t.split(":", 1)[1]
                    for t in doc.tags if ":" in t}
            findings.append(ApiFinding(
                name=doc.key,
                risk=tags.get("risk", "low"),
                category=tags.get("category", "other"),
                technique=tags.get("technique"),
                note=doc.body,
            ))
        return findings


class CapabilityAdapter:
    """Applies shipped capability rules to the imported-function set."""

    name = "capabilities"

    def __init__(self, rules: list | None = None):
        if rules is None:
            raw = (resources.files("binhound") / "data" / "capability_rules.json")
            rules = json.loads(raw.read_text("utf-8"))
        self.rules = rules

    def run(self, ctx: ToolContext) -> list:
        pe = ctx.pe
        if pe is None:
            raise BinhoundError("no parsed PE to match against")
        present = {f.lower() for f in _imported_functions(pe)}
        matches = []
        for rule in self.rules:
            required = [r.lower() for r in rule["requires"]]
            if all(r in present for r in required):
                matches.append(CapabilityMatch(
                    rule=rule["rule"],
                    risk=rule["risk"],
                    technique=rule.get("technique"),
                    matched_apis=tuple(rule["requires"]),
                    description=rule["description"],
                    guidance=rule["guidance"],
                ))
        return matches


def default_adapters() -> tuple:
    return (DecompilerAdapter(), DisassemblerAdapter(), GraphSummarizerAdapter(),
            SuspiciousApiAdapter(), CapabilityAdapter())


def run_static_chain(sample: bytes, knowledge=None, adapters=None,
                     config: EngineConfig | None = None) -> Transcript:
    """Run every tool over one PE sample, isolating per-tool failures.

    The parse step runs first since everything downstream reads its output;
    the remaining adapters run in parallel worker threads, each bounded by
    the configured timeout. Raises UnsupportedFileType for non-PE input and
    AllToolsFailed when not a single tool produced output.
    """
    cfg = config or DEFAULT_CONFIG.engine
    if detect_file_type(sample) is not FileType.PE_EXECUTABLE:
        raise UnsupportedFileType("static chain only supports PE executables")
    if adapters is None:
        adapters = default_adapters()

    transcript = Transcript(sha256=hashlib.sha256(sample).hexdigest())
    try:
        transcript.pe = parse_pe(sample)
        transcript.tool_status["binscan"] = True
    except BinhoundError:
        transcript.tool_status["binscan"] = False

    ctx = ToolContext(sample=sample, pe=transcript.pe, knowledge=knowledge)
    results: dict[str, object] = {}
    with ThreadPoolExecutor(max_workers=max(1, len(adapters))) as pool:
        futures = {adapter.name: pool.submit(adapter.run, ctx) for adapter in adapters}
        for name, future in futures.items():
            try:
                results[name] = future.result(timeout=cfg.adapter_timeout_s)
                transcript.tool_status[name] = True
            except Exception:
                transcript.tool_status[name] = False

    if "decompiler" in results:
        transcript.decompiled_c = results["decompiler"]
    if "disassembler" in results:
        transcript.assembly = results["disassembler"]
    if "graphs" in results:
        transcript.cfg_summary, transcript.fcg_summary = results["graphs"]
    if "apis" in results:
        transcript.suspicious_apis = results["apis"]
    if "capabilities" in results:
        transcript.capability_matches = results["capabilities"]

    if not any(transcript.tool_status.values()):
        raise AllToolsFailed("every static-chain tool failed")
    return transcript
