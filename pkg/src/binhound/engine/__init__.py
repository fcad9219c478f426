"""Analysis engine: static tool chain, prompt assembly, generation, reports."""
from .generator import (
    HttpChatGenerator,
    NormalizedQuery,
    TemplateGenerator,
    cache_key,
    format_prompt,
    normalize_query,
    split_prompt,
)
from .pipeline import AnalysisEngine
from .report import assemble_report, threat_level, verdict_flag
from .router import match_specialist, task_focus, task_types
from .tools import (
    CapabilityAdapter,
    DecompilerAdapter,
    DisassemblerAdapter,
    GraphSummarizerAdapter,
    SuspiciousApiAdapter,
    default_adapters,
    run_static_chain,
)
from .types import (
    AnalysisRequest,
    AnalysisResponse,
    ApiFinding,
    CacheKey,
    CapabilityMatch,
    EvidenceCitation,
    GraphSummary,
    StructuredReport,
    ThreatLevel,
    Transcript,
    TranscriptItem,
    VerdictFlag,
)

__all__ = [
    "AnalysisEngine",
    "AnalysisRequest",
    "AnalysisResponse",
    "ApiFinding",
    "CacheKey",
    "CapabilityAdapter",
    "CapabilityMatch",
    "DecompilerAdapter",
    "DisassemblerAdapter",
    "EvidenceCitation",
    "GraphSummary",
    "GraphSummarizerAdapter",
    "HttpChatGenerator",
    "NormalizedQuery",
    "StructuredReport",
    "SuspiciousApiAdapter",
    "TemplateGenerator",
    "ThreatLevel",
    "Transcript",
    "TranscriptItem",
    "VerdictFlag",
    "assemble_report",
    "cache_key",
    "default_adapters",
    "format_prompt",
    "match_specialist",
    "normalize_query",
    "run_static_chain",
    "split_prompt",
    "task_focus",
    "task_types",
    "threat_level",
    "verdict_flag",
]
