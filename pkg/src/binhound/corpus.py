"""Instruction-corpus generation: role-staged drafting, augmentation, QA.

Records are built in three stages. A planning pass turns the static
transcript into an explicit analysis protocol, a drafting pass runs the
configured generator against that protocol, and an audit pass checks the
draft against the protocol and the ground-truth label, repairing gaps.
Finished records flow through per-record QA, corpus-level balance checks,
backfill for transient failures, and a difficulty-sorted JSONL export.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, replace
from enum import Enum
from functools import lru_cache
from importlib import resources
from pathlib import Path

from .attrib import FamilyLabel, label_sample
from .config import Config, DEFAULT_CONFIG, PROMPT_DIFFICULTY_WEIGHTS
from .errors import TooFewRecords
from .gate import detect_refusal, gate, score_dimensions, weighted_quality
from .ioc import ProvenanceLabel, extract_indicators, validate_all
from .metrics import DifficultyInput, Tier, difficulty_score
from .retrieve import ContextBundle
from .engine.generator import TemplateGenerator, format_prompt, normalize_query
from .engine.tools import run_static_chain
from .engine.types import Transcript


class Augmentation(Enum):
    BASE = "base"
    COT = "cot"
    COVE = "cove"


class PipelineKind(Enum):
    TEMPLATE_FILLING = "template_filling"
    ARCHITECT_ANALYST_JUDGE = "architect_analyst_judge"


@dataclass(frozen=True)
class QaStatus:
    passed: bool
    reasons: tuple = ()

    @classmethod
    def ok(cls) -> "QaStatus":
        return cls(passed=True)

    @classmethod
    def fail(cls, *reasons: str) -> "QaStatus":
        return cls(passed=False, reasons=tuple(reasons))


@dataclass(frozen=True)
class RolePlan:
    """Analysis protocol: what to extract, what to watch for, how to reason."""
    features_to_extract: tuple
    edge_cases: tuple
    reasoning_steps: tuple

    def __post_init__(self):
        if not self.reasoning_steps:
            raise ValueError("a plan needs at least one reasoning step")


@dataclass(frozen=True)
class InstructionRecord:
    system: str
    user: str
    assistant: str
    task_type: str
    difficulty_tier: Tier
    augmentation: Augmentation
    pipeline: PipelineKind
    sample_id: str
    qa_status: QaStatus

    def to_dict(self) -> dict:
        return {
            "system": self.system,
            "user": self.user,
            "assistant": self.assistant,
            "task_type": self.task_type,
            "difficulty_tier": self.difficulty_tier.value,
            "augmentation": self.augmentation.value,
            "pipeline": self.pipeline.value,
            "sample_id": self.sample_id,
            "qa_status": {"passed": self.qa_status.passed,
                          "reasons": list(self.qa_status.reasons)},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "InstructionRecord":
        return cls(
            system=d["system"], user=d["user"], assistant=d["assistant"],
            task_type=d["task_type"],
            difficulty_tier=Tier(d["difficulty_tier"]),
            augmentation=Augmentation(d["augmentation"]),
            pipeline=PipelineKind(d["pipeline"]),
            sample_id=d["sample_id"],
            qa_status=QaStatus(passed=d["qa_status"]["passed"],
                               reasons=tuple(d["qa_status"]["reasons"])),
        )


@lru_cache(maxsize=1)
def _templates() -> dict:
    raw = (resources.files("binhound") / "data" / "task_templates.json")
    return {entry["task"]: entry for entry in json.loads(raw.read_text("utf-8"))}


def task_templates() -> dict:
    """Per-task prompt templates keyed by task name."""
    return dict(_templates())


def task_shares() -> dict:
    """Target corpus share per task type, as fractions summing to ~1."""
    return {task: entry["share_pct"] / 100.0
            for task, entry in _templates().items()}


# ---------------------------------------------------------------------------
# Role stages
# ---------------------------------------------------------------------------

def architect_plan(transcript: Transcript, label: FamilyLabel,
                   task_type: str) -> RolePlan:
    """Planning stage: derive the analysis protocol from the transcript."""
    template = _templates().get(task_type)
    if template is None:
        raise ValueError(f"unknown task type: {task_type}")

    features = ["file structure, architecture, and entry metadata"]
    if transcript.pe is not None:
        features.append(
            f"import table ({sum(len(e.functions) for e in transcript.pe.imports)}"
            " functions)")
    if transcript.capability_matches:
        features.append("capability rule matches: " + ", ".join(
            m.rule for m in transcript.capability_matches))
    if transcript.suspicious_apis:
        features.append("risk-annotated API imports")
    if transcript.cfg_summary or transcript.fcg_summary:
        features.append("control-flow and call-graph shape estimates")

    edge_cases = []
    if transcript.pe is not None:
        packed = [s for s in transcript.pe.sections if s.entropy > 7.0]
        if packed:
            edge_cases.append("possible packing: high-entropy section "
                              + ", ".join(s.name for s in packed))
    if transcript.decompiled_c is None:
        edge_cases.append("decompiler output unavailable; rely on assembly "
                          "and imports")
    if label.category == "unknown":
        edge_cases.append("no authoritative family label; avoid overclaiming "
                          "attribution")
    if not edge_cases:
        edge_cases.append("none identified; standard triage assumptions hold")

    return RolePlan(features_to_extract=tuple(features),
                    edge_cases=tuple(edge_cases),
                    reasoning_steps=tuple(template["steps"]))


def analyst_prompt(transcript: Transcript, task_type: str, plan: RolePlan,
                   bundle: ContextBundle | None = None,
                   config: Config | None = None) -> str:
    """Drafting-stage prompt: the task question plus the protocol to follow."""
    cfg = config or DEFAULT_CONFIG
    template = _templates()[task_type]
    sha = (transcript.sha256 or "")[:12] or "the attached sample"
    question = template["user"].format(sha=sha)
    protocol = "; ".join(plan.reasoning_steps)
    query = f"{question} Follow this protocol: {protocol}."
    return format_prompt(normalize_query(query),
                         bundle or ContextBundle(evidence=[]),
                         transcript, task=task_type, config=cfg.engine)


_CLASSIFICATION_LINE = re.compile(
    r"Classification:\s*(?P<family>[A-Za-z0-9_.-]+)\s*\((?P<category>[a-z][a-z ]*)\)")


def judge_refine(r_raw: str, plan: RolePlan, label: FamilyLabel,
                 task_type: str) -> str:
    """Audit stage: compare the draft against the protocol and ground truth.

    Appends a review that confirms or flags each protocol step (matched by
    its leading keyword) and pins the authoritative classification line so
    downstream label checks have a single place to look.
    """
    body = r_raw.rstrip()
    lines = [body, "", "Judge review:"]
    draft = body.casefold()
    for step in plan.reasoning_steps:
        keyword = step.split()[0].casefold()
        if keyword in draft:
            lines.append(f"- Protocol step covered: {step}.")
        else:
            lines.append(f"- Protocol gap noted, draft did not address: {step}.")
    for edge in plan.edge_cases:
        lines.append(f"- Edge case considered: {edge}.")
    lines.append(f"Classification: {label.family} ({label.category}). "
                 f"Attribution source: {label.source.value}, "
                 f"confidence {label.confidence}.")
    return "\n".join(lines)


def with_cot(text: str, plan: RolePlan) -> str:
    """Prefix an explicit step decomposition onto a finished response."""
    lines = ["Reasoning plan:"]
    lines += [f"Step {i}: {step}." for i, step in enumerate(plan.reasoning_steps, 1)]
    return "\n".join(lines) + "\n\n" + text


def with_cove(text: str, transcript: Transcript | None = None,
              knowledge=None) -> str:
    """Append a verification pass over the response's own indicators.

    Only indicators already present in the body are re-examined, and only
    those that survive validation are quoted, so the verification section
    never introduces a claim the body did not make.
    """
    validated = validate_all(text, knowledge=knowledge, transcript=transcript)
    body_indicators = {i.normalized for i in extract_indicators(text)}
    usable = []
    seen = set()
    for v in validated:
        if v.label is ProvenanceLabel.INVALID:
            continue
        if v.indicator.normalized in seen:
            continue
        seen.add(v.indicator.normalized)
        usable.append(v)

    lines = [text, "", "Verification:"]
    if usable:
        for v in usable[:8]:
            basis = v.evidence_ref or "format and range checks"
            # Quoting a reference id must not smuggle in an indicator the
            # body never claimed.
            if {i.normalized for i in extract_indicators(basis)} - body_indicators:
                basis = "knowledge-store corroboration"
            lines.append(f"Q: Is {v.indicator.normalized} supported by the "
                         f"evidence? A: Yes, {v.label.value} via {basis}.")
    else:
        lines.append("Q: Were any machine-checkable indicators cited? "
                     "A: No, the response makes no indicator-level claims.")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Record generation
# ---------------------------------------------------------------------------

def record_difficulty(transcript: Transcript,
                      config: Config | None = None) -> Tier:
    """Difficulty from the sample-intrinsic signals the transcript carries."""
    cfg = config or DEFAULT_CONFIG
    techniques = {f.technique for f in transcript.suspicious_apis if f.technique}
    techniques |= {m.technique for m in transcript.capability_matches
                   if m.technique}
    imports = 0
    if transcript.pe is not None:
        imports = sum(len(e.functions) for e in transcript.pe.imports)
    inp = DifficultyInput(
        code_length_chars=len(transcript.decompiled_c or ""),
        import_count=imports,
        technique_count=len(techniques),
        family_rarity=0.0, severity=0.0, obfuscation_level=0.0)
    return difficulty_score(inp, weights=PROMPT_DIFFICULTY_WEIGHTS,
                            config=cfg.difficulty).tier


_REPROMPT_FEEDBACK = ("previous output was empty or a refusal; produce the "
                      "full analysis from the supplied evidence",)


def generate_record(transcript: Transcript, label: FamilyLabel, task_type: str,
                    mode: Augmentation, generator=None,
                    bundle: ContextBundle | None = None, knowledge=None,
                    pipeline: PipelineKind = PipelineKind.ARCHITECT_ANALYST_JUDGE,
                    config: Config | None = None) -> InstructionRecord:
    """Produce one instruction record for (sample, task, mode).

    The drafting stage goes through the configured generator; an empty or
    refused draft earns one reprompt, after which the record is flagged
    Failed rather than silently repaired. The template-filling pipeline
    uses the deterministic renderer for the draft instead of the generator.
    """
    cfg = config or DEFAULT_CONFIG
    template = _templates().get(task_type)
    if template is None:
        raise ValueError(f"unknown task type: {task_type}")

    plan = architect_plan(transcript, label, task_type)
    prompt = analyst_prompt(transcript, task_type, plan, bundle, cfg)

    if pipeline is PipelineKind.TEMPLATE_FILLING:
        drafter = TemplateGenerator(cfg.engine.required_sections)
    else:
        drafter = generator or TemplateGenerator(cfg.engine.required_sections)

    r_raw = drafter.generate(prompt)
    failure = None
    if not r_raw.strip():
        failure = "empty output"
    elif detect_refusal(r_raw, cfg.gate.refusal_patterns):
        failure = "refusal"
    if failure is not None:
        r_raw = drafter.generate(prompt, feedback=_REPROMPT_FEEDBACK)
        if not r_raw.strip():
            failure = "empty output"
        elif detect_refusal(r_raw, cfg.gate.refusal_patterns):
            failure = "refusal"
        else:
            failure = None

    sha = (transcript.sha256 or "")[:12] or "the attached sample"
    system = template["system"]
    user = template["user"].format(sha=sha)
    tier = record_difficulty(transcript, cfg)

    if failure is not None:
        return InstructionRecord(
            system=system, user=user, assistant="",
            task_type=task_type, difficulty_tier=tier, augmentation=mode,
            pipeline=pipeline, sample_id=transcript.sha256 or "",
            qa_status=QaStatus.fail(failure))

    assistant = judge_refine(r_raw, plan, label, task_type)
    if mode is Augmentation.COT:
        assistant = with_cot(assistant, plan)
    elif mode is Augmentation.COVE:
        assistant = with_cove(assistant, transcript, knowledge)

    return InstructionRecord(
        system=system, user=user, assistant=assistant,
        task_type=task_type, difficulty_tier=tier, augmentation=mode,
        pipeline=pipeline, sample_id=transcript.sha256 or "",
        qa_status=QaStatus.ok())


def partition_augmentation(records) -> tuple:
    """Assign Base/CoT/CoVe round-robin over sample_id order.

    Accepts records or any items carrying sample_id (plain strings work).
    Returns assignments aligned with the input order; counts across the
    three modes differ by at most one.
    """
    if len(records) < 3:
        raise TooFewRecords(f"need at least 3 records, got {len(records)}")
    keyed = sorted(range(len(records)),
                   key=lambda i: (getattr(records[i], "sample_id", None)
                                  or str(records[i]), i))
    cycle = (Augmentation.BASE, Augmentation.COT, Augmentation.COVE)
    assignments: list = [None] * len(records)
    for position, index in enumerate(keyed):
        assignments[index] = cycle[position % 3]
    return tuple(assignments)


def generate_corpus(samples: list, tasks: tuple | None = None, generator=None,
                    knowledge=None, config: Config | None = None,
                    ground_truth: dict | None = None, cti=None,
                    imphash_table: dict | None = None,
                    pipeline: PipelineKind =
                    PipelineKind.ARCHITECT_ANALYST_JUDGE) -> list:
    """Run the full generation pass over raw PE samples.

    Each sample goes through the static chain and attribution once; every
    (sample, task) pair becomes one record, with augmentation modes dealt
    round-robin across the pairs.
    """
    cfg = config or DEFAULT_CONFIG
    tasks = tuple(tasks) if tasks is not None else tuple(_templates())
    prepared = []
    for sample in samples:
        transcript = run_static_chain(sample, knowledge=knowledge,
                                      config=cfg.engine)
        label = label_sample(transcript.sha256,
                             transcript.pe.imphash if transcript.pe else None,
                             ground_truth or {}, cti=cti,
                             imphash_table=imphash_table, knowledge=knowledge)
        prepared.append((transcript, label))

    units = [(transcript, label, task)
             for transcript, label in prepared for task in tasks]
    modes = partition_augmentation([t.sha256 or "" for t, _, _ in units])
    return [
        generate_record(transcript, label, task, mode, generator=generator,
                        knowledge=knowledge, pipeline=pipeline, config=cfg)
        for (transcript, label, task), mode in zip(units, modes)
    ]


# ---------------------------------------------------------------------------
# Quality assurance
# ---------------------------------------------------------------------------

_SHA256 = re.compile(r"[0-9a-f]{64}")


@dataclass(frozen=True)
class QaReport:
    statuses: tuple            # QaStatus per record, input order
    balance: dict              # task -> {"share", "target", "ok"}
    balance_ok: bool
    passed: int
    failed: int

    def failures(self) -> list:
        return [(i, s.reasons) for i, s in enumerate(self.statuses)
                if not s.passed]


def _check_record(record: InstructionRecord, labels_by_sample: dict | None,
                  config: Config) -> QaStatus:
    reasons = []

    # Format: schema and template adherence.
    if not record.system.strip():
        reasons.append("format: missing system text")
    if not record.user.strip():
        reasons.append("format: missing user text")
    if not record.assistant.strip():
        reasons.append("format: missing assistant text")
    if record.task_type not in _templates():
        reasons.append(f"format: unknown task type {record.task_type!r}")
    if not _SHA256.fullmatch(record.sample_id):
        reasons.append("format: sample_id is not a sha256 digest")
    if record.augmentation is Augmentation.COT and \
            "Reasoning plan:" not in record.assistant:
        reasons.append("format: cot record lacks the step decomposition")
    if record.augmentation is Augmentation.COVE and \
            "Verification:" not in record.assistant:
        reasons.append("format: cove record lacks the verification section")
    if detect_refusal(record.assistant, config.gate.refusal_patterns):
        reasons.append("format: assistant text is a refusal")

    # Content: completeness and length floors.
    words = len(record.assistant.split())
    if words < 30:
        reasons.append(f"content: assistant text too short ({words} words)")
    # The audit stage pins the authoritative line last; earlier mentions in
    # the draft body do not override it.
    match = None
    for match in _CLASSIFICATION_LINE.finditer(record.assistant):
        pass
    if match is None:
        reasons.append("content: missing classification statement")
    stripped = record.assistant.rstrip()
    if stripped and not stripped.endswith((".", "!", "?")):
        reasons.append("content: assistant text looks truncated")

    # Label: consistency with the attribution pipeline.
    if match is not None and labels_by_sample:
        expected = labels_by_sample.get(record.sample_id)
        if expected is not None:
            found = (match.group("family"), match.group("category").strip())
            want = (expected.family, expected.category)
            if found != want:
                reasons.append(
                    f"label: classification {found[0]} ({found[1]}) "
                    f"contradicts attribution {want[0]} ({want[1]})")

    # Quality: the gate's retry threshold as the floor.
    if record.assistant.strip():
        dims = score_dimensions(record.assistant, config=config.gate)
        sigma = weighted_quality(dims, config.gate.weights)
        if sigma < config.gate.tau_retry:
            reasons.append(f"quality: sigma {sigma:.3f} below "
                           f"{config.gate.tau_retry}")

    return QaStatus.ok() if not reasons else QaStatus.fail(*reasons)


def qa_validate(records: list, expected_distribution: dict | None = None,
                labels_by_sample: dict | None = None,
                config: Config | None = None,
                tolerance: float = 0.20) -> QaReport:
    """Per-record checks plus the corpus-level balance comparison.

    Balance compares each task's share against its target within a
    relative tolerance; targets default to the shipped distribution.
    """
    cfg = config or DEFAULT_CONFIG
    statuses = tuple(_check_record(r, labels_by_sample, cfg) for r in records)

    targets = expected_distribution if expected_distribution is not None \
        else task_shares()
    counts: dict[str, int] = {}
    for record in records:
        counts[record.task_type] = counts.get(record.task_type, 0) + 1
    total = len(records)
    balance = {}
    for task, target in sorted(targets.items()):
        share = counts.get(task, 0) / total if total else 0.0
        ok = abs(share - target) <= tolerance * target
        balance[task] = {"share": share, "target": target, "ok": ok}
    balance_ok = all(row["ok"] for row in balance.values())

    passed = sum(1 for s in statuses if s.passed)
    return QaReport(statuses=statuses, balance=balance, balance_ok=balance_ok,
                    passed=passed, failed=len(records) - passed)


def annotate(records: list, report: QaReport) -> list:
    """Stamp each record with its QA outcome."""
    return [replace(r, qa_status=s) for r, s in zip(records, report.statuses)]


# ---------------------------------------------------------------------------
# Backfill and export
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BackfillResult:
    records: tuple             # repaired corpus, passing records only
    excluded: tuple            # (record, reasons) still failing after retries


def backfill(records: list, regenerators: dict,
             labels_by_sample: dict | None = None,
             config: Config | None = None, budget: int = 2) -> BackfillResult:
    """Retry failed records through their originating pipeline stage.

    regenerators maps PipelineKind to a callable(record) -> record. Records
    that still fail per-record QA after the retry budget are excluded and
    listed. A fully passing corpus comes back unchanged.
    """
    cfg = config or DEFAULT_CONFIG
    repaired: list = []
    excluded: list = []
    for record in records:
        if record.qa_status.passed:
            repaired.append(record)
            continue
        regen = regenerators.get(record.pipeline)
        fixed = None
        last_reasons = record.qa_status.reasons
        for _ in range(budget):
            if regen is None:
                break
            candidate = regen(record)
            status = _check_record(candidate, labels_by_sample, cfg)
            candidate = replace(candidate, qa_status=status)
            if status.passed:
                fixed = candidate
                break
            last_reasons = status.reasons
        if fixed is not None:
            repaired.append(fixed)
        else:
            excluded.append((record, tuple(last_reasons)))
    return BackfillResult(records=tuple(repaired), excluded=tuple(excluded))


_TIER_ORDER = {Tier.BEGINNER: 0, Tier.INTERMEDIATE: 1, Tier.EXPERT: 2}


def export_jsonl(records: list, path: str | Path | None = None) -> str:
    """Difficulty-sorted JSONL of passing records; optionally written out."""
    rows = [r for r in records if r.qa_status.passed]
    rows.sort(key=lambda r: _TIER_ORDER[r.difficulty_tier])
    lines = [json.dumps(r.to_dict(), sort_keys=True) for r in rows]
    text = "\n".join(lines) + ("\n" if lines else "")
    if path is not None:
        Path(path).write_text(text, "utf-8")
    return text


def load_jsonl(path: str | Path) -> list:
    return [InstructionRecord.from_dict(json.loads(line))
            for line in Path(path).read_text("utf-8").splitlines() if line]
