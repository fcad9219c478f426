"""Command-line front end.

Exit codes: 0 success, 1 domain error (bad input, missing file, failed
lookup), 2 usage error. `--json` switches human-readable output for the
same JSON bodies the HTTP service returns.
"""
from __future__ import annotations

import argparse
import json
import sys
import uuid
from pathlib import Path

from ..attrib import label_sample
from ..config import Config, DEFAULT_CONFIG
from ..corpus import (
    Augmentation,
    InstructionRecord,
    PipelineKind,
    annotate,
    backfill,
    export_jsonl,
    generate_record,
    load_jsonl,
    qa_validate,
    task_templates,
)
from ..engine import AnalysisRequest, AnalysisResponse
from ..engine.tools import run_static_chain
from ..errors import BinhoundError, UnsupportedFileType
from ..kb import CollectionKind, load_seed_store
from ..metrics import balance_report
from ..retrieve import Retriever
from .service import build_engine, response_envelope


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="binhound",
        description="Static malware triage, attribution, and corpus tooling")
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--state-dir", help="directory for persistent state")
    parser.add_argument("--json", action="store_true",
                        help="emit JSON to stdout")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="run the full pipeline on a sample")
    p.add_argument("file")
    p.add_argument("--query", default="")
    p.add_argument("--model")
    p.add_argument("--no-report", action="store_true")

    p = sub.add_parser("query", help="answer a question without a sample")
    p.add_argument("text")
    p.add_argument("--model")

    p = sub.add_parser("report", help="print a stored report")
    p.add_argument("id")
    p.add_argument("--format", choices=("json", "md"), default="json")

    p = sub.add_parser("kb", help="knowledge store maintenance")
    kb_sub = p.add_subparsers(dest="kb_command", required=True)
    q = kb_sub.add_parser("ingest", help="ingest a JSONL collection file")
    q.add_argument("file")
    q.add_argument("--kind", required=True,
                   choices=[k.value for k in CollectionKind])
    q = kb_sub.add_parser("get", help="look up one document")
    q.add_argument("kind", choices=[k.value for k in CollectionKind])
    q.add_argument("key")

    p = sub.add_parser("retrieve", help="retrieval index maintenance")
    r_sub = p.add_subparsers(dest="retrieve_command", required=True)
    r_sub.add_parser("build", help="build the index and print stats")

    p = sub.add_parser("corpus", help="instruction corpus tooling")
    c_sub = p.add_subparsers(dest="corpus_command", required=True)
    q = c_sub.add_parser("generate", help="generate records from samples")
    q.add_argument("--samples", required=True, help="directory of PE files")
    q.add_argument("--tasks", help="comma-separated task names (default all)")
    q.add_argument("--modes", default="base,cot,cove",
                   help="comma-separated augmentation modes to cycle")
    q.add_argument("--out", help="output JSONL path (default stdout)")
    q = c_sub.add_parser("qa", help="validate a record file")
    q.add_argument("records")
    q.add_argument("--targets", help="JSON file of task share targets")
    q = c_sub.add_parser("backfill", help="retry failed records")
    q.add_argument("records")
    q.add_argument("--samples", required=True, help="directory of PE files")
    q.add_argument("--out", help="output JSONL path (default stdout)")
    q.add_argument("--budget", type=int, default=2)
    q = c_sub.add_parser("export", help="export passing records")
    q.add_argument("records")
    q.add_argument("--out", help="output JSONL path (default stdout)")

    p = sub.add_parser("stats", help="dataset statistics")
    s_sub = p.add_subparsers(dest="stats_command", required=True)
    q = s_sub.add_parser("balance", help="category balance report")
    q.add_argument("labels_file", help="JSON list of (category, family) rows")

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host")
    p.add_argument("--port", type=int)

    return parser


def _load_config(args) -> Config:
    if args.config:
        return Config.load(args.config)
    return DEFAULT_CONFIG


def _reports_dir(args) -> Path:
    base = Path(args.state_dir) if args.state_dir else Path(
        DEFAULT_CONFIG.service.state_dir)
    path = base / "reports"
    path.mkdir(parents=True, exist_ok=True)
    return path


def _print_json(payload) -> None:
    print(json.dumps(payload, sort_keys=True, indent=2))


# ---------------------------------------------------------------------------
# Subcommand handlers
# ---------------------------------------------------------------------------

def _cmd_analyze(args, cfg: Config) -> int:
    data = Path(args.file).read_bytes()
    engine = build_engine(cfg, state_dir=args.state_dir)
    request = AnalysisRequest(query=args.query, sample=data,
                              model_id=args.model or cfg.engine.model_id,
                              want_report=not args.no_report)
    response = engine.analyze(request)
    request_id = uuid.uuid4().hex
    envelope = response_envelope(response, request_id, uuid.uuid4().hex,
                                 cfg.service.schema_version)
    (_reports_dir(args) / f"{request_id}.json").write_text(
        json.dumps(envelope, sort_keys=True), "utf-8")
    if args.json:
        _print_json(envelope)
    elif response.report is not None:
        print(response.report.to_markdown())
        print(f"\nreport id: {request_id}")
    else:
        print(response.answer)
    return 0


def _cmd_query(args, cfg: Config) -> int:
    engine = build_engine(cfg, state_dir=args.state_dir)
    request = AnalysisRequest(query=args.text,
                              model_id=args.model or cfg.engine.model_id)
    response = engine.analyze(request)
    if args.json:
        _print_json(response_envelope(response, uuid.uuid4().hex,
                                      uuid.uuid4().hex,
                                      cfg.service.schema_version))
    else:
        print(response.answer)
    return 0


def _cmd_report(args, cfg: Config) -> int:
    path = _reports_dir(args) / f"{args.id}.json"
    if not path.exists():
        print(f"error: no stored report with id {args.id!r}", file=sys.stderr)
        return 1
    envelope = json.loads(path.read_text("utf-8"))
    if args.format == "json":
        _print_json(envelope)
        return 0
    stripped = {k: v for k, v in envelope.items()
                if k not in ("request_id", "session_id", "schema_version")}
    response = AnalysisResponse.from_dict(stripped)
    if response.report is None:
        print("error: stored response has no structured report",
              file=sys.stderr)
        return 1
    print(response.report.to_markdown())
    return 0


def _cmd_kb(args, cfg: Config) -> int:
    store = load_seed_store(args.state_dir)
    if args.kb_command == "ingest":
        count = store.ingest_collection(args.file, args.kind)
        payload = {"ingested": count, "collection": args.kind,
                   "counts": store.counts()}
        _print_json(payload) if args.json else print(
            f"ingested {count} docs into {args.kind}")
        return 0
    doc = store.lookup(args.kind, args.key)
    if doc is None:
        print(f"error: no {args.kind} document for key {args.key!r}",
              file=sys.stderr)
        return 1
    _print_json(doc.to_dict()) if args.json else print(
        f"{doc.doc_id}: {doc.title}\n{doc.body}")
    return 0


def _cmd_retrieve(args, cfg: Config) -> int:
    store = load_seed_store(args.state_dir)
    retriever = Retriever(store, config=cfg.retrieval)
    retriever.build()
    payload = {"built": retriever.built, "collections": store.counts()}
    _print_json(payload) if args.json else print(
        "index built: " + ", ".join(f"{k}={v}"
                                    for k, v in sorted(store.counts().items())))
    return 0


def _sample_context(samples_dir: str, store, cfg: Config) -> dict:
    """Transcript and label for every PE file in a directory, by sha256.

    Non-PE files (notes, label sheets) are skipped with a warning instead
    of aborting the run.
    """
    context = {}
    for path in sorted(Path(samples_dir).iterdir()):
        if not path.is_file():
            continue
        try:
            transcript = run_static_chain(path.read_bytes(), knowledge=store,
                                          config=cfg.engine)
        except UnsupportedFileType:
            print(f"skipping {path.name}: not a PE file", file=sys.stderr)
            continue
        label = label_sample(transcript.sha256,
                             transcript.pe.imphash if transcript.pe else None,
                             {}, knowledge=store)
        context[transcript.sha256] = (transcript, label)
    if not context:
        raise BinhoundError(f"no sample files under {samples_dir!r}")
    return context


def _write_records(records, out: str | None) -> None:
    text = "\n".join(json.dumps(r.to_dict(), sort_keys=True)
                     for r in records)
    text = text + "\n" if text else ""
    if out:
        Path(out).write_text(text, "utf-8")
    else:
        sys.stdout.write(text)


def _cmd_corpus(args, cfg: Config) -> int:
    if args.corpus_command == "generate":
        store = load_seed_store(args.state_dir)
        tasks = tuple(t.strip() for t in args.tasks.split(",")) \
            if args.tasks else tuple(task_templates())
        unknown = set(tasks) - set(task_templates())
        if unknown:
            raise BinhoundError(f"unknown tasks: {sorted(unknown)}")
        modes = tuple(Augmentation(m.strip())
                      for m in args.modes.split(",") if m.strip())
        context = _sample_context(args.samples, store, cfg)
        units = [(sha, task) for sha in context for task in tasks]
        order = sorted(range(len(units)), key=lambda i: units[i])
        assignment = {}
        for position, index in enumerate(order):
            assignment[index] = modes[position % len(modes)]
        records = []
        for index, (sha, task) in enumerate(units):
            transcript, label = context[sha]
            records.append(generate_record(
                transcript, label, task, assignment[index],
                knowledge=store, config=cfg))
        report = qa_validate(records, labels_by_sample={
            sha: label for sha, (_, label) in context.items()}, config=cfg)
        records = annotate(records, report)
        _write_records(records, args.out)
        print(f"generated {len(records)} records "
              f"({report.passed} passed, {report.failed} failed)",
              file=sys.stderr)
        return 0

    records = load_jsonl(args.records)
    if args.corpus_command == "qa":
        targets = None
        if args.targets:
            targets = json.loads(Path(args.targets).read_text("utf-8"))
        report = qa_validate(records, expected_distribution=targets,
                             config=cfg)
        payload = {
            "records": len(records),
            "passed": report.passed,
            "failed": report.failed,
            "failures": [{"index": i, "reasons": list(reasons)}
                         for i, reasons in report.failures()],
            "balance_ok": report.balance_ok,
            "balance": report.balance,
        }
        if args.json:
            _print_json(payload)
        else:
            print(f"{report.passed}/{len(records)} passed, balance "
                  f"{'ok' if report.balance_ok else 'off target'}")
            for i, reasons in report.failures():
                print(f"  record {i}: {'; '.join(reasons)}")
        return 0

    if args.corpus_command == "backfill":
        store = load_seed_store(args.state_dir)
        context = _sample_context(args.samples, store, cfg)
        labels = {sha: label for sha, (_, label) in context.items()}

        def regen(record: InstructionRecord) -> InstructionRecord:
            transcript, label = context[record.sample_id]
            return generate_record(transcript, label, record.task_type,
                                   record.augmentation, knowledge=store,
                                   pipeline=record.pipeline, config=cfg)

        regenerators = {kind: regen for kind in PipelineKind}
        result = backfill(records, regenerators, labels_by_sample=labels,
                          config=cfg, budget=args.budget)
        _write_records(list(result.records), args.out)
        print(f"repaired corpus: {len(result.records)} records, "
              f"{len(result.excluded)} excluded", file=sys.stderr)
        for record, reasons in result.excluded:
            print(f"  excluded {record.sample_id[:12]}/{record.task_type}: "
                  f"{'; '.join(reasons)}", file=sys.stderr)
        return 0

    # export
    text = export_jsonl(records)
    if args.out:
        Path(args.out).write_text(text, "utf-8")
    else:
        sys.stdout.write(text)
    print(f"exported {len(text.splitlines())} passing records",
          file=sys.stderr)
    return 0


def _cmd_stats(args, cfg: Config) -> int:
    raw = json.loads(Path(args.labels_file).read_text("utf-8"))
    if isinstance(raw, dict):
        raw = raw.get("labels", [])
    pairs = []
    for row in raw:
        if isinstance(row, dict):
            pairs.append((row["category"], row["family"]))
        else:
            category, family = row
            pairs.append((category, family))
    rows = balance_report(pairs)
    if args.json:
        _print_json([{
            "category": r.category, "total_samples": r.total_samples,
            "family_count": r.family_count, "entropy": r.entropy,
            "evenness": r.evenness, "top_family_share": r.top_family_share,
        } for r in rows])
    else:
        print(f"{'category':<24}{'samples':>8}{'families':>10}"
              f"{'H':>8}{'J':>8}{'top%':>8}")
        for r in rows:
            evenness = f"{r.evenness:.3f}" if r.evenness is not None else "-"
            print(f"{r.category:<24}{r.total_samples:>8}{r.family_count:>10}"
                  f"{r.entropy + 0.0:>8.3f}{evenness:>8}"
                  f"{r.top_family_share:>8.1%}")
    return 0


def _cmd_serve(args, cfg: Config) -> int:
    from dataclasses import replace

    from .service import serve

    service_cfg = cfg.service
    if args.host:
        service_cfg = replace(service_cfg, host=args.host)
    if args.port:
        service_cfg = replace(service_cfg, port=args.port)
    cfg = replace(cfg, service=service_cfg)
    serve(cfg)
    return 0


_HANDLERS = {
    "analyze": _cmd_analyze,
    "query": _cmd_query,
    "report": _cmd_report,
    "kb": _cmd_kb,
    "retrieve": _cmd_retrieve,
    "corpus": _cmd_corpus,
    "stats": _cmd_stats,
    "serve": _cmd_serve,
}


def cli_dispatch(argv=None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse prints usage itself; 2 for usage errors, pass through
        # explicit --help (exit 0).
        return int(exc.code or 0)
    try:
        cfg = _load_config(args)
        return _HANDLERS[args.command](args, cfg)
    except BinhoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli_dispatch())


if __name__ == "__main__":
    main()
