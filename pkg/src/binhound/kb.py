"""Knowledge store for the four grounding collections.

Collections: ATT&CK techniques, CWE weaknesses, Windows API behavior notes,
and malware family intel. Documents arrive as line-delimited JSON, are keyed
by a case-folded canonical key, and persist to one append-compacted file per
collection with atomic rename so a crash never leaves a torn store.
"""
from __future__ import annotations

import json
import os
import re
import threading
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

from .errors import IoFailure, KnowledgeUnavailable, SchemaViolation

_HEX_TAG = re.compile(r"^hash:([0-9a-f]{32}|[0-9a-f]{40}|[0-9a-f]{64})$")


class CollectionKind(Enum):
    ATTACK_TECHNIQUES = "attack_techniques"
    CWE_WEAKNESSES = "cwe_weaknesses"
    WIN_API_BEHAVIOR = "win_api_behavior"
    FAMILY_INTEL = "family_intel"


@dataclass(frozen=True)
class KnowledgeDoc:
    doc_id: str
    collection: CollectionKind
    key: str
    title: str
    body: str
    tags: tuple = ()

    def to_dict(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "collection": self.collection.value,
            "key": self.key,
            "title": self.title,
            "body": self.body,
            "tags": list(self.tags),
        }


def _coerce_kind(kind) -> CollectionKind:
    if isinstance(kind, CollectionKind):
        return kind
    return CollectionKind(kind)


def _parse_line(obj: dict, default_kind: CollectionKind, line_no: int) -> KnowledgeDoc:
    for name in ("doc_id", "key", "title", "body"):
        value = obj.get(name)
        if not isinstance(value, str):
            raise SchemaViolation(line_no, name, "missing or non-string")
    if not obj["body"].strip():
        raise SchemaViolation(line_no, "body", "must be non-empty")
    collection = default_kind
    if "collection" in obj:
        try:
            collection = CollectionKind(obj["collection"])
        except ValueError:
            raise SchemaViolation(line_no, "collection", f"unknown collection {obj['collection']!r}")
        if collection is not default_kind:
            raise SchemaViolation(line_no, "collection",
                                  f"line says {collection.value}, ingesting into {default_kind.value}")
    tags = obj.get("tags", [])
    if not isinstance(tags, list) or not all(isinstance(t, str) for t in tags):
        raise SchemaViolation(line_no, "tags", "must be a list of strings")
    return KnowledgeDoc(
        doc_id=obj["doc_id"], collection=collection, key=obj["key"],
        title=obj["title"], body=obj["body"], tags=tuple(tags),
    )


class KnowledgeStore:
    """In-memory store with optional on-disk persistence.

    Readers always see a consistent snapshot: mutation builds a fresh dict
    and swaps the reference under the writer lock. The generation counter
    lets dependent indexes detect staleness.
    """

    def __init__(self, state_dir: str | Path | None = None):
        self._lock = threading.Lock()
        self._docs: dict[CollectionKind, dict[str, KnowledgeDoc]] = {
            kind: {} for kind in CollectionKind}
        self._hash_index: dict[str, str] = {}   # hex digest -> doc key
        self._generation = 0
        self._closed = False
        self._duplicate_warnings = 0
        self._state_dir = Path(state_dir) if state_dir is not None else None
        if self._state_dir is not None:
            self._state_dir.mkdir(parents=True, exist_ok=True)
            self._replay()

    # -- lifecycle ----------------------------------------------------------

    def close(self) -> None:
        self._closed = True

    def _check_open(self) -> None:
        if self._closed:
            raise KnowledgeUnavailable("store handle is closed")

    @property
    def generation(self) -> int:
        return self._generation

    @property
    def duplicate_warnings(self) -> int:
        return self._duplicate_warnings

    # -- ingestion ----------------------------------------------------------

    def ingest_collection(self, path: str | Path, kind) -> int:
        """Load a line-delimited JSON file into one collection.

        Duplicate (collection, key) pairs are replaced last-wins and counted
        as warnings. Returns the number of lines ingested.
        """
        self._check_open()
        kind = _coerce_kind(kind)
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise IoFailure(str(exc)) from exc

        docs = []
        for line_no, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaViolation(line_no, "<line>", f"not valid JSON: {exc.msg}")
            if not isinstance(obj, dict):
                raise SchemaViolation(line_no, "<line>", "not a JSON object")
            docs.append(_parse_line(obj, kind, line_no))

        with self._lock:
            self._check_open()
            table = dict(self._docs[kind])
            for doc in docs:
                fold = doc.key.casefold()
                if fold in table:
                    self._duplicate_warnings += 1
                table[fold] = doc
            fresh = dict(self._docs)
            fresh[kind] = table
            self._docs = fresh
            self._rebuild_hash_index()
            self._generation += 1
            if self._state_dir is not None:
                self._compact(kind)
        return len(docs)

    def ingest_docs(self, docs: list[KnowledgeDoc]) -> int:
        """Programmatic ingest used by seed loading and tests."""
        self._check_open()
        with self._lock:
            self._check_open()
            fresh = dict(self._docs)
            touched = set()
            for doc in docs:
                table = dict(fresh[doc.collection]) if doc.collection not in touched else fresh[doc.collection]
                if doc.collection not in touched:
                    fresh[doc.collection] = table
                    touched.add(doc.collection)
                fold = doc.key.casefold()
                if fold in table:
                    self._duplicate_warnings += 1
                table[fold] = doc
            self._docs = fresh
            self._rebuild_hash_index()
            self._generation += 1
            if self._state_dir is not None:
                for kind in touched:
                    self._compact(kind)
        return len(docs)

    # -- queries ------------------------------------------------------------

    def lookup(self, kind, key: str) -> KnowledgeDoc | None:
        """Exact match on the canonical key after case-fold."""
        self._check_open()
        return self._docs[_coerce_kind(kind)].get(key.casefold())

    def lookup_hash(self, digest: str) -> KnowledgeDoc | None:
        """Family-intel document carrying the given hash tag, if any."""
        self._check_open()
        key = self._hash_index.get(digest.lower())
        if key is None:
            return None
        return self._docs[CollectionKind.FAMILY_INTEL].get(key)

    def docs(self, kind) -> tuple:
        """Snapshot of one collection, ordered by case-folded key."""
        self._check_open()
        table = self._docs[_coerce_kind(kind)]
        return tuple(table[k] for k in sorted(table))

    def all_docs(self) -> tuple:
        self._check_open()
        return tuple(d for kind in CollectionKind for d in self.docs(kind))

    def counts(self) -> dict[str, int]:
        self._check_open()
        return {kind.value: len(self._docs[kind]) for kind in CollectionKind}

    # -- persistence --------------------------------------------------------

    def _path_for(self, kind: CollectionKind) -> Path:
        return self._state_dir / f"{kind.value}.jsonl"

    def _compact(self, kind: CollectionKind) -> None:
        """Rewrite one collection file and atomically swap it in."""
        path = self._path_for(kind)
        tmp = path.with_suffix(".jsonl.tmp")
        try:
            with tmp.open("w", encoding="utf-8") as fh:
                for fold in sorted(self._docs[kind]):
                    fh.write(json.dumps(self._docs[kind][fold].to_dict(),
                                        sort_keys=True) + "\n")
                fh.flush()
                os.fsync(fh.fileno())
            os.replace(tmp, path)
        except OSError as exc:
            raise IoFailure(str(exc)) from exc

    def _replay(self) -> None:
        for kind in CollectionKind:
            path = self._path_for(kind)
            if not path.exists():
                continue
            table = {}
            for line_no, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
                if not line.strip():
                    continue
                doc = _parse_line(json.loads(line), kind, line_no)
                table[doc.key.casefold()] = doc
            self._docs[kind] = table
        self._rebuild_hash_index()

    def _rebuild_hash_index(self) -> None:
        index = {}
        for fold, doc in self._docs[CollectionKind.FAMILY_INTEL].items():
            for tag in doc.tags:
                m = _HEX_TAG.match(tag.lower())
                if m:
                    index[m.group(1)] = fold
        self._hash_index = index


def load_seed_store(state_dir: str | Path | None = None) -> KnowledgeStore:
    """Store pre-populated with the packaged seed collections."""
    from importlib import resources

    store = KnowledgeStore(state_dir)
    data = resources.files("binhound") / "data"
    for kind in CollectionKind:
        fp = data / f"{kind.value}.jsonl"
        docs = []
        for line_no, line in enumerate(fp.read_text(encoding="utf-8").splitlines(), 1):
            if line.strip():
                docs.append(_parse_line(json.loads(line), kind, line_no))
        store.ingest_docs(docs)
    return store
