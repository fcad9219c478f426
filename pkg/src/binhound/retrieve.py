"""Hybrid lexical-dense retrieval with rank fusion and evidence assembly.

Pipeline per collection: BM25 and exact cosine search run in parallel over
an immutable index snapshot, reciprocal-rank fusion merges the two lists, a
pluggable pair-scorer reranks the fused candidates, and the top-k survivors
become evidence items. Transcript-derived code and security evidence is
appended, then the bundle is deduplicated and low-confidence items dropped.
"""
from __future__ import annotations

import hashlib
import math
import re
import threading
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .config import RetrievalConfig, DEFAULT_CONFIG
from .errors import (
    DimensionMismatch,
    EmptyList,
    IndexNotBuilt,
    ScorerFailure,
)
from .ioc import extract_indicators, IndicatorKind
from .kb import CollectionKind, KnowledgeStore


class Channel(Enum):
    LEXICAL = "lexical"
    DENSE = "dense"
    FUSED = "fused"
    RERANKED = "reranked"


class EvidenceSource(Enum):
    KNOWLEDGE = "knowledge"
    CODE_EVIDENCE = "code_evidence"
    SECURITY_EVIDENCE = "security_evidence"


@dataclass(frozen=True)
class Chunk:
    doc_id: str
    seq: int
    tokens: tuple
    char_span: tuple


@dataclass(eq=False)
class Embedding:
    vector: np.ndarray
    norm: float

    @classmethod
    def of(cls, vector: np.ndarray) -> "Embedding":
        v = np.asarray(vector, dtype=np.float64)
        return cls(vector=v, norm=float(np.linalg.norm(v)))


@dataclass(frozen=True)
class ScoredHit:
    doc_id: str
    score: float
    rank: int
    channel: Channel


@dataclass(frozen=True)
class EvidenceItem:
    source: EvidenceSource
    ref: str                  # doc_id or transcript item id
    excerpt: str
    confidence: float


@dataclass
class ContextBundle:
    evidence: list
    collection_status: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# Tokenization and chunking
# ---------------------------------------------------------------------------

_WORD = re.compile(r"[a-z0-9]+")

# Indicator kinds whose matched span should stay one atomic token. Port is
# excluded: its span covers the cue word, which tokenizes fine on its own.
_ATOMIC_KINDS = frozenset(IndicatorKind) - {IndicatorKind.PORT}


def tokenize_with_spans(text: str) -> list[tuple]:
    """(token, start, end) triples; indicator spans stay atomic.

    Plain text is lowercased and split on non-alphanumerics, keeping tokens
    of length >= 2. Indicator-shaped substrings are emitted whole in their
    canonical form so identifiers like T1071 survive tokenization.
    """
    out = []

    def plain(segment: str, base: int) -> None:
        for m in _WORD.finditer(segment.lower()):
            if m.end() - m.start() >= 2:
                out.append((m.group(0), base + m.start(), base + m.end()))

    cursor = 0
    for ind in extract_indicators(text):
        if ind.kind not in _ATOMIC_KINDS:
            continue
        start, end = ind.span
        plain(text[cursor:start], cursor)
        out.append((ind.normalized, start, end))
        cursor = end
    plain(text[cursor:], cursor)
    return out


def tokenize(text: str) -> list[str]:
    return [t for t, _, _ in tokenize_with_spans(text)]


def chunk_text(text: str, window: int = 512, stride: int = 256,
               doc_id: str = "") -> list[Chunk]:
    """Sliding token windows covering the whole text.

    Chunk count is max(1, ceil((n - window) / stride) + 1) for n tokens;
    empty text yields one empty chunk.
    """
    if not (window >= stride >= 1):
        raise ValueError(f"need window >= stride >= 1, got {window}/{stride}")
    spans = tokenize_with_spans(text)
    n = len(spans)
    if n == 0:
        return [Chunk(doc_id=doc_id, seq=0, tokens=(), char_span=(0, 0))]
    count = max(1, math.ceil((n - window) / stride) + 1)
    chunks = []
    for seq in range(count):
        part = spans[seq * stride: seq * stride + window]
        chunks.append(Chunk(
            doc_id=doc_id,
            seq=seq,
            tokens=tuple(t for t, _, _ in part),
            char_span=(part[0][1], part[-1][2]),
        ))
    return chunks


# ---------------------------------------------------------------------------
# Embeddings
# ---------------------------------------------------------------------------

class HashedTrigramEmbedder:
    """Deterministic 768-dim embedder: hashed bag of character 3-grams.

    Each token contributes its character trigrams (the whole token when
    shorter than 3); grams hash into a fixed-size count vector which is then
    L2-normalized. No corpus state, so equal text always embeds equally.
    """

    def __init__(self, dim: int = 768):
        self.dim = dim

    @staticmethod
    def _grams(token: str):
        if len(token) < 3:
            yield token
        else:
            for i in range(len(token) - 2):
                yield token[i:i + 3]

    def __call__(self, tokens: list[str]) -> Embedding:
        counts = np.zeros(self.dim, dtype=np.float64)
        for token in tokens:
            for gram in self._grams(token):
                digest = hashlib.blake2b(gram.encode("utf-8"), digest_size=8).digest()
                counts[int.from_bytes(digest, "big") % self.dim] += 1.0
        norm = float(np.linalg.norm(counts))
        if norm > 0.0:
            counts /= norm
        return Embedding.of(counts)

    def embed_text(self, text: str, window: int = 512, stride: int = 256) -> Embedding:
        chunks = chunk_text(text, window, stride)
        return mean_pool([self(list(c.tokens)) for c in chunks])


def mean_pool(vectors: list[Embedding]) -> Embedding:
    """Component-wise arithmetic mean of a non-empty uniform list."""
    if not vectors:
        raise EmptyList("mean_pool of zero vectors")
    dim = vectors[0].vector.shape[0]
    for v in vectors[1:]:
        if v.vector.shape[0] != dim:
            raise DimensionMismatch(f"{v.vector.shape[0]} != {dim}")
    stacked = np.stack([v.vector for v in vectors])
    return Embedding.of(stacked.mean(axis=0))


def cosine(a: Embedding, b: Embedding) -> float:
    if a.norm == 0.0 or b.norm == 0.0:
        return 0.0
    return float(np.dot(a.vector, b.vector) / (a.norm * b.norm))


# ---------------------------------------------------------------------------
# Rank fusion
# ---------------------------------------------------------------------------

def _ranked(pairs: list[tuple], channel: Channel) -> list[ScoredHit]:
    """(doc_id, score) pairs -> hits sorted by score desc, doc_id asc."""
    ordered = sorted(pairs, key=lambda p: (-p[1], p[0]))
    return [ScoredHit(doc_id=d, score=s, rank=i + 1, channel=channel)
            for i, (d, s) in enumerate(ordered)]


def rrf(list_a: list[ScoredHit], list_b: list[ScoredHit],
        k_const: int = 60) -> list[ScoredHit]:
    """Reciprocal-rank fusion: score(d) = sum of 1/(k + rank) per list."""
    fused: dict[str, float] = defaultdict(float)
    for hits in (list_a, list_b):
        for h in hits:
            fused[h.doc_id] += 1.0 / (k_const + h.rank)
    return _ranked(list(fused.items()), Channel.FUSED)


def jaccard_pair_scorer(query_tokens: list[str], doc_text: str) -> float:
    """Default reranker: token-set Jaccard overlap."""
    q = set(query_tokens)
    d = set(tokenize(doc_text))
    if not q and not d:
        return 1.0
    if not q or not d:
        return 0.0
    return len(q & d) / len(q | d)


# ---------------------------------------------------------------------------
# Retriever
# ---------------------------------------------------------------------------

@dataclass
class _CollectionIndex:
    doc_ids: list
    texts: dict           # doc_id -> title + body text
    tf: dict              # doc_id -> Counter of tokens
    df: Counter
    doc_len: dict
    avg_len: float
    embeddings: dict      # doc_id -> Embedding


class Retriever:
    """Query front-end over immutable per-collection index snapshots.

    build() captures the store at its current generation; queries against a
    stale snapshot trigger a rebuild, so readers always see either the old
    or the new index, never a half-built one.
    """

    def __init__(self, store: KnowledgeStore, config: RetrievalConfig | None = None,
                 embedder=None, pair_scorer=None):
        self.store = store
        self.config = config or DEFAULT_CONFIG.retrieval
        self.embedder = embedder or HashedTrigramEmbedder(self.config.embed_dim)
        self.pair_scorer = pair_scorer or jaccard_pair_scorer
        self._lock = threading.Lock()
        self._snapshot: dict[CollectionKind, _CollectionIndex] | None = None
        self._snapshot_generation = -1

    # -- index lifecycle -----------------------------------------------------

    @property
    def built(self) -> bool:
        return self._snapshot_generation >= 0

    def build(self) -> None:
        generation = self.store.generation
        snapshot = {}
        for kind in CollectionKind:
            docs = self.store.docs(kind)
            tf, doc_len, texts, embeddings = {}, {}, {}, {}
            df: Counter = Counter()
            for doc in docs:
                text = f"{doc.title}\n{doc.body}"
                tokens = tokenize(text)
                tf[doc.doc_id] = Counter(tokens)
                doc_len[doc.doc_id] = len(tokens)
                df.update(set(tokens))
                texts[doc.doc_id] = text
                embeddings[doc.doc_id] = self.embedder.embed_text(
                    text, self.config.chunk_window, self.config.chunk_stride)
            n = len(docs)
            snapshot[kind] = _CollectionIndex(
                doc_ids=[d.doc_id for d in docs],
                texts=texts, tf=tf, df=df, doc_len=doc_len,
                avg_len=(sum(doc_len.values()) / n) if n else 0.0,
                embeddings=embeddings,
            )
        with self._lock:
            self._snapshot = snapshot
            self._snapshot_generation = generation

    def _index(self, kind) -> _CollectionIndex:
        if self._snapshot is None:
            raise IndexNotBuilt("call build() before querying")
        if self._snapshot_generation != self.store.generation:
            self.build()
        return self._snapshot[CollectionKind(kind) if not isinstance(kind, CollectionKind) else kind]

    # -- channels -------------------------------------------------------------

    def bm25_search(self, query_tokens: list[str], kind, k: int) -> list[ScoredHit]:
        """Okapi BM25 with k1/b from config; zero-score docs are omitted."""
        index = self._index(kind)
        n = len(index.doc_ids)
        if n == 0:
            return []
        k1, b = self.config.bm25_k1, self.config.bm25_b
        scores = []
        for doc_id in index.doc_ids:
            tf = index.tf[doc_id]
            dl = index.doc_len[doc_id]
            score = 0.0
            for term in query_tokens:
                f = tf.get(term, 0)
                if f == 0:
                    continue
                idf = math.log((n - index.df[term] + 0.5) / (index.df[term] + 0.5) + 1.0)
                denom = f + k1 * (1.0 - b + b * (dl / index.avg_len if index.avg_len else 0.0))
                score += idf * f * (k1 + 1.0) / denom
            if score > 0.0:
                scores.append((doc_id, score))
        hits = _ranked(scores, Channel.LEXICAL)[:k]
        return [ScoredHit(h.doc_id, h.score, i + 1, Channel.LEXICAL)
                for i, h in enumerate(hits)]

    def dense_search(self, query_vec: Embedding, kind, k: int) -> list[ScoredHit]:
        """Exact cosine scan; no score cutoff, weakly similar docs included."""
        index = self._index(kind)
        scores = [(doc_id, cosine(query_vec, emb))
                  for doc_id, emb in index.embeddings.items()]
        hits = _ranked(scores, Channel.DENSE)[:k]
        return [ScoredHit(h.doc_id, h.score, i + 1, Channel.DENSE)
                for i, h in enumerate(hits)]

    def rerank(self, query_tokens: list[str], hits: list[ScoredHit],
               kind) -> list[ScoredHit]:
        """Re-score fused hits with the pair scorer; stable on ties.

        Raises ScorerFailure when the pluggable scorer breaks; callers keep
        the fused order and record the degradation.
        """
        index = self._index(kind)
        scored = []
        for h in hits:
            try:
                s = float(self.pair_scorer(query_tokens, index.texts[h.doc_id]))
            except Exception as exc:
                raise ScorerFailure(str(exc)) from exc
            scored.append((h.doc_id, s))
        order = sorted(range(len(scored)), key=lambda i: -scored[i][1])
        return [ScoredHit(scored[i][0], scored[i][1], out_rank + 1, Channel.RERANKED)
                for out_rank, i in enumerate(order)]

    # -- full pipeline ----------------------------------------------------------

    def hybrid_retrieve(self, query: str, transcript=None, collections=None,
                        top_k: int | None = None) -> ContextBundle:
        """BM25 and dense in parallel, fuse, rerank, enrich, dedup, filter."""
        cfg = self.config
        top_k = top_k or cfg.top_k
        kinds = [CollectionKind(c) if not isinstance(c, CollectionKind) else c
                 for c in (collections if collections is not None else list(CollectionKind))]
        query_tokens = tokenize(query)
        query_vec = self.embedder.embed_text(query, cfg.chunk_window, cfg.chunk_stride)

        assembled: list[EvidenceItem] = []
        status: dict[str, str] = {}
        for kind in kinds:
            try:
                lexical = self.bm25_search(query_tokens, kind, top_k)
                dense = self.dense_search(query_vec, kind, top_k)
                fused = rrf(lexical, dense, cfg.rrf_k)
                try:
                    ranked = self.rerank(query_tokens, fused, kind)
                    status[kind.value] = "ok"
                except ScorerFailure as exc:
                    ranked = fused
                    status[kind.value] = f"rerank_degraded: {exc}"
                ranked = ranked[:top_k]
                top_score = max((h.score for h in ranked), default=0.0)
                index = self._index(kind)
                for h in ranked:
                    confidence = h.score / top_score if top_score > 0.0 else 1.0
                    assembled.append(EvidenceItem(
                        source=EvidenceSource.KNOWLEDGE,
                        ref=h.doc_id,
                        excerpt=index.texts[h.doc_id][:cfg.excerpt_chars],
                        confidence=confidence,
                    ))
            except IndexNotBuilt:
                status[kind.value] = "index_not_built"

        if transcript is not None:
            for item in transcript.items:
                source = {"code": EvidenceSource.CODE_EVIDENCE,
                          "security": EvidenceSource.SECURITY_EVIDENCE}.get(
                              getattr(item, "kind", None))
                if source is None:
                    continue
                assembled.append(EvidenceItem(
                    source=source,
                    ref=item.item_id,
                    excerpt=item.content[:cfg.excerpt_chars],
                    confidence=1.0,
                ))

        deduped = self._dedup(assembled)
        if deduped:
            floor = cfg.confidence_floor_ratio * max(e.confidence for e in deduped)
            deduped = [e for e in deduped if e.confidence >= floor]
        return ContextBundle(evidence=deduped, collection_status=status)

    def _dedup(self, items: list[EvidenceItem]) -> list[EvidenceItem]:
        """Exact then near-duplicate removal, keeping each group's best.

        Survivor selection scans in confidence-descending order so the
        highest-confidence member of any duplicate group always remains;
        output preserves assembly order.
        """
        best_for_text: dict[str, int] = {}
        for i, item in enumerate(items):
            key = " ".join(item.excerpt.casefold().split())
            if key not in best_for_text or item.confidence > items[best_for_text[key]].confidence:
                best_for_text[key] = i
        exact_kept = sorted(best_for_text.values())

        order = sorted(exact_kept, key=lambda i: (-items[i].confidence, i))
        kept: list[int] = []
        kept_vecs: list[Embedding] = []
        for i in order:
            vec = self.embedder.embed_text(items[i].excerpt)
            if any(cosine(vec, kv) >= self.config.dedup_cosine for kv in kept_vecs):
                continue
            kept.append(i)
            kept_vecs.append(vec)
        return [items[i] for i in sorted(kept)]
