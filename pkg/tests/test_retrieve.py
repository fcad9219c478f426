"""Retrieval tests: every stage checked against direct formula evaluation."""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from binhound.config import RetrievalConfig
from binhound.errors import DimensionMismatch, EmptyList, IndexNotBuilt, ScorerFailure
from binhound.kb import CollectionKind, KnowledgeDoc, KnowledgeStore
from binhound.retrieve import (
    Channel,
    Chunk,
    ContextBundle,
    Embedding,
    EvidenceSource,
    HashedTrigramEmbedder,
    Retriever,
    ScoredHit,
    chunk_text,
    cosine,
    jaccard_pair_scorer,
    mean_pool,
    rrf,
    tokenize,
    tokenize_with_spans,
)

ATK = CollectionKind.ATTACK_TECHNIQUES


def make_store(bodies: dict[str, str], kind=ATK) -> KnowledgeStore:
    store = KnowledgeStore()
    store.ingest_docs([
        KnowledgeDoc(doc_id=doc_id, collection=kind, key=doc_id,
                     title=doc_id, body=body)
        for doc_id, body in bodies.items()
    ])
    return store


def make_retriever(bodies: dict[str, str], **kw) -> Retriever:
    r = Retriever(make_store(bodies), **kw)
    r.build()
    return r


# ---------------------------------------------------------------------------
# Tokenization
# ---------------------------------------------------------------------------

class TestTokenize:
    def test_lowercase_split(self):
        assert tokenize("Reads the Windows registry!") == ["reads", "the", "windows", "registry"]

    def test_short_tokens_dropped(self):
        assert tokenize("a is of x2 go") == ["is", "of", "x2", "go"]

    def test_technique_id_survives_atomically(self):
        assert tokenize("maps to T1071 via HTTP") == ["maps", "to", "T1071", "via", "http"]

    def test_technique_id_case_canonical(self):
        assert tokenize("t1071") == tokenize("T1071") == ["T1071"]

    def test_subtechnique_stays_whole(self):
        assert tokenize("T1059.001 observed") == ["T1059.001", "observed"]

    def test_cve_and_hash_atomic(self):
        d = "d41d8cd98f00b204e9800998ecf8427e"
        assert tokenize(f"CVE-2021-44228 dropper {d}") == ["CVE-2021-44228", "dropper", d]

    def test_url_atomic(self):
        assert tokenize("fetch http://evil.example/gate.php now") == [
            "fetch", "http://evil.example/gate.php", "now"]

    def test_port_number_tokenizes_plainly(self):
        assert tokenize("listens on port 4444") == ["listens", "on", "port", "4444"]

    def test_spans_slice_source(self):
        text = "maps to T1071 via http"
        for token, start, end in tokenize_with_spans(text):
            if token == "T1071":
                assert text[start:end] == "T1071"

    def test_empty(self):
        assert tokenize("") == []


# ---------------------------------------------------------------------------
# Chunking
# ---------------------------------------------------------------------------

def expected_chunk_count(n: int, window: int, stride: int) -> int:
    return max(1, math.ceil((n - window) / stride) + 1)


class TestChunkText:
    def words(self, n: int) -> str:
        return " ".join(f"tok{i:04d}" for i in range(n))

    def test_1024_tokens_default_three_chunks(self):
        chunks = chunk_text(self.words(1024))
        assert len(chunks) == 3
        assert [c.seq for c in chunks] == [0, 1, 2]
        assert chunks[0].tokens[0] == "tok0000"
        assert chunks[1].tokens[0] == "tok0256"
        assert chunks[2].tokens[0] == "tok0512"

    def test_100_tokens_single_chunk(self):
        chunks = chunk_text(self.words(100))
        assert len(chunks) == 1
        assert len(chunks[0].tokens) == 100

    def test_empty_text_one_empty_chunk(self):
        chunks = chunk_text("")
        assert chunks == [Chunk(doc_id="", seq=0, tokens=(), char_span=(0, 0))]

    def test_stride_larger_than_window_rejected(self):
        with pytest.raises(ValueError):
            chunk_text(self.words(10), window=512, stride=600)

    def test_overlap_equals_window_minus_stride(self):
        chunks = chunk_text(self.words(700), window=512, stride=256)
        overlap = set(chunks[0].tokens) & set(chunks[1].tokens)
        assert len(overlap) == 512 - 256

    def test_every_token_covered(self):
        text = self.words(1300)
        chunks = chunk_text(text, window=512, stride=256)
        seen = set()
        for c in chunks:
            seen.update(c.tokens)
        assert seen == set(tokenize(text))

    @pytest.mark.parametrize("n", [1, 2, 255, 256, 257, 511, 512, 513, 767, 768, 769, 1024, 2000])
    def test_count_closed_form(self, n):
        assert len(chunk_text(self.words(n))) == expected_chunk_count(n, 512, 256)

    @given(st.integers(1, 600), st.integers(1, 64), st.integers(1, 64))
    @settings(max_examples=60)
    def test_count_closed_form_general(self, n, window_extra, stride):
        window = stride + window_extra  # keeps window >= stride
        chunks = chunk_text(self.words(n), window=window, stride=stride)
        assert len(chunks) == expected_chunk_count(n, window, stride)
        assert all(len(c.tokens) <= window for c in chunks)


# ---------------------------------------------------------------------------
# Embeddings and pooling
# ---------------------------------------------------------------------------

class TestEmbedder:
    def test_dimension_and_norm(self):
        emb = HashedTrigramEmbedder(768)(["process", "injection"])
        assert emb.vector.shape == (768,)
        assert emb.norm == pytest.approx(1.0, abs=1e-12)

    def test_deterministic(self):
        e = HashedTrigramEmbedder(768)
        a, b = e(["create", "remote", "thread"]), e(["create", "remote", "thread"])
        assert np.array_equal(a.vector, b.vector)

    def test_empty_tokens_zero_vector(self):
        emb = HashedTrigramEmbedder(768)([])
        assert emb.norm == 0.0

    def test_short_token_contributes(self):
        emb = HashedTrigramEmbedder(768)(["ab"])
        assert emb.norm > 0.0

    def test_embed_text_matches_manual_chunk_pool(self):
        e = HashedTrigramEmbedder(768)
        text = " ".join(f"word{i}" for i in range(900))
        manual = mean_pool([e(list(c.tokens)) for c in chunk_text(text, 512, 256)])
        auto = e.embed_text(text, 512, 256)
        np.testing.assert_allclose(auto.vector, manual.vector, atol=1e-12)


class TestMeanPool:
    def test_identity_on_singleton(self):
        v = Embedding.of(np.arange(5, dtype=float))
        out = mean_pool([v])
        np.testing.assert_allclose(out.vector, v.vector)

    def test_symmetry_gives_zero(self):
        v = Embedding.of(np.array([1.0, -2.0, 3.0]))
        neg = Embedding.of(-v.vector)
        out = mean_pool([v, neg])
        np.testing.assert_allclose(out.vector, np.zeros(3), atol=1e-15)
        assert out.norm == 0.0

    def test_matches_componentwise_oracle(self):
        rng = np.random.default_rng(7)
        vecs = [Embedding.of(rng.normal(size=16)) for _ in range(5)]
        out = mean_pool(vecs)
        for j in range(16):
            expected = sum(v.vector[j] for v in vecs) / 5
            assert out.vector[j] == pytest.approx(expected, abs=1e-9)

    def test_empty_raises(self):
        with pytest.raises(EmptyList):
            mean_pool([])

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            mean_pool([Embedding.of(np.zeros(3)), Embedding.of(np.zeros(4))])


# ---------------------------------------------------------------------------
# BM25
# ---------------------------------------------------------------------------

FIVE_DOCS = {
    "d1": "process injection via remote thread creation",
    "d2": "registry run key persistence at logon",
    "d3": "http beacon traffic to command server over http",
    "d4": "keylogging hook captures keystrokes",
    "d5": "thread injection writes payload into remote process memory",
}


def bm25_oracle(bodies: dict[str, str], query: list[str], k1=1.2, b=0.75):
    """Direct formula evaluation over every document."""
    docs = {d: tokenize(f"{d}\n{t}") for d, t in bodies.items()}
    n = len(docs)
    avg = sum(len(t) for t in docs.values()) / n
    df = Counter()
    for tokens in docs.values():
        df.update(set(tokens))
    scores = {}
    for doc_id, tokens in docs.items():
        tf = Counter(tokens)
        s = 0.0
        for term in query:
            if tf[term] == 0:
                continue
            idf = math.log((n - df[term] + 0.5) / (df[term] + 0.5) + 1.0)
            s += idf * tf[term] * (k1 + 1) / (tf[term] + k1 * (1 - b + b * len(tokens) / avg))
        if s > 0:
            scores[doc_id] = s
    return sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))


class TestBm25:
    def test_unique_term_ranks_first(self):
        r = make_retriever(FIVE_DOCS)
        hits = r.bm25_search(["keylogging"], ATK, 5)
        assert hits[0].doc_id == "d4"
        assert hits[0].rank == 1
        assert hits[0].channel is Channel.LEXICAL

    def test_matches_formula_oracle(self):
        r = make_retriever(FIVE_DOCS)
        for query in (["injection"], ["remote", "thread"], ["http"],
                      ["process", "registry"], ["payload", "memory", "http"]):
            hits = r.bm25_search(query, ATK, 10)
            expected = bm25_oracle(FIVE_DOCS, query)
            assert [h.doc_id for h in hits] == [d for d, _ in expected]
            for h, (_, s) in zip(hits, expected):
                assert h.score == pytest.approx(s, abs=1e-9)

    def test_unseen_terms_empty(self):
        r = make_retriever(FIVE_DOCS)
        assert r.bm25_search(["quantum", "teapot"], ATK, 5) == []

    def test_k_truncates(self):
        r = make_retriever(FIVE_DOCS)
        assert len(r.bm25_search(["injection", "http", "registry"], ATK, 2)) == 2

    def test_ranks_sequential(self):
        r = make_retriever(FIVE_DOCS)
        hits = r.bm25_search(["remote", "process", "http"], ATK, 10)
        assert [h.rank for h in hits] == list(range(1, len(hits) + 1))

    def test_query_before_build_raises(self):
        r = Retriever(make_store(FIVE_DOCS))
        with pytest.raises(IndexNotBuilt):
            r.bm25_search(["injection"], ATK, 5)

    def test_rebuild_after_store_change(self):
        store = make_store(FIVE_DOCS)
        r = Retriever(store)
        r.build()
        store.ingest_docs([KnowledgeDoc("d6", ATK, "d6", "d6", "quantum teapot doctrine")])
        hits = r.bm25_search(["quantum"], ATK, 5)
        assert [h.doc_id for h in hits] == ["d6"]


# ---------------------------------------------------------------------------
# Dense search
# ---------------------------------------------------------------------------

class TestDense:
    def test_identical_text_scores_one(self):
        r = make_retriever(FIVE_DOCS)
        vec = r.embedder.embed_text("d4\nkeylogging hook captures keystrokes")
        hits = r.dense_search(vec, ATK, 5)
        assert hits[0].doc_id == "d4"
        assert hits[0].score == pytest.approx(1.0, abs=1e-9)

    def test_matches_cosine_oracle(self):
        r = make_retriever(FIVE_DOCS)
        vec = r.embedder.embed_text("remote thread injection")
        hits = r.dense_search(vec, ATK, 10)
        oracle = []
        for doc_id, body in FIVE_DOCS.items():
            demb = r.embedder.embed_text(f"{doc_id}\n{body}")
            oracle.append((doc_id, cosine(vec, demb)))
        oracle.sort(key=lambda kv: (-kv[1], kv[0]))
        assert [h.doc_id for h in hits] == [d for d, _ in oracle]
        for h, (_, s) in zip(hits, oracle):
            assert h.score == pytest.approx(s, abs=1e-9)

    def test_orthogonal_scores_zero(self):
        r = make_retriever({"d1": "alpha"})
        dim = r.embedder.dim
        demb = r._index(ATK).embeddings["d1"]
        axis = int(np.argmax(np.abs(demb.vector)))
        q = np.zeros(dim)
        q[(axis + 1) % dim] = 1.0
        if demb.vector[(axis + 1) % dim] != 0.0:
            q[(axis + 2) % dim], q[(axis + 1) % dim] = 1.0, 0.0
        hits = r.dense_search(Embedding.of(q), ATK, 1)
        assert hits[0].score == pytest.approx(0.0, abs=1e-12)

    def test_channel_and_ranks(self):
        r = make_retriever(FIVE_DOCS)
        hits = r.dense_search(r.embedder.embed_text("registry"), ATK, 3)
        assert all(h.channel is Channel.DENSE for h in hits)
        assert [h.rank for h in hits] == [1, 2, 3]


# ---------------------------------------------------------------------------
# RRF
# ---------------------------------------------------------------------------

def hit(doc_id, rank, score=1.0, channel=Channel.LEXICAL):
    return ScoredHit(doc_id=doc_id, score=score, rank=rank, channel=channel)


class TestRrf:
    def test_rank_one_in_both_lists(self):
        fused = rrf([hit("a", 1)], [hit("a", 1, channel=Channel.DENSE)], 60)
        assert fused[0].doc_id == "a"
        assert fused[0].score == pytest.approx(2 / 61, abs=1e-12)

    def test_one_empty_list_preserves_order(self):
        a = [hit("x", 1, 5.0), hit("y", 2, 4.0), hit("z", 3, 1.0)]
        fused = rrf(a, [], 60)
        assert [h.doc_id for h in fused] == ["x", "y", "z"]

    def test_disjoint_better_rank_wins(self):
        fused = rrf([hit("a", 2)], [hit("b", 1, channel=Channel.DENSE)], 60)
        assert [h.doc_id for h in fused] == ["b", "a"]

    def test_equal_ranks_tie_break_doc_id(self):
        fused = rrf([hit("zed", 1)], [hit("abc", 1, channel=Channel.DENSE)], 60)
        assert [h.doc_id for h in fused] == ["abc", "zed"]

    def test_scores_sum_reciprocal_ranks(self):
        a = [hit("p", 1), hit("q", 2)]
        b = [hit("q", 1, channel=Channel.DENSE), hit("r", 2, channel=Channel.DENSE)]
        fused = {h.doc_id: h.score for h in rrf(a, b, 60)}
        assert fused["p"] == pytest.approx(1 / 61)
        assert fused["q"] == pytest.approx(1 / 62 + 1 / 61)
        assert fused["r"] == pytest.approx(1 / 62)

    def test_channel_is_fused(self):
        assert rrf([hit("a", 1)], [], 60)[0].channel is Channel.FUSED

    @given(st.integers(1, 20), st.integers(1, 20), st.integers(1, 19))
    def test_monotone_in_rank(self, rank_a, rank_b, better):
        """Improving a doc's rank in one list never lowers its fused score."""
        improved = min(rank_a, better)
        base = rrf([hit("d", rank_a)], [hit("d", rank_b, channel=Channel.DENSE)], 60)
        up = rrf([hit("d", improved)], [hit("d", rank_b, channel=Channel.DENSE)], 60)
        assert up[0].score >= base[0].score


# ---------------------------------------------------------------------------
# Rerank
# ---------------------------------------------------------------------------

class TestRerank:
    def test_identical_doc_first_with_one(self):
        r = make_retriever({"a": "alpha beta gamma", "b": "delta epsilon"})
        fused = rrf(r.bm25_search(["alpha"], ATK, 5),
                    r.dense_search(r.embedder.embed_text("a alpha beta gamma"), ATK, 5))
        ranked = r.rerank(tokenize("a\nalpha beta gamma"), fused, ATK)
        assert ranked[0].doc_id == "a"
        assert ranked[0].score == pytest.approx(1.0)

    def test_constant_scorer_preserves_input_order(self):
        r = make_retriever(FIVE_DOCS, pair_scorer=lambda q, t: 0.5)
        fused = [hit("d3", 1), hit("d1", 2), hit("d5", 3)]
        ranked = r.rerank(["anything"], fused, ATK)
        assert [h.doc_id for h in ranked] == ["d3", "d1", "d5"]
        assert all(h.channel is Channel.RERANKED for h in ranked)

    def test_matches_jaccard_oracle(self):
        r = make_retriever(FIVE_DOCS)
        query = tokenize("remote thread injection process")
        fused = [hit(d, i + 1) for i, d in enumerate(["d1", "d2", "d3", "d5"])]
        ranked = r.rerank(query, fused, ATK)
        oracle = []
        for i, d in enumerate(["d1", "d2", "d3", "d5"]):
            oracle.append((i, d, jaccard_pair_scorer(query, f"{d}\n{FIVE_DOCS[d]}")))
        oracle.sort(key=lambda t: (-t[2], t[0]))  # stable on ties by input position
        assert [h.doc_id for h in ranked] == [d for _, d, _ in oracle]
        for h, (_, _, s) in zip(ranked, oracle):
            assert h.score == pytest.approx(s, abs=1e-9)

    def test_scorer_failure_raises(self):
        def broken(q, t):
            raise RuntimeError("remote scorer down")
        r = make_retriever(FIVE_DOCS, pair_scorer=broken)
        with pytest.raises(ScorerFailure):
            r.rerank(["x"], [hit("d1", 1)], ATK)


# ---------------------------------------------------------------------------
# Hybrid retrieval
# ---------------------------------------------------------------------------

@dataclass
class FakeItem:
    item_id: str
    kind: str
    content: str


@dataclass
class FakeTranscript:
    items: list = field(default_factory=list)


class TestHybridRetrieve:
    def seeded(self):
        store = KnowledgeStore()
        store.ingest_docs([
            KnowledgeDoc("atk:T1071", ATK, "T1071", "Application Layer Protocol",
                         "C2 tunneled through standard protocols such as T1071 web traffic."),
            KnowledgeDoc("atk:T1055", ATK, "T1055", "Process Injection",
                         "Code injected into live processes."),
            KnowledgeDoc("api:connect", CollectionKind.WIN_API_BEHAVIOR, "connect",
                         "connect", "Opens an outbound connection for beaconing."),
        ])
        r = Retriever(store)
        r.build()
        return r

    def test_technique_query_surfaces_doc(self):
        bundle = self.seeded().hybrid_retrieve("T1071", collections=[ATK])
        assert any(e.ref == "atk:T1071" for e in bundle.evidence)
        assert bundle.collection_status["attack_techniques"] == "ok"

    def test_no_transcript_no_tool_evidence(self):
        bundle = self.seeded().hybrid_retrieve("process injection")
        assert all(e.source is EvidenceSource.KNOWLEDGE for e in bundle.evidence)

    def test_transcript_items_classified(self):
        t = FakeTranscript([
            FakeItem("dec:0", "code", "int main() { connect(sock); }"),
            FakeItem("sus:0", "security", "suspicious APIs: connect, send"),
            FakeItem("meta:0", "meta", "file size 4096"),
        ])
        bundle = self.seeded().hybrid_retrieve("beacon", transcript=t)
        sources = {e.ref: e.source for e in bundle.evidence}
        assert sources.get("dec:0") is EvidenceSource.CODE_EVIDENCE
        assert sources.get("sus:0") is EvidenceSource.SECURITY_EVIDENCE
        assert "meta:0" not in sources

    def test_transcript_evidence_full_confidence(self):
        t = FakeTranscript([FakeItem("dec:0", "code", "xor decode loop")])
        bundle = self.seeded().hybrid_retrieve("decode", transcript=t)
        item = next(e for e in bundle.evidence if e.ref == "dec:0")
        assert item.confidence == 1.0

    def test_exact_duplicate_collapsed(self):
        t = FakeTranscript([
            FakeItem("a:1", "code", "identical snippet"),
            FakeItem("a:2", "code", "identical snippet"),
        ])
        bundle = self.seeded().hybrid_retrieve("snippet", transcript=t)
        refs = [e.ref for e in bundle.evidence if e.excerpt == "identical snippet"]
        assert len(refs) == 1

    def test_near_duplicate_keeps_highest_confidence(self):
        r = self.seeded()
        # two transcript items whose text embeds nearly identically
        t = FakeTranscript([
            FakeItem("a:1", "code", "decode loop with xor key parameter value"),
            FakeItem("a:2", "code", "decode loop with xor key parameter values"),
        ])
        bundle = r.hybrid_retrieve("zzz unmatchable", transcript=t)
        code = [e for e in bundle.evidence if e.source is EvidenceSource.CODE_EVIDENCE]
        assert len(code) == 1

    def test_deterministic(self):
        r = self.seeded()
        t = FakeTranscript([FakeItem("dec:0", "code", "connect loop")])
        a = r.hybrid_retrieve("injection via connect", transcript=t)
        b = r.hybrid_retrieve("injection via connect", transcript=t)
        assert [(e.ref, e.confidence) for e in a.evidence] == \
               [(e.ref, e.confidence) for e in b.evidence]

    def test_confidence_floor_drops_weak_items(self):
        cfg = RetrievalConfig(confidence_floor_ratio=0.9)
        store = make_store({"strong": "alpha alpha alpha", "weak": "alpha beta gamma delta epsilon"})
        r = Retriever(store, config=cfg)
        r.build()
        bundle = r.hybrid_retrieve("alpha", collections=[ATK])
        assert all(e.confidence >= 0.9 * max(x.confidence for x in bundle.evidence)
                   for e in bundle.evidence)

    def test_partial_status_on_unbuilt_index(self):
        r = Retriever(make_store(FIVE_DOCS))
        bundle = r.hybrid_retrieve("injection", collections=[ATK])
        assert bundle.collection_status["attack_techniques"] == "index_not_built"
        assert bundle.evidence == []

    def test_rerank_degradation_recorded(self):
        calls = {"n": 0}

        def flaky(q, t):
            calls["n"] += 1
            raise RuntimeError("down")

        store = make_store(FIVE_DOCS)
        r = Retriever(store, pair_scorer=flaky)
        r.build()
        bundle = r.hybrid_retrieve("injection", collections=[ATK])
        assert bundle.collection_status["attack_techniques"].startswith("rerank_degraded")
        assert bundle.evidence  # fused order still served
