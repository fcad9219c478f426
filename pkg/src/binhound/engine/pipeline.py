"""The analysis orchestrator: cache, static chain, retrieval, generation, gate.

One call to analyze() runs the whole flow. Responses are cached in a
bounded LRU keyed by (normalized query, sample digest, model id), with
concurrent identical requests collapsed into a single computation.
"""
from __future__ import annotations

import hashlib
import json
import os
import threading
from collections import OrderedDict
from concurrent.futures import Future
from dataclasses import replace
from pathlib import Path

from ..attrib import label_sample
from ..config import Config, DEFAULT_CONFIG
from ..errors import (
    AllToolsFailed,
    GeneratorUnavailable,
    MissingTranscript,
)
from ..gate import (
    Decision,
    QualityVerdict,
    detect_refusal,
    gate,
    score_dimensions,
    weighted_quality,
)
from ..ioc import ProvenanceLabel, validate_all
from ..retrieve import ContextBundle, Retriever
from .generator import TemplateGenerator, cache_key, format_prompt, normalize_query
from .report import assemble_report
from .router import match_specialist
from .types import AnalysisRequest, AnalysisResponse, EvidenceCitation, Transcript
from .tools import run_static_chain

_REFUSAL_FEEDBACK = ("previous answer was an unusable refusal; answer strictly "
                     "from the supplied evidence",)


class AnalysisEngine:
    """Thread-safe facade over the full analysis pipeline.

    All collaborators are injectable: generator, tool adapters, CTI client,
    ground-truth map, and imphash table default to offline deterministic
    implementations so analyze() is a pure function of its request.
    """

    def __init__(self, knowledge, generator=None, adapters=None,
                 config: Config | None = None, ground_truth: dict | None = None,
                 cti=None, imphash_table: dict | None = None):
        self.knowledge = knowledge
        self.config = config or DEFAULT_CONFIG
        self.generator = generator or TemplateGenerator(
            self.config.engine.required_sections)
        self.adapters = adapters
        self.ground_truth = ground_truth or {}
        self.cti = cti
        self.imphash_table = imphash_table or {}
        self.retriever = Retriever(knowledge, self.config.retrieval)
        self.retriever.build()
        self._fallback_renderer = TemplateGenerator(
            self.config.engine.required_sections)
        self._lock = threading.Lock()
        self._cache: OrderedDict[str, AnalysisResponse] = OrderedDict()
        self._inflight: dict[str, Future] = {}

    # -- cache ----------------------------------------------------------------

    def _cache_get(self, key: str) -> AnalysisResponse | None:
        with self._lock:
            if key in self._cache:
                self._cache.move_to_end(key)
                return self._cache[key]
        return self._disk_get(key)

    def _cache_put(self, key: str, response: AnalysisResponse) -> None:
        with self._lock:
            self._cache[key] = response
            self._cache.move_to_end(key)
            while len(self._cache) > self.config.engine.cache_size:
                self._cache.popitem(last=False)
        self._disk_put(key, response)

    def _disk_get(self, key: str) -> AnalysisResponse | None:
        cache_dir = self.config.engine.cache_dir
        if cache_dir is None:
            return None
        path = Path(cache_dir) / f"{key}.json"
        try:
            payload = json.loads(path.read_text("utf-8"))
        except (OSError, ValueError):
            return None
        try:
            return AnalysisResponse.from_dict(payload)
        except (KeyError, ValueError, TypeError):
            return None

    def _disk_put(self, key: str, response: AnalysisResponse) -> None:
        cache_dir = self.config.engine.cache_dir
        if cache_dir is None:
            return
        directory = Path(cache_dir)
        directory.mkdir(parents=True, exist_ok=True)
        tmp = directory / f".{key}.tmp"
        tmp.write_text(response.to_json(), "utf-8")
        os.replace(tmp, directory / f"{key}.json")

    # -- pipeline -------------------------------------------------------------

    def analyze(self, request: AnalysisRequest,
                on_stage=None) -> AnalysisResponse:
        """Run the pipeline, collapsing duplicate concurrent requests.

        on_stage, when given, is called with each completed stage name in
        pipeline order; cache hits and piggybacked duplicates skip the
        pipeline and therefore emit no stage events.
        """
        if request.sample is not None and \
                len(request.sample) > self.config.engine.sample_size_cap:
            raise ValueError(
                f"sample exceeds the {self.config.engine.sample_size_cap}-byte cap")

        nq = normalize_query(request.query)
        digest = hashlib.sha256(request.sample).hexdigest() \
            if request.sample is not None else None
        key = cache_key(nq.key, digest, request.model_id).key

        cached = self._cache_get(key)
        if cached is not None:
            return replace(cached, from_cache=True)

        with self._lock:
            future = self._inflight.get(key)
            owner = future is None
            if owner:
                future = Future()
                self._inflight[key] = future
        if not owner:
            return replace(future.result(), from_cache=True)

        try:
            response = self._analyze_uncached(request, nq, on_stage)
        except BaseException as exc:
            future.set_exception(exc)
            with self._lock:
                self._inflight.pop(key, None)
            raise
        self._cache_put(key, response)
        future.set_result(response)
        with self._lock:
            self._inflight.pop(key, None)
        return response

    def _analyze_uncached(self, request: AnalysisRequest, nq,
                          on_stage=None) -> AnalysisResponse:
        notes: list[str] = []
        fire = on_stage if on_stage is not None else lambda stage: None

        transcript: Transcript | None = None
        if request.sample is not None:
            try:
                transcript = run_static_chain(
                    request.sample, knowledge=self.knowledge,
                    adapters=self.adapters, config=self.config.engine)
            except AllToolsFailed as exc:
                notes.append(f"static_chain_failed: {exc}")
            fire("static_chain")

        retrieval_query = nq.display or self._transcript_query(transcript)
        bundle = self.retriever.hybrid_retrieve(retrieval_query, transcript=transcript)
        notes += [f"retrieval[{coll}]: {status}"
                  for coll, status in sorted(bundle.collection_status.items())
                  if status != "ok"]
        fire("retrieval")

        prompt = format_prompt(nq, bundle, transcript, config=self.config.engine)
        specialist = match_specialist(prompt)
        if specialist is not None:
            prompt = format_prompt(nq, bundle, transcript, task=specialist,
                                   config=self.config.engine)

        text, verdict, validated = self._generate_and_gate(
            prompt, nq, bundle, transcript, notes, on_stage=on_stage)
        fire("verification")

        label = None
        if transcript is not None and transcript.sha256 is not None:
            label = label_sample(
                transcript.sha256,
                transcript.pe.imphash if transcript.pe else None,
                self.ground_truth, cti=self.cti,
                imphash_table=self.imphash_table, knowledge=self.knowledge)
            notes += list(label.notes)

        report = None
        if transcript is not None and request.want_report:
            core = AnalysisResponse(answer=text,
                                    validated_indicators=tuple(validated))
            report = assemble_report(transcript, core, label)
            fire("report")

        citations = tuple(
            EvidenceCitation(source=e.source.value, ref=e.ref,
                             excerpt=e.excerpt, confidence=e.confidence)
            for e in bundle.evidence)
        return AnalysisResponse(
            answer=text,
            validated_indicators=tuple(validated),
            bundle_refs=citations,
            verdict=verdict,
            report=report,
            specialist=specialist,
            from_cache=False,
            notes=tuple(notes),
        )

    def _transcript_query(self, transcript: Transcript | None) -> str:
        """Retrieval query for sample-only requests, drawn from findings."""
        if transcript is None:
            return ""
        terms: list[str] = []
        for f in transcript.suspicious_apis:
            terms.append(f.name)
            if f.technique:
                terms.append(f.technique)
        for m in transcript.capability_matches:
            terms.append(m.rule.replace("-", " "))
            if m.technique:
                terms.append(m.technique)
        return " ".join(terms)

    def _generate_and_gate(self, prompt: str, nq, bundle: ContextBundle,
                           transcript: Transcript | None, notes: list,
                           on_stage=None):
        """Generate, verify, and route per the quality gate.

        The retry budget covers both refusal retries and gate-driven
        retries; once spent, anything short of acceptance renders from the
        validated template.
        """
        cfg = self.config
        budget = cfg.engine.retry_budget
        attempts = 0
        fire = on_stage if on_stage is not None else lambda stage: None

        try:
            text = self.generator.generate(prompt)
        except GeneratorUnavailable as exc:
            if not bundle.evidence and transcript is None:
                raise
            notes.append(f"generator_unavailable: {exc}")
            fire("generation")
            return self._fallback(nq, bundle, transcript, QualityVerdict(
                sigma=0.0, decision=Decision.TEMPLATE_FALLBACK,
                feedback=("generator_unavailable",)), notes)
        fire("generation")

        if detect_refusal(text, cfg.gate.refusal_patterns):
            notes.append("refusal_detected")
            if attempts < budget:
                attempts += 1
                text = self.generator.generate(prompt, feedback=_REFUSAL_FEEDBACK)
            if detect_refusal(text, cfg.gate.refusal_patterns):
                return self._fallback(nq, bundle, transcript, QualityVerdict(
                    sigma=0.0, decision=Decision.TEMPLATE_FALLBACK,
                    feedback=("refusal_detected",)), notes)

        validated, verdict = self._verify(text, bundle, transcript)
        if verdict.decision is Decision.RETRY_WITH_FEEDBACK and attempts < budget:
            attempts += 1
            feedback = verdict.feedback or ("quality below acceptance threshold",)
            retry_text = self.generator.generate(prompt, feedback=feedback)
            if not detect_refusal(retry_text, cfg.gate.refusal_patterns):
                retry_validated, retry_verdict = self._verify(
                    retry_text, bundle, transcript)
                if retry_verdict.decision is Decision.ACCEPT:
                    return retry_text, retry_verdict, retry_validated
                verdict = QualityVerdict(sigma=retry_verdict.sigma,
                                         decision=Decision.TEMPLATE_FALLBACK,
                                         feedback=retry_verdict.feedback)
            else:
                notes.append("refusal_detected")
                verdict = QualityVerdict(sigma=verdict.sigma,
                                         decision=Decision.TEMPLATE_FALLBACK,
                                         feedback=("refusal_detected",))

        if verdict.decision is Decision.ACCEPT:
            return text, verdict, validated
        if verdict.decision is Decision.RETRY_WITH_FEEDBACK:
            # Budget exhausted with quality still in the retry band.
            verdict = QualityVerdict(sigma=verdict.sigma,
                                     decision=Decision.TEMPLATE_FALLBACK,
                                     feedback=verdict.feedback)
        return self._fallback(nq, bundle, transcript, verdict, notes)

    def _verify(self, text: str, bundle: ContextBundle,
                transcript: Transcript | None):
        validated = validate_all(text, knowledge=self.knowledge,
                                 transcript=transcript)
        dims = score_dimensions(
            text, bundle=bundle, transcript=transcript,
            required_sections=self.config.engine.required_sections,
            config=self.config.gate)
        sigma = weighted_quality(dims, self.config.gate.weights)
        verdict = gate(sigma, dims=dims, config=self.config.gate)
        return validated, verdict

    def _fallback(self, nq, bundle: ContextBundle,
                  transcript: Transcript | None, verdict: QualityVerdict,
                  notes: list):
        """Render the evidence-only template answer.

        Evidence excerpts carrying any Invalid indicator are dropped before
        rendering, so fallback output never repeats a malformed indicator.
        """
        notes.append("template_fallback")
        clean = [e for e in bundle.evidence if not any(
            v.label is ProvenanceLabel.INVALID
            for v in validate_all(e.excerpt, knowledge=None, transcript=None))]
        clean_bundle = ContextBundle(evidence=clean,
                                     collection_status=bundle.collection_status)
        prompt = format_prompt(nq, clean_bundle, transcript,
                               config=self.config.engine)
        text = self._fallback_renderer.generate(prompt)
        validated = validate_all(text, knowledge=self.knowledge,
                                 transcript=transcript)
        return text, verdict, validated
