// Typed client for the binhound HTTP facade. Every shape here mirrors a
// server payload verbatim; the console never derives analysis data itself.

export type ProvenanceLabel = 'verified' | 'unverified' | 'invalid';

export interface ValidatedIndicator {
  kind: string;
  raw: string;
  normalized: string;
  span: [number, number];
  label: ProvenanceLabel;
  evidence_ref: string | null;
  reason: string | null;
}

export interface BundleRef {
  source: string;
  ref: string;
  excerpt: string;
  confidence: number;
}

export interface QualityVerdict {
  sigma: number;
  decision: string;
  feedback: string[];
}

export interface SuspiciousApi {
  name: string;
  risk: string;
  category: string;
  technique: string | null;
  note: string;
}

export interface ReportIndicator {
  kind: string;
  text: string;
  label: ProvenanceLabel;
  evidence_ref: string | null;
}

export interface StructuredReport {
  step1_file_triage: Record<string, unknown>;
  step2_code_behavior: {
    graphs: string;
    suspicious_apis: SuspiciousApi[];
    [key: string]: unknown;
  };
  step3_indicators: {
    indicators: ReportIndicator[];
    mitre_mapping: string[];
    api_patterns: string[];
    [key: string]: unknown;
  };
  step4_assessment: Record<string, unknown>;
  classification: { family: string; category: string };
  mitre_mappings: string[];
  detection_guidance: string;
  threat_level: string;
  verdict_flag: string;
}

export interface AnalysisEnvelope {
  answer: string;
  report: StructuredReport | null;
  validated_indicators: ValidatedIndicator[];
  bundle_refs: BundleRef[];
  verdict: QualityVerdict;
  specialist: string | null;
  notes: string[];
  from_cache: boolean;
  request_id: string;
  session_id: string;
  schema_version: string;
}

export interface SessionTurn {
  request: {
    query: string;
    sample_sha256: string | null;
    model_id: string;
    want_report: boolean;
  };
  response: Omit<AnalysisEnvelope, 'request_id' | 'session_id' | 'schema_version'>;
}

export interface SessionView {
  session_id: string;
  created_at: string;
  turns: SessionTurn[];
  schema_version: string;
}

export interface HealthView {
  status: string;
  stores: Record<string, boolean>;
  collections: Record<string, number>;
  schema_version: string;
  missing?: string[];
}

// Error bodies pass through verbatim: the panel shows exactly what the
// backend said, plus the status code.
export class ApiError extends Error {
  constructor(
    public readonly status: number,
    public readonly detail: string,
    public readonly requestId: string | null = null,
  ) {
    super(detail);
    this.name = 'ApiError';
  }
}

async function unwrap<T>(response: Response): Promise<T> {
  if (response.ok) {
    return (await response.json()) as T;
  }
  let detail = `HTTP ${response.status}`;
  let requestId: string | null = null;
  try {
    const body = await response.json();
    if (typeof body.detail === 'string') detail = body.detail;
    if (typeof body.request_id === 'string') requestId = body.request_id;
  } catch {
    // non-JSON error body: keep the status line
  }
  throw new ApiError(response.status, detail, requestId);
}

export class ApiClient {
  constructor(private readonly base: string = '') {}

  async analyze(
    sample: { name: string; data: Blob } | null,
    query: string,
    sessionId: string | null = null,
  ): Promise<AnalysisEnvelope> {
    const form = new FormData();
    if (sample) form.append('sample', sample.data, sample.name);
    form.append('query', query);
    if (sessionId) form.append('session_id', sessionId);
    const response = await fetch(`${this.base}/api/analyze`, {
      method: 'POST',
      body: form,
    });
    return unwrap<AnalysisEnvelope>(response);
  }

  async query(query: string, sessionId: string | null = null): Promise<AnalysisEnvelope> {
    const response = await fetch(`${this.base}/api/query`, {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify({ query, session_id: sessionId }),
    });
    return unwrap<AnalysisEnvelope>(response);
  }

  async session(sessionId: string): Promise<SessionView> {
    return unwrap<SessionView>(await fetch(`${this.base}/api/session/${sessionId}`));
  }

  async health(): Promise<HealthView> {
    return unwrap<HealthView>(await fetch(`${this.base}/api/health`));
  }

  streamUrl(requestId: string): string {
    return `${this.base}/api/stream/${requestId}`;
  }
}
