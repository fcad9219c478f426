// Pure view: ViewState in, HTML string out. Rendering is the only place
// markup is produced, every interpolated value passes through escapeHtml
// (or a helper built on it), and nothing here computes analysis results;
// the view shows exactly what the facade returned.

import {
  ReportIndicator,
  StructuredReport,
  SuspiciousApi,
  ValidatedIndicator,
} from './api.js';
import { defangAnswer, escapeHtml, indicatorDisplay, renderMarkdown } from './format.js';
import { Turn, ViewState } from './state.js';

const STEP_TITLES: ReadonlyArray<[keyof StructuredReport, string]> = [
  ['step1_file_triage', 'Step 1: File Triage'],
  ['step2_code_behavior', 'Step 2: Code and Behavior'],
  ['step3_indicators', 'Step 3: Indicators'],
  ['step4_assessment', 'Step 4: Assessment'],
];

function scalar(value: unknown): string {
  if (value === null || value === undefined) return '';
  if (Array.isArray(value)) return value.map((v) => scalar(v)).join(', ');
  if (typeof value === 'object') {
    return Object.entries(value as Record<string, unknown>)
      .map(([k, v]) => `${k}: ${scalar(v)}`)
      .join('; ');
  }
  return String(value);
}

function definitionRows(data: Record<string, unknown>, skip: Set<string>): string {
  const rows = Object.entries(data)
    .filter(([key]) => !skip.has(key))
    .map(
      ([key, value]) =>
        `<dt>${escapeHtml(key)}</dt><dd>${escapeHtml(scalar(value))}</dd>`,
    );
  return `<dl>${rows.join('')}</dl>`;
}

function apiTable(apis: SuspiciousApi[]): string {
  if (!apis.length) return '';
  const rows = apis
    .map(
      (api) =>
        `<tr><td>${escapeHtml(api.name)}</td><td>${escapeHtml(api.risk)}</td>` +
        `<td>${escapeHtml(api.category)}</td>` +
        `<td>${escapeHtml(api.technique ?? '')}</td>` +
        `<td>${escapeHtml(api.note)}</td></tr>`,
    )
    .join('');
  return (
    '<table class="apis"><thead><tr><th>API</th><th>risk</th><th>category</th>' +
    `<th>technique</th><th>note</th></tr></thead><tbody>${rows}</tbody></table>`
  );
}

function indicatorRows(indicators: ReportIndicator[], defangOn: boolean): string {
  const rows = indicators
    .map(
      (ind) =>
        `<li><span class="badge ${escapeHtml(ind.label)}">${escapeHtml(ind.label)}</span> ` +
        `${escapeHtml(ind.kind)} <code>${escapeHtml(indicatorDisplay(ind.text, defangOn))}</code>` +
        (ind.evidence_ref ? ` <small>${escapeHtml(ind.evidence_ref)}</small>` : '') +
        '</li>',
    )
    .join('');
  return `<ul class="report-indicators">${rows}</ul>`;
}

function renderStep(
  key: keyof StructuredReport,
  title: string,
  report: StructuredReport,
  defangOn: boolean,
): string {
  let body: string;
  if (key === 'step2_code_behavior') {
    const step = report.step2_code_behavior;
    body =
      definitionRows(step, new Set(['suspicious_apis', 'graphs'])) +
      `<p class="graphs">${escapeHtml(step.graphs)}</p>` +
      apiTable(step.suspicious_apis);
  } else if (key === 'step3_indicators') {
    const step = report.step3_indicators;
    body =
      indicatorRows(step.indicators, defangOn) +
      `<p>MITRE mapping: ${escapeHtml(step.mitre_mapping.join(', '))}</p>` +
      (step.api_patterns.length
        ? `<p>API patterns: ${escapeHtml(step.api_patterns.join(', '))}</p>`
        : '');
  } else {
    body = definitionRows(report[key] as Record<string, unknown>, new Set());
  }
  return `<section class="step" data-step="${key}"><h3>${escapeHtml(title)}</h3>${body}</section>`;
}

function renderReport(turn: Turn, defangOn: boolean): string {
  const report = turn.envelope.report;
  if (!report) {
    return '<section id="report"><p class="muted">No structured report for this turn (query-only).</p></section>';
  }
  const steps = STEP_TITLES.map(([key, title]) =>
    renderStep(key, title, report, defangOn),
  ).join('');
  const summary =
    `<p class="classification">family <strong>${escapeHtml(report.classification.family)}</strong>, ` +
    `category <strong>${escapeHtml(report.classification.category)}</strong>, ` +
    `threat level <strong>${escapeHtml(report.threat_level)}</strong>, ` +
    `verdict <strong>${escapeHtml(report.verdict_flag)}</strong></p>`;
  const guidance = `<section class="step"><h3>Detection guidance</h3><p>${escapeHtml(report.detection_guidance)}</p></section>`;
  return `<section id="report">${summary}${steps}${guidance}</section>`;
}

function renderBadges(indicators: ValidatedIndicator[], state: ViewState): string {
  const visible = state.filter
    ? indicators.filter((ind) => ind.label === state.filter)
    : indicators;
  const badges = visible
    .map((ind) => {
      const title = [
        ind.kind,
        ind.evidence_ref ? `evidence ${ind.evidence_ref}` : null,
        ind.reason,
      ]
        .filter(Boolean)
        .join(' | ');
      return (
        `<span class="badge ${escapeHtml(ind.label)}" title="${escapeHtml(title)}">` +
        `${escapeHtml(indicatorDisplay(ind.normalized, state.defang))}</span>`
      );
    })
    .join(' ');
  const note = state.filter
    ? ` <small>(${visible.length} of ${indicators.length}, filter: ${escapeHtml(state.filter)})</small>`
    : ` <small>(${indicators.length})</small>`;
  return `<section id="indicators"><h3>Indicators${note}</h3><p>${badges || '<span class="muted">none</span>'}</p></section>`;
}

function renderTurn(turn: Turn, index: number, state: ViewState): string {
  const selected = state.selectedTurn === index ? ' selected' : '';
  const cached = turn.envelope.from_cache ? '<span class="chip">cached</span>' : '';
  const file = turn.fileName
    ? `<span class="chip file">${escapeHtml(turn.fileName)}</span>`
    : '';
  const answer = renderMarkdown(
    defangAnswer(turn.envelope.answer, turn.envelope.validated_indicators, state.defang),
  );
  return (
    `<article class="turn${selected}" data-turn="${index}">` +
    `<header>#${index + 1} ${file}${cached} <q>${escapeHtml(turn.query)}</q></header>` +
    `<div class="answer">${answer}</div></article>`
  );
}

function renderStages(state: ViewState): string {
  if (!state.inFlight && state.streamStatus === 'idle') return '';
  const ticks = state.stages
    .map((stage) => `<li class="done">${escapeHtml(stage)}</li>`)
    .join('');
  let tail = '';
  if (state.streamStatus === 'failed') {
    tail =
      `<p class="stream-error">stream lost: ${escapeHtml(state.streamDetail ?? '')} ` +
      '<button data-action="retry-stream">retry</button></p>';
  } else if (state.inFlight) {
    const label = state.pendingFile
      ? `analyzing ${escapeHtml(state.pendingFile)}`
      : 'working';
    tail = `<p class="busy">${label}&hellip;</p>`;
  }
  return `<section id="stages"><ol class="stages">${ticks}</ol>${tail}</section>`;
}

function renderError(state: ViewState): string {
  if (!state.error) return '';
  const requestLine = state.error.requestId
    ? `<small>request ${escapeHtml(state.error.requestId)}</small>`
    : '';
  return (
    `<section id="error" class="error-panel"><strong>HTTP ${state.error.status}</strong> ` +
    `<span class="detail">${escapeHtml(state.error.detail)}</span> ${requestLine}` +
    '<button data-action="dismiss-error">dismiss</button></section>'
  );
}

export function renderView(state: ViewState): string {
  const turns = state.turns
    .map((turn, index) => renderTurn(turn, index, state))
    .join('');
  const selected =
    state.selectedTurn !== null ? state.turns[state.selectedTurn] : undefined;
  const detail = selected
    ? renderReport(selected, state.defang) +
      renderBadges(selected.envelope.validated_indicators, state)
    : '';
  const session = state.sessionId
    ? `<p class="session">session <code>${escapeHtml(state.sessionId)}</code></p>`
    : '';
  return (
    renderError(state) +
    session +
    `<section id="turns">${turns}</section>` +
    renderStages(state) +
    detail
  );
}
