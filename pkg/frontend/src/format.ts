// Text presentation helpers. Analysis output can embed attacker-controlled
// strings lifted straight from malware, so everything that reaches the DOM
// goes through escapeHtml first, markdown is a whitelisted subset with no
// raw HTML passthrough, and nothing is ever rendered as a live link.

import { ValidatedIndicator } from './api.js';

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, '&amp;')
    .replace(/</g, '&lt;')
    .replace(/>/g, '&gt;')
    .replace(/"/g, '&quot;')
    .replace(/'/g, '&#39;');
}

// Bracket dots so hashes, IPs, and URLs cannot be clicked or pasted live.
export function defang(value: string): string {
  return value.replace(/\./g, '[.]');
}

export function indicatorDisplay(value: string, defangOn: boolean): string {
  return defangOn ? defang(value) : value;
}

// Defang indicator occurrences inside the answer text using the spans the
// server reported. Spans index the answer string, so no client-side
// re-extraction happens here; values without dots come back unchanged.
export function defangAnswer(
  answer: string,
  indicators: ValidatedIndicator[],
  defangOn: boolean,
): string {
  if (!defangOn) return answer;
  const spans = indicators
    .filter((i) => i.span[1] <= answer.length)
    .sort((a, b) => b.span[0] - a.span[0]);
  let out = answer;
  for (const indicator of spans) {
    const [start, end] = indicator.span;
    out = out.slice(0, start) + defang(out.slice(start, end)) + out.slice(end);
  }
  return out;
}

function inline(escaped: string): string {
  return escaped
    .replace(/\*\*([^*]+)\*\*/g, '<strong>$1</strong>')
    .replace(/`([^`]+)`/g, '<code>$1</code>');
}

// Render untrusted prose as HTML: escape first, then apply a small block
// grammar (headings, bullet lists, paragraphs). Anything else, including
// literal HTML and URLs, stays inert text.
export function renderMarkdown(text: string): string {
  const lines = escapeHtml(text).split('\n');
  const blocks: string[] = [];
  let list: string[] = [];
  let paragraph: string[] = [];

  const flushList = () => {
    if (list.length) {
      blocks.push(`<ul>${list.map((item) => `<li>${item}</li>`).join('')}</ul>`);
      list = [];
    }
  };
  const flushParagraph = () => {
    if (paragraph.length) {
      blocks.push(`<p>${paragraph.join('<br>')}</p>`);
      paragraph = [];
    }
  };

  for (const line of lines) {
    const heading = /^(#{1,3})\s+(.*)$/.exec(line);
    if (heading) {
      flushList();
      flushParagraph();
      const level = heading[1]!.length + 2; // h3..h5 inside the panel
      blocks.push(`<h${level}>${inline(heading[2]!)}</h${level}>`);
    } else if (line.startsWith('- ')) {
      flushParagraph();
      list.push(inline(line.slice(2)));
    } else if (line.trim() === '') {
      flushList();
      flushParagraph();
    } else {
      flushList();
      paragraph.push(inline(line));
    }
  }
  flushList();
  flushParagraph();
  return blocks.join('');
}
