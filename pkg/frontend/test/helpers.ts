import { readFileSync } from 'node:fs';
import { expect } from 'vitest';

import { AnalysisEnvelope } from '../src/api.js';

export function fixture(name: string): AnalysisEnvelope {
  return JSON.parse(
    readFileSync(new URL(`./fixtures/${name}`, import.meta.url), 'utf8'),
  ) as AnalysisEnvelope;
}

// The badge section is the block after <section id="indicators">; report
// step 3 renders badges of its own, so assertions scope to that block.
export function badgeSection(html: string): string {
  const start = html.indexOf('<section id="indicators">');
  expect(start).toBeGreaterThan(-1);
  return html.slice(start);
}

export function badgeLabels(html: string): string[] {
  return [...badgeSection(html).matchAll(/class="badge (\w+)"/g)].map((m) => m[1]!);
}
