// Stage-event stream reader. The facade replays the full event log for a
// request id and closes after a terminal `done` or `error` event, so a
// plain fetch with incremental frame parsing is enough; no reconnection
// state to manage beyond surfacing the failure to the caller.

export interface StageEvent {
  event: string;
  seq: number;
  detail?: string;
  schema_version?: string;
}

const TERMINAL = new Set(['done', 'error']);

// Split an SSE byte stream into parsed events. Frames are separated by a
// blank line; a chunk boundary can land anywhere, including mid-frame.
export async function* parseSse(
  body: ReadableStream<Uint8Array>,
): AsyncGenerator<StageEvent> {
  const reader = body.getReader();
  const decoder = new TextDecoder('utf-8');
  let buffer = '';
  try {
    while (true) {
      const { done, value } = await reader.read();
      if (done) break;
      buffer += decoder.decode(value, { stream: true });
      let cut;
      while ((cut = buffer.indexOf('\n\n')) !== -1) {
        const frame = buffer.slice(0, cut);
        buffer = buffer.slice(cut + 2);
        const event = parseFrame(frame);
        if (event) yield event;
      }
    }
  } finally {
    reader.releaseLock();
  }
}

function parseFrame(frame: string): StageEvent | null {
  let data: string | null = null;
  for (const line of frame.split('\n')) {
    if (line.startsWith('data:')) data = line.slice(5).trim();
  }
  if (data === null) return null;
  return JSON.parse(data) as StageEvent;
}

// Consume the stage stream for one request, invoking onEvent per event in
// order. Resolves after the terminal event; rejects on transport failure
// (connection loss, non-2xx response) so the caller can offer a retry.
export async function streamStages(
  url: string,
  onEvent: (event: StageEvent) => void,
): Promise<void> {
  const response = await fetch(url, { headers: { Accept: 'text/event-stream' } });
  if (!response.ok) {
    throw new Error(`stage stream failed: HTTP ${response.status}`);
  }
  if (!response.body) {
    throw new Error('stage stream failed: empty response body');
  }
  let terminal = false;
  for await (const event of parseSse(response.body)) {
    onEvent(event);
    if (TERMINAL.has(event.event)) {
      terminal = true;
      break;
    }
  }
  if (!terminal) {
    throw new Error('stage stream ended without done or error');
  }
}
