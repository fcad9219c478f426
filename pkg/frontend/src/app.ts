// Wiring between the DOM chrome, the API client, and the reducer. One
// analyze may be in flight per session; the full event log is kept so the
// view can be rebuilt from scratch at any time (the replay button does
// exactly that, and tests assert the rebuild is identical).

import { AnalysisEnvelope, ApiClient, ApiError } from './api.js';
import { renderView } from './render.js';
import { streamStages } from './sse.js';
import {
  ConsoleEvent,
  ViewState,
  initialState,
  reduce,
  replay,
} from './state.js';

interface PendingTurn {
  query: string;
  fileName: string | null;
  envelope: AnalysisEnvelope;
}

export class ConsoleApp {
  state: ViewState = initialState;
  readonly log: ConsoleEvent[] = [];
  private pending: PendingTurn | null = null;

  constructor(
    private readonly api: ApiClient,
    private readonly view: { innerHTML: string },
    private readonly onState: (state: ViewState) => void = () => {},
  ) {}

  dispatch(event: ConsoleEvent): void {
    this.log.push(event);
    this.state = reduce(this.state, event);
    this.render();
  }

  render(): void {
    this.view.innerHTML = renderView(this.state);
    this.onState(this.state);
  }

  // Upload a sample (or none) with a query and run it through the
  // pipeline: post, then consume the stage stream, then append the turn.
  async uploadAndAnalyze(
    sample: { name: string; data: Blob } | null,
    query: string,
  ): Promise<void> {
    if (this.state.inFlight) return;
    if (!sample && !query.trim()) return;
    this.dispatch({
      type: 'analyze_started',
      query,
      fileName: sample ? sample.name : null,
    });
    let envelope: AnalysisEnvelope;
    try {
      envelope = sample
        ? await this.api.analyze(sample, query, this.state.sessionId)
        : await this.api.query(query, this.state.sessionId);
    } catch (error) {
      if (error instanceof ApiError) {
        this.dispatch({
          type: 'request_failed',
          status: error.status,
          detail: error.detail,
          requestId: error.requestId,
        });
      } else {
        this.dispatch({
          type: 'request_failed',
          status: 0,
          detail: String(error),
          requestId: null,
        });
      }
      return;
    }
    this.pending = {
      query,
      fileName: sample ? sample.name : null,
      envelope,
    };
    await this.consumeStream();
  }

  // Follow-up questions reuse the session; empty input never leaves the
  // client.
  async followUp(query: string): Promise<void> {
    if (!query.trim()) return;
    await this.uploadAndAnalyze(null, query);
  }

  async retryStream(): Promise<void> {
    if (!this.pending || this.state.streamStatus !== 'failed') return;
    this.dispatch({ type: 'stream_retry' });
    await this.consumeStream();
  }

  private async consumeStream(): Promise<void> {
    const pending = this.pending;
    if (!pending) return;
    try {
      await streamStages(
        this.api.streamUrl(pending.envelope.request_id),
        (event) => {
          if (event.event === 'done') return;
          if (event.event === 'error') {
            throw new Error(event.detail ?? 'pipeline error');
          }
          this.dispatch({ type: 'stage', stage: event.event, seq: event.seq });
        },
      );
    } catch (error) {
      this.dispatch({ type: 'stream_failed', detail: String(error) });
      return;
    }
    this.pending = null;
    this.dispatch({
      type: 'turn_completed',
      query: pending.query,
      fileName: pending.fileName,
      envelope: pending.envelope,
    });
  }

  // Rebuild the view purely from the event log.
  replayLog(): void {
    this.state = replay(this.log);
    this.render();
  }

  clearSession(): void {
    this.pending = null;
    this.dispatch({ type: 'session_cleared' });
  }
}
