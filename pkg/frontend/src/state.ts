// View state and its reducer. The console is a pure client: the state is a
// fold over the event log, every datum in it arrived from a facade endpoint
// or a user control, and replaying the same log from the initial state
// reproduces the identical view. The reducer never mutates; prior turns are
// reused by reference, so they are immutable once appended.

import { AnalysisEnvelope, ProvenanceLabel } from './api.js';

export interface Turn {
  query: string;
  fileName: string | null;
  envelope: AnalysisEnvelope;
}

export type StreamStatus = 'idle' | 'streaming' | 'done' | 'failed';

export interface ErrorPanel {
  status: number;
  detail: string;
  requestId: string | null;
}

export interface ViewState {
  sessionId: string | null;
  turns: readonly Turn[];
  selectedTurn: number | null;
  inFlight: boolean;
  pendingQuery: string | null;
  pendingFile: string | null;
  stages: readonly string[];
  streamStatus: StreamStatus;
  streamDetail: string | null;
  filter: ProvenanceLabel | null;
  defang: boolean;
  error: ErrorPanel | null;
}

export const initialState: ViewState = {
  sessionId: null,
  turns: [],
  selectedTurn: null,
  inFlight: false,
  pendingQuery: null,
  pendingFile: null,
  stages: [],
  streamStatus: 'idle',
  streamDetail: null,
  filter: null,
  defang: true,
  error: null,
};

export type ConsoleEvent =
  | { type: 'analyze_started'; query: string; fileName: string | null }
  | { type: 'stage'; stage: string; seq: number }
  | { type: 'stream_failed'; detail: string }
  | { type: 'stream_retry' }
  | { type: 'turn_completed'; query: string; fileName: string | null; envelope: AnalysisEnvelope }
  | { type: 'request_failed'; status: number; detail: string; requestId: string | null }
  | { type: 'turn_selected'; index: number }
  | { type: 'filter_set'; label: ProvenanceLabel | null }
  | { type: 'defang_set'; enabled: boolean }
  | { type: 'error_dismissed' }
  | { type: 'session_cleared' };

export function reduce(state: ViewState, event: ConsoleEvent): ViewState {
  switch (event.type) {
    case 'analyze_started':
      return {
        ...state,
        inFlight: true,
        pendingQuery: event.query,
        pendingFile: event.fileName,
        stages: [],
        streamStatus: 'idle',
        streamDetail: null,
        error: null,
      };
    case 'stage':
      // The stream replays from seq 0 after a retry; only the next unseen
      // seq extends the tick list.
      if (event.seq !== state.stages.length) return state;
      return { ...state, stages: [...state.stages, event.stage], streamStatus: 'streaming' };
    case 'stream_failed':
      return { ...state, streamStatus: 'failed', streamDetail: event.detail };
    case 'stream_retry':
      return { ...state, stages: [], streamStatus: 'idle', streamDetail: null };
    case 'turn_completed': {
      const turn: Turn = {
        query: event.query,
        fileName: event.fileName,
        envelope: event.envelope,
      };
      return {
        ...state,
        sessionId: event.envelope.session_id,
        turns: [...state.turns, turn],
        selectedTurn: state.turns.length,
        inFlight: false,
        pendingQuery: null,
        pendingFile: null,
        streamStatus: 'done',
        streamDetail: null,
      };
    }
    case 'request_failed':
      return {
        ...state,
        inFlight: false,
        pendingQuery: null,
        pendingFile: null,
        streamStatus: 'idle',
        error: { status: event.status, detail: event.detail, requestId: event.requestId },
      };
    case 'turn_selected':
      if (event.index < 0 || event.index >= state.turns.length) return state;
      return { ...state, selectedTurn: event.index };
    case 'filter_set':
      return { ...state, filter: event.label };
    case 'defang_set':
      return { ...state, defang: event.enabled };
    case 'error_dismissed':
      return { ...state, error: null };
    case 'session_cleared':
      return { ...initialState, defang: state.defang };
  }
}

export function replay(events: readonly ConsoleEvent[]): ViewState {
  return events.reduce(reduce, initialState);
}
