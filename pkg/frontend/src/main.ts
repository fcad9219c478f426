// Browser bootstrap: bind the chrome controls to the app and keep them in
// sync with the state after every render.

import { ApiClient, ProvenanceLabel } from './api.js';
import { ConsoleApp } from './app.js';

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

export function mount(): ConsoleApp {
  const api = new ApiClient('');
  const view = el<HTMLDivElement>('view');
  const fileInput = el<HTMLInputElement>('sample');
  const queryInput = el<HTMLInputElement>('query');
  const followInput = el<HTMLInputElement>('follow');
  const filterSelect = el<HTMLSelectElement>('filter');
  const defangToggle = el<HTMLInputElement>('defang');
  const health = el<HTMLSpanElement>('health');

  const app = new ConsoleApp(api, view, (state) => {
    filterSelect.value = state.filter ?? '';
    defangToggle.checked = state.defang;
    el<HTMLButtonElement>('analyze').disabled = state.inFlight;
    el<HTMLButtonElement>('send').disabled = state.inFlight;
  });

  el<HTMLFormElement>('upload-form').addEventListener('submit', (event) => {
    event.preventDefault();
    const file = fileInput.files && fileInput.files[0];
    const query = queryInput.value;
    if (!file && !query.trim()) return;
    void app.uploadAndAnalyze(file ? { name: file.name, data: file } : null, query);
  });

  el<HTMLFormElement>('follow-form').addEventListener('submit', (event) => {
    event.preventDefault();
    const query = followInput.value;
    if (!query.trim()) return;
    followInput.value = '';
    void app.followUp(query);
  });

  filterSelect.addEventListener('change', () => {
    const value = filterSelect.value;
    app.dispatch({
      type: 'filter_set',
      label: value === '' ? null : (value as ProvenanceLabel),
    });
  });

  defangToggle.addEventListener('change', () => {
    app.dispatch({ type: 'defang_set', enabled: defangToggle.checked });
  });

  el<HTMLButtonElement>('replay').addEventListener('click', () => app.replayLog());
  el<HTMLButtonElement>('clear').addEventListener('click', () => app.clearSession());

  view.addEventListener('click', (event) => {
    const target = event.target as HTMLElement;
    const action = target.dataset['action'];
    if (action === 'retry-stream') {
      void app.retryStream();
      return;
    }
    if (action === 'dismiss-error') {
      app.dispatch({ type: 'error_dismissed' });
      return;
    }
    const turn = target.closest<HTMLElement>('[data-turn]');
    if (turn && turn.dataset['turn'] !== undefined) {
      app.dispatch({ type: 'turn_selected', index: Number(turn.dataset['turn']) });
    }
  });

  api
    .health()
    .then((body) => {
      health.textContent = `backend ${body.status}`;
      health.className = body.status === 'ok' ? 'ok' : 'bad';
    })
    .catch(() => {
      health.textContent = 'backend unreachable';
      health.className = 'bad';
    });

  app.render();
  return app;
}

mount();
