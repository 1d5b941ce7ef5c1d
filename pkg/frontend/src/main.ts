/**
 * Studio bootstrap: wires the reducer, API client, and views together.
 *
 * The loop: type or adopt a query id, search both modalities, pick and weight
 * exemplars, set the knobs, generate, inspect metrics, and feed any result
 * back in as the next query.
 */
import { ApiClient } from './api.js';
import { buildGenerateRequest, initialState, reduce, type SessionState, type StudioEvent } from './state.js';
import {
  renderError,
  renderFooter,
  renderHistory,
  renderKnobs,
  renderResultGrid,
  type ViewHandlers,
} from './view.js';

const BASE_URL = '';
const api = new ApiClient(BASE_URL);

let state: SessionState = initialState();
const eventLog: StudioEvent[] = [];

function byId(id: string): HTMLElement {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node;
}

function dispatch(event: StudioEvent): void {
  eventLog.push(event);
  state = reduce(state, event);
  render();
}

let searchToken = 0;

async function runSearch(query: string): Promise<void> {
  const token = ++searchToken;
  const value: number | string = /^\d+$/.test(query) ? Number(query) : query;
  for (const modality of ['content', 'style'] as const) {
    try {
      const response = await api.search({ modality, query: value });
      if (token === searchToken) {
        dispatch({ type: 'search-results', modality, results: response.results });
      } // stale responses dropped
    } catch (error) {
      dispatch({ type: 'generate-error', message: String(error) });
    }
  }
}

const handlers: ViewHandlers = {
  onQuerySubmit(id) {
    dispatch({ type: 'query', id });
    void runSearch(id);
  },
  onSelect(modality, id) {
    dispatch({ type: 'select', modality, id });
  },
  onWeight(modality, id, weight) {
    dispatch({ type: 'weight', modality, id, weight });
  },
  onKnob(knob, value) {
    dispatch({ type: 'knob', knob, value });
  },
  onPostprocess(value) {
    dispatch({ type: 'knob', knob: 'postprocess', value });
  },
  onGenerate() {
    const request = buildGenerateRequest(state, Date.now() % 1_000_000);
    if (!request || state.generateInFlight) return;
    dispatch({ type: 'generate-start' });
    api
      .generate(request)
      .then((response) => dispatch({ type: 'generate-result', response }))
      .catch((error) => dispatch({ type: 'generate-error', message: String(error) }));
  },
  onAdopt(id) {
    dispatch({ type: 'adopt-result', id });
    void runSearch(id);
  },
};

function render(): void {
  renderResultGrid(byId('content-results'), 'content', state.results.content, state.selections.content, BASE_URL, handlers);
  renderResultGrid(byId('style-results'), 'style', state.results.style, state.selections.style, BASE_URL, handlers);
  renderKnobs(byId('knobs'), state, handlers);
  renderHistory(byId('history'), state.history, handlers);
  renderFooter(byId('footer'), state);
  renderError(byId('error'), state);
  const queryLabel = byId('current-query');
  queryLabel.textContent = state.query === null ? 'no query yet' : `query: ${state.query}`;
}

async function boot(): Promise<void> {
  const form = byId('query-form') as HTMLFormElement;
  const input = byId('query-input') as HTMLInputElement;
  form.addEventListener('submit', (event) => {
    event.preventDefault();
    if (input.value.trim()) handlers.onQuerySubmit(input.value.trim());
  });
  render();
  try {
    const info = await api.health();
    dispatch({ type: 'health', info });
  } catch (error) {
    dispatch({ type: 'generate-error', message: `health check failed: ${String(error)}` });
  }
}

void boot();
