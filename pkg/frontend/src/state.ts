/**
 * Session state and its pure reducer.
 *
 * All UI behavior is a fold over events: user actions and server responses
 * both enter through `reduce`. The reducer never mutates its input and
 * rejects malformed events by returning the state unchanged, so replaying a
 * recorded event log always reproduces the same final state.
 */
import type { GenerateResponse, Health, SearchHit } from './api.js';

export type Modality = 'content' | 'style';

export interface GenerationRecord {
  itemId: string;
  png: string;
  metrics: GenerateResponse['metrics'];
  request: GenerateResponse['request'];
}

export interface SessionState {
  serverInfo: Health | null;
  query: string | null;
  results: Record<Modality, SearchHit[]>;
  selections: Record<Modality, Record<string, number>>;
  knobs: { lambda: number; gS: number; gY: number; postprocess: boolean };
  history: GenerationRecord[];
  generateInFlight: boolean;
  lastError: string | null;
}

export type StudioEvent =
  | { type: 'health'; info: Health }
  | { type: 'query'; id: string }
  | { type: 'search-results'; modality: Modality; results: SearchHit[] }
  | { type: 'select'; modality: Modality; id: string }
  | { type: 'weight'; modality: Modality; id: string; weight: number }
  | { type: 'knob'; knob: 'lambda' | 'gS' | 'gY'; value: number }
  | { type: 'knob'; knob: 'postprocess'; value: boolean }
  | { type: 'generate-start' }
  | { type: 'generate-result'; response: GenerateResponse }
  | { type: 'generate-error'; message: string }
  | { type: 'adopt-result'; id: string };

export function initialState(): SessionState {
  return {
    serverInfo: null,
    query: null,
    results: { content: [], style: [] },
    selections: { content: {}, style: {} },
    knobs: { lambda: 20, gS: 5.0, gY: 5.0, postprocess: false },
    history: [],
    generateInFlight: false,
    lastError: null,
  };
}

const MODALITIES: Modality[] = ['content', 'style'];

function isModality(value: unknown): value is Modality {
  return MODALITIES.includes(value as Modality);
}

function isFiniteNumber(value: unknown): value is number {
  return typeof value === 'number' && Number.isFinite(value);
}

export function reduce(state: SessionState, event: StudioEvent): SessionState {
  switch (event?.type) {
    case 'health': {
      if (typeof event.info?.t_steps !== 'number') return state;
      return { ...state, serverInfo: event.info };
    }
    case 'query': {
      if (typeof event.id !== 'string' || event.id.length === 0) return state;
      return { ...state, query: event.id };
    }
    case 'search-results': {
      if (!isModality(event.modality) || !Array.isArray(event.results)) return state;
      return { ...state, results: { ...state.results, [event.modality]: event.results } };
    }
    case 'select': {
      if (!isModality(event.modality) || typeof event.id !== 'string') return state;
      const current = state.selections[event.modality];
      const next = { ...current };
      if (event.id in next) {
        delete next[event.id];
      } else {
        next[event.id] = 1.0;
      }
      return { ...state, selections: { ...state.selections, [event.modality]: next } };
    }
    case 'weight': {
      if (!isModality(event.modality) || typeof event.id !== 'string') return state;
      if (!isFiniteNumber(event.weight) || event.weight < 0) return state;
      const current = state.selections[event.modality];
      if (!(event.id in current)) return state; // weight on an unselected item: no-op
      return {
        ...state,
        selections: {
          ...state.selections,
          [event.modality]: { ...current, [event.id]: event.weight },
        },
      };
    }
    case 'knob': {
      if (event.knob === 'postprocess') {
        if (typeof event.value !== 'boolean') return state;
        return { ...state, knobs: { ...state.knobs, postprocess: event.value } };
      }
      if (!isFiniteNumber(event.value)) return state;
      if (event.knob === 'lambda') {
        const max = state.serverInfo?.t_steps ?? 50;
        const lambda = Math.round(event.value);
        if (lambda < 0 || lambda > max) return state;
        return { ...state, knobs: { ...state.knobs, lambda } };
      }
      if (event.knob === 'gS' || event.knob === 'gY') {
        if (event.value < 0) return state;
        const key = event.knob;
        return { ...state, knobs: { ...state.knobs, [key]: event.value } };
      }
      return state;
    }
    case 'generate-start': {
      if (state.generateInFlight) return state; // at most one generation in flight
      return { ...state, generateInFlight: true, lastError: null };
    }
    case 'generate-result': {
      const response = event.response;
      if (typeof response?.item_id !== 'string') return state;
      const record: GenerationRecord = {
        itemId: response.item_id,
        png: response.png,
        metrics: response.metrics,
        request: response.request,
      };
      return {
        ...state,
        generateInFlight: false,
        history: [...state.history, record], // append-only
      };
    }
    case 'generate-error': {
      if (typeof event.message !== 'string') return state;
      return { ...state, generateInFlight: false, lastError: event.message };
    }
    case 'adopt-result': {
      if (typeof event.id !== 'string' || !state.history.some((h) => h.itemId === event.id)) {
        return state;
      }
      return {
        ...state,
        query: event.id,
        selections: { content: {}, style: {} },
      };
    }
    default:
      return state;
  }
}

export function replay(events: StudioEvent[], from: SessionState = initialState()): SessionState {
  return events.reduce(reduce, from);
}

/** The generate request implied by the current state; null while unready. */
export function buildGenerateRequest(state: SessionState, seed: number) {
  const refs = (modality: Modality) =>
    Object.entries(state.selections[modality])
      .sort(([a], [b]) => (a < b ? -1 : a > b ? 1 : 0))
      .map(([id, weight]) => ({ id: /^\d+$/.test(id) ? Number(id) : id, weight }));
  const contentRefs = refs('content');
  const styleRefs = refs('style');
  if (contentRefs.length === 0 && styleRefs.length === 0) return null;
  return {
    content_refs: contentRefs,
    style_refs: styleRefs,
    lambda: state.knobs.lambda,
    g_s: state.knobs.gS,
    g_y: state.knobs.gY,
    seed,
    postprocess: state.knobs.postprocess,
  };
}
