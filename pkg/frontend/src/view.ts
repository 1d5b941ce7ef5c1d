/**
 * DOM rendering. The view computes nothing numeric: every figure on screen is
 * a server payload value formatted via `show`, which round-trips JavaScript
 * numbers exactly (String(n) parses back to the identical number).
 */
import type { SearchHit } from './api.js';
import type { GenerationRecord, Modality, SessionState } from './state.js';

export function show(value: number): string {
  return String(value);
}

export function metricsText(metrics: GenerationRecord['metrics']): string {
  return [
    `style_mse ${show(metrics.style_mse)}`,
    `content_mse ${show(metrics.content_mse)}`,
    `chamfer ${show(metrics.chamfer)}`,
  ].join(' | ');
}

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

export interface ViewHandlers {
  onQuerySubmit(id: string): void;
  onSelect(modality: Modality, id: string): void;
  onWeight(modality: Modality, id: string, weight: number): void;
  onKnob(knob: 'lambda' | 'gS' | 'gY', value: number): void;
  onPostprocess(value: boolean): void;
  onGenerate(): void;
  onAdopt(id: string): void;
}

export function renderResultGrid(
  container: HTMLElement,
  modality: Modality,
  hits: SearchHit[],
  selections: Record<string, number>,
  baseUrl: string,
  handlers: ViewHandlers,
): void {
  container.replaceChildren();
  for (const hit of hits) {
    const id = String(hit.id);
    const card = el('div', 'result-card' + (id in selections ? ' selected' : ''));
    const img = el('img', 'thumb');
    img.src = `${baseUrl}/item/${id}.png`;
    img.alt = `item ${id}`;
    img.addEventListener('click', () => handlers.onSelect(modality, id));
    card.append(img);
    card.append(el('div', 'sim', `#${id} sim ${show(hit.similarity)}`));
    if (id in selections) {
      const slider = el('input', 'weight');
      slider.type = 'range';
      slider.min = '0';
      slider.max = '4';
      slider.step = '0.1';
      slider.value = String(selections[id]);
      slider.addEventListener('input', () => handlers.onWeight(modality, id, Number(slider.value)));
      card.append(slider);
      card.append(el('span', 'weight-label', `w=${show(selections[id] ?? 0)}`));
    }
    container.append(card);
  }
}

export function renderHistory(
  container: HTMLElement,
  history: GenerationRecord[],
  handlers: ViewHandlers,
): void {
  container.replaceChildren();
  for (const record of [...history].reverse()) {
    const card = el('div', 'history-card');
    const img = el('img', 'thumb');
    img.src = `data:image/png;base64,${record.png}`;
    img.alt = record.itemId;
    card.append(img);
    card.append(el('div', 'history-id', record.itemId));
    card.append(el('div', 'metrics', metricsText(record.metrics)));
    const adopt = el('button', 'adopt', 'use as query');
    adopt.addEventListener('click', () => handlers.onAdopt(record.itemId));
    card.append(adopt);
    container.append(card);
  }
}

export function renderKnobs(container: HTMLElement, state: SessionState, handlers: ViewHandlers): void {
  container.replaceChildren();
  const tSteps = state.serverInfo?.t_steps ?? 50;
  const knobRow = (label: string, min: number, max: number, step: number, value: number, apply: (v: number) => void) => {
    const row = el('div', 'knob-row');
    row.append(el('label', 'knob-label', `${label}: ${show(value)}`));
    const slider = el('input');
    slider.type = 'range';
    slider.min = String(min);
    slider.max = String(max);
    slider.step = String(step);
    slider.value = String(value);
    slider.addEventListener('input', () => apply(Number(slider.value)));
    row.append(slider);
    return row;
  };
  container.append(knobRow('lambda', 0, tSteps, 1, state.knobs.lambda, (v) => handlers.onKnob('lambda', v)));
  container.append(knobRow('g_s', 0, 10, 0.1, state.knobs.gS, (v) => handlers.onKnob('gS', v)));
  container.append(knobRow('g_y', 0, 10, 0.1, state.knobs.gY, (v) => handlers.onKnob('gY', v)));
  const toggleRow = el('div', 'knob-row');
  const toggle = el('input');
  toggle.type = 'checkbox';
  toggle.checked = state.knobs.postprocess;
  toggle.addEventListener('change', () => handlers.onPostprocess(toggle.checked));
  toggleRow.append(toggle);
  toggleRow.append(el('label', 'knob-label', 'color post-process'));
  container.append(toggleRow);
  const generate = el('button', 'generate', state.generateInFlight ? 'generating…' : 'generate');
  generate.disabled = state.generateInFlight;
  generate.addEventListener('click', () => handlers.onGenerate());
  container.append(generate);
}

export function renderFooter(container: HTMLElement, state: SessionState): void {
  if (!state.serverInfo) {
    container.textContent = 'connecting…';
    return;
  }
  const info = state.serverInfo;
  container.textContent =
    `corpus ${info.corpus_hash.slice(0, 12)} · checkpoint ${info.checkpoint_hash.slice(0, 12)} · ` +
    `config ${info.config_hash} · ${info.item_count} items · T=${info.t_steps}`;
}

export function renderError(container: HTMLElement, state: SessionState): void {
  container.textContent = state.lastError ?? '';
  container.hidden = state.lastError === null;
}
