/** DOM wiring: reference left, blinded candidate right, scores 1-5. */

import { StudyApi } from './api.js';
import { SessionController, UiState } from './state.js';

const api = new StudyApi('');

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

const startPanel = el<HTMLElement>('start-panel');
const ratePanel = el<HTMLElement>('rate-panel');
const donePanel = el<HTMLElement>('done-panel');
const errorBanner = el<HTMLElement>('error-banner');
const errorText = el<HTMLElement>('error-text');
const raterInput = el<HTMLInputElement>('rater-id');
const startButton = el<HTMLButtonElement>('start-button');
const retryButton = el<HTMLButtonElement>('retry-button');
const referenceImg = el<HTMLImageElement>('reference-img');
const candidateImg = el<HTMLImageElement>('candidate-img');
const progressFill = el<HTMLElement>('progress-fill');
const progressText = el<HTMLElement>('progress-text');
const doneSession = el<HTMLElement>('done-session');
const scoreButtons = Array.from(
  document.querySelectorAll<HTMLButtonElement>('button[data-score]'),
);

let pendingImages = 0;

function render(state: UiState): void {
  startPanel.hidden = state.phase !== 'idle';
  ratePanel.hidden = !(state.phase === 'rating' || state.phase === 'submitting' || state.phase === 'loading');
  donePanel.hidden = state.phase !== 'complete';
  errorBanner.hidden = state.phase !== 'error';

  if (state.phase === 'error') {
    errorText.textContent = state.message ?? 'Something went wrong.';
  }

  const enabled = state.phase === 'rating' && state.imagesReady;
  for (const btn of scoreButtons) btn.disabled = !enabled;

  if (state.total > 0) {
    progressFill.style.width = `${(100 * state.done) / state.total}%`;
    progressText.textContent = `${state.done} / ${state.total}`;
  }

  if (state.phase === 'complete') {
    doneSession.textContent = state.sessionId ?? '';
  }

  if (state.item) {
    // only swap sources when the item actually changed, so reloads don't flicker
    if (referenceImg.dataset.item !== state.item.item_id) {
      pendingImages = 2;
      referenceImg.dataset.item = state.item.item_id;
      referenceImg.src = state.item.reference_url;
      candidateImg.src = state.item.candidate_url;
    }
  }
}

const controller = new SessionController(api, render);

function imageLoaded(): void {
  pendingImages -= 1;
  if (pendingImages <= 0) controller.imagesLoaded();
}

referenceImg.addEventListener('load', imageLoaded);
candidateImg.addEventListener('load', imageLoaded);

startButton.addEventListener('click', () => {
  const rater = raterInput.value.trim();
  if (rater) void controller.start(rater);
});

raterInput.addEventListener('keydown', (ev) => {
  if (ev.key === 'Enter') startButton.click();
});

retryButton.addEventListener('click', () => void controller.retry());

for (const btn of scoreButtons) {
  btn.addEventListener('click', () => void controller.submit(Number(btn.dataset.score)));
}

// keyboard shortcuts 1-5 for rapid rating
document.addEventListener('keydown', (ev) => {
  if (ev.key >= '1' && ev.key <= '5') void controller.submit(Number(ev.key));
});
