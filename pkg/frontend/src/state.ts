/**
 * Session state machine, kept free of DOM concerns so it can be tested
 * directly. One in-flight request at a time; stale responses are discarded
 * by sequence number; a score can be submitted exactly once per item.
 */

import { ApiError, isComplete, NextItem, NextResponse, RatingAck, SessionInfo } from './api.js';

export type Phase = 'idle' | 'loading' | 'rating' | 'submitting' | 'complete' | 'error';

export interface UiState {
  phase: Phase;
  raterId?: string;
  sessionId?: string;
  item?: NextItem;
  done: number;
  total: number;
  /** Score buttons stay disabled until both images have loaded. */
  imagesReady: boolean;
  lastAck?: 'ok' | 'conflict';
  message?: string;
}

export interface StudyApiLike {
  openSession(raterId: string): Promise<SessionInfo>;
  nextItem(sessionId: string): Promise<NextResponse>;
  submitRating(sessionId: string, itemId: string, score: number): Promise<RatingAck>;
}

const INITIAL: UiState = { phase: 'idle', done: 0, total: 0, imagesReady: false };

export class SessionController {
  private state: UiState = { ...INITIAL };
  private seq = 0;

  constructor(
    private readonly api: StudyApiLike,
    private readonly onChange: (s: UiState) => void,
  ) {}

  getState(): UiState {
    return this.state;
  }

  private set(patch: Partial<UiState>): void {
    this.state = { ...this.state, ...patch };
    this.onChange(this.state);
  }

  /** Start a fresh session or resume at the server's cursor. */
  async start(raterId: string): Promise<void> {
    const seq = ++this.seq;
    this.set({ ...INITIAL, phase: 'loading', raterId });
    try {
      const session = await this.api.openSession(raterId);
      if (seq !== this.seq) return;
      this.set({
        sessionId: session.session_id,
        done: session.done,
        total: session.total,
      });
      await this.advance(seq);
    } catch (err) {
      if (seq !== this.seq) return;
      this.set({ phase: 'error', message: describe(err) });
    }
  }

  /** Retry after a network failure without losing session identity. */
  async retry(): Promise<void> {
    if (this.state.phase !== 'error') return;
    if (this.state.raterId === undefined) return;
    await this.start(this.state.raterId);
  }

  /** Both <img> elements finished loading; scoring becomes possible. */
  imagesLoaded(): void {
    if (this.state.phase === 'rating' && !this.state.imagesReady) {
      this.set({ imagesReady: true });
    }
  }

  /**
   * Submit a 1-5 score for the current item. Ignored unless an item is
   * displayed with images loaded and no submission in flight, which is what
   * makes double-clicks harmless.
   */
  async submit(score: number): Promise<void> {
    const { phase, imagesReady, item, sessionId } = this.state;
    if (phase !== 'rating' || !imagesReady || !item || !sessionId) return;
    if (!Number.isInteger(score) || score < 1 || score > 5) return;
    const seq = ++this.seq;
    this.set({ phase: 'submitting' });
    try {
      const ack = await this.api.submitRating(sessionId, item.item_id, score);
      if (seq !== this.seq) return;
      this.set({ done: ack.done, lastAck: 'ok' });
      await this.advance(seq);
    } catch (err) {
      if (seq !== this.seq) return;
      if (err instanceof ApiError && err.status === 409) {
        // already rated (e.g. a replay after reconnect): re-sync with the server
        this.set({ lastAck: 'conflict' });
        await this.advance(seq);
        return;
      }
      this.set({ phase: 'error', message: describe(err) });
    }
  }

  private async advance(seq: number): Promise<void> {
    const sessionId = this.state.sessionId;
    if (!sessionId) return;
    try {
      const next = await this.api.nextItem(sessionId);
      if (seq !== this.seq) return;
      if (isComplete(next)) {
        this.set({ phase: 'complete', item: undefined, done: next.done, total: next.total, imagesReady: false });
      } else {
        this.set({ phase: 'rating', item: next, done: next.done, total: next.total, imagesReady: false });
      }
    } catch (err) {
      if (seq !== this.seq) return;
      this.set({ phase: 'error', message: describe(err) });
    }
  }
}

function describe(err: unknown): string {
  if (err instanceof ApiError) {
    return err.status === 0 ? 'Cannot reach the study server.' : `Server error (${err.status}): ${err.message}`;
  }
  return String(err);
}
