/**
 * Pure session logic for the interactive segmentation client.
 *
 * Everything here is DOM-free so it can be exercised headlessly: prompt
 * history with undo, patch-grid geometry, overlay rasterization, and the
 * request sequencing that guarantees only the newest response is rendered.
 */

export type Label = "fg" | "bg";

export interface Prompt {
  patch: number;
  label: Label;
}

export interface Meta {
  h: number;
  w: number;
  patch: number;
  n: number;
}

export interface SegmentResponse {
  probs: number[][]; // [N][p*p]
  binary: number[][];
  threshold: number;
}

// ---------------------------------------------------------------------------
// prompt history

/** Append a prompt; history is ordered and undo pops exactly one entry. */
export function addPrompt(history: Prompt[], patch: number, label: Label): Prompt[] {
  return [...history, { patch, label }];
}

export function undo(history: Prompt[]): Prompt[] {
  return history.slice(0, -1);
}

/** Collapse history into the request payload: last label per patch wins. */
export function effectivePrompts(history: Prompt[]): Prompt[] {
  const byPatch = new Map<number, Label>();
  for (const p of history) byPatch.set(p.patch, p.label);
  return [...byPatch.entries()]
    .sort((a, b) => a[0] - b[0])
    .map(([patch, label]) => ({ patch, label }));
}

// ---------------------------------------------------------------------------
// geometry

export function gridSide(meta: Meta): number {
  return meta.w / meta.patch;
}

/** Canvas coordinates (already in image pixels) -> patch index, or null. */
export function pointToPatch(meta: Meta, x: number, y: number): number | null {
  if (x < 0 || y < 0 || x >= meta.w || y >= meta.h) return null;
  const g = gridSide(meta);
  const px = Math.floor(x / meta.patch);
  const py = Math.floor(y / meta.patch);
  return py * g + px;
}

// ---------------------------------------------------------------------------
// overlay rasterization

export interface Overlay {
  /** Per-image-pixel tint alpha in [0, 1], row-major [h*w]. */
  alpha: Float32Array;
  /** Per-pixel mask at the threshold (strict >), row-major [h*w]. */
  binary: Uint8Array;
  /** Pixels on the mask boundary (4-neighborhood), row-major [h*w]. */
  contour: Uint8Array;
}

/** Expand the per-patch probability grid to pixels and build the overlay. */
export function renderOverlay(
  probs: number[][],
  meta: Meta,
  threshold: number,
  opacity: number,
): Overlay {
  const { h, w, patch } = meta;
  const g = gridSide(meta);
  const alpha = new Float32Array(h * w);
  const binary = new Uint8Array(h * w);
  for (let n = 0; n < probs.length; n++) {
    const py = Math.floor(n / g) * patch;
    const px = (n % g) * patch;
    for (let i = 0; i < probs[n].length; i++) {
      const y = py + Math.floor(i / patch);
      const x = px + (i % patch);
      const p = probs[n][i];
      alpha[y * w + x] = p * opacity;
      binary[y * w + x] = p > threshold ? 1 : 0;
    }
  }
  const contour = new Uint8Array(h * w);
  for (let y = 0; y < h; y++) {
    for (let x = 0; x < w; x++) {
      if (!binary[y * w + x]) continue;
      const edge =
        y === 0 || y === h - 1 || x === 0 || x === w - 1 ||
        !binary[(y - 1) * w + x] || !binary[(y + 1) * w + x] ||
        !binary[y * w + x - 1] || !binary[y * w + x + 1];
      if (edge) contour[y * w + x] = 1;
    }
  }
  return { alpha, binary, contour };
}

// ---------------------------------------------------------------------------
// session with request sequencing

/**
 * Fold a server response into the state, or drop it: a response is rendered
 * only when its sequence number matches the newest request issued.
 */
export function applyResponse(
  state: SessionState,
  seq: number,
  newestSeq: number,
  resp: SegmentResponse,
): SessionState | null {
  if (seq !== newestSeq) return null; // stale: a newer request exists
  return { ...state, probs: resp.probs, renderedSeq: seq, error: null };
}

export type PostSegment = (
  imageId: string,
  prompts: Prompt[],
) => Promise<SegmentResponse>;

export interface SessionState {
  imageId: string;
  meta: Meta;
  history: Prompt[];
  /** Latest rendered probability grid, or null before the first response. */
  probs: number[][] | null;
  /** Sequence number of the response currently displayed. */
  renderedSeq: number;
  error: string | null;
}

/**
 * One image's interaction session. At most one request is in flight; clicks
 * arriving mid-request coalesce into a single follow-up carrying the full
 * prompt set. A response is rendered only if its sequence number is still
 * the newest issued — stale responses are dropped.
 */
export class Session {
  state: SessionState;
  private post: PostSegment;
  private nextSeq = 0;
  private inFlight = false;
  private pendingSync = false;
  private listeners: Array<(s: SessionState) => void> = [];

  constructor(imageId: string, meta: Meta, post: PostSegment) {
    this.post = post;
    this.state = {
      imageId,
      meta,
      history: [],
      probs: null,
      renderedSeq: 0,
      error: null,
    };
  }

  onChange(fn: (s: SessionState) => void): void {
    this.listeners.push(fn);
  }

  private emit(): void {
    for (const fn of this.listeners) fn(this.state);
  }

  click(patch: number, label: Label): Promise<void> {
    this.state = { ...this.state, history: addPrompt(this.state.history, patch, label) };
    this.emit();
    return this.sync();
  }

  undo(): Promise<void> {
    this.state = { ...this.state, history: undo(this.state.history) };
    this.emit();
    if (this.state.history.length === 0) {
      this.state = { ...this.state, probs: null, error: null };
      this.emit();
      return Promise.resolve();
    }
    return this.sync();
  }

  /** Issue (or queue) a request for the current prompt set. */
  private async sync(): Promise<void> {
    if (this.inFlight) {
      this.pendingSync = true;
      return;
    }
    this.inFlight = true;
    try {
      do {
        this.pendingSync = false;
        const seq = ++this.nextSeq;
        const prompts = effectivePrompts(this.state.history);
        try {
          const resp = await this.post(this.state.imageId, prompts);
          const next = applyResponse(this.state, seq, this.nextSeq, resp);
          if (next !== null) {
            this.state = next;
            this.emit();
          }
        } catch (err) {
          if (seq === this.nextSeq) {
            this.state = { ...this.state, error: String(err) };
            this.emit();
          }
        }
      } while (this.pendingSync);
    } finally {
      this.inFlight = false;
    }
  }
}
