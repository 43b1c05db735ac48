/** Shared UI state for the light-field viewer. */

export interface ViewTarget {
  u: number;
  v: number;
  t: number;
}

export interface ViewerState {
  view: ViewTarget;
  playing: boolean;
  fps: number;
  mode: string;
  compareMode: string;
  comparing: boolean;
  inFlight: boolean;
  lastLatencyMs: number | null;
  baseUrl: string;
}

/** Clamp to [0,1]; NaN and infinities collapse to 0 so bad input cannot escape the cube. */
export function clamp01(x: number): number {
  if (!Number.isFinite(x)) return 0;
  return Math.min(1, Math.max(0, x));
}

export function clampView(view: ViewTarget): ViewTarget {
  return { u: clamp01(view.u), v: clamp01(view.v), t: clamp01(view.t) };
}

export function createState(baseUrl: string): ViewerState {
  return {
    view: { u: 0.5, v: 0.5, t: 0 },
    playing: false,
    fps: 5,
    mode: "full",
    compareMode: "blend",
    comparing: false,
    inFlight: false,
    lastLatencyMs: null,
    baseUrl,
  };
}

export function setView(state: ViewerState, view: ViewTarget): void {
  state.view = clampView(view);
}

/**
 * One playback tick: advance t by one source-frame interval, wrapping at 1.0.
 * The wrap shows the final frame before jumping back to the start.
 */
export function advanceTime(state: ViewerState, frames: number): void {
  if (frames <= 1) return;
  const next = state.view.t + 1 / (frames - 1);
  state.view.t = next > 1 + 1e-9 ? 0 : Math.min(next, 1);
}
