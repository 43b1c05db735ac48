/** Thin client for the frame service HTTP API (/meta and /frame). */

import { clampView, ViewTarget } from "./state.js";
import { decodePPM, RasterImage } from "./ppm.js";

export interface Meta {
  grid: [number, number];
  frames: number;
  size: [number, number];
  modes: string[];
  scene: string;
}

/** Build a /frame URL. Coordinates are clamped here so no code path can send
 * the server anything outside [0,1]^3. */
export function frameUrl(baseUrl: string, view: ViewTarget, mode: string): string {
  const { u, v, t } = clampView(view);
  const url = new URL("/frame", baseUrl);
  url.searchParams.set("u", String(u));
  url.searchParams.set("v", String(v));
  url.searchParams.set("t", String(t));
  url.searchParams.set("mode", mode);
  return url.toString();
}

export async function fetchMeta(baseUrl: string): Promise<Meta> {
  const res = await fetch(new URL("/meta", baseUrl).toString());
  if (!res.ok) throw new Error(`/meta failed: HTTP ${res.status}`);
  return (await res.json()) as Meta;
}

export interface FrameResult {
  image: RasterImage;
  /** Server-side render time from the X-Render-Millis header. */
  renderMillis: number;
  /** Wall time including network, measured here. */
  totalMillis: number;
}

export async function fetchFrame(
  baseUrl: string,
  view: ViewTarget,
  mode: string,
): Promise<FrameResult> {
  const started = performance.now();
  const res = await fetch(frameUrl(baseUrl, view, mode));
  if (!res.ok) {
    const detail = await res.text().catch(() => "");
    throw new Error(`/frame failed: HTTP ${res.status} ${detail}`.trim());
  }
  const body = new Uint8Array(await res.arrayBuffer());
  const totalMillis = performance.now() - started;
  const renderMillis = parseFloat(res.headers.get("X-Render-Millis") ?? "NaN");
  return { image: decodePPM(body), renderMillis, totalMillis };
}
