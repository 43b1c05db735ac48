/** DOM wiring: connects the state, API client, and coalescers to the page.
 * Pure logic lives in the sibling modules so it can be tested headless. */

import { fetchFrame, fetchMeta, Meta } from "./api.js";
import { FrameCoalescer } from "./coalescer.js";
import { RasterImage, toRGBA } from "./ppm.js";
import { advanceTime, createState, setView, ViewerState, ViewTarget } from "./state.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function draw(canvas: HTMLCanvasElement, image: RasterImage): void {
  canvas.width = image.width;
  canvas.height = image.height;
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  ctx.putImageData(new ImageData(toRGBA(image), image.width, image.height), 0, 0);
}

/** One canvas plus its latency readout and error pip. Each pane owns a
 * coalescer, so compare mode holds at most two requests in flight. */
class Pane {
  private readonly coalescer: FrameCoalescer<ViewTarget>;

  constructor(
    private readonly state: ViewerState,
    private readonly canvas: HTMLCanvasElement,
    private readonly latencyEl: HTMLElement,
    private readonly pipEl: HTMLElement,
    private readonly mode: () => string,
  ) {
    this.coalescer = new FrameCoalescer((view) => this.show(view));
  }

  get busy(): boolean {
    return this.coalescer.busy;
  }

  request(view: ViewTarget): void {
    this.coalescer.request(view);
    this.state.inFlight = true;
  }

  private async show(view: ViewTarget): Promise<void> {
    const mode = this.mode();
    try {
      const frame = await fetchFrame(this.state.baseUrl, view, mode);
      draw(this.canvas, frame.image);
      this.state.lastLatencyMs = frame.totalMillis;
      this.latencyEl.textContent =
        `${mode}: render ${frame.renderMillis.toFixed(1)} ms, ` +
        `total ${frame.totalMillis.toFixed(1)} ms`;
      this.pipEl.classList.add("hidden");
    } catch (e) {
      // keep the stale frame on the canvas; just flag the failure
      this.pipEl.classList.remove("hidden");
      this.pipEl.title = e instanceof Error ? e.message : String(e);
    } finally {
      queueMicrotask(() => {
        this.state.inFlight = this.busy;
      });
    }
  }
}

class Viewer {
  private readonly state: ViewerState;
  private meta: Meta | null = null;
  private readonly paneA: Pane;
  private readonly paneB: Pane;
  private playTimer: number | null = null;

  private readonly urlInput = el<HTMLInputElement>("url");
  private readonly banner = el<HTMLElement>("banner");
  private readonly bannerMsg = el<HTMLElement>("banner-msg");
  private readonly sceneInfo = el<HTMLElement>("scene-info");
  private readonly pad = el<HTMLElement>("pad");
  private readonly dots = el<HTMLElement>("dots");
  private readonly cursor = el<HTMLElement>("cursor");
  private readonly coords = el<HTMLElement>("coords");
  private readonly time = el<HTMLInputElement>("time");
  private readonly timeVal = el<HTMLElement>("time-val");
  private readonly playBtn = el<HTMLButtonElement>("play");
  private readonly fpsInput = el<HTMLInputElement>("fps");
  private readonly modeA = el<HTMLSelectElement>("mode-a");
  private readonly modeB = el<HTMLSelectElement>("mode-b");
  private readonly compare = el<HTMLInputElement>("compare");
  private readonly paneBWrap = el<HTMLElement>("pane-b");

  constructor() {
    this.state = createState(this.urlInput.value.trim());
    this.paneA = new Pane(
      this.state, el<HTMLCanvasElement>("canvas-a"),
      el("latency-a"), el("pip-a"), () => this.state.mode);
    this.paneB = new Pane(
      this.state, el<HTMLCanvasElement>("canvas-b"),
      el("latency-b"), el("pip-b"), () => this.state.compareMode);
    this.wire();
  }

  private wire(): void {
    el<HTMLButtonElement>("connect").addEventListener("click", () => void this.connect());
    el<HTMLButtonElement>("retry").addEventListener("click", () => void this.connect());

    const drag = (e: PointerEvent): void => {
      const rect = this.pad.getBoundingClientRect();
      this.navigate({
        u: (e.clientX - rect.left) / rect.width,
        v: (e.clientY - rect.top) / rect.height,
        t: this.state.view.t,
      });
    };
    this.pad.addEventListener("pointerdown", (e) => {
      this.pad.setPointerCapture(e.pointerId);
      drag(e);
    });
    this.pad.addEventListener("pointermove", (e) => {
      if (e.buttons) drag(e);
    });

    this.time.addEventListener("input", () => {
      this.navigate({ ...this.state.view, t: parseFloat(this.time.value) });
    });
    this.playBtn.addEventListener("click", () => this.togglePlay());
    this.fpsInput.addEventListener("change", () => {
      this.state.fps = Math.max(1, parseFloat(this.fpsInput.value) || 5);
      if (this.state.playing) {
        this.stopPlay();
        this.startPlay();
      }
    });

    this.modeA.addEventListener("change", () => {
      this.state.mode = this.modeA.value;
      this.navigate(this.state.view);
    });
    this.modeB.addEventListener("change", () => {
      this.state.compareMode = this.modeB.value;
      if (this.state.comparing) this.navigate(this.state.view);
    });
    this.compare.addEventListener("change", () => {
      this.state.comparing = this.compare.checked;
      this.paneBWrap.classList.toggle("hidden", !this.state.comparing);
      if (this.state.comparing) this.navigate(this.state.view);
    });
  }

  async connect(): Promise<void> {
    this.state.baseUrl = this.urlInput.value.trim();
    try {
      this.meta = await fetchMeta(this.state.baseUrl);
    } catch (e) {
      this.bannerMsg.textContent =
        `cannot reach ${this.state.baseUrl}: ${e instanceof Error ? e.message : e}`;
      this.banner.classList.remove("hidden");
      return;
    }
    this.banner.classList.add("hidden");
    const [m, n] = this.meta.grid;
    const [w, h] = this.meta.size;
    this.sceneInfo.textContent =
      `${this.meta.scene}: ${w}x${h}, ${m}x${n} views, ${this.meta.frames} frame(s)`;
    this.drawDots(m, n);
    this.populateModes(this.meta.modes);
    this.setTimeEnabled(this.meta.frames > 1);
    this.navigate(this.state.view);
  }

  /** Observed views sit on the grid corners; mark each as a dot on the pad. */
  private drawDots(m: number, n: number): void {
    this.dots.replaceChildren();
    for (let i = 0; i < m; i++) {
      for (let j = 0; j < n; j++) {
        const dot = document.createElement("div");
        dot.className = "dot";
        const u = m > 1 ? i / (m - 1) : 0.5;
        const v = n > 1 ? j / (n - 1) : 0.5;
        dot.style.left = `${u * 100}%`;
        dot.style.top = `${v * 100}%`;
        this.dots.appendChild(dot);
      }
    }
  }

  private populateModes(modes: string[]): void {
    for (const select of [this.modeA, this.modeB]) {
      select.replaceChildren();
      for (const mode of modes) {
        const opt = document.createElement("option");
        opt.value = mode;
        opt.textContent = mode;
        select.appendChild(opt);
      }
    }
    this.state.mode = modes.includes("full") ? "full" : modes[0];
    this.state.compareMode = modes.includes("blend")
      ? "blend"
      : modes[modes.length > 1 ? 1 : 0];
    this.modeA.value = this.state.mode;
    this.modeB.value = this.state.compareMode;
  }

  private setTimeEnabled(enabled: boolean): void {
    this.time.disabled = !enabled;
    this.playBtn.disabled = !enabled;
    this.fpsInput.disabled = !enabled;
    if (!enabled) this.stopPlay();
  }

  private navigate(view: ViewTarget): void {
    setView(this.state, view);
    const { u, v, t } = this.state.view;
    this.cursor.style.left = `${u * 100}%`;
    this.cursor.style.top = `${v * 100}%`;
    this.coords.textContent = `u=${u.toFixed(3)} v=${v.toFixed(3)} t=${t.toFixed(3)}`;
    this.time.value = String(t);
    this.timeVal.textContent = t.toFixed(3);
    this.paneA.request(this.state.view);
    if (this.state.comparing) this.paneB.request(this.state.view);
  }

  private togglePlay(): void {
    if (this.state.playing) {
      this.stopPlay();
    } else {
      this.startPlay();
    }
  }

  private startPlay(): void {
    if (!this.meta || this.meta.frames <= 1) return;
    this.state.playing = true;
    this.playBtn.textContent = "Pause";
    this.playTimer = window.setInterval(() => {
      if (!this.meta) return;
      advanceTime(this.state, this.meta.frames);
      this.navigate(this.state.view);
    }, 1000 / this.state.fps);
  }

  private stopPlay(): void {
    this.state.playing = false;
    this.playBtn.textContent = "Play";
    if (this.playTimer !== null) {
      window.clearInterval(this.playTimer);
      this.playTimer = null;
    }
  }
}

window.addEventListener("DOMContentLoaded", () => {
  const viewer = new Viewer();
  void viewer.connect();
});
