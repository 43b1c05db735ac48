/**
 * Latest-wins request coalescer. At most one send() runs at a time; targets
 * arriving while one is in flight overwrite each other, so a burst of inputs
 * during a slow render costs exactly one follow-up request with the newest
 * target. Interactivity over completeness: intermediate targets are dropped,
 * never queued.
 */
export class FrameCoalescer<T> {
  private inFlight = false;
  private pending: T | null = null;

  constructor(private readonly send: (target: T) => Promise<void>) {}

  /** True while a request is outstanding or follow-ups are draining. */
  get busy(): boolean {
    return this.inFlight;
  }

  /** Fire-and-forget from the UI thread; coalesces if already busy. */
  request(target: T): void {
    if (this.inFlight) {
      this.pending = target;
      return;
    }
    void this.run(target);
  }

  private async run(first: T): Promise<void> {
    this.inFlight = true;
    try {
      let target: T | null = first;
      while (target !== null) {
        try {
          await this.send(target);
        } catch {
          // send() owns error display; a failure must not wedge the drain loop
        }
        target = this.pending;
        this.pending = null;
      }
    } finally {
      this.inFlight = false;
    }
  }
}
