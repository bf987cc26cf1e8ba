/**
 * Latest-wins request gate: at most one in-flight task matters; starting a
 * new one aborts and supersedes the previous.  A superseded task resolves to
 * undefined so stale responses can never overwrite fresher state.
 */

export class LatestWins<T> {
  private counter = 0;
  private controller: AbortController | null = null;

  get inFlight(): boolean {
    return this.controller !== null;
  }

  async run(task: (signal: AbortSignal) => Promise<T>): Promise<T | undefined> {
    const ticket = ++this.counter;
    this.controller?.abort();
    const controller = new AbortController();
    this.controller = controller;
    try {
      const result = await task(controller.signal);
      return ticket === this.counter ? result : undefined;
    } catch (err) {
      if (ticket === this.counter) {
        throw err;
      }
      return undefined; // superseded; losing requests stay silent
    } finally {
      if (ticket === this.counter) {
        this.controller = null;
      }
    }
  }
}
