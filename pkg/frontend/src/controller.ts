import { ApiClient, ApiError } from "./api.js";
import { Debouncer } from "./debounce.js";
import {
  addChip,
  applyRecommendation,
  canRecommend,
  chosenSetInvariant,
  clearChips,
  initialState,
  removeChip,
  revertApplied,
  type SessionState,
} from "./state.js";
import type { Metric, Recommendation } from "./types.js";

export interface ControllerOptions {
  api: ApiClient;
  onRender: (state: SessionState) => void;
  debounceMs?: number;
}

/**
 * Session orchestration, DOM-free. Every user action mutates the state,
 * re-renders, and (when it changes the chosen set or the privacy knobs)
 * schedules one debounced refresh. Each panel keeps at most one request
 * in flight logically: responses carry a generation stamp and stale ones
 * are dropped, so the latest edit always wins.
 */
export class AdvisorController {
  state: SessionState = initialState();

  private readonly api: ApiClient;
  private readonly onRender: (state: SessionState) => void;
  private readonly debouncer: Debouncer;
  private generation = 0;

  constructor(options: ControllerOptions) {
    this.api = options.api;
    this.onRender = options.onRender;
    this.debouncer = new Debouncer(options.debounceMs ?? 300);
  }

  private update(next: SessionState): void {
    this.state = next;
    if (!chosenSetInvariant(next)) {
      // never ship a chosen set that is neither typed nor recommended
      throw new Error("chosen-set invariant violated");
    }
    this.onRender(next);
  }

  addChip(text: string): void {
    const next = addChip(this.state, text);
    if (next === this.state) return;
    this.update(next);
    this.scheduleRefresh();
  }

  removeChip(chip: string): void {
    const next = removeChip(this.state, chip);
    if (next === this.state) return;
    this.update(next);
    this.scheduleRefresh();
  }

  clearChips(): void {
    this.debouncer.cancel();
    this.generation += 1; // orphan any in-flight responses
    this.update(clearChips(this.state));
  }

  setTrueLocation(key: string | null): void {
    this.update({ ...this.state, trueLocation: key });
    this.scheduleRefresh();
  }

  setAlpha(alpha: number): void {
    this.update({ ...this.state, alpha });
    this.scheduleRefresh();
  }

  setMetric(metric: Metric): void {
    this.update({ ...this.state, metric });
    this.scheduleRefresh();
  }

  setMaxObfuscated(bound: number | null): void {
    this.update({ ...this.state, maxObfuscated: bound });
    this.scheduleRefresh();
  }

  applyRecommendation(recommendation: Recommendation): void {
    const next = applyRecommendation(this.state, recommendation);
    if (next === this.state) return;
    this.update(next);
    this.scheduleRefresh();
  }

  revertApplied(): void {
    const next = revertApplied(this.state);
    if (next === this.state) return;
    this.update(next);
    this.scheduleRefresh();
  }

  /** One debounced trip for both panels; exposed for tests to flush. */
  scheduleRefresh(): void {
    if (this.state.chips.length === 0) {
      this.debouncer.cancel();
      return;
    }
    this.debouncer.schedule(() => void this.refresh());
  }

  async refresh(): Promise<void> {
    const mine = ++this.generation;
    const snapshot = this.state;
    this.update({
      ...snapshot,
      prediction: { ...snapshot.prediction, phase: "loading" },
      advice: canRecommend(snapshot) ? { ...snapshot.advice, phase: "loading" } : snapshot.advice,
    });
    const tasks: Promise<void>[] = [this.runPrediction(mine, snapshot)];
    if (canRecommend(snapshot)) {
      tasks.push(this.runRecommend(mine, snapshot));
    }
    await Promise.all(tasks);
  }

  private async runPrediction(mine: number, snapshot: SessionState): Promise<void> {
    try {
      const data = await this.api.predict(snapshot.chips);
      if (mine !== this.generation) return;
      this.update({
        ...this.state,
        serviceDown: false,
        prediction: { phase: "ready", data, error: null },
      });
    } catch (error) {
      if (mine !== this.generation) return;
      this.fail("prediction", error);
    }
  }

  private async runRecommend(mine: number, snapshot: SessionState): Promise<void> {
    if (snapshot.trueLocation === null) return;
    try {
      const data = await this.api.recommend({
        hashtags: snapshot.chips,
        true_location: snapshot.trueLocation,
        alpha: snapshot.alpha,
        metric: snapshot.metric,
        max_obfuscated: snapshot.maxObfuscated,
      });
      if (mine !== this.generation) return;
      this.update({
        ...this.state,
        serviceDown: false,
        advice: { phase: "ready", data, error: null },
      });
    } catch (error) {
      if (mine !== this.generation) return;
      this.fail("advice", error);
    }
  }

  /** HTTP errors carry a message; anything else means the service is gone.
   * Either way the previous data stays on screen. */
  private fail(panel: "prediction" | "advice", error: unknown): void {
    const detail = error instanceof ApiError ? error.message : "service unreachable";
    const unreachable = !(error instanceof ApiError);
    this.update({
      ...this.state,
      serviceDown: unreachable ? true : this.state.serviceDown,
      [panel]: { ...this.state[panel], phase: "failed", error: detail },
    });
  }
}
