import type { Advice, Metric, Prediction, Recommendation } from "./types.js";

/** One async panel's lifecycle. Stale data is kept through reloads and
 * failures so the page never blanks out under the user. */
export interface Remote<T> {
  phase: "idle" | "loading" | "ready" | "failed";
  data: T | null;
  error: string | null;
}

export interface AppliedChoice {
  recommendation: Recommendation;
  /** exact chips (order included) to restore on revert */
  previousChips: string[];
}

export interface SessionState {
  /** ordered hashtag chips; this IS the chosen set */
  chips: string[];
  trueLocation: string | null;
  alpha: number;
  metric: Metric;
  maxObfuscated: number | null;
  prediction: Remote<Prediction>;
  advice: Remote<Advice>;
  /** non-null while the chosen set is a recommendation rather than typed input */
  applied: AppliedChoice | null;
  serviceDown: boolean;
}

const remoteIdle = <T>(): Remote<T> => ({ phase: "idle", data: null, error: null });

export function initialState(): SessionState {
  return {
    chips: [],
    trueLocation: null,
    alpha: 1.0,
    metric: "inaccuracy",
    maxObfuscated: null,
    prediction: remoteIdle(),
    advice: remoteIdle(),
    applied: null,
    serviceDown: false,
  };
}

/** Same normalization the service applies: lowercase, leading '#' stripped. */
export function normalizeChip(text: string): string {
  return text.trim().replace(/^#+/, "").toLowerCase();
}

export function addChip(state: SessionState, text: string): SessionState {
  const chip = normalizeChip(text);
  if (chip === "" || state.chips.includes(chip)) return state;
  // typing breaks the link to any applied recommendation
  return { ...state, chips: [...state.chips, chip], applied: null };
}

export function removeChip(state: SessionState, chip: string): SessionState {
  if (!state.chips.includes(chip)) return state;
  return { ...state, chips: state.chips.filter((c) => c !== chip), applied: null };
}

export function clearChips(state: SessionState): SessionState {
  return { ...state, chips: [], applied: null, prediction: remoteIdle(), advice: remoteIdle() };
}

export function applyRecommendation(state: SessionState, recommendation: Recommendation): SessionState {
  if (!recommendation.satisfiable) return state;
  return {
    ...state,
    chips: [...recommendation.hashtags],
    applied: { recommendation, previousChips: state.chips },
  };
}

export function revertApplied(state: SessionState): SessionState {
  if (state.applied === null) return state;
  return { ...state, chips: [...state.applied.previousChips], applied: null };
}

/** The state machine's core guarantee: the chosen set is either what the
 * user typed or exactly one returned recommendation. */
export function chosenSetInvariant(state: SessionState): boolean {
  if (state.applied === null) return true;
  const chosen = [...state.chips].sort();
  const rec = [...state.applied.recommendation.hashtags].sort();
  return chosen.length === rec.length && chosen.every((c, i) => c === rec[i]);
}

export type Badge = "red" | "green" | "none";

/** Red when the attacker's top guess lands on the declared location. */
export function privacyBadge(state: SessionState): Badge {
  const top = state.prediction.data?.topk[0];
  if (top === undefined || state.trueLocation === null || state.chips.length === 0) {
    return "none";
  }
  return top.location === state.trueLocation ? "red" : "green";
}

/** Cards sorted by ascending utility loss; satisfiable ones first.
 * The sort is stable, so equal losses keep the service's order. */
export function sortedCards(advice: Advice): Recommendation[] {
  return [...advice.recommendations].sort((a, b) => {
    if (a.satisfiable !== b.satisfiable) return a.satisfiable ? -1 : 1;
    return a.utility_loss - b.utility_loss;
  });
}

export function allUnsatisfiable(advice: Advice): boolean {
  return advice.recommendations.length > 0 && advice.recommendations.every((r) => !r.satisfiable);
}

export function canRecommend(state: SessionState): boolean {
  return state.chips.length > 0 && state.trueLocation !== null;
}
