import type { LocationRow, Recommendation } from "./types.js";
import type { SessionState } from "./state.js";
import { allUnsatisfiable, privacyBadge, sortedCards } from "./state.js";

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;")
    .replace(/'/g, "&#39;");
}

const pct = (p: number) => `${(100 * p).toFixed(1)}%`;

export function renderChips(state: SessionState): string {
  // the revert link must survive an applied empty set ("publish nothing")
  const revert = state.applied
    ? `<button class="link" data-action="revert">revert to my hashtags</button>`
    : "";
  if (state.chips.length === 0) {
    const hint = state.applied ? "publishing nothing" : "no hashtags yet";
    return `<span class="hint">${hint}</span>` + revert;
  }
  const chips = state.chips
    .map(
      (chip) =>
        `<span class="chip">#${escapeHtml(chip)}` +
        `<button class="chip-x" data-action="remove-chip" data-chip="${escapeHtml(chip)}">×</button></span>`,
    )
    .join("");
  return chips + revert;
}

export function renderBadge(state: SessionState): string {
  switch (privacyBadge(state)) {
    case "red":
      return `<span class="badge badge-red">location revealed</span>`;
    case "green":
      return `<span class="badge badge-green">location hidden</span>`;
    default:
      return `<span class="badge badge-none">no assessment</span>`;
  }
}

export function renderPredictionPanel(state: SessionState): string {
  if (state.chips.length === 0) {
    return `<p class="hint">enter at least one hashtag to see what it gives away</p>`;
  }
  const { prediction } = state;
  if (prediction.data === null) {
    return prediction.phase === "loading"
      ? `<p class="hint">asking the attacker…</p>`
      : `<p class="hint">no prediction yet</p>`;
  }
  const rows = prediction.data.topk
    .map(
      (entry) =>
        `<tr><td>${escapeHtml(entry.name)}</td>` +
        `<td class="num">${pct(entry.prob)}</td></tr>`,
    )
    .join("");
  const stale = prediction.phase === "loading" ? ` <span class="hint">(updating…)</span>` : "";
  return (
    `${renderBadge(state)}${stale}` +
    `<table class="topk"><thead><tr><th>inferred location</th><th>prob</th></tr></thead>` +
    `<tbody>${rows}</tbody></table>` +
    `<p class="hint">posterior entropy ${prediction.data.posterior_entropy.toFixed(2)} bits</p>`
  );
}

function renderCard(rec: Recommendation, index: number): string {
  const tags = rec.hashtags.map((h) => `#${escapeHtml(h)}`).join(" ") || "(publish nothing)";
  if (!rec.satisfiable) {
    return (
      `<div class="card card-disabled">` +
      `<div class="card-head"><strong>${escapeHtml(rec.mechanism)}</strong></div>` +
      `<p class="hint">cannot reach the privacy floor with this mechanism</p>` +
      `</div>`
    );
  }
  return (
    `<div class="card">` +
    `<div class="card-head"><strong>${escapeHtml(rec.mechanism)}</strong>` +
    `<span class="num">loss ${rec.utility_loss.toFixed(4)} · ${rec.edits} edit${rec.edits === 1 ? "" : "s"}</span></div>` +
    `<p class="tags">${tags}</p>` +
    `<button data-action="apply" data-card="${index}">apply</button>` +
    `</div>`
  );
}

export function renderRecommendationPanel(state: SessionState): string {
  if (state.trueLocation === null) {
    return `<p class="hint">declare your true location to get advice</p>`;
  }
  const { advice } = state;
  if (advice.data === null) {
    return advice.phase === "loading"
      ? `<p class="hint">searching for safer sets…</p>`
      : `<p class="hint">no advice yet</p>`;
  }
  if (advice.data.original.satisfiable) {
    return `<p class="ok">this set already meets the privacy floor, nothing to change</p>`;
  }
  const notice = allUnsatisfiable(advice.data)
    ? `<p class="warn">cannot protect this post: no mechanism reaches the privacy floor</p>`
    : "";
  // index cards by their position in the sorted view; the DOM layer maps back
  const cards = sortedCards(advice.data)
    .map((rec, index) => renderCard(rec, index))
    .join("");
  return notice + cards;
}

export function renderLocationOptions(locations: LocationRow[], query: string): string {
  const needle = query.trim().toLowerCase();
  return locations
    .filter((loc) => needle === "" || loc.name.toLowerCase().includes(needle) || loc.key.toLowerCase().includes(needle))
    .map((loc) => `<option value="${escapeHtml(loc.key)}">${escapeHtml(loc.name)}</option>`)
    .join("");
}

export function renderServiceBanner(state: SessionState): string {
  if (!state.serviceDown) return "";
  return `<div class="banner">service unreachable, your hashtags are kept; retrying on the next change</div>`;
}
