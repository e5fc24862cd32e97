import { ApiClient } from "./api.js";
import { AdvisorController } from "./controller.js";
import {
  renderChips,
  renderLocationOptions,
  renderPredictionPanel,
  renderRecommendationPanel,
  renderServiceBanner,
} from "./render.js";
import { sortedCards } from "./state.js";
import type { Metric, ModelInfo } from "./types.js";

/* Thin DOM shell: all decisions live in the controller and renderers,
 * this file only moves strings and events back and forth. */

const byId = <T extends HTMLElement>(id: string): T => {
  const el = document.getElementById(id);
  if (el === null) throw new Error(`missing element #${id}`);
  return el as T;
};

function boot(info: ModelInfo): void {
  const banner = byId<HTMLDivElement>("banner");
  const chipsBox = byId<HTMLDivElement>("chips");
  const predictionBox = byId<HTMLDivElement>("prediction");
  const adviceBox = byId<HTMLDivElement>("advice");
  const tagInput = byId<HTMLInputElement>("tag-input");
  const locationInput = byId<HTMLInputElement>("location-input");
  const locationList = byId<HTMLDataListElement>("location-options");
  const alphaInput = byId<HTMLInputElement>("alpha");
  const metricSelect = byId<HTMLSelectElement>("metric");
  const boundSelect = byId<HTMLSelectElement>("bound");

  metricSelect.innerHTML = info.metrics
    .map((m) => `<option value="${m}">${m.replaceAll("_", " ")}</option>`)
    .join("");
  locationList.innerHTML = renderLocationOptions(info.locations, "");

  const controller = new AdvisorController({
    api: new ApiClient(""),
    onRender: (state) => {
      banner.innerHTML = renderServiceBanner(state);
      chipsBox.innerHTML = renderChips(state);
      predictionBox.innerHTML = renderPredictionPanel(state);
      adviceBox.innerHTML = renderRecommendationPanel(state);
    },
  });

  tagInput.addEventListener("keydown", (event) => {
    if (event.key !== "Enter") return;
    event.preventDefault();
    controller.addChip(tagInput.value);
    tagInput.value = "";
  });

  locationInput.addEventListener("input", () => {
    locationList.innerHTML = renderLocationOptions(info.locations, locationInput.value);
    const match = info.locations.find(
      (loc) => loc.key === locationInput.value || loc.name === locationInput.value,
    );
    controller.setTrueLocation(match ? match.key : null);
  });

  alphaInput.addEventListener("change", () => {
    const alpha = Number(alphaInput.value);
    if (Number.isFinite(alpha)) controller.setAlpha(alpha);
  });

  metricSelect.addEventListener("change", () => {
    controller.setMetric(metricSelect.value as Metric);
  });

  boundSelect.addEventListener("change", () => {
    controller.setMaxObfuscated(boundSelect.value === "" ? null : Number(boundSelect.value));
  });

  // one delegated handler covers chips and cards, which re-render freely
  document.addEventListener("click", (event) => {
    const target = (event.target as HTMLElement).closest<HTMLElement>("[data-action]");
    if (target === null) return;
    switch (target.dataset.action) {
      case "remove-chip":
        controller.removeChip(target.dataset.chip ?? "");
        break;
      case "revert":
        controller.revertApplied();
        break;
      case "apply": {
        const advice = controller.state.advice.data;
        if (advice === null) return;
        const index = Number(target.dataset.card);
        const card = sortedCards(advice)[index];
        if (card !== undefined) controller.applyRecommendation(card);
        break;
      }
    }
  });
}

new ApiClient("")
  .modelInfo()
  .then(boot)
  .catch(() => {
    document.body.insertAdjacentHTML(
      "afterbegin",
      `<div class="banner">cannot reach the tagshield service; start it and reload</div>`,
    );
  });
