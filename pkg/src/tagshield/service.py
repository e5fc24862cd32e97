"""HTTP service for the advisor UI: prediction, recommendation, model info.

Handlers read one immutable ModelState snapshot per request; the reload
endpoint swaps the whole snapshot atomically, so in-flight requests keep
the state they started with.  The payload builders are plain functions
over (state, body) and back the advise CLI subcommand too, which makes
the service responses equal to the library's by construction.
"""

from __future__ import annotations

import logging
from typing import Optional

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel

from . import __version__
from .advisor import PRIVACY_METRICS, AdvisorConfig, recommend
from .corpus import Post, _normalize_hashtag
from .forest import featurize
from .obfuscate import MECHANISMS
from .pipeline import Bundle, load_bundle

logger = logging.getLogger(__name__)

TOP_K = 5


class ModelState:
    """One serving snapshot: bundle plus the lookup tables built from it."""

    def __init__(self, bundle: Bundle):
        self.bundle = bundle
        self.texts = [h.text for h in bundle.corpus.hashtags]
        self.mechanisms = MECHANISMS if bundle.tax is not None else ("hiding", "replacement")

    def resolve(self, hashtags) -> frozenset:
        """Map entered texts to vocabulary ids; unknown tags vanish, the
        same way out-of-vocabulary features are invisible to the model."""
        ids = set()
        for text in hashtags:
            norm = _normalize_hashtag(str(text))
            found = self.bundle.corpus.hashtag_id.get(norm)
            if found is not None:
                ids.add(found)
        return frozenset(ids)


def predict_payload(state: ModelState, hashtags: list) -> dict:
    model = state.bundle.model
    locations = state.bundle.corpus.locations
    posterior = model.predict_posterior(featurize(state.resolve(hashtags), model.vocab_dimension))
    # probability descending, ties to the lower location id
    order = np.lexsort((np.arange(len(posterior.probs)), -posterior.probs))
    topk = []
    for i in order[:TOP_K]:
        loc = locations[posterior.classes[int(i)]]
        topk.append({"location": loc.key, "name": loc.name, "prob": float(posterior.probs[int(i)])})
    return {"topk": topk, "posterior_entropy": posterior.entropy_bits()}


def recommend_payload(state: ModelState, body: dict) -> dict:
    """Shared by POST /recommend and the advise subcommand.

    Raises ValueError on a bad request; transports translate it.
    """
    hashtags = body.get("hashtags")
    if not isinstance(hashtags, list) or not hashtags:
        raise ValueError("hashtags must be a non-empty list of strings")
    key = body.get("true_location")
    location_id = state.bundle.corpus.location_id.get(key)
    if location_id is None:
        raise ValueError(f"unknown location {key!r}")
    ids = state.resolve(hashtags)
    if not ids:
        raise ValueError("none of the hashtags are in the model vocabulary")
    max_obfuscated = body.get("max_obfuscated")
    if max_obfuscated is not None and not isinstance(max_obfuscated, int):
        raise ValueError("max_obfuscated must be an integer or null")
    cfg = AdvisorConfig(
        alpha=float(body.get("alpha", 1.0)),
        metric=body.get("metric", "inaccuracy"),
        mechanisms=state.mechanisms,
        max_obfuscated=max_obfuscated,
    )
    advice = recommend(
        Post(0, location_id, 0, ids),
        cfg,
        state.bundle.model,
        state.bundle.table,
        state.bundle.tax,
        state.bundle.corpus.locations,
    )
    return {
        "original": advice.original.to_dict(state.texts),
        "recommendations": [r.to_dict(state.texts) for r in advice.per_mechanism],
    }


def model_info(state: ModelState) -> dict:
    model = state.bundle.model
    return {
        "n_trees": model.n_trees,
        "vocab_size": len(state.texts),
        "n_classes": len(model.classes),
        "embedding_dim": state.bundle.table.dim,
        "metrics": list(PRIVACY_METRICS),
        "mechanisms": list(state.mechanisms),
        "locations": [
            {"key": loc.key, "name": loc.name, "lat": loc.lat, "lon": loc.lon}
            for loc in state.bundle.corpus.locations
        ],
    }


class PredictRequest(BaseModel):
    hashtags: list[str]


class RecommendRequest(BaseModel):
    hashtags: list[str]
    true_location: str
    alpha: float = 1.0
    metric: str = "inaccuracy"
    max_obfuscated: Optional[int] = None


def build_app(bundle_dir: str, static_dir: Optional[str] = None) -> FastAPI:
    app = FastAPI(title="tagshield", version=__version__)
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )
    holder = {"state": ModelState(load_bundle(bundle_dir))}

    @app.post("/predict")
    def predict(body: PredictRequest):
        return predict_payload(holder["state"], body.hashtags)

    @app.post("/recommend")
    def recommend_route(body: RecommendRequest):
        try:
            return recommend_payload(holder["state"], body.model_dump())
        except ValueError as err:
            raise HTTPException(status_code=422, detail=str(err))

    @app.get("/model/info")
    def info():
        return model_info(holder["state"])

    @app.post("/admin/reload")
    def reload_model():
        try:
            state = ModelState(load_bundle(bundle_dir))
        except (OSError, ValueError) as err:
            raise HTTPException(status_code=500, detail=f"reload failed: {err}")
        holder["state"] = state  # single assignment: requests see old or new, never half
        logger.info("model reloaded: %d hashtags", len(state.texts))
        return {"reloaded": True, "vocab_size": len(state.texts)}

    if static_dir is not None:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=static_dir, html=True), name="ui")
    return app
