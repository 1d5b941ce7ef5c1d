"""Generative-search HTTP service.

Loads a run's corpus, encoders, and checkpoint once, indexes every item in
both embedding spaces, and exposes search plus generation over JSON. Generated
items live in an in-memory session store; they can be fetched, used as search
queries, and referenced in later generation requests, which closes the
search -> generate -> search loop.

Endpoints:
    GET  /health                  corpus/checkpoint hashes and run metadata
    GET  /item/{id}.json          floats + base64 PNG for corpus or session items
    GET  /item/{id}.png           rendered PNG
    POST /search                  {modality, query, k} -> ranked ids
    POST /generate                weighted refs + knobs -> new session item
    GET  /session/{id}            stored generation payload
"""
from __future__ import annotations

import base64
from typing import Literal

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse, Response
from pydantic import BaseModel, ConfigDict, Field

from . import pipeline
from .config import RunPaths
from .corpus import Item
from .finish import chamfer, color_match, content_mse, style_mse
from .mine import build_index, knn
from .sampler import GuidanceConfig, fold_refs, interpolate_generate


class Ref(BaseModel):
    model_config = ConfigDict(extra="forbid")
    id: int | str
    weight: float = Field(ge=0.0)


class SearchRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")
    modality: Literal["content", "style"]
    query: int | str | list[float]
    k: int | None = Field(default=None, ge=1)


class GenerateRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")
    content_refs: list[Ref] = Field(default_factory=list)
    style_refs: list[Ref] = Field(default_factory=list)
    lambda_: int | None = Field(default=None, alias="lambda")
    g_s: float | None = None
    g_y: float | None = None
    seed: int = 0
    postprocess: bool = False


class ServiceState:
    def __init__(self, paths: RunPaths):
        missing = []
        if not (paths.corpus_dir / "manifest.json").exists():
            missing.append(str(paths.corpus_dir))
        if not (paths.encoders_dir / "encoders.json").exists():
            missing.append(str(paths.encoders_dir / "encoders.json"))
        if not (paths.checkpoint_dir / "checkpoint.json").exists():
            missing.append(str(paths.checkpoint_dir))
        if missing:
            raise pipeline.PipelineError(
                "service cannot start, missing artifacts: " + ", ".join(missing)
            )
        self.paths = paths
        self.model, self.checkpoint_hash = pipeline.load_model(paths)
        self.bundle = pipeline.ensure_corpus(paths)
        self.corpus_hash = self.bundle.content_hash()
        ids = np.arange(len(self.bundle))
        self.content_vecs = self.model.encoders.content(self.bundle.data)
        self.style_vecs = self.model.encoders.style(self.bundle.data)
        self.content_index = build_index(self.content_vecs, ids)
        self.style_index = build_index(self.style_vecs, ids)
        self.sessions: dict[str, dict] = {}

    # -- item resolution ------------------------------------------------------

    def resolve_item(self, item_id: int | str) -> Item:
        if isinstance(item_id, int) or (isinstance(item_id, str) and item_id.isdigit()):
            idx = int(item_id)
            if not 0 <= idx < len(self.bundle):
                raise HTTPException(status_code=404, detail=f"unknown item id {item_id}")
            return self.bundle.item(idx)
        session = self.sessions.get(str(item_id))
        if session is None:
            raise HTTPException(status_code=404, detail=f"unknown item id {item_id}")
        return session["item"]

    def embedding_for(self, modality: str, query) -> np.ndarray:
        if isinstance(query, list):
            dim = 8 if modality == "content" else 6
            if len(query) != dim:
                raise HTTPException(status_code=422, detail=f"{modality} query vector must have length {dim}")
            return np.asarray(query, dtype=float)
        item = self.resolve_item(query)
        encoder = self.model.encoders.content if modality == "content" else self.model.encoders.style
        return encoder(item.data)


def _item_payload(state: ServiceState, item_id: str, item: Item) -> dict:
    return {
        "id": item_id,
        "mode": item.mode,
        "grid": list(item.grid),
        "data": [float(v) for v in item.data],
        "png": base64.b64encode(pipeline.item_to_png(item)).decode(),
    }


def create_app(paths: RunPaths) -> FastAPI:
    state = ServiceState(paths)
    app = FastAPI(title="stylesynth")
    # the studio may be served from any static host; this is a desk tool
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )
    app.state.engine = state

    @app.get("/health")
    def health():
        return {
            "status": "ok",
            "corpus_hash": state.corpus_hash,
            "checkpoint_hash": state.checkpoint_hash,
            "config_hash": state.paths.hash,
            "mode": state.bundle.mode,
            "grid": list(state.bundle.grid),
            "item_count": len(state.bundle),
            "t_steps": state.model.schedule.t_steps,
        }

    @app.get("/item/{item_id}.png")
    def item_png(item_id: str):
        item = state.resolve_item(item_id)
        return Response(content=pipeline.item_to_png(item), media_type="image/png")

    @app.get("/item/{item_id}.json")
    def item_json(item_id: str):
        item = state.resolve_item(item_id)
        return JSONResponse(_item_payload(state, item_id, item))

    @app.post("/search")
    def search(request: SearchRequest):
        query = state.embedding_for(request.modality, request.query)
        index = state.content_index if request.modality == "content" else state.style_index
        k = request.k or state.paths.config["serve"]["search_k"]
        result = knn(index, query, k)
        return {
            "results": [{"id": int(i), "similarity": s} for i, s in result.hits],
            "truncated": result.truncated,
        }

    @app.post("/generate")
    def generate(request: GenerateRequest):
        if not request.content_refs and not request.style_refs:
            raise HTTPException(status_code=422, detail="need at least one content or style reference")
        sample_cfg = state.paths.config["sample"]
        guidance = GuidanceConfig(
            g_s=request.g_s if request.g_s is not None else sample_cfg["g_s"],
            g_y=request.g_y if request.g_y is not None else sample_cfg["g_y"],
        )
        lam = request.lambda_ if request.lambda_ is not None else sample_cfg["lambda"]

        def materialize(refs: list[Ref], modality: str):
            out = []
            for ref in refs:
                out.append((ref.id, state.embedding_for(modality, ref.id), ref.weight))
            return out

        content_refs = materialize(request.content_refs, "content")
        style_refs = materialize(request.style_refs, "style")

        invert_item = None
        if content_refs:
            primary = max(request.content_refs, key=lambda r: (r.weight, -_ref_order(r.id)))
            invert_item = state.resolve_item(primary.id)
        item = interpolate_generate(
            state.model, content_refs, style_refs, guidance, request.seed,
            lam=lam if invert_item is not None else None,
            invert_item=invert_item,
        )

        style_item = state.resolve_item(request.style_refs[0].id) if request.style_refs else invert_item
        if request.postprocess and style_item is not None:
            matched = color_match(item, style_item)
            if matched.matched:
                item = matched.item

        style_target = (
            fold_refs(style_refs)
            if style_refs
            else state.model.encoders.style(invert_item.data)
        )
        content_target = (
            fold_refs(content_refs)
            if content_refs
            else state.model.encoders.content(style_item.data)
        )
        metrics = {
            "style_mse": style_mse(state.model.encoders, style_target, item),
            "content_mse": content_mse(state.model.encoders, content_target, item),
            "chamfer": chamfer(item, style_item if style_item is not None else item),
        }
        item_id = f"gen-{len(state.sessions) + 1}"
        payload = {
            "item_id": item_id,
            "png": base64.b64encode(pipeline.item_to_png(item)).decode(),
            "data": [float(v) for v in item.data],
            "metrics": metrics,
            "request": request.model_dump(by_alias=True),
        }
        state.sessions[item_id] = {"item": item, "payload": payload}
        return payload

    @app.get("/session/{session_id}")
    def session(session_id: str):
        entry = state.sessions.get(session_id)
        if entry is None:
            raise HTTPException(status_code=404, detail=f"unknown session id {session_id}")
        return entry["payload"]

    return app


def _ref_order(ref_id) -> float:
    try:
        return float(int(ref_id))
    except (TypeError, ValueError):
        return float("inf")


def serve(paths: RunPaths) -> None:
    import uvicorn

    app = create_app(paths)
    serve_cfg = paths.config["serve"]
    uvicorn.run(app, host=serve_cfg["host"], port=serve_cfg["port"], log_level="info")
