"""Read-only HTTP API over a fused feature store.

Endpoints:
    GET  /api/scene   -> {bounds, point_count, levels, dim}
    POST /api/query   -> projected score grid {origin, cell_size, width,
                         height, values, missing_mask} (+ per-point scores
                         on request)
    GET  /api/points  -> decimated positions plus last-query scores

The store is never mutated; concurrent queries see consistent results.
Errors carry machine-readable codes: 400 bad_request, 503
provider_unavailable.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from .analytics import project_scores_to_grid
from .core import FeatureStore, SeededRng
from .providers import ProviderError
from .query import QuerySpec, score_field


@dataclass
class ApiSession:
    store: FeatureStore
    provider: object
    default_cell_size: float = 10.0
    prompt_cache: dict[str, np.ndarray] = field(default_factory=dict)
    last_scores: np.ndarray | None = None
    last_observed: np.ndarray | None = None
    _lock: threading.Lock = field(default_factory=threading.Lock)

    def embed_cached(self, text: str) -> np.ndarray:
        with self._lock:
            hit = self.prompt_cache.get(text)
        if hit is not None:
            return hit
        vec = self.provider.embed_text(text)
        with self._lock:
            self.prompt_cache[text] = vec
        return vec

    def remember(self, values: np.ndarray, observed: np.ndarray) -> None:
        with self._lock:
            self.last_scores = values
            self.last_observed = observed


class _CachingProvider:
    """Provider facade routing text embeds through the session cache."""

    def __init__(self, session: ApiSession):
        self._session = session

    def embed_text(self, text: str) -> np.ndarray:
        return self._session.embed_cached(text)

    def embed_image(self, image: np.ndarray) -> np.ndarray:
        return self._session.provider.embed_image(image)

    def score_image(self, image: np.ndarray, prompt: str) -> float:
        return self._session.provider.score_image(image, prompt)


class QueryRequest(BaseModel):
    positive: str = Field(min_length=1)
    negatives: list[str] = Field(default_factory=list)
    level_mode: str | int = "max"
    cell_size: float | None = Field(default=None, gt=0)
    include_points: bool = False


def create_app(session: ApiSession, ui_dir: str | None = None) -> FastAPI:
    app = FastAPI(title="citylens", docs_url=None, redoc_url=None)
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )

    @app.exception_handler(RequestValidationError)
    async def _bad_request(_: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"code": "bad_request", "detail": exc.errors()})

    @app.get("/api/scene")
    def scene():
        bounds = session.store.points.bounds()
        return {
            "bounds": {
                "x_min": bounds.x_min,
                "y_min": bounds.y_min,
                "x_max": bounds.x_max,
                "y_max": bounds.y_max,
            },
            "point_count": session.store.point_count,
            "levels": session.store.level_count,
            "dim": session.store.dim,
        }

    @app.post("/api/query")
    def query(req: QueryRequest):
        try:
            spec = QuerySpec(req.positive, tuple(req.negatives), req.level_mode)
        except ValueError as e:
            return JSONResponse(status_code=400, content={"code": "bad_request", "detail": str(e)})
        try:
            field_ = score_field(session.store, spec, _CachingProvider(session))
        except ProviderError as e:
            return JSONResponse(status_code=503, content={"code": "provider_unavailable", "detail": str(e)})
        except ValueError as e:
            return JSONResponse(status_code=400, content={"code": "bad_request", "detail": str(e)})
        session.remember(field_.values, field_.observed)
        cell_size = req.cell_size or session.default_cell_size
        raster = project_scores_to_grid(
            session.store.points.positions, field_.values, cell_size, field_.observed
        )
        payload = raster.to_dict()
        payload["query"] = spec.to_dict()
        if req.include_points:
            payload["point_scores"] = [
                float(v) if o else None for v, o in zip(field_.values, field_.observed)
            ]
        return payload

    @app.get("/api/points")
    def points(max: int = 10000):
        if max < 1:
            return JSONResponse(status_code=400, content={"code": "bad_request", "detail": "max must be >= 1"})
        n = session.store.point_count
        if n > max:
            idx = np.sort(SeededRng(0, "points-decimation").generator().choice(n, size=max, replace=False))
        else:
            idx = np.arange(n)
        positions = session.store.points.positions[idx]
        with session._lock:
            values = session.last_scores
            observed = session.last_observed
        scores = None
        if values is not None and observed is not None:
            scores = [float(v) if o else None for v, o in zip(values[idx], observed[idx])]
        return {
            "count": int(len(idx)),
            "positions": positions.tolist(),
            "scores": scores,
        }

    if ui_dir:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=ui_dir, html=True), name="ui")
    return app
