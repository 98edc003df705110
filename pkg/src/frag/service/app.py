"""HTTP retrieval and embedding service over one loaded encoder and index."""

from __future__ import annotations

import logging
import os
import threading
import time
from contextlib import asynccontextmanager
from dataclasses import dataclass
from typing import Callable

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse

from frag.config import AppConfig
from frag.corpus import ElementCatalog
from frag.encoder import EncoderModel, embed_many, load_model
from frag.retrieval import Bm25Index, DenseIndex, DenseRetriever, Hit
from frag.service.schemas import (
    EmbedRequest,
    EmbedResponse,
    ErrorBody,
    HealthResponse,
    RetrievedElement,
    RetrieveRequest,
    RetrieveResponse,
    TaskInfo,
    TasksResponse,
    TemplateInfo,
)
from frag.templates import TaskId, instruction_for_text, templates_for

log = logging.getLogger(__name__)


class ApiError(Exception):
    def __init__(self, status: int, code: str, message: str):
        super().__init__(message)
        self.status, self.code, self.message = status, code, message


@dataclass(frozen=True)
class ServiceState:
    model: EncoderModel
    dense: DenseRetriever
    bm25: Bm25Index

    @classmethod
    def build(cls, model: EncoderModel, index: DenseIndex, k1: float = 1.2, b: float = 0.75) -> "ServiceState":
        return cls(model, DenseRetriever(model, index), Bm25Index(index.elements, k1=k1, b=b))

    @classmethod
    def from_config(cls, cfg: AppConfig) -> "ServiceState":
        cfg = cfg.validate_for_serving()
        model = load_model(cfg.model_path)
        index = DenseIndex.load(cfg.index_paths[cfg.serve_split])
        catalog = ElementCatalog.load(cfg.data_dir / "corpus" / cfg.serve_split / "catalog.jsonl")
        if [e.key for e in index.elements] != [e.key for e in catalog]:
            log.warning("index metadata differs from the %s catalog; serving the index's elements", cfg.serve_split)
        return cls.build(model, index, cfg.bm25_k1, cfg.bm25_b)


def parse_task(name: str) -> TaskId:
    try:
        return TaskId(name)
    except ValueError:
        raise ApiError(404, "unknown_task", f"unknown task {name!r}") from None


def retrieve(state: ServiceState, req: RetrieveRequest) -> list[Hit]:
    """The retrieval performed by POST /v1/retrieve, callable in-process."""
    task = parse_task(req.task)
    instruction = instruction_for_text(task, req.text)
    kind = req.kind_filter or task.target_kind
    engine = state.dense if req.engine == "dense" else state.bm25
    return engine.topk(instruction, req.k, kind)


def create_app(loader: Callable[[], ServiceState], token_env: str = "FRAG_API_TOKEN") -> FastAPI:
    """Build the app; ``loader`` runs in a background thread at startup and /healthz answers 503 until it returns."""
    holder: dict = {"state": None, "error": None}

    def load() -> None:
        try:
            holder["state"] = loader()
            log.info("artifacts loaded, model %s", holder["state"].model.fingerprint())
        except Exception as exc:  # surfaced through /healthz
            log.exception("loading failed")
            holder["error"] = str(exc)

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        threading.Thread(target=load, name="frag-loader", daemon=True).start()
        yield

    app = FastAPI(title="frag retrieval service", lifespan=lifespan)

    def state() -> ServiceState:
        if holder["state"] is None:
            raise ApiError(503, "loading", holder["error"] or "artifacts are still loading")
        return holder["state"]

    @app.exception_handler(ApiError)
    async def api_error(request: Request, exc: ApiError):
        return JSONResponse(status_code=exc.status, content=ErrorBody(code=exc.code, message=exc.message).model_dump())

    @app.exception_handler(RequestValidationError)
    async def validation_error(request: Request, exc: RequestValidationError):
        message = "; ".join(f"{'.'.join(map(str, e['loc']))}: {e['msg']}" for e in exc.errors())
        return JSONResponse(status_code=400, content=ErrorBody(code="invalid_request", message=message).model_dump())

    @app.middleware("http")
    async def bearer_auth(request: Request, call_next):
        token = os.environ.get(token_env)
        if token and request.url.path.startswith("/v1/"):
            if request.headers.get("authorization") != f"Bearer {token}":
                return JSONResponse(status_code=401,
                                    content=ErrorBody(code="unauthorized", message="missing or bad bearer token").model_dump())
        return await call_next(request)

    @app.get("/healthz", response_model=HealthResponse)
    def healthz():
        if holder["state"] is None:
            status = "failed" if holder["error"] else "loading"
            return JSONResponse(status_code=503, content=HealthResponse(status=status).model_dump())
        return HealthResponse(status="ok", model_fingerprint=holder["state"].model.fingerprint())

    @app.get("/v1/tasks", response_model=TasksResponse)
    def tasks():
        return TasksResponse(tasks=[
            TaskInfo(task=t.value, target_kind=t.target_kind,
                     templates=[TemplateInfo(template_id=tpl.template_id, header=tpl.header) for tpl in templates_for(t)])
            for t in TaskId
        ])

    @app.post("/v1/embed", response_model=EmbedResponse)
    def embed(req: EmbedRequest):
        s = state()
        task = parse_task(req.task)
        vectors = embed_many(s.model, [instruction_for_text(task, t) for t in req.texts])
        return EmbedResponse(embeddings=vectors.tolist(), model_fingerprint=s.model.fingerprint())

    @app.post("/v1/retrieve", response_model=RetrieveResponse)
    def retrieve_endpoint(req: RetrieveRequest):
        s = state()
        start = time.perf_counter()
        hits = retrieve(s, req)
        return RetrieveResponse(
            results=[RetrievedElement(**h.to_json()) for h in hits],
            engine=req.engine,
            model_fingerprint=s.model.fingerprint(),
            latency_ms=(time.perf_counter() - start) * 1000.0,
        )

    app.state.holder = holder
    return app


def app_from_config(cfg: AppConfig) -> FastAPI:
    cfg.validate_for_serving()
    return create_app(lambda: ServiceState.from_config(cfg), cfg.token_env)
