from __future__ import annotations

from typing import Literal, Optional

from pydantic import BaseModel, Field


class ErrorBody(BaseModel):
    code: str
    message: str


class HealthResponse(BaseModel):
    status: str
    model_fingerprint: Optional[str] = None


class EmbedRequest(BaseModel):
    task: str
    texts: list[str] = Field(min_length=1)


class EmbedResponse(BaseModel):
    embeddings: list[list[float]]
    model_fingerprint: str


class RetrieveRequest(BaseModel):
    task: str
    text: str
    k: int = Field(10, ge=1, le=1000)
    engine: Literal["dense", "bm25"] = "dense"
    kind_filter: Optional[str] = None


class RetrievedElement(BaseModel):
    kind: str
    name: str
    parent: Optional[str] = None
    score: float


class RetrieveResponse(BaseModel):
    results: list[RetrievedElement]
    engine: str
    model_fingerprint: str
    latency_ms: float


class TemplateInfo(BaseModel):
    template_id: str
    header: str


class TaskInfo(BaseModel):
    task: str
    target_kind: str
    templates: list[TemplateInfo]


class TasksResponse(BaseModel):
    tasks: list[TaskInfo]
