"""Application configuration shared by the CLI and the HTTP service."""

from __future__ import annotations

import json
import logging
from pathlib import Path

from pydantic import BaseModel, Field, ValidationError


class ConfigError(ValueError):
    """Configuration problems, reported together in one message."""

    def __init__(self, problems: list[str]):
        super().__init__("; ".join(problems))
        self.problems = problems


class AppConfig(BaseModel):
    data_dir: Path = Path("work")
    model_path: Path | None = None
    index_paths: dict[str, Path] = Field(default_factory=dict)
    serve_split: str = "dev"
    bm25_k1: float = Field(1.2, gt=0)
    bm25_b: float = Field(0.75, ge=0, le=1)
    host: str = "127.0.0.1"
    port: int = Field(8080, ge=0, le=65535)
    remote_url: str | None = None
    token_env: str = "FRAG_API_TOKEN"
    log_level: str = "INFO"

    @classmethod
    def load(cls, path: str | Path | None = None, **overrides) -> "AppConfig":
        raw: dict = {}
        if path is not None:
            try:
                raw = json.loads(Path(path).read_text())
            except (OSError, ValueError) as exc:
                raise ConfigError([f"cannot read config {path}: {exc}"]) from None
        raw.update({k: v for k, v in overrides.items() if v is not None})
        try:
            return cls(**raw)
        except ValidationError as exc:
            raise ConfigError([f"{'.'.join(map(str, e['loc']))}: {e['msg']}" for e in exc.errors()]) from None

    def resolved(self) -> "AppConfig":
        """Fill model and index paths from the work directory layout when not given."""
        data = self.data_dir.resolve()
        model = (self.model_path or data / "model" / "encoder.frag").resolve()
        index = self.index_paths or {self.serve_split: data / "index" / f"{self.serve_split}.fragix"}
        return self.model_copy(update={"data_dir": data, "model_path": model,
                                       "index_paths": {k: Path(v).resolve() for k, v in index.items()}})

    def validate_for_serving(self) -> "AppConfig":
        cfg = self.resolved()
        problems = []
        if not cfg.model_path.is_file():
            problems.append(f"model file not found: {cfg.model_path}")
        for split, path in cfg.index_paths.items():
            if not path.is_file():
                problems.append(f"index for {split!r} not found: {path}")
        catalog = cfg.data_dir / "corpus" / cfg.serve_split / "catalog.jsonl"
        if not catalog.is_file():
            problems.append(f"catalog for {cfg.serve_split!r} not found: {catalog}")
        if logging.getLevelName(cfg.log_level.upper()) == f"Level {cfg.log_level.upper()}":
            problems.append(f"unknown log level {cfg.log_level!r}")
        if problems:
            raise ConfigError(problems)
        return cfg
