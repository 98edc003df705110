"""Command-line entry point: pipeline stages, retrieval and the HTTP service."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

from frag.config import AppConfig, ConfigError

log = logging.getLogger("frag")

STAGE_COMMANDS = ("synth", "build-dataset", "train", "index", "eval", "compare")


class JsonLogFormatter(logging.Formatter):
    def format(self, record: logging.LogRecord) -> str:
        entry = {
            "ts": round(record.created, 3),
            "level": record.levelname.lower(),
            "logger": record.name,
            "msg": record.getMessage(),
        }
        if record.exc_info:
            entry["exc"] = self.formatException(record.exc_info)
        return json.dumps(entry)


def setup_logging(level: str) -> None:
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(JsonLogFormatter())
    root = logging.getLogger()
    root.handlers[:] = [handler]
    root.setLevel(level.upper())


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="frag", description=__doc__)
    parser.add_argument("--work", default=None, help="work directory holding all stage outputs (default: work)")
    parser.add_argument("--config", default=None, help="JSON application config file")
    parser.add_argument("--preset", default="acceptance", choices=["acceptance", "paper", "tiny"],
                        help="run configuration preset")
    parser.add_argument("--run-config", default=None, help="JSON run config overriding the preset")
    parser.add_argument("--log-level", default=None)
    sub = parser.add_subparsers(dest="command", required=True)

    for name in STAGE_COMMANDS:
        p = sub.add_parser(name, help=f"run the {name} stage")
        p.add_argument("--force", action="store_true", help="rebuild even when up-to-date")
        if name == "build-dataset":
            p.add_argument("--no-downsample", action="store_true", help="keep the frequency skew")
        if name == "eval":
            p.add_argument("--csv", action="store_true", help="also write table.csv")
    p = sub.add_parser("pipeline", help="run synth, build-dataset, train, index and eval in order")
    p.add_argument("--force", action="store_true")

    p = sub.add_parser("retrieve", help="top-k elements for a text under a task")
    p.add_argument("--task", required=True)
    p.add_argument("--text", required=True)
    p.add_argument("-k", type=int, default=10)
    p.add_argument("--engine", choices=["dense", "bm25"], default="dense")
    p.add_argument("--kind", default=None, help="restrict results to one element kind")
    p.add_argument("--split", default="dev", help="which split's catalog to search (local mode)")
    p.add_argument("--url", default=None, help="query a running service instead of local artifacts")

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default=None)
    p.add_argument("--port", type=int, default=None)
    p.add_argument("--split", default=None, help="catalog/index split to serve")
    return parser


def _run_config(args):
    from frag.pipeline import RunConfig, StageError, run_preset

    cfg = run_preset(args.preset)
    if args.run_config:
        try:
            overrides = json.loads(Path(args.run_config).read_text())
        except (OSError, ValueError) as exc:
            raise StageError("bad_config", f"cannot read run config: {exc}") from None
        merged = cfg.to_json()
        for key, value in overrides.items():
            merged[key] = {**merged[key], **value} if isinstance(merged.get(key), dict) else value
        cfg = RunConfig.from_json(merged)
    return cfg


def cmd_stage(args, app: AppConfig) -> dict:
    from dataclasses import replace

    from frag.pipeline import STAGES, Layout, stage_eval

    cfg = _run_config(args)
    if getattr(args, "no_downsample", False):
        cfg = replace(cfg, dataset=replace(cfg.dataset, downsample=False))
    layout = Layout(app.data_dir)
    start = time.perf_counter()
    if args.command == "eval":
        result = stage_eval(layout, cfg, force=args.force, csv=args.csv)
    else:
        result = STAGES[args.command](layout, cfg, force=args.force)
    out = {"stage": result.stage, "status": result.status, "output": str(result.out_dir),
           "seconds": round(time.perf_counter() - start, 2)}
    if args.command in ("eval", "compare"):
        sys.stdout.write((result.out_dir / "table.txt").read_text())
    return out


def cmd_pipeline(args, app: AppConfig) -> dict:
    from frag.pipeline import Layout, STAGES

    cfg = _run_config(args)
    layout = Layout(app.data_dir)
    statuses = {}
    start = time.perf_counter()
    for name in ("synth", "build-dataset", "train", "index", "eval"):
        statuses[name] = STAGES[name](layout, cfg, force=args.force).status
    sys.stdout.write((layout.eval / "table.txt").read_text())
    return {"stages": statuses, "seconds": round(time.perf_counter() - start, 2)}


def cmd_retrieve(args, app: AppConfig) -> dict:
    if args.url:
        import httpx

        payload = {"task": args.task, "text": args.text, "k": args.k, "engine": args.engine, "kind_filter": args.kind}
        headers = {}
        if os.environ.get(app.token_env):
            headers["Authorization"] = f"Bearer {os.environ[app.token_env]}"
        try:
            resp = httpx.post(args.url.rstrip("/") + "/v1/retrieve", json=payload, headers=headers, timeout=60)
        except httpx.HTTPError as exc:
            raise CliError("network_error", str(exc)) from None
        body = resp.json()
        if resp.status_code != 200:
            raise CliError(body.get("code", f"http_{resp.status_code}"), body.get("message", resp.text))
        return body

    from frag.service.app import ServiceState, retrieve
    from frag.service.schemas import RetrieveRequest

    cfg = app.model_copy(update={"serve_split": args.split, "index_paths": {}})
    state = ServiceState.from_config(cfg)
    try:
        req = RetrieveRequest(task=args.task, text=args.text, k=args.k, engine=args.engine, kind_filter=args.kind)
    except ValueError as exc:
        raise CliError("invalid_request", str(exc)) from None
    hits = retrieve(state, req)
    return {"results": [h.to_json() for h in hits], "engine": args.engine,
            "model_fingerprint": state.model.fingerprint()}


def cmd_serve(args, app: AppConfig) -> dict:
    import uvicorn

    from frag.service.app import app_from_config

    cfg = app.model_copy(update={k: v for k, v in (("host", args.host), ("port", args.port),
                                                   ("serve_split", args.split)) if v is not None})
    uvicorn.run(app_from_config(cfg), host=cfg.host, port=cfg.port, log_config=None)
    return {"stopped": True}


class CliError(RuntimeError):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


def error_code(exc: BaseException) -> str:
    code = getattr(exc, "code", None)
    if isinstance(code, str):
        return code
    if isinstance(exc, ConfigError):
        return "bad_config"
    return type(exc).__name__


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        app = AppConfig.load(args.config, data_dir=args.work, log_level=args.log_level)
        setup_logging(app.log_level)
        if args.command in STAGE_COMMANDS:
            out = cmd_stage(args, app)
        elif args.command == "pipeline":
            out = cmd_pipeline(args, app)
        elif args.command == "retrieve":
            out = cmd_retrieve(args, app)
        else:
            out = cmd_serve(args, app)
    except KeyboardInterrupt:
        return 130
    except Exception as exc:
        log.debug("command failed", exc_info=True)
        sys.stderr.write(json.dumps({"error": error_code(exc), "message": str(exc)}) + "\n")
        return 1
    if args.command == "retrieve":
        sys.stdout.write(json.dumps(out, indent=2) + "\n")
    else:
        sys.stderr.write(json.dumps(out) + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
