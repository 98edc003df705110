"""Pipeline stages with content-hashed manifests and up-to-date short-circuiting.

Work directory layout::

    corpus/     flows, catalogs and extracts per split (synth)
    dataset/    train.jsonl, eval-<split>.jsonl, report.json (build-dataset)
    model/      encoder.frag (train)
    index/      <split>.fragix + metadata sidecar (index)
    eval/       report.json, table.txt, table.csv (eval)
    compare/    report.json, table.txt (compare)

Every stage directory carries a ``manifest.json`` listing the sha256 of its
inputs and outputs, its configuration and package versions.
"""

from __future__ import annotations

import hashlib
import json
import logging
import platform
import shutil
import tempfile
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable

import numpy as np
import scipy

from frag import __version__
from frag.corpus import render_element
from frag.dataset import (
    DatasetBuild,
    DownsamplePolicy,
    InstructionPair,
    build_dataset,
    read_dataset,
    write_dataset,
)
from frag.encoder import EncoderModel, init_model, load_model, save_model
from frag.evaluation import (
    COLUMNS,
    bm25_engine,
    default_specs,
    dense_engine,
    dumps_report,
    evaluate,
    format_csv,
    format_table,
    headline,
    workflow_retrieval_eval,
)
from frag.features import FeaturizerConfig
from frag.retrieval import DenseIndex, DenseRetriever, dense_build
from frag.synth import CorpusConfig, SplitSet, generate_corpus, preset, read_corpus, write_corpus
from frag.training import TrainConfig, train

log = logging.getLogger(__name__)

MANIFEST = "manifest.json"


class StageError(RuntimeError):
    """A stage could not run; ``code`` is a stable machine-readable identifier."""

    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


# -- configuration -------------------------------------------------------------


@dataclass(frozen=True)
class ModelConfig:
    hash_dim: int = 2**18
    embed_dim: int = 256
    flags: int = 7
    init_seed: int = 0

    def featurizer(self) -> FeaturizerConfig:
        return FeaturizerConfig(hash_dim=self.hash_dim, flags=self.flags)

    def init(self) -> EncoderModel:
        return init_model(self.featurizer(), self.embed_dim, self.init_seed)


@dataclass(frozen=True)
class DatasetConfig:
    downsample: bool = True
    anchor_freq: float = 5.0
    base: float = 4.0
    max_factor: float = 64.0
    neg_random: int = 1
    neg_hard: int = 1
    seed: int = 0
    task_groups: tuple[str, ...] | None = None

    def policy(self) -> DownsamplePolicy | None:
        if not self.downsample:
            return None
        return DownsamplePolicy(self.anchor_freq, self.base, self.max_factor, self.seed)


@dataclass(frozen=True)
class RunConfig:
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    bm25_k1: float = 1.2
    bm25_b: float = 0.75
    bm25_strip_header: bool = True
    workflow_splits: int = 3

    def to_json(self) -> dict:
        return {
            "corpus": self.corpus.to_json(),
            "dataset": {**asdict(self.dataset),
                        "task_groups": list(self.dataset.task_groups) if self.dataset.task_groups else None},
            "model": asdict(self.model),
            "train": self.train.to_json(),
            "bm25_k1": self.bm25_k1,
            "bm25_b": self.bm25_b,
            "bm25_strip_header": self.bm25_strip_header,
            "workflow_splits": self.workflow_splits,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "RunConfig":
        obj = dict(obj)
        kwargs = {}
        if "corpus" in obj:
            kwargs["corpus"] = CorpusConfig.from_json(obj.pop("corpus"))
        if "dataset" in obj:
            d = dict(obj.pop("dataset"))
            if d.get("task_groups") is not None:
                d["task_groups"] = tuple(d["task_groups"])
            kwargs["dataset"] = DatasetConfig(**d)
        if "model" in obj:
            kwargs["model"] = ModelConfig(**obj.pop("model"))
        if "train" in obj:
            kwargs["train"] = TrainConfig(**obj.pop("train"))
        try:
            return cls(**kwargs, **obj)
        except TypeError as exc:
            raise StageError("bad_config", str(exc)) from None


def run_preset(name: str) -> RunConfig:
    """``acceptance``: the desk-scale run used by the acceptance suite; ``tiny``: seconds-scale smoke run."""
    if name == "acceptance":
        return RunConfig(corpus=preset("acceptance"), model=ModelConfig(hash_dim=2**16, embed_dim=128),
                         train=TrainConfig(total_steps=5000))
    if name == "paper":
        return RunConfig(corpus=preset("paper"), train=TrainConfig.paper())
    if name == "tiny":
        return RunConfig(corpus=preset("tiny"), model=ModelConfig(hash_dim=2**12, embed_dim=16),
                         train=TrainConfig(total_steps=60, warmup_steps=10), workflow_splits=2)
    raise StageError("unknown_preset", f"unknown preset {name!r}")


# -- manifests -----------------------------------------------------------------


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def hash_tree(root: Path) -> dict[str, str]:
    """sha256 of every file under ``root`` except manifests, keyed by relative path."""
    root = Path(root)
    if root.is_file():
        return {root.name: sha256_file(root)}
    return {p.relative_to(root).as_posix(): sha256_file(p)
            for p in sorted(root.rglob("*")) if p.is_file() and p.name != MANIFEST}


def versions() -> dict[str, str]:
    return {"frag": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__}


def _inputs_digest(inputs: dict[str, Path]) -> dict[str, dict[str, str]]:
    out = {}
    for name, path in sorted(inputs.items()):
        if not Path(path).exists():
            raise StageError("missing_input", f"input {name!r} not found at {path}; run the upstream stage first")
        out[name] = hash_tree(path)
    return out


def read_manifest(out_dir: Path) -> dict | None:
    path = Path(out_dir) / MANIFEST
    if not path.exists():
        return None
    try:
        return json.loads(path.read_text())
    except ValueError:
        return None


@dataclass
class StageResult:
    stage: str
    out_dir: Path
    status: str  # "built" or "up-to-date"
    manifest: dict


def run_stage(stage: str, out_dir: Path, inputs: dict[str, Path], config: dict,
              build: Callable[[Path], None], force: bool = False) -> StageResult:
    """Run ``build`` into a scratch directory and publish it atomically with a manifest.

    Skips the build when the existing manifest records the same inputs and
    config and the outputs on disk still match their recorded hashes. On
    failure the scratch directory is removed and the previous output is kept.
    """
    out_dir = Path(out_dir)
    digest = _inputs_digest(inputs)
    existing = read_manifest(out_dir)
    if (not force and existing and existing.get("inputs") == digest and existing.get("config") == config
            and existing.get("outputs") == hash_tree(out_dir)):
        log.info("%s: up-to-date", stage)
        return StageResult(stage, out_dir, "up-to-date", existing)
    out_dir.parent.mkdir(parents=True, exist_ok=True)
    scratch = Path(tempfile.mkdtemp(prefix=f".{out_dir.name}-", dir=out_dir.parent))
    try:
        build(scratch)
        manifest = {"stage": stage, "inputs": digest, "config": config, "versions": versions(),
                    "outputs": hash_tree(scratch)}
        (scratch / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        if out_dir.exists():
            shutil.rmtree(out_dir)
        scratch.rename(out_dir)
    except BaseException:
        shutil.rmtree(scratch, ignore_errors=True)
        raise
    log.info("%s: built %s", stage, out_dir)
    return StageResult(stage, out_dir, "built", manifest)


# -- stages --------------------------------------------------------------------


@dataclass(frozen=True)
class Layout:
    root: Path

    @property
    def corpus(self) -> Path:
        return self.root / "corpus"

    @property
    def dataset(self) -> Path:
        return self.root / "dataset"

    @property
    def model_dir(self) -> Path:
        return self.root / "model"

    @property
    def model(self) -> Path:
        return self.model_dir / "encoder.frag"

    @property
    def index(self) -> Path:
        return self.root / "index"

    @property
    def eval(self) -> Path:
        return self.root / "eval"

    @property
    def compare(self) -> Path:
        return self.root / "compare"

    def index_file(self, split: str) -> Path:
        return self.index / f"{split}.fragix"


def stage_synth(layout: Layout, cfg: RunConfig, force: bool = False) -> StageResult:
    def build(out: Path) -> None:
        write_corpus(generate_corpus(cfg.corpus), out, cfg.corpus)
    return run_stage("synth", layout.corpus, {}, {"corpus": cfg.corpus.to_json()}, build, force)


def stage_build_dataset(layout: Layout, cfg: RunConfig, force: bool = False) -> StageResult:
    def build(out: Path) -> None:
        split = read_corpus(layout.corpus)
        write_dataset(build_dataset(split, neg_random=cfg.dataset.neg_random, neg_hard=cfg.dataset.neg_hard,
                                    policy=cfg.dataset.policy(), seed=cfg.dataset.seed,
                                    task_groups=cfg.dataset.task_groups), out)
    config = {"dataset": cfg.to_json()["dataset"]}
    return run_stage("build-dataset", layout.dataset, {"corpus": layout.corpus}, config, build, force)


def training_triples(pairs: Iterable[InstructionPair], split: SplitSet) -> list[tuple[str, str, int]]:
    catalog = split.catalog("train")
    out = []
    for p in pairs:
        element = catalog.get(*p.target)
        if element is None:
            raise StageError("missing_element", f"training target {p.target} is not in the train catalog")
        out.append((p.instruction, render_element(element), int(p.is_positive)))
    return out


def train_model(cfg: RunConfig, pairs: list[InstructionPair], split: SplitSet) -> EncoderModel:
    model = cfg.model.init()
    train(model, training_triples(pairs, split), cfg.train, log_every=500)
    return model


def stage_train(layout: Layout, cfg: RunConfig, force: bool = False) -> StageResult:
    def build(out: Path) -> None:
        split = read_corpus(layout.corpus)
        data = read_dataset(layout.dataset)
        save_model(train_model(cfg, data.train, split), out / layout.model.name)
    config = {"model": asdict(cfg.model), "train": cfg.train.to_json()}
    return run_stage("train", layout.model_dir, {"corpus": layout.corpus, "dataset": layout.dataset},
                     config, build, force)


def eval_split_names(split: SplitSet) -> list[str]:
    return [n for n in split.split_names() if n != "train"]


def stage_index(layout: Layout, cfg: RunConfig, force: bool = False) -> StageResult:
    def build(out: Path) -> None:
        split = read_corpus(layout.corpus)
        model = load_model(layout.model)
        for name in eval_split_names(split):
            dense_build(model, list(split.catalog(name))).save(out / layout.index_file(name).name)
    return run_stage("index", layout.index, {"corpus": layout.corpus, "model": layout.model_dir}, {}, build, force)


def loaded_engine(model: EncoderModel, layout: Layout):
    """Dense engine that reuses each split's persisted index instead of re-embedding."""
    def build(elements, split=None):
        index = DenseIndex.load(layout.index_file(split))
        if [e.key for e in index.elements] != [e.key for e in elements]:
            raise StageError("stale_index", f"index for {split} does not match its catalog")
        return DenseRetriever(model, index)
    build.engine_id = f"fine-tuned:{model.fingerprint()}"
    return build


def evaluate_all(cfg: RunConfig, split: SplitSet, data: DatasetBuild, finetuned: EncoderModel,
                 layout: Layout | None = None) -> dict:
    """BM25, untrained and fine-tuned encoders on dev and the weighted OOD splits, plus workflow retrieval."""
    specs = default_specs()
    ood_names = [n for n in eval_split_names(split) if n.startswith("ood-")]
    groups = {"dev": ["dev"], "ood": ood_names}
    untrained = cfg.model.init()
    bm25 = bm25_engine(cfg.bm25_k1, cfg.bm25_b, cfg.bm25_strip_header)
    report: dict = {"config": cfg.to_json(), "results": {}, "workflow": {}}
    for group, names in groups.items():
        splits = {n: (split.catalog(n), data.eval[n]) for n in names}
        engines = {
            "bm25": bm25,
            "untrained": dense_engine(untrained, "untrained"),
            "fine-tuned": loaded_engine(finetuned, layout) if layout else dense_engine(finetuned, "fine-tuned"),
        }
        report["results"][group] = {}
        for name, engine in engines.items():
            report["results"][group][name] = evaluate(engine, specs, splits)
    wf_names = ood_names[: cfg.workflow_splits]
    wf_splits = {n: (split.docs(n), split.doc_ids(n)) for n in wf_names}
    for name, engine in {"bm25": bm25, "untrained": dense_engine(untrained, "untrained"),
                         "fine-tuned": dense_engine(finetuned, "fine-tuned")}.items():
        report["workflow"][name] = workflow_retrieval_eval(engine, wf_splits, engine_id=name)
    report["tables"] = {group: {name: headline(r, specs) for name, r in rows.items()}
                        for group, rows in report["results"].items()}
    report["tables"]["workflow"] = {name: r["average"] for name, r in report["workflow"].items()}
    return report


def render_tables(report: dict) -> str:
    parts = []
    titles = {"ood": "OOD (weighted by per-task sample count)", "dev": "dev", "workflow": "workflow retrieval"}
    for group in ("ood", "dev", "workflow"):
        if group in report["tables"]:
            parts.append(titles[group] + "\n" + format_table(report["tables"][group]))
    return "\n".join(parts)


def stage_eval(layout: Layout, cfg: RunConfig, force: bool = False, csv: bool = False) -> StageResult:
    def build(out: Path) -> None:
        split = read_corpus(layout.corpus)
        data = read_dataset(layout.dataset)
        report = evaluate_all(cfg, split, data, load_model(layout.model), layout)
        (out / "report.json").write_text(dumps_report(report))
        (out / "table.txt").write_text(render_tables(report))
        if csv:
            (out / "table.csv").write_text(format_csv(report["tables"]["ood"]))
    config = {"run": cfg.to_json(), "csv": csv}
    inputs = {"corpus": layout.corpus, "dataset": layout.dataset, "model": layout.model_dir, "index": layout.index}
    return run_stage("eval", layout.eval, inputs, config, build, force)


def compare_ablations(cfg: RunConfig, split: SplitSet, on_model: Callable[[str, EncoderModel], None] | None = None) -> dict:
    """Dev comparison of single-task, multi-task and multi-task + downsampled training.

    Single-task trains one encoder per task group and reports each on its
    own column. Every variant shares the corpus, seeds and train config.
    """
    specs = {s.kind: s for s in default_specs()}
    dev_catalog = split.catalog("dev")

    def run(name: str, dataset_cfg: DatasetConfig, columns: tuple[str, ...]) -> dict:
        data = build_dataset(split, neg_random=dataset_cfg.neg_random, neg_hard=dataset_cfg.neg_hard,
                             policy=dataset_cfg.policy(), seed=dataset_cfg.seed, task_groups=dataset_cfg.task_groups)
        model = train_model(cfg, data.train, split)
        if on_model:
            on_model(name, model)
        report = evaluate(dense_engine(model, name), [specs[c] for c in columns],
                          {"dev": (dev_catalog, data.eval["dev"])}, engine_id=name)
        return {"dataset": data.report, "model_fingerprint": model.fingerprint(), "headline": headline(report),
                "report": report}

    rows: dict[str, dict] = {}
    single = {}
    for group in COLUMNS:
        single[group] = run(f"single-{group}", replace(cfg.dataset, downsample=False, task_groups=(group,)), (group,))
    rows["Single Task"] = {k: v for s in single.values() for k, v in s["headline"].items()}
    multi = run("multi-task", replace(cfg.dataset, downsample=False, task_groups=None), COLUMNS)
    rows["Multi-Task"] = multi["headline"]
    down = run("multi-task+downsampled", replace(cfg.dataset, downsample=True, task_groups=None), COLUMNS)
    rows["+ Downsampled data"] = down["headline"]
    return {
        "config": cfg.to_json(),
        "table": rows,
        "variants": {"single": single, "multi-task": multi, "multi-task+downsampled": down},
    }


def stage_compare(layout: Layout, cfg: RunConfig, force: bool = False) -> StageResult:
    def build(out: Path) -> None:
        result = compare_ablations(cfg, read_corpus(layout.corpus))
        (out / "report.json").write_text(dumps_report(result))
        (out / "table.txt").write_text(format_table(result["table"]))
    return run_stage("compare", layout.compare, {"corpus": layout.corpus}, {"run": cfg.to_json()}, build, force)


STAGES = {
    "synth": stage_synth,
    "build-dataset": stage_build_dataset,
    "train": stage_train,
    "index": stage_index,
    "eval": stage_eval,
    "compare": stage_compare,
}


def run_pipeline(root: str | Path, cfg: RunConfig, stages: Iterable[str] = ("synth", "build-dataset", "train",
                                                                           "index", "eval")) -> dict[str, StageResult]:
    layout = Layout(Path(root))
    return {name: STAGES[name](layout, cfg) for name in stages}
