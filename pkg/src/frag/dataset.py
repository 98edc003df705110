"""Instruction-pair datasets: positives, mined negatives and downsampling."""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from frag.corpus import Element, ElementCatalog, WorkflowDoc, read_jsonl, write_jsonl
from frag.rng import stream
from frag.synth import SplitSet
from frag.templates import (
    TEMPLATES,
    TRAINING_TEMPLATES,
    InstructionTemplate,
    TaskId,
    TemplateError,
    render_instruction,
)


class MissingElementError(KeyError):
    pass


class ExhaustedError(LookupError):
    pass


TargetKey = tuple  # (kind, name, parent)

# evaluation templates per reported column: steps from the requirement and from
# an annotation, tables from the workflow context, fields from an annotation
EVAL_TEMPLATES = {
    "step": ("T01", "T04"),
    "table": ("T06",),
    "field": ("T09",),
}
WORKFLOW_TEMPLATE = "T15"

TASK_GROUPS = {
    "step": (TaskId.step_from_requirement, TaskId.step_from_annotation, TaskId.step_from_context),
    "table": (TaskId.table_from_context, TaskId.table_from_text),
    "field": (TaskId.field_from_text, TaskId.field_from_table_context),
    "catalog_item": (TaskId.catalog_item_from_description,),
}


@dataclass(frozen=True)
class InstructionPair:
    task: TaskId
    template_id: str
    instruction: str
    target: TargetKey
    label: str = "positive"
    negative_kind: str = "none"
    provenance: dict = field(default_factory=dict, hash=False, compare=False)

    def __post_init__(self):
        if self.label not in ("positive", "negative"):
            raise ValueError(f"bad label {self.label!r}")
        if self.negative_kind not in ("none", "random", "hard"):
            raise ValueError(f"bad negative kind {self.negative_kind!r}")
        if (self.label == "positive") != (self.negative_kind == "none"):
            raise ValueError("positives carry negative_kind 'none' and negatives do not")

    @property
    def is_positive(self) -> bool:
        return self.label == "positive"

    def to_json(self) -> dict:
        kind, name, parent = self.target
        return {
            "task": self.task.value,
            "template_id": self.template_id,
            "instruction": self.instruction,
            "target": {"kind": kind, "name": name, "parent": parent or None},
            "label": self.label,
            "negative_kind": self.negative_kind,
            "provenance": self.provenance,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "InstructionPair":
        t = obj["target"]
        return cls(
            task=TaskId(obj["task"]),
            template_id=obj["template_id"],
            instruction=obj["instruction"],
            target=(t["kind"], t["name"], t.get("parent") or ""),
            label=obj["label"],
            negative_kind=obj["negative_kind"],
            provenance=obj.get("provenance") or {},
        )


def write_pairs(path: str | Path, pairs: Iterable[InstructionPair]) -> None:
    write_jsonl(path, (p.to_json() for p in pairs))


def read_pairs(path: str | Path) -> list[InstructionPair]:
    return [InstructionPair.from_json(obj) for obj in read_jsonl(path)]


# -- positives -----------------------------------------------------------------


def _resolve(catalog: ElementCatalog, key: TargetKey, report: Counter | None, strict: bool) -> bool:
    if key in catalog:
        return True
    if strict:
        raise MissingElementError(key)
    if report is not None:
        report[f"missing_{key[0]}"] += 1
    return False


def extract_positive_pairs(doc: WorkflowDoc, catalog: ElementCatalog,
                           templates: Sequence[str] = TRAINING_TEMPLATES, doc_id: str = "",
                           report: Counter | None = None, strict: bool = False) -> list[InstructionPair]:
    """Positive pairs for every selected template that applies to ``doc``.

    Targets missing from ``catalog`` are skipped and counted in ``report``
    (or raise :class:`MissingElementError` when ``strict``).
    """
    out: list[InstructionPair] = []
    selected = [TEMPLATES[t] for t in templates]

    def emit(template: InstructionTemplate, position: int | None, targets: list[TargetKey]) -> None:
        targets = [k for k in dict.fromkeys(targets) if _resolve(catalog, k, report, strict)]
        if not targets:
            return
        try:
            text = render_instruction(template, doc, position)
        except TemplateError:
            if report is not None:
                report["template_skipped"] += 1
            return
        prov = {"doc": doc_id, "step": position}
        out.extend(InstructionPair(template.task, template.template_id, text, k, provenance=prov) for k in targets)

    doc_steps = [("step", s.definition, "") for s in doc.steps]
    doc_tables = [("table", t, "") for s in doc.steps for t in s.tables()]
    for template in selected:
        task = template.task
        if task == TaskId.step_from_requirement:
            emit(template, None, doc_steps)
        elif task == TaskId.table_from_text and "requirement" in template.context_fields:
            emit(template, None, doc_tables)
        elif task == TaskId.workflow_from_text:
            emit(template, None, [("workflow", doc_id, "")])
        elif task in (TaskId.catalog_item_from_description,):
            continue
        else:
            for i, step in enumerate(doc.steps):
                if task in (TaskId.step_from_context, TaskId.step_from_annotation):
                    targets = [("step", step.definition, "")]
                elif task in (TaskId.table_from_context, TaskId.table_from_text):
                    targets = [("table", t, "") for t in step.tables()]
                else:
                    targets = [("field", f, t) for t, f in step.field_refs()]
                if targets:
                    emit(template, i, targets)
    return out


def extract_item_pairs(rows: Sequence[dict], templates: Sequence[str] = TRAINING_TEMPLATES,
                       source: str = "") -> list[InstructionPair]:
    """Catalog-item positives from table extract rows that carry a description."""
    out = []
    item_templates = [TEMPLATES[t] for t in templates if TEMPLATES[t].task == TaskId.catalog_item_from_description]
    for i, row in enumerate(rows):
        if row.get("kind") != "catalog_item" or not row.get("description"):
            continue
        desc = row["description"]
        extra = {"description": desc, "short_description": desc.split(",")[0]}
        for template in item_templates:
            text = render_instruction(template, extra=extra)
            out.append(InstructionPair(template.task, template.template_id, text,
                                       ("catalog_item", row["name"], ""), provenance={"row": i, "source": source}))
    return out


# -- negatives -----------------------------------------------------------------


def _sample_excluding(pool: Sequence[Element], exclude: set, rng: np.random.Generator) -> Element:
    if len(pool) == 0:
        raise ExhaustedError("empty pool")
    # rejection sampling keeps the draw uniform; fall back to filtering for tiny pools
    for _ in range(32):
        e = pool[int(rng.integers(len(pool)))]
        if e.key not in exclude:
            return e
    allowed = [e for e in pool if e.key not in exclude]
    if not allowed:
        raise ExhaustedError("no element outside the positive set")
    return allowed[int(rng.integers(len(allowed)))]


def _negative(positive: InstructionPair, element: Element, kind: str) -> InstructionPair:
    return InstructionPair(positive.task, positive.template_id, positive.instruction, element.key,
                           label="negative", negative_kind=kind, provenance=positive.provenance)


def mine_random_negative(positive: InstructionPair, catalog: ElementCatalog, rng: np.random.Generator,
                         exclude: set | None = None) -> InstructionPair:
    """Same instruction, a uniformly drawn element of the target kind that is not a positive."""
    exclude = set(exclude or ()) | {positive.target}
    element = _sample_excluding(catalog.of_kind(positive.target[0]), exclude, rng)
    return _negative(positive, element, "random")


def _bucket_key(positive: InstructionPair, catalog: ElementCatalog) -> tuple | None:
    kind, name, parent = positive.target
    if kind == "field":
        return ("field", parent)
    element = catalog.get(kind, name, parent)
    if element is None:
        return None
    if kind in ("step", "table") and element.scope:
        return (kind, element.scope)
    if kind == "catalog_item" and name.count("_") >= 2:
        return (kind, name.split("_")[1])
    return None


def _bucket(key: tuple, catalog: ElementCatalog) -> list[Element]:
    kind, value = key
    if kind == "field":
        return catalog.fields_of(value)
    if kind == "catalog_item":
        return [e for e in catalog.of_kind(kind) if e.name.split("_")[1:2] == [value]]
    return catalog.in_scope(kind, value)


def mine_hard_negative(positive: InstructionPair, catalog: ElementCatalog, rng: np.random.Generator,
                       exclude: set | None = None, buckets: dict | None = None) -> InstructionPair:
    """Negative from the positive's structural bucket, else a random one.

    Steps and tables draw from the same scope, fields from the same table.
    ``buckets`` memoizes bucket contents across calls on one catalog.
    """
    exclude = set(exclude or ()) | {positive.target}
    key = _bucket_key(positive, catalog)
    if key is not None:
        if buckets is None:
            bucket = _bucket(key, catalog)
        else:
            if key not in buckets:
                buckets[key] = _bucket(key, catalog)
            bucket = buckets[key]
        try:
            return _negative(positive, _sample_excluding(bucket, exclude, rng), "hard")
        except ExhaustedError:
            pass
    return mine_random_negative(positive, catalog, rng, exclude)


def attach_negatives(positives: Sequence[InstructionPair], catalog: ElementCatalog, rng: np.random.Generator,
                     n_random: int = 1, n_hard: int = 1, report: Counter | None = None) -> list[InstructionPair]:
    """Interleave each positive with its mined negatives (positive first)."""
    gold: dict[str, set] = {}
    for p in positives:
        gold.setdefault(p.instruction, set()).add(p.target)
    out = []
    buckets: dict = {}
    for p in positives:
        out.append(p)
        for kind, count in (("random", n_random), ("hard", n_hard)):
            for _ in range(count):
                try:
                    if kind == "hard":
                        out.append(mine_hard_negative(p, catalog, rng, gold[p.instruction], buckets))
                    else:
                        out.append(mine_random_negative(p, catalog, rng, gold[p.instruction]))
                except ExhaustedError:
                    if report is not None:
                        report["negatives_exhausted"] += 1
    return out


# -- downsampling --------------------------------------------------------------


@dataclass(frozen=True)
class DownsamplePolicy:
    anchor_freq: float = 5.0
    base: float = 4.0
    max_factor: float = 64.0
    seed: int = 0

    def factor(self, freq: float) -> float:
        """``base`` to the power of decades above ``anchor_freq``; 50 -> 4, 500 -> 16."""
        if freq <= self.anchor_freq:
            return 1.0
        return min(self.max_factor, max(1.0, self.base ** math.log10(freq / self.anchor_freq)))


def element_frequencies(pairs: Iterable[InstructionPair]) -> Counter:
    """Positive pair count per target; used when no corpus counts are available."""
    return Counter(p.target for p in pairs if p.is_positive)


def corpus_frequencies(docs: Iterable[WorkflowDoc]) -> Counter:
    """How often each step, table and field is referenced across ``docs``."""
    freq: Counter = Counter()
    for doc in docs:
        for step in doc.steps:
            freq[("step", step.definition, "")] += 1
            for table in step.tables():
                freq[("table", table, "")] += 1
            for table, name in step.field_refs():
                freq[("field", name, table)] += 1
    return freq


def downsample(pairs: Sequence[InstructionPair], policy: DownsamplePolicy,
               rng: np.random.Generator | None = None, freq: Counter | None = None) -> list[InstructionPair]:
    """Keep each positive with probability 1/factor(f), f the frequency of its target.

    ``freq`` holds corpus frequencies (see :func:`corpus_frequencies`); when
    omitted, positive pair counts stand in. Negatives directly following a
    positive belong to it and share its fate.
    """
    rng = rng if rng is not None else stream(policy.seed, "downsample")
    freq = freq if freq is not None else element_frequencies(pairs)
    out = []
    keep = True
    for p in pairs:
        if p.is_positive:
            f = policy.factor(freq[p.target])
            keep = f <= 1.0 or rng.random() < 1.0 / f
        if keep:
            out.append(p)
    return out


# -- dataset build -------------------------------------------------------------


@dataclass
class DatasetBuild:
    train: list[InstructionPair]
    eval: dict[str, list[InstructionPair]]
    report: dict


def _task_filter(pairs: list[InstructionPair], groups: Sequence[str] | None) -> list[InstructionPair]:
    if groups is None:
        return pairs
    allowed = {t for g in groups for t in TASK_GROUPS[g]}
    return [p for p in pairs if p.task in allowed]


def eval_pairs(docs: Sequence[WorkflowDoc], doc_ids: Sequence[str], catalog: ElementCatalog,
               columns: dict[str, tuple[str, ...]] = EVAL_TEMPLATES, report: Counter | None = None) -> list[InstructionPair]:
    templates = [t for group in columns.values() for t in group]
    out = []
    for doc_id, doc in zip(doc_ids, docs):
        out.extend(extract_positive_pairs(doc, catalog, templates, doc_id, report))
    return out


def build_dataset(split: SplitSet, templates: Sequence[str] = TRAINING_TEMPLATES, neg_random: int = 1,
                  neg_hard: int = 1, policy: DownsamplePolicy | None = None, seed: int = 0,
                  task_groups: Sequence[str] | None = None) -> DatasetBuild:
    """Training pairs from the train split plus positives-only dev/OOD evaluation sets.

    ``policy=None`` disables downsampling; ``task_groups`` restricts training
    pairs to some of ``step``/``table``/``field``/``catalog_item``.
    """
    report: Counter = Counter()
    catalog = split.catalog("train")
    train: list[InstructionPair] = []
    for doc_id, doc in zip(split.doc_ids("train"), split.train):
        positives = extract_positive_pairs(doc, catalog, templates, doc_id, report)
        positives = _task_filter(positives, task_groups)
        train.extend(attach_negatives(positives, catalog, stream(seed, "negatives", doc_id), neg_random, neg_hard, report))
    items = _task_filter(extract_item_pairs(split.extracts.get("train", []), templates, "train"), task_groups)
    train.extend(attach_negatives(items, catalog, stream(seed, "negatives", "items"), neg_random, neg_hard, report))

    before = Counter(p.label for p in train)
    if policy is not None:
        train = downsample(train, policy, stream(seed, "downsample", policy.seed), corpus_frequencies(split.train))
    after = Counter(p.label for p in train)

    evals: dict[str, list[InstructionPair]] = {}
    for name in split.split_names():
        if name == "train":
            continue
        evals[name] = eval_pairs(split.docs(name), split.doc_ids(name), split.catalog(name), EVAL_TEMPLATES, report)

    from_items = sum(1 for p in train if p.task == TaskId.catalog_item_from_description)
    summary = {
        "train_pairs": len(train),
        "positives_before_downsampling": before["positive"],
        "negatives_before_downsampling": before["negative"],
        "positives": after["positive"],
        "negatives": after["negative"],
        "negative_kinds": dict(sorted(Counter(p.negative_kind for p in train if not p.is_positive).items())),
        "per_task": dict(sorted(Counter(p.task.value for p in train).items())),
        "share_from_extracts": from_items / len(train) if train else 0.0,
        "eval_pairs": {name: len(pairs) for name, pairs in evals.items()},
        "skips": dict(sorted(report.items())),
        "downsampled": policy is not None,
        "task_groups": list(task_groups) if task_groups else None,
    }
    return DatasetBuild(train, evals, summary)


def write_dataset(build: DatasetBuild, root: str | Path) -> None:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    write_pairs(root / "train.jsonl", build.train)
    for name, pairs in build.eval.items():
        write_pairs(root / f"eval-{name}.jsonl", pairs)
    (root / "report.json").write_text(json.dumps(build.report, indent=2, sort_keys=True) + "\n")


def read_dataset(root: str | Path) -> DatasetBuild:
    root = Path(root)
    evals = {p.name[5:-6]: read_pairs(p) for p in sorted(root.glob("eval-*.jsonl"))}
    report = json.loads((root / "report.json").read_text()) if (root / "report.json").exists() else {}
    return DatasetBuild(read_pairs(root / "train.jsonl"), evals, report)
