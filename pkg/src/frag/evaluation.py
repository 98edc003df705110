"""Evaluation harness: per-split metrics, weighted averages and ablation tables."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from frag.corpus import Element, ElementCatalog, WorkflowDoc, doc_tree, render_element
from frag import docformat
from frag.dataset import EVAL_TEMPLATES, InstructionPair, eval_pairs
from frag.encoder import EncoderModel
from frag.metrics import mrr, ndcg_at_k, recall_at_k, weighted_mean
from frag.retrieval import Bm25Index, DenseRetriever, Hit, dense_build
from frag.templates import TEMPLATES, render_instruction

log = logging.getLogger(__name__)

COLUMNS = ("step", "table", "field")
DEFAULT_K = {"step": 15, "table": 5, "field": 5, "catalog_item": 5, "workflow": 5}


def column_label(kind: str, k: int) -> str:
    return f"{kind.capitalize()}@{k}"


@dataclass(frozen=True)
class EvalTaskSpec:
    """One reported column: which templates feed it, its cutoff and candidate kind."""

    kind: str
    k: int
    templates: tuple[str, ...]

    @property
    def label(self) -> str:
        return column_label(self.kind, self.k)


def default_specs(columns: dict[str, tuple[str, ...]] = EVAL_TEMPLATES) -> list[EvalTaskSpec]:
    return [EvalTaskSpec(kind, DEFAULT_K[kind], tuple(t)) for kind, t in columns.items()]


@dataclass(frozen=True)
class EvalInstance:
    instruction: str
    gold: frozenset
    template_id: str


def group_instances(pairs: Sequence[InstructionPair], spec: EvalTaskSpec, multi_gold: bool = True) -> list[EvalInstance]:
    """Group positives sharing a source and instruction into one set-recall instance.

    With ``multi_gold=False`` every gold element becomes its own instance.
    """
    groups: dict[tuple, set] = {}
    order: list[tuple] = []
    for p in pairs:
        if not p.is_positive or p.template_id not in spec.templates or p.target[0] != spec.kind:
            continue
        prov = p.provenance
        key = (prov.get("doc"), prov.get("step"), p.template_id, p.instruction)
        if not multi_gold:
            key = key + (p.target,)
        if key not in groups:
            groups[key] = set()
            order.append(key)
        groups[key].add(p.target)
    return [EvalInstance(k[3], frozenset(groups[k]), k[2]) for k in order]


Engine = Callable[[Sequence[Element]], object]


def bm25_engine(k1: float = 1.2, b: float = 0.75, strip_header: bool = True) -> Engine:
    def build(elements, split=None):
        return Bm25Index(elements, k1=k1, b=b, strip_query_header=strip_header)
    build.engine_id = f"bm25(k1={k1},b={b},strip_header={strip_header})"
    return build


def dense_engine(model: EncoderModel, label: str = "dense") -> Engine:
    def build(elements, split=None):
        return DenseRetriever(model, dense_build(model, elements))
    build.engine_id = f"{label}:{model.fingerprint()}"
    return build


def _search(retriever, queries: Sequence[str], k: int, kind: str | None) -> list[list[Hit]]:
    if hasattr(retriever, "topk_many"):
        return retriever.topk_many(queries, k, kind)
    return [retriever.topk(q, k, kind) for q in queries]


def score_instances(retriever, instances: Sequence[EvalInstance], k: int, kind: str | None) -> list[dict]:
    results = _search(retriever, [i.instruction for i in instances], k, kind)
    out = []
    for inst, hits in zip(instances, results):
        ranked = [h.element.key for h in hits]
        out.append({
            "recall": recall_at_k(ranked, set(inst.gold), k),
            "mrr": mrr(ranked, set(inst.gold)),
            "ndcg": ndcg_at_k(ranked, set(inst.gold), k),
        })
    return out


def _mean(rows: list[dict], key: str) -> float:
    return float(np.mean([r[key] for r in rows])) if rows else float("nan")


def _corr(a: list[float], b: list[float]) -> float | None:
    if len(a) < 2 or np.std(a) == 0 or np.std(b) == 0:
        return None
    return float(np.corrcoef(a, b)[0, 1])


def evaluate(engine: Engine, specs: Sequence[EvalTaskSpec], splits: dict[str, tuple[ElementCatalog, list[InstructionPair]]],
             engine_id: str | None = None, config: dict | None = None, multi_gold: bool = True) -> dict:
    """Evaluate ``engine`` on every split and spec and aggregate weighted by per-task sample counts.

    ``splits`` maps split name to (catalog, positive eval pairs). The engine
    factory is called once per split as ``engine(elements, split=name)``.
    """
    per_split: dict[str, dict] = {}
    flagged = []
    all_rows: list[dict] = []
    for split, (catalog, pairs) in splits.items():
        retriever = engine(list(catalog), split=split)
        per_split[split] = {}
        for spec in specs:
            instances = group_instances(pairs, spec, multi_gold)
            if not instances:
                flagged.append({"split": split, "column": spec.label, "reason": "no samples"})
                continue
            rows = score_instances(retriever, instances, spec.k, spec.kind)
            all_rows.extend(rows)
            per_split[split][spec.label] = {
                "n": len(rows), "k": spec.k,
                "recall": _mean(rows, "recall"), "mrr": _mean(rows, "mrr"), "ndcg": _mean(rows, "ndcg"),
            }
    weighted = {}
    for spec in specs:
        parts = [per_split[s][spec.label] for s in per_split if spec.label in per_split[s]]
        if not parts:
            continue
        sizes = [p["n"] for p in parts]
        weighted[spec.label] = {"n": sum(sizes), "k": spec.k,
                                **{m: weighted_mean([p[m] for p in parts], sizes) for m in ("recall", "mrr", "ndcg")}}
    report = {
        "engine": engine_id or getattr(engine, "engine_id", "engine"),
        "config_fingerprint": config_fingerprint(config or {}),
        "config": config or {},
        "weighting": "per-task sample count",
        "multi_gold": "set-recall" if multi_gold else "one instance per gold",
        "splits": per_split,
        "weighted": weighted,
        "correlation": {
            "recall_ndcg": _corr([r["recall"] for r in all_rows], [r["ndcg"] for r in all_rows]),
            "recall_mrr": _corr([r["recall"] for r in all_rows], [r["mrr"] for r in all_rows]),
        },
        "flagged": flagged,
    }
    return report


def config_fingerprint(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()[:16]


def recompute_weighted(report: dict) -> dict:
    """Weighted recalls recomputed from the stored per-split parts."""
    out = {}
    for label in report["weighted"]:
        parts = [s[label] for s in report["splits"].values() if label in s]
        out[label] = weighted_mean([p["recall"] for p in parts], [p["n"] for p in parts])
    return out


# -- workflow retrieval --------------------------------------------------------


def workflow_document(doc: WorkflowDoc) -> str:
    """Indexed text of a workflow: everything except the requirement it is searched by."""
    tree = doc_tree(doc)
    tree.pop("requirement", None)
    return docformat.dumps(tree)


def workflow_elements(docs: Sequence[WorkflowDoc], doc_ids: Sequence[str]) -> list[Element]:
    return [Element("workflow", doc_id, doc.scope, None, None, {"document": workflow_document(doc)})
            for doc_id, doc in zip(doc_ids, docs)]


def workflow_retrieval_eval(engine: Engine, splits: dict[str, tuple[list[WorkflowDoc], list[str]]],
                            k: int = 5, engine_id: str | None = None) -> dict:
    """Recall@k of each flow given its requirement, against an index of the split's flows."""
    spec = EvalTaskSpec("workflow", k, ("T15",))
    per_split = {}
    for split, (docs, ids) in splits.items():
        elements = workflow_elements(docs, ids)
        retriever = engine(elements, split=split)
        instances = [EvalInstance(render_instruction(TEMPLATES["T15"], doc), frozenset({("workflow", i, "")}), "T15")
                     for doc, i in zip(docs, ids)]
        rows = score_instances(retriever, instances, k, "workflow")
        per_split[split] = {spec.label: {"n": len(rows), "k": k, "recall": _mean(rows, "recall"),
                                         "mrr": _mean(rows, "mrr"), "ndcg": _mean(rows, "ndcg")}}
    recalls = [s[spec.label]["recall"] for s in per_split.values()]
    return {
        "engine": engine_id or getattr(engine, "engine_id", "engine"),
        "splits": per_split,
        "average": {spec.label: float(np.mean(recalls)) if recalls else float("nan")},
    }


# -- tables --------------------------------------------------------------------


def headline(report: dict, specs: Sequence[EvalTaskSpec] | None = None) -> dict[str, float]:
    labels = [s.label for s in specs] if specs else list(report["weighted"])
    return {label: report["weighted"][label]["recall"] for label in labels if label in report["weighted"]}


def format_table(rows: dict[str, dict[str, float]], columns: Sequence[str] | None = None) -> str:
    """Aligned text table, one row per setup and one column per metric label."""
    columns = list(columns or dict.fromkeys(c for r in rows.values() for c in r))
    width = max([len("setup")] + [len(name) for name in rows])
    lines = ["setup".ljust(width) + "".join(f"  {c:>9}" for c in columns)]
    for name, values in rows.items():
        cells = "".join(f"  {_fmt(values.get(c)):>9}" for c in columns)
        lines.append(name.ljust(width) + cells)
    return "\n".join(lines) + "\n"


def format_csv(rows: dict[str, dict[str, float]], columns: Sequence[str] | None = None) -> str:
    columns = list(columns or dict.fromkeys(c for r in rows.values() for c in r))
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["setup", *columns])
    for name, values in rows.items():
        writer.writerow([name, *(_fmt(values.get(c)) for c in columns)])
    return buf.getvalue()


def _fmt(v) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return "-"
    return f"{v:.4f}"


def dumps_report(report: dict) -> str:
    """Canonical JSON bytes for a report (stable key order, fixed float formatting)."""
    return json.dumps(report, indent=2, sort_keys=True, allow_nan=True) + "\n"
