"""Workflow documents, retrievable elements and element catalogs."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

from frag import docformat
from frag.docformat import ParseError

__all__ = [
    "ParseError",
    "DuplicateElementError",
    "InputBinding",
    "TriggerSpec",
    "StepInstance",
    "WorkflowDoc",
    "Element",
    "ElementCatalog",
    "ELEMENT_KINDS",
    "parse_workflow",
    "serialize_workflow",
    "canonicalize",
    "catalog_from_corpus",
    "condition_fields",
    "render_element",
    "read_jsonl",
    "write_jsonl",
]

DOC_TYPES = ("flow", "playbook")
ELEMENT_KINDS = ("step", "table", "field", "catalog_item", "workflow")
IDENT_RE = re.compile(r"^[A-Za-z0-9_.]+$")
_CLAUSE_RE = re.compile(r"^([a-z0-9_.]+?)(ISNOTEMPTY|ISEMPTY|STARTSWITH|LIKE|!=|>=|<=|=|>|<|IN)")


class DuplicateElementError(ValueError):
    pass


@dataclass(frozen=True)
class InputBinding:
    name: str | None = None
    value: str | None = None
    table: str | None = None
    condition: str | None = None
    payload: dict = field(default_factory=dict, hash=False)

    def referenced_fields(self) -> list[str]:
        return condition_fields(self.condition) if self.condition else []


@dataclass(frozen=True)
class TriggerSpec:
    annotation: str = ""
    type: str = ""
    inputs: tuple[InputBinding, ...] = ()
    payload: dict = field(default_factory=dict, hash=False)

    def is_empty(self) -> bool:
        return not (self.annotation or self.type or self.inputs or self.payload)


@dataclass(frozen=True)
class StepInstance:
    annotation: str
    definition: str
    scope: str | None = None
    inputs: tuple[InputBinding, ...] = ()
    payload: dict = field(default_factory=dict, hash=False)

    def tables(self) -> list[str]:
        return [b.table for b in self.inputs if b.table]

    def field_refs(self) -> list[tuple[str, str]]:
        """(table, field) pairs referenced by this step's conditions."""
        tables = self.tables()
        refs = []
        for b in self.inputs:
            table = b.table or (tables[0] if tables else None)
            if table:
                refs.extend((table, f) for f in b.referenced_fields() if (table, f) not in refs)
        return refs


@dataclass(frozen=True)
class WorkflowDoc:
    requirement: str
    doc_type: str = "flow"
    scope: str | None = None
    trigger: TriggerSpec = TriggerSpec()
    steps: tuple[StepInstance, ...] = ()
    payload: dict = field(default_factory=dict, hash=False)

    def __post_init__(self):
        if not self.requirement:
            raise ValueError("requirement must be non-empty")
        if self.doc_type not in DOC_TYPES:
            raise ValueError(f"unknown document type {self.doc_type!r}")
        for step in self.steps:
            if not IDENT_RE.match(step.definition):
                raise ValueError(f"bad step definition {step.definition!r}")


def condition_fields(condition: str) -> list[str]:
    """Field names referenced by an encoded condition such as ``a_byISEMPTY^state=3``."""
    fields = []
    for clause in re.split(r"\^(?:OR|NQ)?", condition):
        m = _CLAUSE_RE.match(clause)
        if m and m.group(1) not in fields:
            fields.append(m.group(1))
    return fields


# -- tree <-> dataclass --------------------------------------------------------


def _locate(text: str, needle: str) -> int:
    for number, line in enumerate(text.splitlines(), start=1):
        if needle in line:
            return number
    return 1


def _binding_from_tree(node, text: str) -> InputBinding:
    if not isinstance(node, dict):
        raise ParseError("input binding must be a map", _locate(text, str(node)))
    known = {}
    for key in ("name", "value", "table", "condition"):
        if key in node:
            value = node[key]
            if not isinstance(value, str):
                raise ParseError(f"input {key!r} must be a scalar", _locate(text, f"{key}:"))
            known[key] = value
    payload = {k: v for k, v in node.items() if k not in ("name", "value", "table", "condition")}
    return InputBinding(**known, payload=payload)


def _bindings(node, key: str, text: str) -> tuple[InputBinding, ...]:
    if node is None:
        return ()
    if not isinstance(node, list):
        raise ParseError(f"{key!r} must be a list", _locate(text, f"{key}:"))
    return tuple(_binding_from_tree(item, text) for item in node)


def _scalar(node: dict, key: str, text: str, required: bool = False) -> str | None:
    if key not in node:
        if required:
            raise ParseError(f"missing required key {key!r}", _locate(text, ""))
        return None
    value = node[key]
    if not isinstance(value, str):
        raise ParseError(f"{key!r} must be a scalar", _locate(text, f"{key}:"))
    return value


def _step_from_tree(node, text: str) -> StepInstance:
    if not isinstance(node, dict):
        raise ParseError("step must be a map", _locate(text, str(node)))
    definition = _scalar(node, "definition", text)
    if not definition:
        raise ParseError("step is missing 'definition'", _locate(text, f"annotation: {node.get('annotation', '')}"))
    if not IDENT_RE.match(definition):
        raise ParseError(f"bad step definition {definition!r}", _locate(text, f"definition: {definition}"))
    known = ("annotation", "definition", "scope", "inputs")
    return StepInstance(
        annotation=_scalar(node, "annotation", text) or "",
        definition=definition,
        scope=_scalar(node, "scope", text),
        inputs=_bindings(node.get("inputs"), "inputs", text),
        payload={k: v for k, v in node.items() if k not in known},
    )


def parse_workflow(text: str) -> WorkflowDoc:
    """Parse a workflow document; unknown keys are kept in ``payload`` maps."""
    tree = docformat.loads(text)
    doc_type = _scalar(tree, "type", text, required=True)
    if doc_type not in DOC_TYPES:
        raise ParseError(f"unknown document type {doc_type!r}", _locate(text, "type:"))
    requirement = _scalar(tree, "requirement", text, required=True)
    if not requirement:
        raise ParseError("requirement is empty", _locate(text, "requirement:"))

    trigger = TriggerSpec()
    if "trigger" in tree:
        node = tree["trigger"]
        if not isinstance(node, dict):
            raise ParseError("'trigger' must be a map", _locate(text, "trigger:"))
        trigger = TriggerSpec(
            annotation=_scalar(node, "annotation", text) or "",
            type=_scalar(node, "type", text) or "",
            inputs=_bindings(node.get("inputs"), "inputs", text),
            payload={k: v for k, v in node.items() if k not in ("annotation", "type", "inputs")},
        )

    steps_node = tree.get("steps", [])
    if not isinstance(steps_node, list):
        raise ParseError("'steps' must be a list", _locate(text, "steps:"))
    known = ("type", "scope", "requirement", "trigger", "steps")
    return WorkflowDoc(
        requirement=requirement,
        doc_type=doc_type,
        scope=_scalar(tree, "scope", text),
        trigger=trigger,
        steps=tuple(_step_from_tree(s, text) for s in steps_node),
        payload={k: v for k, v in tree.items() if k not in known},
    )


def binding_tree(b: InputBinding) -> dict:
    out = {}
    for key in ("name", "value", "table", "condition"):
        value = getattr(b, key)
        if value is not None:
            out[key] = value
    out.update(b.payload)
    return out


def trigger_tree(t: TriggerSpec) -> dict:
    out = {}
    if t.annotation:
        out["annotation"] = t.annotation
    if t.type:
        out["type"] = t.type
    if t.inputs:
        out["inputs"] = [binding_tree(b) for b in t.inputs]
    out.update(t.payload)
    return out


def step_tree(s: StepInstance, annotation_only: bool = False, upto_definition: bool = False) -> dict:
    out = {}
    if s.annotation:
        out["annotation"] = s.annotation
    if annotation_only:
        return out
    out["definition"] = s.definition
    if upto_definition:
        return out
    if s.scope is not None:
        out["scope"] = s.scope
    if s.inputs:
        out["inputs"] = [binding_tree(b) for b in s.inputs]
    out.update(s.payload)
    return out


def doc_tree(doc: WorkflowDoc) -> dict:
    out = {"type": doc.doc_type}
    if doc.scope is not None:
        out["scope"] = doc.scope
    out["requirement"] = doc.requirement
    if not doc.trigger.is_empty():
        out["trigger"] = trigger_tree(doc.trigger)
    if doc.steps:
        out["steps"] = [step_tree(s) for s in doc.steps]
    out.update(doc.payload)
    return out


def serialize_workflow(doc: WorkflowDoc) -> str:
    return docformat.dumps(doc_tree(doc))


def canonicalize(text: str) -> str:
    return serialize_workflow(parse_workflow(text))


# -- elements & catalogs -------------------------------------------------------


@dataclass(frozen=True)
class Element:
    kind: str
    name: str
    scope: str | None = None
    parent: str | None = None
    description: str | None = None
    payload: dict = field(default_factory=dict, hash=False, compare=False)

    def __post_init__(self):
        if self.kind not in ELEMENT_KINDS:
            raise ValueError(f"unknown element kind {self.kind!r}")
        if self.kind == "field" and not self.parent:
            raise ValueError(f"field {self.name!r} needs a parent table")

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.kind, self.name, self.parent or "")

    def to_json(self) -> dict:
        out = {"kind": self.kind, "name": self.name}
        for key in ("scope", "parent", "description"):
            value = getattr(self, key)
            if value is not None:
                out[key] = value
        if self.payload:
            out["payload"] = self.payload
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "Element":
        return cls(
            kind=obj["kind"],
            name=obj["name"],
            scope=obj.get("scope"),
            parent=obj.get("parent"),
            description=obj.get("description"),
            payload=obj.get("payload") or {},
        )


def render_element(e: Element) -> str:
    """Document-side text for an element, shared by every retrieval engine."""
    if e.kind == "workflow" and "document" in e.payload:
        return e.payload["document"]
    lines = [f"kind: {e.kind}", f"name: {e.name}"]
    if e.scope:
        lines.append(f"scope: {e.scope}")
    if e.parent:
        lines.append(f"parent: {e.parent}")
    if e.description:
        lines.append(f"description: {e.description}")
    return "\n".join(lines)


def _build_indexes(elements: Iterable[Element]) -> tuple[dict, dict]:
    scope_index: dict[str, list[str]] = {}
    table_index: dict[str, list[str]] = {}
    for e in elements:
        if e.scope and e.kind in ("step", "table"):
            scope_index.setdefault(e.scope, []).append(e.name)
        if e.kind == "table":
            table_index.setdefault(e.name, [])
    for e in elements:
        if e.kind == "field":
            table_index.setdefault(e.parent, []).append(e.name)
    return (
        {k: tuple(sorted(v)) for k, v in sorted(scope_index.items())},
        {k: tuple(sorted(v)) for k, v in sorted(table_index.items())},
    )


class ElementCatalog:
    """Immutable set of elements with scope and table lookups."""

    def __init__(self, elements: Iterable[Element] = ()):
        merged: dict[tuple, Element] = {}
        for e in elements:
            prev = merged.get(e.key)
            if prev is None:
                merged[e.key] = e
                continue
            if prev.description and e.description and prev.description != e.description:
                raise DuplicateElementError(f"conflicting descriptions for {e.key}")
            merged[e.key] = Element(
                kind=e.kind,
                name=e.name,
                scope=prev.scope or e.scope,
                parent=e.parent,
                description=prev.description or e.description,
                payload={**e.payload, **prev.payload},
            )
        self.elements: tuple[Element, ...] = tuple(merged[k] for k in sorted(merged))
        self._by_key = {e.key: e for e in self.elements}
        self.scope_index, self.table_index = _build_indexes(self.elements)
        self._scope_of = {e.key: e.scope for e in self.elements}
        self._by_kind: dict[str, tuple[Element, ...]] = {}
        self._by_scope: dict[tuple[str, str], list[Element]] = {}
        for kind in ELEMENT_KINDS:
            self._by_kind[kind] = tuple(e for e in self.elements if e.kind == kind)
        for e in self.elements:
            self._by_scope.setdefault((e.kind, e.scope), []).append(e)

    def __len__(self) -> int:
        return len(self.elements)

    def __iter__(self) -> Iterator[Element]:
        return iter(self.elements)

    def __contains__(self, key) -> bool:
        return tuple(key) in self._by_key

    def __eq__(self, other) -> bool:
        return isinstance(other, ElementCatalog) and self.elements == other.elements

    def get(self, kind: str, name: str, parent: str | None = None) -> Element | None:
        return self._by_key.get((kind, name, parent or ""))

    def of_kind(self, kind: str) -> tuple[Element, ...]:
        return self._by_kind.get(kind, ())

    def in_scope(self, kind: str, scope: str) -> list[Element]:
        return list(self._by_scope.get((kind, scope), ()))

    def fields_of(self, table: str) -> list[Element]:
        return [self._by_key[("field", f, table)] for f in self.table_index.get(table, ())]

    def is_consistent(self) -> bool:
        scope_index, table_index = _build_indexes(self.elements)
        return scope_index == self.scope_index and table_index == self.table_index

    def merged(self, other: "ElementCatalog") -> "ElementCatalog":
        return ElementCatalog([*self.elements, *other.elements])

    def save(self, path: str | Path) -> None:
        write_jsonl(path, (e.to_json() for e in self.elements))

    @classmethod
    def load(cls, path: str | Path) -> "ElementCatalog":
        return cls(Element.from_json(obj) for obj in read_jsonl(path))


def catalog_from_corpus(docs: Iterable[WorkflowDoc], extracts: Iterable[dict] = ()) -> ElementCatalog:
    """Collect step/table/field elements from documents plus table extract rows.

    Extract rows are ``{"kind", "name", "parent", "scope", "description"}``;
    catalog items without a description are skipped. Rows of kind ``step``
    are also accepted so a full step registry can be loaded.
    """
    found: dict[tuple, Element] = {}

    def add(e: Element) -> None:
        prev = found.get(e.key)
        if prev is None:
            found[e.key] = e
        elif prev.description and e.description and prev.description != e.description:
            raise DuplicateElementError(f"conflicting descriptions for {e.key}")
        else:
            found[e.key] = Element(
                e.kind, e.name, prev.scope or e.scope, e.parent, prev.description or e.description,
                {**e.payload, **prev.payload},
            )

    for doc in docs:
        for step in doc.steps:
            scope = step.scope or doc.scope
            add(Element("step", step.definition, scope=scope))
            for table in step.tables():
                add(Element("table", table, scope=scope))
            for table, f in step.field_refs():
                add(Element("field", f, parent=table))
    for row in extracts:
        kind = row.get("kind")
        if kind == "catalog_item" and not row.get("description"):
            continue
        if kind not in ("step", "table", "field", "catalog_item"):
            raise ValueError(f"unsupported extract kind {kind!r}")
        add(Element(
            kind=kind,
            name=row["name"],
            scope=row.get("scope"),
            parent=row.get("parent"),
            description=row.get("description"),
            payload=row.get("payload") or {},
        ))
    return ElementCatalog(found.values())


def write_jsonl(path: str | Path, rows: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True, ensure_ascii=False) + "\n")


def read_jsonl(path: str | Path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]
