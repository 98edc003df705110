"""Task ids and the instruction template registry."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from frag import docformat
from frag.corpus import WorkflowDoc, step_tree, trigger_tree


class TemplateError(ValueError):
    pass


class TaskId(str, Enum):
    step_from_requirement = "step_from_requirement"
    step_from_annotation = "step_from_annotation"
    step_from_context = "step_from_context"
    table_from_context = "table_from_context"
    table_from_text = "table_from_text"
    field_from_text = "field_from_text"
    field_from_table_context = "field_from_table_context"
    catalog_item_from_description = "catalog_item_from_description"
    workflow_from_text = "workflow_from_text"

    @property
    def target_kind(self) -> str:
        return self.value.split("_from_")[0]


EVAL_ONLY_TASKS = frozenset({TaskId.workflow_from_text})

# context keys that may be silently dropped when the document lacks them
_OPTIONAL = frozenset({"type", "scope", "trigger"})


@dataclass(frozen=True)
class InstructionTemplate:
    template_id: str
    task: TaskId
    header: str
    context_fields: tuple[str, ...]

    @property
    def needs_position(self) -> bool:
        return any(f in ("steps_prefix", "steps_upto_definition", "annotation", "definition")
                   for f in self.context_fields)


def _t(tid: str, task: TaskId, source: str, target: str, fields: tuple[str, ...], suffix: str = "") -> InstructionTemplate:
    return InstructionTemplate(tid, task, f"Represent this {source} for searching relevant {target}{suffix}:", fields)


_FLOW = ("type", "scope", "requirement", "trigger")
TEMPLATES: dict[str, InstructionTemplate] = {
    t.template_id: t
    for t in [
        _t("T01", TaskId.step_from_requirement, "requirement", "steps", ("requirement",)),
        _t("T02", TaskId.step_from_requirement, "flow", "steps", ("type", "scope", "requirement")),
        _t("T03", TaskId.step_from_context, "flow", "steps", (*_FLOW, "steps_prefix"), " for the last step"),
        _t("T04", TaskId.step_from_annotation, "annotation", "steps", ("annotation",)),
        _t("T05", TaskId.step_from_annotation, "step", "steps", ("scope", "annotation")),
        _t("T06", TaskId.table_from_context, "flow", "tables", (*_FLOW, "steps_upto_definition"), " for the last step"),
        _t("T07", TaskId.table_from_text, "annotation", "tables", ("annotation",)),
        _t("T08", TaskId.table_from_text, "requirement", "tables", ("requirement",)),
        _t("T09", TaskId.field_from_text, "annotation", "fields", ("annotation",)),
        _t("T10", TaskId.field_from_table_context, "annotation", "fields", ("table", "annotation"), " of the table"),
        _t("T11", TaskId.field_from_table_context, "flow", "fields", (*_FLOW, "steps_upto_definition", "table"),
           " for the last step"),
        _t("T12", TaskId.catalog_item_from_description, "description", "catalog items", ("description",)),
        _t("T13", TaskId.table_from_text, "step", "tables", ("annotation", "definition")),
        _t("T14", TaskId.catalog_item_from_description, "request", "catalog items", ("short_description",)),
        _t("T15", TaskId.workflow_from_text, "requirement", "flows", ("requirement",)),
    ]
}
assert len(TEMPLATES) == 15

TRAINING_TEMPLATES = tuple(t for t in TEMPLATES if TEMPLATES[t].task not in EVAL_ONLY_TASKS)


def templates_for(task: TaskId | str) -> list[InstructionTemplate]:
    task = TaskId(task)
    return [t for t in TEMPLATES.values() if t.task == task]


def render_instruction(template: InstructionTemplate | str, doc: WorkflowDoc | None = None,
                       position: int | None = None, extra: dict | None = None) -> str:
    """Header line followed by the requested context in canonical document form.

    For step/table context templates the steps after ``position`` are cut;
    the step at ``position`` shows its annotation (and, for table/field
    context, its definition) but not its inputs.
    """
    if isinstance(template, str):
        template = TEMPLATES[template]
    extra = extra or {}
    step = None
    if template.needs_position:
        if doc is not None and position is not None:
            if not 0 <= position < len(doc.steps):
                raise TemplateError(f"position {position} outside the document's steps")
            step = doc.steps[position]
    tree: dict = {}
    for key in template.context_fields:
        value = None
        if key in extra:
            value = extra[key]
        elif key == "type" and doc is not None:
            value = doc.doc_type
        elif key == "scope" and doc is not None:
            value = doc.scope
        elif key == "requirement" and doc is not None:
            value = doc.requirement
        elif key == "trigger" and doc is not None and not doc.trigger.is_empty():
            value = trigger_tree(doc.trigger)
        elif key in ("steps_prefix", "steps_upto_definition") and step is not None:
            prefix = [step_tree(s) for s in doc.steps[:position]]
            if key == "steps_prefix":
                current = step_tree(step, annotation_only=True)
            else:
                current = step_tree(step, upto_definition=True)
            value = prefix + ([current] if current else [])
        elif key == "annotation" and step is not None:
            value = step.annotation or None
        elif key == "definition" and step is not None:
            value = step.definition
        elif key == "table" and step is not None and step.tables():
            value = step.tables()[0]
        if value is None or value == "" or value == []:
            if key in _OPTIONAL:
                continue
            raise TemplateError(f"template {template.template_id} needs context {key!r}")
        tree["steps" if key.startswith("steps_") else key] = value
    body = docformat.dumps(tree)
    return template.header + "\n" + body.rstrip("\n")


def strip_header(instruction: str) -> str:
    """Drop the leading template header line, if there is one."""
    first, sep, rest = instruction.partition("\n")
    if first.startswith("Represent this ") and first.endswith(":"):
        return rest
    return instruction


CANONICAL = {
    TaskId.step_from_requirement: "T01",
    TaskId.step_from_annotation: "T04",
    TaskId.step_from_context: "T03",
    TaskId.table_from_context: "T06",
    TaskId.table_from_text: "T07",
    TaskId.field_from_text: "T09",
    TaskId.field_from_table_context: "T10",
    TaskId.catalog_item_from_description: "T12",
    TaskId.workflow_from_text: "T15",
}


def instruction_for_text(task: TaskId | str, text: str) -> str:
    """Turn raw client text into an instruction with the task's canonical template.

    Text that already starts with a template header is used unchanged. For
    single-field templates the text becomes that field; otherwise it is taken
    as the pre-rendered context body.
    """
    template = TEMPLATES[CANONICAL[TaskId(task)]]
    if text.startswith("Represent this "):
        return text
    if len(template.context_fields) == 1:
        return render_instruction(template, extra={template.context_fields[0]: text})
    return template.header + "\n" + text
