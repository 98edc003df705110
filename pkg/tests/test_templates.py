import pytest

from frag.corpus import parse_workflow
from frag.templates import (
    CANONICAL,
    TEMPLATES,
    TRAINING_TEMPLATES,
    TaskId,
    TemplateError,
    instruction_for_text,
    render_instruction,
    strip_header,
    templates_for,
)

REQ = "Every day, look up incident tasks that do not have assignees and close them."


def test_registry_shape():
    assert len(TEMPLATES) == 15
    assert "T15" not in TRAINING_TEMPLATES and len(TRAINING_TEMPLATES) == 14
    for task in TaskId:
        assert templates_for(task), task
        assert TEMPLATES[CANONICAL[task]].task == task
    assert TaskId.table_from_context.target_kind == "table"
    assert TaskId.catalog_item_from_description.target_kind == "catalog_item"


def test_requirement_instruction_exact():
    text = render_instruction("T01", extra={"requirement": REQ})
    assert text == "Represent this requirement for searching relevant steps:\nrequirement: " + REQ


def test_flow_instruction_fields(sample_doc):
    text = render_instruction("T02", sample_doc)
    assert text.splitlines() == [
        "Represent this flow for searching relevant steps:",
        "type: flow",
        "scope: global",
        "requirement: " + REQ,
    ]


def test_context_instruction_shows_prefix_and_current_annotation(sample_doc):
    text = render_instruction("T03", sample_doc, position=1)
    lines = text.splitlines()
    assert lines[0] == "Represent this flow for searching relevant steps for the last step:"
    assert "- annotation: close each of them" in lines
    assert lines[-1] == "- annotation: close each of them"
    assert text.count("definition:") == 1


def test_table_context_stops_at_definition(sample_doc):
    text = render_instruction("T06", sample_doc, position=1)
    assert text.endswith("- annotation: close each of them\n  definition: update_record")


def test_missing_context_raises(sample_doc):
    with pytest.raises(TemplateError):
        render_instruction("T01")
    with pytest.raises(TemplateError):
        render_instruction("T03", sample_doc, position=5)


def test_optional_context_dropped():
    doc = parse_workflow("type: flow\nrequirement: do it\n")
    assert render_instruction("T02", doc).splitlines()[1:] == ["type: flow", "requirement: do it"]


def test_instruction_for_text():
    assert instruction_for_text("step_from_requirement", REQ) == render_instruction("T01", extra={"requirement": REQ})
    ready = "Represent this flow for searching relevant steps:\ntype: flow"
    assert instruction_for_text("step_from_context", ready) == ready
    body = "type: flow\nrequirement: x"
    assert instruction_for_text("step_from_context", body) == TEMPLATES["T03"].header + "\n" + body
    assert strip_header(ready) == "type: flow"
    assert strip_header("plain text") == "plain text"
