import pytest

from conftest import SAMPLE_FLOW
from frag.corpus import (
    DuplicateElementError,
    Element,
    ElementCatalog,
    ParseError,
    canonicalize,
    condition_fields,
    parse_workflow,
    render_element,
    serialize_workflow,
)


def test_parse_sample(sample_doc):
    assert sample_doc.doc_type == "flow"
    assert [s.definition for s in sample_doc.steps] == ["look_up_records", "update_record"]
    assert sample_doc.steps[0].tables() == ["incident_task"]
    assert sample_doc.steps[0].field_refs() == [("incident_task", "assigned_to"), ("incident_task", "active")]


def test_canonical_round_trip(sample_doc):
    text = serialize_workflow(sample_doc)
    assert parse_workflow(text) == sample_doc
    assert canonicalize(text) == text
    assert canonicalize(SAMPLE_FLOW) == text


def test_unknown_keys_survive_round_trip():
    text = SAMPLE_FLOW + "owner: someone\n"
    doc = parse_workflow(text)
    assert doc.payload == {"owner": "someone"}
    assert "owner: someone" in serialize_workflow(doc)


def test_condition_fields():
    assert condition_fields("assigned_toISEMPTY^active=true^ORpriority<=2") == ["assigned_to", "active", "priority"]
    assert condition_fields("short_descriptionLIKEdisk^NQstateIN1,2") == ["short_description", "state"]


@pytest.mark.parametrize("text, fragment", [
    ("type: flow\n", "requirement"),
    ("type: robot\nrequirement: x\n", "document type"),
    ("type: flow\nrequirement: x\nsteps:\n  - annotation: a\n", "definition"),
    ("type: flow\nrequirement: x\nsteps:\n  - definition: bad name!\n", "bad step definition"),
    ("type: flow\nrequirement: x\nsteps: nope\n", "list"),
])
def test_invalid_documents(text, fragment):
    with pytest.raises(ParseError) as info:
        parse_workflow(text)
    assert fragment in str(info.value)


def test_catalog_merges_and_indexes(tmp_path):
    elements = [
        Element("table", "incident", scope="global", description="incidents"),
        Element("table", "incident", scope="global"),
        Element("field", "state", parent="incident"),
        Element("field", "assigned_to", parent="incident"),
        Element("step", "look_up_records", scope="global"),
    ]
    cat = ElementCatalog(elements)
    assert len(cat) == 4
    assert cat.get("table", "incident").description == "incidents"
    assert [e.name for e in cat.fields_of("incident")] == ["assigned_to", "state"]
    assert {e.name for e in cat.in_scope("step", "global")} == {"look_up_records"}
    assert cat.is_consistent()
    cat.save(tmp_path / "c.jsonl")
    assert ElementCatalog.load(tmp_path / "c.jsonl") == cat
    with pytest.raises(DuplicateElementError):
        ElementCatalog([Element("table", "t", description="a"), Element("table", "t", description="b")])


def test_element_validation_and_rendering():
    with pytest.raises(ValueError):
        Element("field", "state")
    with pytest.raises(ValueError):
        Element("widget", "x")
    text = render_element(Element("field", "state", parent="incident", description="lifecycle state"))
    assert text == "kind: field\nname: state\nparent: incident\ndescription: lifecycle state"
