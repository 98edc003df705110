import pytest
from hypothesis import given, strategies as st

from frag import docformat
from frag.docformat import ParseError

keys = st.from_regex(r"[a-z_][a-z0-9_]{0,8}", fullmatch=True)
scalars = st.text(st.characters(blacklist_categories=("Cs", "Cc")), max_size=20)
trees = st.recursive(
    scalars,
    lambda children: st.one_of(
        st.lists(children, max_size=4),
        st.dictionaries(keys, children, max_size=4),
    ),
    max_leaves=20,
)
documents = st.dictionaries(keys, trees, min_size=1, max_size=5)


@given(documents)
def test_round_trip(tree):
    text = docformat.dumps(tree)
    assert docformat.loads(text) == tree
    assert docformat.dumps(docformat.loads(text)) == text


def test_list_under_key_at_same_indent():
    text = "steps:\n- a\n- b\nname: x\n"
    assert docformat.loads(text) == {"steps": ["a", "b"], "name": "x"}


def test_nested_items_and_quoting():
    tree = {"inputs": [{"name": "conditions", "value": "a: b"}, {"value": "- dash"}], "empty": ""}
    text = docformat.dumps(tree)
    assert "'a: b'" in text
    assert docformat.loads(text) == tree


def test_comments_and_blank_lines_ignored():
    assert docformat.loads("# c\n\na: 1\n  # indented comment\nb: 2\n") == {"a": "1", "b": "2"}


@pytest.mark.parametrize(
    "text, line",
    [
        ("a: 1\na: 2\n", 2),
        ("a:\n\tb: 1\n", 2),
        ("a: &x 1\n", 1),
        ("a: [1, 2]\n", 1),
        ("a: 'open\n", 1),
        ("---\na: 1\n", 1),
        ("a: 1\n    b: 2\n", 2),
        ("a:\n", 1),
        ("a: |\n  text\n", 1),
    ],
)
def test_rejected_constructs_report_line(text, line):
    with pytest.raises(ParseError) as info:
        docformat.loads(text)
    assert info.value.line == line
    assert f"line {line}" in str(info.value)


def test_scalars_with_line_breaks_cannot_be_written():
    with pytest.raises(ValueError):
        docformat.dumps({"a": "x\ny"})
