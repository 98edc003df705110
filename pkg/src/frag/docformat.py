"""Restricted indentation-based document format.

Only block maps, block lists and string scalars are supported. Lists nested
under a map key sit at the key's own indentation (``key:`` followed by
``- item``), which is also how the canonical writer emits them. Anchors,
aliases, tags, block scalars, multi-document streams and non-empty flow
collections are rejected.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass

_KEY_RE = re.compile(r"^([A-Za-z_][A-Za-z0-9_.\-]*):(?: (.*))?$")
_SPECIAL_START = set("-?:,[]{}#&*!|>'\"%@`")


class ParseError(ValueError):
    def __init__(self, message: str, line: int, column: int = 1):
        super().__init__(f"line {line}, column {column}: {message}")
        self.message = message
        self.line = line
        self.column = column


@dataclass
class _Line:
    number: int
    indent: int
    text: str


def _split_lines(text: str) -> list[_Line]:
    lines = []
    for number, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip():
            continue
        body = raw.lstrip(" ")
        indent = len(raw) - len(body)
        if body.startswith("\t") or "\t" in raw[: indent + 1]:
            raise ParseError("tab in indentation", number, indent + 1)
        if body.startswith("#"):
            continue
        if indent == 0 and body.rstrip() in ("---", "..."):
            raise ParseError("multi-document markers are not supported", number)
        lines.append(_Line(number, indent, body.rstrip()))
    return lines


def _is_item(line: _Line) -> bool:
    return line.text == "-" or line.text.startswith("- ")


def _parse_scalar(raw: str, line: int, column: int):
    if raw.startswith("'"):
        if len(raw) < 2 or not raw.endswith("'"):
            raise ParseError("unterminated single-quoted scalar", line, column)
        inner = raw[1:-1]
        if "'" in inner.replace("''", ""):
            raise ParseError("stray quote in single-quoted scalar", line, column)
        return inner.replace("''", "'")
    if raw.startswith('"'):
        try:
            value = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ParseError(f"bad double-quoted scalar ({exc.msg})", line, column) from None
        if not isinstance(value, str):
            raise ParseError("bad double-quoted scalar", line, column)
        return value
    if raw == "[]":
        return []
    if raw == "{}":
        return {}
    if raw[0] in "&*!|>":
        raise ParseError(f"unsupported construct {raw[0]!r}", line, column)
    if raw[0] in "[{":
        raise ParseError("flow collections are not supported", line, column)
    return raw


class _Parser:
    def __init__(self, lines: list[_Line]):
        self.lines = lines
        self.pos = 0

    def peek(self) -> _Line | None:
        return self.lines[self.pos] if self.pos < len(self.lines) else None

    def block(self, indent: int):
        line = self.peek()
        if _is_item(line):
            return self.list_(indent)
        return self.map_(indent)

    def map_(self, indent: int) -> dict:
        out: dict = {}
        while True:
            line = self.peek()
            if line is None or line.indent < indent:
                return out
            if line.indent > indent:
                raise ParseError("unexpected indentation", line.number, line.indent + 1)
            if _is_item(line):
                if out:
                    raise ParseError("list item where a key was expected", line.number, line.indent + 1)
                return out
            m = _KEY_RE.match(line.text)
            if not m:
                raise ParseError(f"expected 'key: value', got {line.text!r}", line.number, line.indent + 1)
            key, rest = m.group(1), m.group(2)
            if key in out:
                raise ParseError(f"duplicate key {key!r}", line.number, line.indent + 1)
            self.pos += 1
            if rest is not None and rest.strip():
                out[key] = _parse_scalar(rest.strip(), line.number, line.indent + len(key) + 3)
                continue
            nxt = self.peek()
            if nxt is not None and nxt.indent > indent:
                out[key] = self.block(nxt.indent)
            elif nxt is not None and nxt.indent == indent and _is_item(nxt):
                out[key] = self.list_(indent)
            else:
                raise ParseError(f"key {key!r} has no value", line.number, line.indent + 1)

    def list_(self, indent: int) -> list:
        out: list = []
        while True:
            line = self.peek()
            if line is None or line.indent < indent:
                return out
            if line.indent > indent:
                raise ParseError("unexpected indentation", line.number, line.indent + 1)
            if not _is_item(line):
                return out
            content = line.text[2:].strip() if line.text != "-" else ""
            if not content:
                self.pos += 1
                nxt = self.peek()
                if nxt is None or nxt.indent <= indent:
                    raise ParseError("empty list item", line.number, line.indent + 1)
                out.append(self.block(nxt.indent))
            elif _KEY_RE.match(content):
                # re-read the item's first key as a line at the item's inner indent
                self.lines[self.pos] = _Line(line.number, indent + 2, content)
                out.append(self.map_(indent + 2))
            else:
                self.pos += 1
                out.append(_parse_scalar(content, line.number, line.indent + 3))


def loads(text: str) -> dict:
    """Parse a document into nested dict/list/str values."""
    lines = _split_lines(text)
    if not lines:
        return {}
    first = lines[0]
    if first.indent != 0:
        raise ParseError("document must start at column 1", first.number, first.indent + 1)
    parser = _Parser(lines)
    tree = parser.map_(0)
    leftover = parser.peek()
    if leftover is not None:
        raise ParseError("unexpected content", leftover.number, leftover.indent + 1)
    return tree


def needs_quotes(value: str) -> bool:
    return (
        value == ""
        or value != value.strip()
        or value[0] in _SPECIAL_START
        or ":" in value
        or " #" in value
        or value in ("[]", "{}")
    )


def format_scalar(value: str) -> str:
    if "\n" in value or "\r" in value:
        raise ValueError("scalars may not contain line breaks")
    if needs_quotes(value):
        return "'" + value.replace("'", "''") + "'"
    return value


def _emit_map(node: dict, indent: int, out: list[str], first_prefix: str | None = None) -> None:
    pad = " " * indent
    for i, (key, value) in enumerate(node.items()):
        lead = first_prefix if (i == 0 and first_prefix is not None) else pad
        if isinstance(value, dict):
            if value:
                out.append(f"{lead}{key}:")
                _emit_map(value, indent + 2, out)
            else:
                out.append(f"{lead}{key}: {{}}")
        elif isinstance(value, list):
            if value:
                out.append(f"{lead}{key}:")
                _emit_list(value, indent, out)
            else:
                out.append(f"{lead}{key}: []")
        else:
            out.append(f"{lead}{key}: {format_scalar(value)}")


def _emit_list(node: list, indent: int, out: list[str]) -> None:
    pad = " " * indent
    for item in node:
        if isinstance(item, dict) and item:
            _emit_map(item, indent + 2, out, first_prefix=pad + "- ")
        elif isinstance(item, dict):
            out.append(f"{pad}- {{}}")
        elif isinstance(item, list):
            if item:
                out.append(f"{pad}-")
                _emit_list(item, indent + 2, out)
            else:
                out.append(f"{pad}- []")
        else:
            out.append(f"{pad}- {format_scalar(item)}")


def dumps(tree: dict) -> str:
    """Canonical rendering: two-space indentation, insertion key order."""
    out: list[str] = []
    _emit_map(tree, 0, out)
    return "".join(line + "\n" for line in out)
