"""Header-diagram detection and bit-field extraction.

RFC header diagrams draw one bit per two character columns::

    +-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+
    |Version|  IHL  |Type of Service|          Total Length         |
    +-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+

so a cell of ``L`` characters between two ``|`` spans ``(L + 1) / 2`` bits.
Consecutive ``|`` lines with no ruler between them form one bit row drawn
over several text lines (e.g. TCP's vertical flag letters). A ruler that
is open (spaces or text) above a cell continues that cell into the next
bit row, which is how multi-word fields such as IPv6 addresses are drawn.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

_CAPTION = re.compile(r"^[\d ]+$")
_RULER_CHARS = set("+-=")
_ELLIPSIS = re.compile(r"^(\.{2,}|…|~+)$")
# names that mark an optional or variable-length tail of a header
_VARIABLE_NAMES = {"options", "option", "padding", "data", "payload"}


class MalformedRow(ValueError):
    def __init__(self, message, line=None):
        self.line = line
        where = f"line {line}: " if line is not None else ""
        super().__init__(where + message)


@dataclass(frozen=True)
class HeaderField:
    name: str
    bit_offset: int
    bit_width: int
    rfc_number: int = 0
    diagram_index: int = 0
    line: int = -1

    @property
    def key(self):
        return (self.rfc_number, self.diagram_index, self.bit_offset)


@dataclass
class HeaderDiagram:
    rfc_number: int
    index: int
    start_line: int
    end_line: int
    rows: list
    fields: list = field(default_factory=list)
    variable_length: bool = False
    variable_offsets: frozenset = frozenset()

    def fixed_fields(self):
        return [f for f in self.fields if f.bit_offset not in self.variable_offsets]


def _is_solid_ruler(s):
    if len(s) < 3 or len(s) % 2 == 0 or s[0] != "+" or s[-1] != "+":
        return False
    if not set(s) <= _RULER_CHARS:
        return False
    # byte-style rulers put "+" on odd columns and are not bit diagrams
    return all(i % 2 == 0 for i, ch in enumerate(s) if ch == "+")


def _is_open_ruler(s):
    return (
        len(s) >= 3
        and len(s) % 2 == 1
        and s[0] == "+"
        and s[-1] == "+"
        and not set(s) <= _RULER_CHARS
    )


def _is_content(s):
    return len(s) >= 2 and s[0] in "|~" and s[-1] in "|~"


def _kind(line):
    s = line.strip()
    if not s:
        return None
    if s[0] == "+" and s[-1] == "+" and set(s) <= _RULER_CHARS:
        return "ruler" if _is_solid_ruler(s) else None
    if _is_open_ruler(s):
        return "open"
    if _is_content(s):
        return "content"
    return None


def detect_diagrams(doc):
    """Find header diagrams in a cleaned :class:`RfcDocument`.

    A diagram is a maximal run of ruler, open-ruler and content lines with
    at least two solid rulers and one content line. Up to two bit-index
    caption lines directly above are included in ``rows``.
    """
    lines = list(doc.lines)
    kinds = [_kind(ln) for ln in lines]
    found = []
    i = 0
    n = len(lines)
    while i < n:
        if kinds[i] is None:
            i += 1
            continue
        j = i
        while j < n and kinds[j] is not None:
            j += 1
        run = kinds[i:j]
        if run.count("ruler") >= 2 and "content" in run:
            start = i
            for _ in range(2):
                if start > 0 and lines[start - 1].strip() and _CAPTION.match(lines[start - 1].strip()):
                    start -= 1
                else:
                    break
            found.append(HeaderDiagram(
                rfc_number=doc.rfc_number,
                index=len(found),
                start_line=start,
                end_line=j - 1,
                rows=lines[start:j],
            ))
        i = j
    return found


def _cells(s, line=None):
    """Column spans ``(start, end)`` of the cells of a stripped content line."""
    bounds = [i for i, ch in enumerate(s) if ch in "|~"]
    spans = []
    for a, b in zip(bounds, bounds[1:]):
        length = b - a - 1
        if length <= 0 or (length + 1) % 2:
            raise MalformedRow(f"cell of {length} characters at column {a + 1} breaks the 2-columns-per-bit geometry", line)
        spans.append((a + 1, b))
    if not spans:
        raise MalformedRow("row has no cells", line)
    return spans


def parse_row(row, row_bit_base=0):
    """Split one ``|``-delimited row into :class:`HeaderField` records."""
    s = row.strip()
    if not _is_content(s):
        raise MalformedRow(f"not a diagram content row: {row!r}")
    out = []
    offset = row_bit_base
    for a, b in _cells(s):
        width = (b - a + 1) // 2
        name = s[a:b].strip() or f"unnamed@{offset}"
        out.append(HeaderField(name, offset, width))
        offset += width
    return out


def render_row(fields):
    """Draw fields back into a content row (inverse of :func:`parse_row`)."""
    parts = []
    for f in fields:
        width = 2 * f.bit_width - 1
        parts.append(f.name[:width].center(width))
    return "|" + "|".join(parts) + "|"


def _join_parts(parts):
    parts = [p for p in parts if p and not _ELLIPSIS.match(p)]
    if not parts:
        return ""
    if all(len(p) == 1 for p in parts):
        return "".join(parts)
    return " ".join(parts)


@dataclass
class _Open:
    span: tuple
    offset: int
    width: int
    parts: list
    line: int
    variable: bool


def parse_diagram(d):
    """Populate ``d.fields`` from ``d.rows``; returns ``d``."""
    first = d.start_line
    groups = []  # (separator line or None, [(line_no, stripped text), ...])
    sep = None
    current = None
    for k, raw in enumerate(d.rows):
        s = raw.strip()
        kind = _kind(raw)
        if kind in ("ruler", "open"):
            if current:
                groups.append((sep, current))
                current = None
            sep = s
        elif kind == "content":
            if current is None:
                current = []
            current.append((first + k, s))
    if current:
        groups.append((sep, current))

    fields = []
    variable_offsets = set()
    open_cells = {}
    base = 0
    for sep_line, rows in groups:
        line0 = rows[0][0]
        spans = _cells(rows[0][1], line0)
        for ln, text in rows[1:]:
            if _cells(text, ln) != spans:
                raise MalformedRow("multi-line row changes its cell boundaries", ln)
        next_open = {}
        offset = base
        row_variable = any("~" in text for _, text in rows)
        for span in spans:
            a, b = span
            width = (b - a + 1) // 2
            texts = [text[a:b].strip() for _, text in rows]
            variable = row_variable or any("..." in t or "…" in t for t in texts)
            seg = sep_line[a:b] if sep_line is not None and len(sep_line) >= b else ""
            prev = open_cells.get(span)
            if prev is not None and seg and not set(seg) <= _RULER_CHARS:
                prev.parts.append(seg.strip())
                prev.parts.extend(texts)
                prev.width += width
                prev.variable = prev.variable or variable
                cell = prev
            else:
                cell = _Open(span, offset, width, list(texts), line0, variable)
            next_open[span] = cell
            offset += width
        # cells not continued from the previous row are closed now
        continued = {id(c) for c in next_open.values()}
        for span, c in open_cells.items():
            if id(c) not in continued:
                fields.append(c)
        open_cells = next_open
        base = offset
    fields.extend(open_cells.values())

    out = []
    for c in sorted(fields, key=lambda c: c.offset):
        name = _join_parts(c.parts) or f"unnamed@{c.offset}"
        if c.variable or name.lower() in _VARIABLE_NAMES:
            variable_offsets.add(c.offset)
        out.append(HeaderField(name, c.offset, c.width, d.rfc_number, d.index, c.line))
    d.fields = out
    d.variable_offsets = frozenset(variable_offsets)
    d.variable_length = bool(variable_offsets)
    return d


def extract_fields(doc):
    """Detect and parse every diagram in ``doc``."""
    return [parse_diagram(d) for d in detect_diagrams(doc)]
