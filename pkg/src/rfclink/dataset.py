"""Field descriptions, knowledge-base labels, sample files and CV folds."""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class UnknownLabel(ValueError):
    pass


class DanglingAnnotation(KeyError):
    pass


class ParseError(ValueError):
    def __init__(self, message, line):
        self.line = line
        super().__init__(f"line {line}: {message}")


class TooFewSamples(ValueError):
    pass


# --------------------------------------------------------------------------
# knowledge base schema

@dataclass(frozen=True)
class PkbSchema:
    entities: tuple
    active: tuple

    def __post_init__(self):
        if len(set(self.entities)) != len(self.entities):
            raise ValueError("entity names must be unique")
        if not set(self.active) <= set(self.entities):
            raise ValueError("active entities must be declared entities")
        if len(set(self.active)) != len(self.active):
            raise ValueError("active names must be unique")

    @property
    def num_classes(self):
        return len(self.active)

    def index(self, label):
        try:
            return self.active.index(label)
        except ValueError:
            raise UnknownLabel(f"{label!r} is not an active knowledge-base entity") from None

    def label(self, index):
        return self.active[index]

    @classmethod
    def from_records(cls, records):
        entities = tuple(r["name"] for r in records)
        active = tuple(r["name"] for r in records if r.get("active", False))
        return cls(entities, active)

    def to_records(self):
        return [{"name": e, "active": e in self.active} for e in self.entities]


def load_schema(path):
    return PkbSchema.from_records(json.loads(Path(path).read_text(encoding="utf-8")))


def save_schema(schema, path):
    Path(path).write_text(json.dumps(schema.to_records(), indent=1) + "\n", encoding="utf-8")


# --------------------------------------------------------------------------
# description linking

_WORD = re.compile(r"[a-z0-9]+")


def name_tokens(text):
    """Lowercase alphanumeric tokens; punctuation only separates."""
    return _WORD.findall(text.lower())


# "URG:  Urgent Pointer field significant" opens its own paragraph even
# without a blank line before it
_LABEL = re.compile(r"^[A-Za-z][\w/()-]*(?: [\w/()-]+){0,4}:\s")


def _indent(line):
    return len(line) - len(line.lstrip())


def _paragraph_spans(lines, lo, hi):
    i = lo
    while i < hi:
        line = lines[i]
        if not line.strip():
            i += 1
            continue
        indent = len(line) - len(line.lstrip())
        j = i + 1
        prev_blank = False
        while j < hi:
            cur = lines[j]
            if not cur.strip():
                prev_blank = True
                j += 1
                continue
            ci = len(cur) - len(cur.lstrip())
            if ci > indent or (ci == indent and not prev_blank and not _LABEL.match(cur.strip())):
                prev_blank = False
                j += 1
                continue
            break
        yield i, j
        i = j


def paragraphs(lines, start=0, nested=False, spans=False):
    """Indentation-delimited paragraphs of ``lines[start:]``.

    A paragraph opens at a non-blank line and absorbs every following line
    that is blank or more deeply indented, plus same-indent lines that
    directly continue it without a blank line in between (unless such a
    line opens with a short ``Label:``). This keeps an RFC field heading
    such as ``Version:  4 bits`` together with its indented explanation.
    With ``nested`` the paragraphs found inside each paragraph body are
    yielded too, right after their parent, so a flag list under
    ``Control Bits:`` contributes one paragraph per flag. Yields
    ``(first_line_index, text)`` in line order, or ``((first, end), text)``
    when ``spans`` is set.
    """
    lines = list(lines)

    def walk(lo, hi):
        for i, j in _paragraph_spans(lines, lo, hi):
            text = " ".join(" ".join(ln.strip() for ln in lines[i:j]).split())
            yield ((i, j) if spans else i), text
            if nested:
                indent = _indent(lines[i])
                k = i + 1
                while k < j and (not lines[k].strip() or _indent(lines[k]) <= indent):
                    k += 1
                yield from walk(k, j)

    yield from walk(start, len(lines))


_SECTION_NUMBER = re.compile(r"^(?:[A-Z]\.)?\d+(?:\.\d+)*\.?\s+")


def _heading_tokens(text):
    # "2.3.1.  Version Number" and "A.3  Foo" headings match on the title
    return name_tokens(_SECTION_NUMBER.sub("", text, count=1))


def _leading_match(par_tokens, field_tokens, prefix=False):
    if not field_tokens or len(par_tokens) < len(field_tokens):
        return False
    for p, f in zip(par_tokens, field_tokens):
        if p == f:
            continue
        if prefix and len(f) >= 2 and p.startswith(f):
            continue
        return False
    return True


def prose_lines(doc, diagrams=None):
    """Document lines with every header diagram blanked out."""
    from .headers import detect_diagrams

    lines = list(doc.lines)
    for d in detect_diagrams(doc) if diagrams is None else diagrams:
        for k in range(d.start_line, d.end_line + 1):
            lines[k] = ""
    return lines


def link_description(doc, field, window=200, diagram_end=None, lines=None):
    """Find the paragraph describing ``field`` after its diagram.

    Scans at most ``window`` prose paragraphs (nested ones included)
    following the diagram and tries, in order: a paragraph whose leading
    tokens equal the field name's tokens; one whose leading tokens are
    extended by them (``Ver`` -> ``Version``, tokens of two or more
    characters only); one whose first line carries the name as a
    parenthesised abbreviation, ``Poll (P)``; and finally the innermost
    paragraph containing the name as a whole word. Single-character names
    are matched case-sensitively so that ``A`` does not match the article.
    Returns ``""`` when nothing matches.
    """
    if diagram_end is None:
        diagram_end = _diagram_end_for(doc, field)
    if lines is None:
        lines = prose_lines(doc)
    name = field.name.strip()
    ftoks = name_tokens(name)
    if not ftoks:
        return ""
    candidates = []
    for k, ((i, j), text) in enumerate(paragraphs(lines, diagram_end + 1, nested=True, spans=True)):
        if k >= window:
            break
        candidates.append((i, j, lines[i].strip(), text, _heading_tokens(text)))
    abbrev = "(" + name + ")"
    if len(name) == 1:
        # a lone letter is usually introduced as "Poll (P)"; after that it
        # must open the paragraph, case-sensitively ("r" is not "R = 0")
        for _, _, first, text, _ in candidates:
            if abbrev in first:
                return text
        for _, _, first, text, _ in candidates:
            if re.match(re.escape(name) + r"(?![A-Za-z0-9])", first):
                return text
    else:
        for prefix in (False, True):
            for *_, text, toks in candidates:
                if _leading_match(toks, ftoks, prefix):
                    return text
        for _, _, first, text, _ in candidates:
            if abbrev in first:
                return text
    flags = 0 if len(name) == 1 else re.IGNORECASE
    word = re.compile(r"(?<![A-Za-z0-9])" + re.escape(name) + r"(?![A-Za-z0-9])", flags)
    best = None
    for i, j, _, text, _ in candidates:
        if best is not None and i >= best[1]:
            break
        if word.search(text):
            best = (i, j, text)
    return best[2] if best else ""


def _diagram_end_for(doc, field):
    from .headers import detect_diagrams

    diagrams = detect_diagrams(doc)
    if field.diagram_index >= len(diagrams):
        raise ValueError(f"field {field.name!r} refers to diagram {field.diagram_index} "
                         f"but the document has {len(diagrams)}")
    return diagrams[field.diagram_index].end_line


# --------------------------------------------------------------------------
# catalog records and samples

@dataclass(frozen=True)
class CatalogEntry:
    rfc: int
    diagram: int
    offset: int
    width: int
    name: str
    description: str

    @property
    def key(self):
        return (self.rfc, self.diagram, self.offset)


@dataclass(frozen=True)
class Sample:
    header_field: str
    description: str
    label: str
    rfc_number: int
    diagram_index: int
    field_offset: int

    def __post_init__(self):
        if not self.header_field:
            raise ValueError("empty header field")
        if not self.description:
            raise ValueError("empty description")


def build_catalog(doc, window=200):
    """Parse every diagram of ``doc`` and link a description to each field."""
    from .headers import detect_diagrams, parse_diagram

    out = []
    diagrams = detect_diagrams(doc)
    lines = prose_lines(doc, diagrams)
    for d in diagrams:
        parse_diagram(d)
        for f in d.fields:
            desc = link_description(doc, f, window=window, diagram_end=d.end_line, lines=lines)
            out.append(CatalogEntry(doc.rfc_number, d.index, f.bit_offset, f.bit_width, f.name, desc))
    return out


def build_samples(catalog, annotations, schema):
    """Join annotated catalog entries with their labels.

    ``annotations`` maps ``(rfc, diagram, offset)`` to a label. Entries
    without annotation or with an empty description are skipped.
    """
    by_key = {e.key: e for e in catalog}
    for key, label in annotations.items():
        if label not in schema.active:
            raise UnknownLabel(f"annotation {key}: label {label!r} is not an active entity")
        if key not in by_key:
            raise DanglingAnnotation(f"annotation {key} matches no catalog field")
    out = []
    for e in catalog:
        label = annotations.get(e.key)
        if label is None or not e.description:
            continue
        out.append(Sample(e.name, e.description, label, e.rfc, e.diagram, e.offset))
    return out


def label_counts(samples, schema):
    counts = Counter(s.label for s in samples)
    return [(name, counts.get(name, 0)) for name in schema.active]


def format_counts(samples, schema):
    rows = sorted(label_counts(samples, schema), key=lambda r: -r[1])
    width = max(len("Category"), *(len(n) for n, _ in rows))
    lines = [f"{'Category':<{width}}  Size", "-" * (width + 6)]
    lines += [f"{name:<{width}}  {n:>4}" for name, n in rows]
    lines.append(f"{'Total':<{width}}  {sum(n for _, n in rows):>4}")
    return "\n".join(lines)


# --------------------------------------------------------------------------
# line-delimited files

_SAMPLE_KEYS = ("rfc", "diagram", "offset", "field", "description", "label")
_CATALOG_KEYS = ("rfc", "diagram", "offset", "width", "name", "description")
_ANNOTATION_KEYS = ("rfc", "diagram", "offset", "label")


def _dump(record):
    return json.dumps(record, ensure_ascii=False)


def _read_records(path, keys):
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise ParseError(f"invalid record: {e.msg}", lineno) from None
            if not isinstance(rec, dict):
                raise ParseError("record is not an object", lineno)
            missing = [k for k in keys if k not in rec]
            if missing:
                raise ParseError(f"missing key(s) {', '.join(missing)}", lineno)
            records.append((lineno, rec))
    return records


def save_samples(samples, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for s in samples:
            fh.write(_dump({
                "rfc": s.rfc_number,
                "diagram": s.diagram_index,
                "offset": s.field_offset,
                "field": s.header_field,
                "description": s.description,
                "label": s.label,
            }) + "\n")


def load_samples(path):
    out = []
    for lineno, r in _read_records(path, _SAMPLE_KEYS):
        try:
            out.append(Sample(str(r["field"]), str(r["description"]), str(r["label"]),
                              int(r["rfc"]), int(r["diagram"]), int(r["offset"])))
        except (TypeError, ValueError) as e:
            raise ParseError(str(e), lineno) from None
    return out


def save_catalog(entries, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for e in entries:
            fh.write(_dump({"rfc": e.rfc, "diagram": e.diagram, "offset": e.offset,
                            "width": e.width, "name": e.name, "description": e.description}) + "\n")


def load_catalog(path):
    return [CatalogEntry(int(r["rfc"]), int(r["diagram"]), int(r["offset"]), int(r["width"]),
                         str(r["name"]), str(r["description"]))
            for _, r in _read_records(path, _CATALOG_KEYS)]


def load_annotations(path):
    out = {}
    for lineno, r in _read_records(path, _ANNOTATION_KEYS):
        key = (int(r["rfc"]), int(r["diagram"]), int(r["offset"]))
        if key in out:
            raise ParseError(f"duplicate annotation for {key}", lineno)
        out[key] = str(r["label"])
    return out


def save_annotations(annotations, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for (rfc, diagram, offset), label in annotations.items():
            fh.write(_dump({"rfc": rfc, "diagram": diagram, "offset": offset, "label": label}) + "\n")


# --------------------------------------------------------------------------
# folds

@dataclass(frozen=True)
class DatasetSplit:
    folds: tuple

    @property
    def k(self):
        return len(self.folds)

    def train_test(self, i):
        test = list(self.folds[i])
        train = sorted(j for f, block in enumerate(self.folds) if f != i for j in block)
        return train, test


def make_folds(n, k, seed, labels=None):
    """Stratified k-fold partition of ``range(n)``.

    Indices of each label are shuffled with a generator seeded by ``seed``
    and dealt round-robin. The deal continues across labels from where the
    previous label stopped, so block sizes differ by at most one overall
    as well as per label.
    """
    if k < 2:
        raise ValueError("k must be at least 2")
    if n < k:
        raise TooFewSamples(f"{n} samples cannot fill {k} folds")
    if labels is None:
        labels = [0] * n
    if len(labels) != n:
        raise ValueError("labels must have one entry per sample")
    rng = np.random.default_rng(seed)
    blocks = [[] for _ in range(k)]
    order = {}
    for i, lab in enumerate(labels):
        order.setdefault(lab, []).append(i)
    nxt = 0
    for lab in sorted(order, key=str):
        idx = np.array(order[lab])
        rng.shuffle(idx)
        for j in idx:
            blocks[nxt].append(int(j))
            nxt = (nxt + 1) % k
    return DatasetSplit(tuple(tuple(sorted(b)) for b in blocks))
