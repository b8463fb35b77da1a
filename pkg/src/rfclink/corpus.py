"""Fetching, caching and cleaning plaintext RFC documents."""

from __future__ import annotations

import datetime as _dt
import logging
import re
import urllib.error
import urllib.request
from dataclasses import dataclass
from pathlib import Path

log = logging.getLogger(__name__)

DEFAULT_BASE_URI = "https://www.rfc-editor.org/rfc/rfc{number}.txt"

_PAGE_FOOTER = re.compile(r"\[Page \d+\]\s*$")


class NetworkError(OSError):
    """The remote source is unreachable and no cached copy exists."""


class RfcNotFound(LookupError):
    """The RFC number is invalid or the remote source has no such document."""


@dataclass(frozen=True)
class RfcDocument:
    rfc_number: int
    lines: tuple
    source_uri: str
    fetched_at: _dt.datetime

    def __post_init__(self):
        if self.rfc_number <= 0:
            raise RfcNotFound(f"invalid RFC number {self.rfc_number}")

    @property
    def text(self):
        return "\n".join(self.lines)


def cache_path(cache_dir, rfc_number):
    return Path(cache_dir) / f"rfc{rfc_number}.txt"


def clean_document(raw):
    """Strip form feeds and page banners, returning the remaining lines.

    A banner is a line ending in ``[Page N]`` and, when a form feed follows
    it, the first non-blank line after the form feed (the running title of
    the next page). Lines consisting only of a form feed are dropped; any
    other line is kept verbatim apart from form-feed removal.
    """
    lines = raw.replace("\r\n", "\n").replace("\r", "\n").split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    out = []
    i = 0
    n = len(lines)
    while i < n:
        line = lines[i]
        if _PAGE_FOOTER.search(line):
            j = i + 1
            saw_ff = False
            while j < n and (not lines[j].strip() or lines[j].strip() == "\f"):
                saw_ff = saw_ff or "\f" in lines[j]
                j += 1
            if j < n and (saw_ff or "\f" in lines[j]):
                # footer, blank/form-feed run, and the next page's title banner
                out.extend(ln for ln in lines[i + 1:j] if "\f" not in ln)
                i = j + 1
                continue
            i += 1
            continue
        if "\f" in line:
            stripped = line.replace("\f", "")
            if not stripped.strip():
                i += 1
                continue
            line = stripped
        out.append(line)
        i += 1
    return out


def load_document(rfc_number, path, source_uri=None):
    path = Path(path)
    raw = path.read_bytes().decode("utf-8", errors="replace")
    mtime = _dt.datetime.fromtimestamp(path.stat().st_mtime, tz=_dt.timezone.utc)
    return RfcDocument(rfc_number, tuple(clean_document(raw)), source_uri or path.resolve().as_uri(), mtime)


def fetch_rfc(rfc_number, cache_dir, base_uri=DEFAULT_BASE_URI, timeout=30.0):
    """Return RFC ``rfc_number``, reading ``<cache_dir>/rfc<N>.txt`` when present.

    On a cache miss the document is downloaded from ``base_uri`` (formatted
    with ``number=``) and the raw bytes are cached before cleaning.
    """
    if not isinstance(rfc_number, int) or rfc_number <= 0:
        raise RfcNotFound(f"invalid RFC number {rfc_number!r}")
    path = cache_path(cache_dir, rfc_number)
    uri = base_uri.format(number=rfc_number)
    if path.exists():
        log.debug("cache hit %s", path)
        return load_document(rfc_number, path, uri)

    try:
        with urllib.request.urlopen(uri, timeout=timeout) as resp:
            raw = resp.read()
    except urllib.error.HTTPError as e:
        if e.code == 404:
            raise RfcNotFound(f"RFC {rfc_number} not found at {uri}") from e
        raise NetworkError(f"RFC {rfc_number}: HTTP {e.code} from {uri}") from e
    except (urllib.error.URLError, OSError) as e:
        raise NetworkError(f"RFC {rfc_number}: cannot reach {uri}: {e}") from e

    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(f".tmp{id(raw)}")
    tmp.write_bytes(raw)
    tmp.replace(path)
    now = _dt.datetime.now(tz=_dt.timezone.utc)
    text = raw.decode("utf-8", errors="replace")
    return RfcDocument(rfc_number, tuple(clean_document(text)), uri, now)


def document_from_text(rfc_number, text, source_uri="memory:"):
    return RfcDocument(rfc_number, tuple(clean_document(text)), source_uri,
                       _dt.datetime.now(tz=_dt.timezone.utc))
