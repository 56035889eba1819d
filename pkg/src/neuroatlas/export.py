"""Query-result export to XML and CSV.

XML layout: a <Records> root, one <Record> element per row, inside which each
field becomes one element named after the field, default fields first and the
filter's variable fields after. Empty values become empty elements. Rows are
streamed one at a time, so exports never materialize the whole result.
"""

from __future__ import annotations

import csv
import io
import itertools
import re
import threading
from dataclasses import dataclass
from datetime import datetime, timezone
from xml.sax.saxutils import escape

from .errors import MissingDefaultField
from .query import DEFAULT_FIELDS

_counter = itertools.count()
_counter_lock = threading.Lock()

_TAG_SAFE_RE = re.compile(r"[^A-Za-z0-9_.-]")


@dataclass
class ExportDocument:
    format: str  # "xml" | "csv"
    default_fields: tuple[str, ...]
    variable_fields: tuple[str, ...]
    body: bytes
    suggested_filename: str

    @property
    def content_type(self) -> str:
        return "application/xml" if self.format == "xml" else "text/csv"


def stamp_filename(format: str) -> str:
    """Timestamped, process-unique export filename; a monotonic counter keeps
    same-millisecond calls distinct."""
    now = datetime.now(timezone.utc)
    stamp = now.strftime("%Y%m%dT%H%M%S") + f".{now.microsecond // 1000:03d}Z"
    with _counter_lock:
        n = next(_counter)
    return f"atlas-export-{stamp}-{n}.{format}"


def _tag(name: str) -> str:
    """Field name as an XML element name (variable names come from CSV
    headers, so anything unsafe is mapped to '_')."""
    safe = _TAG_SAFE_RE.sub("_", name)
    if not safe or not (safe[0].isalpha() or safe[0] == "_"):
        safe = "_" + safe
    return safe


def _field_values(row: dict, fields: tuple[str, ...]) -> list[tuple[str, str]]:
    missing = [f for f in DEFAULT_FIELDS if f not in row]
    if missing:
        raise MissingDefaultField(f"row lacks default field(s): {', '.join(missing)}")
    out = []
    for field in list(DEFAULT_FIELDS) + [f for f in fields if f not in DEFAULT_FIELDS]:
        value = row.get(field)
        out.append((field, "" if value is None else str(value)))
    return out


def iter_xml(rows, variable_fields: tuple[str, ...]):
    """Stream the XML document as byte chunks, one row at a time."""
    yield b'<?xml version="1.0" encoding="UTF-8"?>\n<Records>\n'
    for row in rows:
        chunk = ["<Record>"]
        for field, value in _field_values(row, variable_fields):
            tag = _tag(field)
            # '\r' must be a character reference or parsers normalize it away
            chunk.append(f"<{tag}>{escape(value, {chr(13): '&#13;'})}</{tag}>")
        chunk.append("</Record>")
        yield ("\n".join(chunk) + "\n").encode("utf-8")
    yield b"</Records>\n"


def export_xml(rows, variable_fields: tuple[str, ...] = ()) -> ExportDocument:
    variable_fields = tuple(variable_fields)
    return ExportDocument(
        format="xml",
        default_fields=DEFAULT_FIELDS,
        variable_fields=variable_fields,
        body=b"".join(iter_xml(rows, variable_fields)),
        suggested_filename=stamp_filename("xml"),
    )


def iter_csv(rows, variable_fields: tuple[str, ...]):
    """Stream the CSV document as byte chunks: header first, then one row each."""
    header = list(DEFAULT_FIELDS) + [f for f in variable_fields if f not in DEFAULT_FIELDS]
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(header)
    yield buf.getvalue().encode("utf-8")
    for row in rows:
        buf = io.StringIO()
        csv.writer(buf).writerow([value for _, value in _field_values(row, variable_fields)])
        yield buf.getvalue().encode("utf-8")


def export_csv(rows, variable_fields: tuple[str, ...] = ()) -> ExportDocument:
    variable_fields = tuple(variable_fields)
    return ExportDocument(
        format="csv",
        default_fields=DEFAULT_FIELDS,
        variable_fields=variable_fields,
        body=b"".join(iter_csv(rows, variable_fields)),
        suggested_filename=stamp_filename("csv"),
    )
