"""Dataset ingestion: crawl, parse, link, and emit catalog rows.

The pipeline is crawl -> detect_layout -> parse dictionaries and clinical
CSVs -> link image files to subjects -> insert everything in one transaction.
A dataset either lands completely or not at all.

CSV dialect: comma separated, double-quote quoting, first row is the header,
UTF-8. Dictionary files are recognised by name (*dictionary*.csv, case
insensitive) and declare columns variable,description,type,codes,comments;
the codes cell holds `<code> ='<label>'` groups separated by whitespace,
with optional whitespace around '='.
"""

from __future__ import annotations

import csv
import io
import json
import re
import sqlite3
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from . import crawler
from .crawler import DirectoryTree, LayoutDescriptor
from .errors import (
    ConflictingSubject,
    DuplicateDataset,
    DuplicateVariable,
    MalformedCsv,
    MissingSubjectColumn,
    RaggedRow,
    StoreError,
)
from .model import DEFAULT_LFN_PREFIX, SchemaHandle, build_lfn, create_schema
from .naming import (
    ConventionSpec,
    DEFAULT_CONVENTIONS,
    ScanNameTokens,
    classify_auxiliary,
    detect_convention,
    try_parse,
)

SUBJECT_COLUMN_CANDIDATES = ("subject", "subject_id", "subject_code", "subjectid", "id")

_CODE_GROUP_RE = re.compile(r"(\d+)\s*=\s*'([^']*)'")
_DICTIONARY_FILE_RE = re.compile(r"dictionary", re.IGNORECASE)

VALUE_KINDS = ("numeric", "text", "date")


@dataclass(frozen=True)
class VariableDef:
    name: str
    value_kind: str
    description: str = ""
    comments: str = ""


@dataclass(frozen=True)
class CodeDef:
    code: str
    label: str


@dataclass
class ClinicalRow:
    subject_code: str
    values: list[tuple[str, str]]  # (variable_name, raw_value), empty cells absent


@dataclass
class IngestReport:
    dataset_id: int = 0
    subjects_indexed: int = 0
    images_indexed: int = 0
    values_indexed: int = 0
    orphan_images: int = 0
    orphan_rows: int = 0
    unparsed_files: int = 0
    warnings: list[str] = field(default_factory=list)

    def lines(self) -> list[str]:
        out = [
            f"dataset_id        {self.dataset_id}",
            f"subjects_indexed  {self.subjects_indexed}",
            f"images_indexed    {self.images_indexed}",
            f"values_indexed    {self.values_indexed}",
            f"orphan_images     {self.orphan_images}",
            f"orphan_rows       {self.orphan_rows}",
            f"unparsed_files    {self.unparsed_files}",
        ]
        out.extend(f"warning: {w}" for w in self.warnings)
        return out


@dataclass
class IngestConfig:
    lfn_prefix: str = DEFAULT_LFN_PREFIX
    allow_ragged: bool = False
    case_sensitive_layout: bool = True
    conventions: list[ConventionSpec] = field(default_factory=lambda: list(DEFAULT_CONVENTIONS))
    owner: str = ""


def _decode_csv(csv_bytes: bytes) -> list[list[str]]:
    try:
        text = csv_bytes.decode("utf-8-sig")
    except UnicodeDecodeError as exc:
        raise MalformedCsv(f"not UTF-8: {exc}") from exc
    try:
        rows = list(csv.reader(io.StringIO(text)))
    except csv.Error as exc:
        raise MalformedCsv(str(exc)) from exc
    if not rows:
        raise MalformedCsv("no header row")
    return rows


def parse_score_codes(cell: str) -> list[CodeDef]:
    """Split a `<code> ='<label>'` cell into its code/label pairs."""
    return [CodeDef(code=m.group(1), label=m.group(2)) for m in _CODE_GROUP_RE.finditer(cell)]


def parse_dictionary(csv_bytes: bytes) -> list[tuple[VariableDef, list[CodeDef]]]:
    """Parse a dictionary CSV into variable definitions plus their code tables.

    Header: variable,description,type,codes,comments (extra columns ignored,
    missing trailing columns default to empty).
    """
    rows = _decode_csv(csv_bytes)
    header = [h.strip().lower() for h in rows[0]]
    if "variable" not in header:
        raise MalformedCsv("dictionary CSV lacks a 'variable' column")

    def cell(row: list[str], column: str) -> str:
        try:
            idx = header.index(column)
        except ValueError:
            return ""
        return row[idx].strip() if idx < len(row) else ""

    out: list[tuple[VariableDef, list[CodeDef]]] = []
    seen: set[str] = set()
    for row in rows[1:]:
        if not any(c.strip() for c in row):
            continue
        name = cell(row, "variable")
        if not name:
            raise MalformedCsv("dictionary row with empty variable name")
        if name in seen:
            raise DuplicateVariable(name)
        seen.add(name)
        codes = parse_score_codes(cell(row, "codes"))
        kind = cell(row, "type").lower()
        if kind not in VALUE_KINDS:
            kind = "numeric" if codes else "text"
        out.append(
            (
                VariableDef(
                    name=name,
                    value_kind=kind,
                    description=cell(row, "description"),
                    comments=cell(row, "comments"),
                ),
                codes,
            )
        )
    return out


def parse_clinical_csv(
    csv_bytes: bytes,
    dictionary: list[tuple[VariableDef, list[CodeDef]]] | None = None,
    allow_ragged: bool = False,
) -> tuple[list[ClinicalRow], list[str], int]:
    """Parse a clinical CSV into per-subject rows.

    Returns (rows, warnings, skipped_row_count). Cells are stripped of
    surrounding whitespace; empty cells are absent (no value emitted). Rows
    with a column-count mismatch raise RaggedRow unless allow_ragged, which
    pads/truncates with a warning. Rows without a subject id are skipped and
    counted.
    """
    rows = _decode_csv(csv_bytes)
    header = [h.strip() for h in rows[0]]
    lowered = [h.lower() for h in header]
    subject_idx = next(
        (lowered.index(c) for c in SUBJECT_COLUMN_CANDIDATES if c in lowered), None
    )
    if subject_idx is None:
        raise MissingSubjectColumn(f"no subject column among {SUBJECT_COLUMN_CANDIDATES}")
    variable_names = [h for i, h in enumerate(header) if i != subject_idx]

    out: list[ClinicalRow] = []
    warnings: list[str] = []
    skipped = 0
    for lineno, row in enumerate(rows[1:], start=2):
        if not any(c.strip() for c in row):
            continue
        if len(row) != len(header):
            if not allow_ragged:
                raise RaggedRow(f"line {lineno}: {len(row)} cells, header has {len(header)}")
            warnings.append(f"line {lineno}: ragged row ({len(row)} cells vs {len(header)})")
            row = (row + [""] * len(header))[: len(header)]
        subject_code = row[subject_idx].strip()
        if not subject_code:
            warnings.append(f"line {lineno}: empty subject id, row skipped")
            skipped += 1
            continue
        values = [
            (header[i], row[i].strip())
            for i in range(len(header))
            if i != subject_idx and row[i].strip()
        ]
        out.append(ClinicalRow(subject_code=subject_code, values=values))
    return out, warnings, skipped


@dataclass
class LinkedImage:
    file_name: str
    lfn: str
    tokens: ScanNameTokens
    classification: str  # scan | summary | unknown
    subject_code: str
    directory_name: str
    intermediate: str
    linked: bool


@dataclass
class LinkResult:
    images: list[LinkedImage] = field(default_factory=list)
    links: dict[str, list[str]] = field(default_factory=dict)  # subject_code -> lfns
    directory_ids: dict[str, str] = field(default_factory=dict)
    unparsed: list[str] = field(default_factory=list)
    orphan_images: int = 0


def _dir_matches_code(dir_name: str, code: str, separator: str) -> bool:
    return dir_name == code or dir_name.endswith(separator + code)


def link_images(
    subject_dirs: list[tuple[str, str, list[str]]],
    rows: list[ClinicalRow],
    convention: ConventionSpec,
    lfn_builder=None,
) -> LinkResult:
    """Link crawled image files to clinical rows by subject code.

    A file's subject comes from its filename token and must agree with the
    directory name under the suffix rule (directory == code or ends with
    "<sep><code>"); disagreement raises ConflictingSubject. Files whose names
    do not parse are recorded as unparsed and not linked.
    """
    if lfn_builder is None:
        lfn_builder = lambda intermediate, dir_name, file_name: "/".join(
            p for p in (intermediate, dir_name, file_name) if p
        )
    known = {row.subject_code for row in rows}
    result = LinkResult()
    for dir_name, intermediate, file_names in subject_dirs:
        for file_name in sorted(file_names):
            tokens = try_parse(file_name, convention)
            if tokens is None:
                result.unparsed.append(
                    f"{intermediate + '/' if intermediate else ''}{dir_name}/{file_name}"
                )
                continue
            if not _dir_matches_code(dir_name, tokens.subject_code, convention.separator):
                raise ConflictingSubject(
                    f"file {file_name!r} names subject {tokens.subject_code!r} "
                    f"but sits in directory {dir_name!r}"
                )
            lfn = lfn_builder(intermediate, dir_name, file_name)
            linked = tokens.subject_code in known
            classification = classify_auxiliary(file_name, [convention])
            result.images.append(
                LinkedImage(
                    file_name=file_name,
                    lfn=lfn,
                    tokens=tokens,
                    classification=classification,
                    subject_code=tokens.subject_code,
                    directory_name=dir_name,
                    intermediate=intermediate,
                    linked=linked,
                )
            )
            result.directory_ids.setdefault(tokens.subject_code, dir_name)
            if linked:
                result.links.setdefault(tokens.subject_code, []).append(lfn)
            else:
                result.orphan_images += 1
    return result


def _clinical_groups(
    tree: DirectoryTree, layout: LayoutDescriptor, root: Path
) -> list[tuple[str, list[Path], list[Path]]]:
    """Group clinical files by assessment: (name, dictionary_paths, csv_paths).

    Depth 1 keeps CSVs directly under CLINICAL_VARIABLES (one implicit
    assessment named after the dataset); deeper layouts name assessments by
    the subdirectory path.
    """
    clinical = tree.root.child(layout.clinical_dir)
    groups: dict[str, tuple[list[Path], list[Path]]] = {}
    base = root / layout.clinical_dir
    for rel, _node in clinical.iter_files():
        if not rel.lower().endswith(".csv"):
            continue
        parts = rel.split("/")
        assessment = "/".join(parts[:-1])
        path = base.joinpath(*parts)
        dicts, csvs = groups.setdefault(assessment, ([], []))
        if _DICTIONARY_FILE_RE.search(parts[-1]):
            dicts.append(path)
        else:
            csvs.append(path)
    return [(name, sorted(dicts), sorted(csvs)) for name, (dicts, csvs) in sorted(groups.items())]


def _utc_now() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def _delete_dataset_rows(conn: sqlite3.Connection, dataset_id: int) -> None:
    conn.execute(
        "DELETE FROM assessment_value WHERE subject_id IN (SELECT id FROM subject WHERE dataset_id = ?)",
        (dataset_id,),
    )
    conn.execute(
        "DELETE FROM score_code WHERE variable_id IN ("
        " SELECT v.id FROM clinical_variable v"
        " JOIN assessment_type a ON a.id = v.assessment_type_id WHERE a.dataset_id = ?)",
        (dataset_id,),
    )
    conn.execute(
        "DELETE FROM clinical_variable WHERE assessment_type_id IN ("
        " SELECT id FROM assessment_type WHERE dataset_id = ?)",
        (dataset_id,),
    )
    conn.execute("DELETE FROM assessment_type WHERE dataset_id = ?", (dataset_id,))
    conn.execute("DELETE FROM image_file WHERE dataset_id = ?", (dataset_id,))
    conn.execute("DELETE FROM subject WHERE dataset_id = ?", (dataset_id,))
    conn.execute("DELETE FROM data_set WHERE id = ?", (dataset_id,))


def ingest_dataset(
    root: str | Path,
    dataset_name: str,
    category_name: str,
    store: str | Path | SchemaHandle,
    config: IngestConfig | None = None,
    replace: bool = False,
) -> IngestReport:
    """Index one dataset tree into the catalog, all-or-nothing.

    Emits the dataset, its subjects, image files (with parsed name tokens),
    assessment types, variables, score codes, and clinical values in a single
    transaction. Report counts are read back from the store after commit.
    """
    config = config or IngestConfig()
    root = Path(root)
    handle = create_schema(store)
    tree = crawler.crawl(root)
    layout = crawler.detect_layout(tree, case_sensitive=config.case_sensitive_layout)
    subject_dirs = crawler.subject_directories(tree, layout)

    sample = [name for _, _, files in subject_dirs for name in files][:50]
    convention = None
    if sample:
        convention = detect_convention(sample, config.conventions)
    elif config.conventions:
        convention = config.conventions[0]

    report = IngestReport()

    # clinical side, grouped by assessment
    groups = _clinical_groups(tree, layout, root)
    assessments: list[tuple[str, list[tuple[VariableDef, list[CodeDef]]], list[ClinicalRow]]] = []
    for group_name, dict_paths, csv_paths in groups:
        assessment_name = group_name if group_name else dataset_name
        dictionary: list[tuple[VariableDef, list[CodeDef]]] = []
        seen_vars: set[str] = set()
        for path in dict_paths:
            for var, codes in parse_dictionary(path.read_bytes()):
                if var.name in seen_vars:
                    raise DuplicateVariable(f"{assessment_name}: {var.name}")
                seen_vars.add(var.name)
                dictionary.append((var, codes))
        rows: list[ClinicalRow] = []
        for path in csv_paths:
            got, warnings, skipped = parse_clinical_csv(
                path.read_bytes(), dictionary, allow_ragged=config.allow_ragged
            )
            report.warnings.extend(f"{path.name}: {w}" for w in warnings)
            report.orphan_rows += skipped
            rows.extend(got)
        # merge rows sharing a subject code (multiple CSVs per assessment)
        merged: dict[str, ClinicalRow] = {}
        for row in rows:
            if row.subject_code in merged:
                merged[row.subject_code].values.extend(row.values)
            else:
                merged[row.subject_code] = row
        # auto-create variables present in data but absent from the dictionary
        dict_names = {v.name for v, _ in dictionary}
        extras: list[str] = []
        for row in merged.values():
            for name, _ in row.values:
                if name not in dict_names:
                    dict_names.add(name)
                    extras.append(name)
                    dictionary.append((VariableDef(name=name, value_kind="text"), []))
        if extras:
            report.warnings.append(
                f"{assessment_name}: variables missing from dictionary, auto-created: "
                + ", ".join(sorted(extras))
            )
        assessments.append((assessment_name, dictionary, list(merged.values())))

    all_rows = [row for _, _, rows in assessments for row in rows]
    link = link_images(
        subject_dirs,
        all_rows,
        convention or DEFAULT_CONVENTIONS[0],
        lfn_builder=lambda inter, d, f: build_lfn(config.lfn_prefix, dataset_name, inter, d, f),
    )
    images = tree.root.child(layout.images_dir)
    total_files = sum(1 for _ in images.iter_files())
    report.unparsed_files = total_files - len(link.images)
    for path in link.unparsed:
        report.warnings.append(f"unparseable file name skipped: {path}")
    if report.unparsed_files > len(link.unparsed):
        report.warnings.append(
            f"{report.unparsed_files - len(link.unparsed)} file(s) outside subject directories skipped"
        )
    report.orphan_images = link.orphan_images

    conn = handle.connect()
    try:
        conn.execute("BEGIN IMMEDIATE")
        now = _utc_now()
        cur = conn.execute("SELECT id FROM data_set_category WHERE name = ?", (category_name,))
        row = cur.fetchone()
        if row:
            category_id = row[0]
        else:
            category_id = conn.execute(
                "INSERT INTO data_set_category (name) VALUES (?)", (category_name,)
            ).lastrowid
        row = conn.execute(
            "SELECT id FROM data_set WHERE category_id = ? AND name = ?", (category_id, dataset_name)
        ).fetchone()
        if row:
            if not replace:
                raise DuplicateDataset(f"{category_name}/{dataset_name} is already ingested")
            _delete_dataset_rows(conn, row[0])
        root_lfn = f"{config.lfn_prefix.rstrip('/')}/{dataset_name}"
        dataset_id = conn.execute(
            "INSERT INTO data_set (category_id, name, root_lfn, owner, created_on) VALUES (?,?,?,?,?)",
            (category_id, dataset_name, root_lfn, config.owner, now),
        ).lastrowid
        report.dataset_id = dataset_id

        subject_ids: dict[str, int] = {}
        for code in sorted({row.subject_code for row in all_rows}):
            subject_ids[code] = conn.execute(
                "INSERT INTO subject (dataset_id, subject_code, directory_id) VALUES (?,?,?)",
                (dataset_id, code, link.directory_ids.get(code)),
            ).lastrowid

        conn.executemany(
            "INSERT INTO image_file (dataset_id, subject_id, file_name, lfn, file_type,"
            " description, added_on, tokens) VALUES (?,?,?,?,?,?,?,?)",
            (
                (
                    dataset_id,
                    subject_ids.get(img.subject_code),
                    img.file_name,
                    img.lfn,
                    img.tokens.extension,
                    "",
                    now,
                    json.dumps(img.tokens.to_dict(), sort_keys=True),
                )
                for img in link.images
            ),
        )

        for assessment_name, dictionary, rows in assessments:
            assessment_id = conn.execute(
                "INSERT INTO assessment_type (dataset_id, name) VALUES (?,?)",
                (dataset_id, assessment_name),
            ).lastrowid
            variable_ids: dict[str, int] = {}
            for var, codes in dictionary:
                variable_ids[var.name] = conn.execute(
                    "INSERT INTO clinical_variable (assessment_type_id, name, value_kind,"
                    " description, comments) VALUES (?,?,?,?,?)",
                    (assessment_id, var.name, var.value_kind, var.description, var.comments),
                ).lastrowid
                conn.executemany(
                    "INSERT INTO score_code (variable_id, code, label) VALUES (?,?,?)",
                    ((variable_ids[var.name], c.code, c.label) for c in codes),
                )
            for row in rows:
                occurrence: dict[str, int] = {}
                for name, value in row.values:
                    occ = occurrence.get(name, 0)
                    occurrence[name] = occ + 1
                    conn.execute(
                        "INSERT INTO assessment_value (subject_id, variable_id, value, occurrence)"
                        " VALUES (?,?,?,?)",
                        (subject_ids[row.subject_code], variable_ids[name], value, occ),
                    )
        conn.commit()
    except BaseException:
        conn.rollback()
        conn.close()
        raise
    # report counts read back from the store so they are authoritative
    try:
        report.subjects_indexed = conn.execute(
            "SELECT COUNT(*) FROM subject WHERE dataset_id = ?", (report.dataset_id,)
        ).fetchone()[0]
        report.images_indexed = conn.execute(
            "SELECT COUNT(*) FROM image_file WHERE dataset_id = ?", (report.dataset_id,)
        ).fetchone()[0]
        report.values_indexed = conn.execute(
            "SELECT COUNT(*) FROM assessment_value WHERE subject_id IN"
            " (SELECT id FROM subject WHERE dataset_id = ?)",
            (report.dataset_id,),
        ).fetchone()[0]
    except sqlite3.Error as exc:
        raise StoreError(str(exc)) from exc
    finally:
        conn.close()
    return report
