"""Retrieval: predefined queries, dictionary lookups, filter compilation to
parameterized SQL, sandboxed raw SQL, and pagination.

Filter semantics (documented contract, mirrored by the synthetic oracle):

* predicates combine left to right with explicit parentheses:
  ((p1 c2 p2) c3 p3) where each predicate carries the combinator joining it
  to the expression so far (AND default);
* a subject with no value for a variable matches no operator, NEQ and NOT_IN
  included (realized through LEFT JOIN + SQL three-valued logic);
* numeric variables compare as numbers (the stored text is CAST), date
  variables compare as ISO-8601 text, text variables compare byte-exactly;
* LIKE is ASCII-case-insensitive substring match (the operand is wrapped in
  wildcards and escaped); EXACT is case-sensitive full-string equality;
* repeated assessments: only the occurrence-0 value is queried.
"""

from __future__ import annotations

import math
import sqlite3
import time
from dataclasses import dataclass, field

from .errors import (
    MissingParam,
    NonWhitelistedTable,
    NotFound,
    StoreError,
    TypeMismatch,
    UnknownQueryId,
    UnknownVariable,
)
from .model import CATALOG_TABLES, SchemaHandle
from .sandbox import readonly_authorizer, validate_sql

DEFAULT_PAGE_SIZE = 300

OPERATORS = ("EQ", "NEQ", "LT", "GT", "LIKE", "EXACT", "NOT_IN")
COMBINATORS = ("AND", "OR")

# The eight default projection fields every image query carries, in order.
DEFAULT_FIELDS = (
    "imagefile_name",
    "lfn",
    "imagefile_type",
    "imagefile_description",
    "added_on",
    "dataset_id",
    "subject_id",
    "assessment_type",
)


@dataclass(frozen=True)
class Predicate:
    variable_id: int
    op: str
    operand: str | tuple[str, ...]
    combinator: str = "AND"


@dataclass(frozen=True)
class FilterExpression:
    dataset_id: int
    predicates: tuple[Predicate, ...] = ()
    assessment_type_id: int | None = None


@dataclass(frozen=True)
class CompiledQuery:
    sql_text: str
    bindings: tuple = ()


@dataclass
class ResultPage:
    records: list[dict]
    total: int
    page: int
    page_size: int
    elapsed_ms: float

    def to_dict(self) -> dict:
        return {
            "records": self.records,
            "total": self.total,
            "page": self.page,
            "page_size": self.page_size,
            "elapsed_ms": self.elapsed_ms,
        }


def escape_like(operand: str) -> str:
    return operand.replace("\\", "\\\\").replace("%", "\\%").replace("_", "\\_")


def _quote_ident(name: str) -> str:
    return '"' + name.replace('"', '""') + '"'


def _numeric_operand(op: str, operand: str, variable: str) -> float:
    try:
        value = float(operand)
    except (TypeError, ValueError):
        value = math.nan
    if not math.isfinite(value):
        raise TypeMismatch(
            f"{op} on numeric variable {variable!r} needs a numeric operand, got {operand!r}"
        )
    return value


def _variable_rows(conn: sqlite3.Connection, f: FilterExpression) -> dict[int, sqlite3.Row]:
    out = {}
    for predicate in f.predicates:
        row = conn.execute(
            "SELECT v.id, v.name, v.value_kind, v.assessment_type_id, a.dataset_id"
            " FROM clinical_variable v JOIN assessment_type a ON a.id = v.assessment_type_id"
            " WHERE v.id = ?",
            (predicate.variable_id,),
        ).fetchone()
        if row is None:
            raise UnknownVariable(f"no clinical variable with id {predicate.variable_id}")
        if row[4] != f.dataset_id:
            raise UnknownVariable(
                f"variable {row[1]!r} belongs to dataset {row[4]}, filter targets {f.dataset_id}"
            )
        if f.assessment_type_id is not None and row[3] != f.assessment_type_id:
            raise UnknownVariable(
                f"variable {row[1]!r} is outside assessment type {f.assessment_type_id}"
            )
        out[predicate.variable_id] = row
    return out


def _resolve_assessment_name(conn: sqlite3.Connection, f: FilterExpression) -> str:
    if f.assessment_type_id is not None:
        row = conn.execute(
            "SELECT name FROM assessment_type WHERE id = ?", (f.assessment_type_id,)
        ).fetchone()
        if row is None:
            raise NotFound(f"no assessment type with id {f.assessment_type_id}")
        return row[0]
    rows = conn.execute(
        "SELECT name FROM assessment_type WHERE dataset_id = ? ORDER BY id LIMIT 2",
        (f.dataset_id,),
    ).fetchall()
    return rows[0][0] if len(rows) == 1 else ""


def compile_filter(handle: SchemaHandle, f: FilterExpression) -> CompiledQuery:
    """Compile a filter into one SELECT with positional placeholders.

    One LEFT JOIN branch of the value table per predicate; projection is the
    eight default fields plus one column per distinct predicate variable.
    Deterministic: equal filters give byte-identical sql_text.
    """
    for predicate in f.predicates:
        if predicate.op not in OPERATORS:
            raise TypeMismatch(f"unknown operator {predicate.op!r}")
        if predicate.combinator not in COMBINATORS:
            raise TypeMismatch(f"unknown combinator {predicate.combinator!r}")
        if predicate.op == "NOT_IN" and (
            not isinstance(predicate.operand, (tuple, list)) or not predicate.operand
        ):
            raise TypeMismatch("NOT_IN needs a non-empty operand list")

    conn = handle.connect_readonly()
    try:
        variables = _variable_rows(conn, f)
        assessment_name = _resolve_assessment_name(conn, f)
    finally:
        conn.close()

    select = [
        "i.file_name AS imagefile_name",
        "i.lfn AS lfn",
        "i.file_type AS imagefile_type",
        "i.description AS imagefile_description",
        "i.added_on AS added_on",
        "i.dataset_id AS dataset_id",
        "COALESCE(s.directory_id, s.subject_code) AS subject_id",
        "? AS assessment_type",
    ]
    select_bindings: list = [assessment_name]
    joins = ["LEFT JOIN subject s ON s.id = i.subject_id"]
    join_bindings: list = []
    conditions: list[tuple[str, str, list]] = []  # (combinator, sql, bindings)

    projected: dict[int, str] = {}  # variable_id -> alias carrying its value
    for idx, predicate in enumerate(f.predicates):
        row = variables[predicate.variable_id]
        name, kind = row[1], row[2]
        alias = f"av{idx}"
        joins.append(
            f"LEFT JOIN assessment_value {alias} ON {alias}.subject_id = i.subject_id"
            f" AND {alias}.variable_id = ? AND {alias}.occurrence = 0"
        )
        join_bindings.append(predicate.variable_id)
        if predicate.variable_id not in projected:
            projected[predicate.variable_id] = alias
            select.append(f"{alias}.value AS {_quote_ident(name)}")

        value_expr = f"{alias}.value"
        if predicate.op in ("EQ", "NEQ", "LT", "GT") and kind == "numeric":
            operand = _numeric_operand(predicate.op, predicate.operand, name)
            sql_op = {"EQ": "=", "NEQ": "<>", "LT": "<", "GT": ">"}[predicate.op]
            conditions.append(
                (predicate.combinator, f"CAST({value_expr} AS REAL) {sql_op} ?", [operand])
            )
        elif predicate.op in ("LT", "GT"):
            if kind != "date":
                raise TypeMismatch(
                    f"{predicate.op} needs a numeric or date variable, {name!r} is {kind}"
                )
            sql_op = "<" if predicate.op == "LT" else ">"
            conditions.append((predicate.combinator, f"{value_expr} {sql_op} ?", [predicate.operand]))
        elif predicate.op in ("EQ", "EXACT"):
            conditions.append((predicate.combinator, f"{value_expr} = ?", [predicate.operand]))
        elif predicate.op == "NEQ":
            conditions.append((predicate.combinator, f"{value_expr} <> ?", [predicate.operand]))
        elif predicate.op == "LIKE":
            conditions.append(
                (
                    predicate.combinator,
                    f"{value_expr} LIKE ? ESCAPE '\\'",
                    [f"%{escape_like(str(predicate.operand))}%"],
                )
            )
        elif predicate.op == "NOT_IN":
            marks = ", ".join("?" for _ in predicate.operand)
            conditions.append(
                (predicate.combinator, f"{value_expr} NOT IN ({marks})", list(predicate.operand))
            )

    where = "i.dataset_id = ?"
    where_bindings: list = [f.dataset_id]
    if conditions:
        folded, folded_bindings = conditions[0][1], list(conditions[0][2])
        for combinator, sql, bindings in conditions[1:]:
            folded = f"({folded} {combinator} {sql})"
            folded_bindings.extend(bindings)
        where += f" AND {folded}"
        where_bindings.extend(folded_bindings)

    sql_text = (
        "SELECT "
        + ", ".join(select)
        + " FROM image_file i "
        + " ".join(joins)
        + f" WHERE {where} ORDER BY i.lfn"
    )
    return CompiledQuery(
        sql_text=sql_text,
        bindings=tuple(select_bindings + join_bindings + where_bindings),
    )


def _paginate(
    conn: sqlite3.Connection, sql_text: str, bindings: tuple, page: int, page_size: int, wrap: bool
) -> ResultPage:
    if page < 0 or page_size <= 0:
        raise MissingParam("page must be >= 0 and page_size > 0")
    started = time.perf_counter()
    try:
        total = conn.execute(f"SELECT COUNT(*) FROM ({sql_text})", bindings).fetchone()[0]
        paged = (
            f"SELECT * FROM ({sql_text}) LIMIT ? OFFSET ?"
            if wrap
            else f"{sql_text} LIMIT ? OFFSET ?"
        )
        cursor = conn.execute(paged, (*bindings, page_size, page * page_size))
        columns = [d[0] for d in cursor.description]
        records = [dict(zip(columns, row)) for row in cursor.fetchall()]
    except sqlite3.Error as exc:
        raise StoreError(str(exc)) from exc
    elapsed_ms = (time.perf_counter() - started) * 1000.0
    return ResultPage(records=records, total=total, page=page, page_size=page_size, elapsed_ms=elapsed_ms)


def execute(
    handle: SchemaHandle, q: CompiledQuery, page: int = 0, page_size: int = DEFAULT_PAGE_SIZE
) -> ResultPage:
    """Run a compiled query with pagination; a page past the end returns
    empty records with the correct total."""
    conn = handle.connect_readonly()
    try:
        return _paginate(conn, q.sql_text, q.bindings, page, page_size, wrap=False)
    finally:
        conn.close()


def _quote_literal(value) -> str:
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, int):
        return str(value)
    return "'" + str(value).replace("'", "''") + "'"


def copy_sql(handle: SchemaHandle, f: FilterExpression) -> str:
    """compile_filter output with bindings inlined as quoted literals, for
    hand editing in the advanced-search tab."""
    q = compile_filter(handle, f)
    segments = q.sql_text.split("?")
    if len(segments) != len(q.bindings) + 1:
        raise StoreError("placeholder count does not match bindings")
    out = [segments[0]]
    for binding, segment in zip(q.bindings, segments[1:]):
        out.append(_quote_literal(binding))
        out.append(segment)
    return "".join(out)


def sandbox_execute(
    handle: SchemaHandle, raw_sql: str, page: int = 0, page_size: int = DEFAULT_PAGE_SIZE
) -> ResultPage:
    """Validate user SQL (single SELECT, catalog tables only) and run it on a
    read-only, authorizer-guarded session."""
    validate_sql(raw_sql, CATALOG_TABLES)
    conn = handle.connect_readonly()
    conn.set_authorizer(readonly_authorizer(CATALOG_TABLES))
    try:
        return _paginate(conn, raw_sql, (), page, page_size, wrap=True)
    except StoreError as exc:
        if "not authorized" in str(exc):
            raise NonWhitelistedTable(str(exc)) from exc
        raise
    finally:
        conn.set_authorizer(None)
        conn.close()


# -- catalog browsing ---------------------------------------------------------

def list_datasets(handle: SchemaHandle) -> list[dict]:
    """Categories with their datasets, for the cascading query builder."""
    conn = handle.connect_readonly()
    try:
        categories = conn.execute(
            "SELECT id, name, description FROM data_set_category ORDER BY id"
        ).fetchall()
        out = []
        for cid, cname, cdesc in categories:
            datasets = conn.execute(
                "SELECT id, name, root_lfn, owner, created_on FROM data_set"
                " WHERE category_id = ? ORDER BY id",
                (cid,),
            ).fetchall()
            out.append(
                {
                    "id": cid,
                    "name": cname,
                    "description": cdesc,
                    "datasets": [
                        {
                            "id": d[0],
                            "name": d[1],
                            "root_lfn": d[2],
                            "owner": d[3],
                            "created_on": d[4],
                        }
                        for d in datasets
                    ],
                }
            )
        return out
    finally:
        conn.close()


def list_subdatasets(handle: SchemaHandle, dataset_id: int) -> list[dict]:
    conn = handle.connect_readonly()
    try:
        if conn.execute("SELECT 1 FROM data_set WHERE id = ?", (dataset_id,)).fetchone() is None:
            raise NotFound(f"no dataset with id {dataset_id}")
        rows = conn.execute(
            "SELECT id, name FROM assessment_type WHERE dataset_id = ? ORDER BY id",
            (dataset_id,),
        ).fetchall()
        return [{"id": r[0], "name": r[1]} for r in rows]
    finally:
        conn.close()


def list_variables(handle: SchemaHandle, assessment_type_id: int) -> list[dict]:
    conn = handle.connect_readonly()
    try:
        if (
            conn.execute("SELECT 1 FROM assessment_type WHERE id = ?", (assessment_type_id,)).fetchone()
            is None
        ):
            raise NotFound(f"no assessment type with id {assessment_type_id}")
        rows = conn.execute(
            "SELECT id, name, value_kind, description FROM clinical_variable"
            " WHERE assessment_type_id = ? ORDER BY id",
            (assessment_type_id,),
        ).fetchall()
        return [{"id": r[0], "name": r[1], "value_kind": r[2], "description": r[3]} for r in rows]
    finally:
        conn.close()


@dataclass
class VariableMetadata:
    variable_id: int
    name: str
    description: str
    value_kind: str
    comments: str
    codes: dict[str, str] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "variable_id": self.variable_id,
            "name": self.name,
            "description": self.description,
            "value_kind": self.value_kind,
            "comments": self.comments,
            "codes": self.codes,
        }


def variable_metadata(handle: SchemaHandle, variable_id: int) -> VariableMetadata:
    conn = handle.connect_readonly()
    try:
        row = conn.execute(
            "SELECT id, name, description, value_kind, comments FROM clinical_variable WHERE id = ?",
            (variable_id,),
        ).fetchone()
        if row is None:
            raise NotFound(f"no clinical variable with id {variable_id}")
        codes = conn.execute(
            "SELECT code, label FROM score_code WHERE variable_id = ? ORDER BY code",
            (variable_id,),
        ).fetchall()
        return VariableMetadata(
            variable_id=row[0],
            name=row[1],
            description=row[2],
            value_kind=row[3],
            comments=row[4],
            codes={c: l for c, l in codes},
        )
    finally:
        conn.close()


def resolve_variable(
    handle: SchemaHandle, dataset_id: int, name: str, assessment_type_id: int | None = None
) -> int:
    """Find a variable id by name within a dataset (optionally one assessment)."""
    conn = handle.connect_readonly()
    try:
        sql = (
            "SELECT v.id FROM clinical_variable v"
            " JOIN assessment_type a ON a.id = v.assessment_type_id"
            " WHERE a.dataset_id = ? AND v.name = ?"
        )
        params: list = [dataset_id, name]
        if assessment_type_id is not None:
            sql += " AND a.id = ?"
            params.append(assessment_type_id)
        row = conn.execute(sql + " ORDER BY v.id LIMIT 1", params).fetchone()
        if row is None:
            raise UnknownVariable(f"no variable named {name!r} in dataset {dataset_id}")
        return row[0]
    finally:
        conn.close()


def resolve_dataset(handle: SchemaHandle, name: str) -> int:
    conn = handle.connect_readonly()
    try:
        row = conn.execute(
            "SELECT id FROM data_set WHERE name = ? ORDER BY id LIMIT 1", (name,)
        ).fetchone()
        if row is None:
            raise NotFound(f"no dataset named {name!r}")
        return row[0]
    finally:
        conn.close()


def build_filter(
    handle: SchemaHandle,
    dataset_id: int,
    named_predicates: list[tuple[str, str, str | tuple[str, ...], str]],
    assessment_type_id: int | None = None,
) -> FilterExpression:
    """Build a FilterExpression from (variable_name, op, operand, combinator)
    tuples by resolving names against the catalog."""
    predicates = tuple(
        Predicate(
            variable_id=resolve_variable(handle, dataset_id, name, assessment_type_id),
            op=op,
            operand=tuple(operand) if isinstance(operand, (list, tuple)) else operand,
            combinator=combinator,
        )
        for name, op, operand, combinator in named_predicates
    )
    return FilterExpression(
        dataset_id=dataset_id, predicates=predicates, assessment_type_id=assessment_type_id
    )


# -- predefined queries -------------------------------------------------------

PREDEFINED_QUERY_IDS = (
    "all_datasets",
    "all_imagefiles",
    "search_imagefiles",
    "search_imagefiles_in_dataset",
)

_IMAGE_PROJECTION = (
    "SELECT i.file_name AS imagefile_name, i.lfn AS lfn, i.file_type AS imagefile_type,"
    " i.description AS imagefile_description, i.added_on AS added_on,"
    " i.dataset_id AS dataset_id, COALESCE(s.directory_id, s.subject_code) AS subject_id,"
    " COALESCE((SELECT a.name FROM assessment_type a WHERE a.dataset_id = i.dataset_id"
    " ORDER BY a.id LIMIT 1), '') AS assessment_type"
    " FROM image_file i LEFT JOIN subject s ON s.id = i.subject_id"
)


def run_predefined(
    handle: SchemaHandle,
    query_id: str,
    params: dict | None = None,
    page: int = 0,
    page_size: int = DEFAULT_PAGE_SIZE,
) -> ResultPage:
    """Run one of the canned queries (dataset metadata, all image files,
    image search everywhere or within one dataset)."""
    params = params or {}
    if query_id not in PREDEFINED_QUERY_IDS:
        raise UnknownQueryId(query_id)
    if query_id == "all_datasets":
        sql = (
            "SELECT d.name AS name, d.id AS id, d.root_lfn AS lfn, d.owner AS owner,"
            " d.created_on AS created_on FROM data_set d ORDER BY d.id"
        )
        bindings: tuple = ()
    elif query_id == "all_imagefiles":
        sql = _IMAGE_PROJECTION + " ORDER BY i.lfn"
        bindings = ()
    else:
        needle = params.get("needle", "")
        if not needle:
            raise MissingParam("search queries need a non-empty 'needle' parameter")
        pattern = f"%{escape_like(str(needle))}%"
        sql = (
            _IMAGE_PROJECTION
            + " WHERE (i.file_name LIKE ? ESCAPE '\\' OR i.lfn LIKE ? ESCAPE '\\')"
        )
        bindings = (pattern, pattern)
        if query_id == "search_imagefiles_in_dataset":
            if "dataset_id" not in params:
                raise MissingParam("search_imagefiles_in_dataset needs 'dataset_id'")
            sql += " AND i.dataset_id = ?"
            bindings = (*bindings, int(params["dataset_id"]))
        sql += " ORDER BY i.lfn"
    conn = handle.connect_readonly()
    try:
        return _paginate(conn, sql, bindings, page, page_size, wrap=False)
    finally:
        conn.close()
