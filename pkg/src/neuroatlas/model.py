"""Relational catalog schema and integrity checks.

The catalog is an SQLite database. Clinical values are stored narrow (one row
per subject x variable x occurrence) so a dataset can carry any number of
variables without per-dataset DDL. Foreign keys are declared for
documentation but not enforced by the engine; validate_integrity() is the
authoritative referential check.
"""

from __future__ import annotations

import sqlite3
from dataclasses import dataclass, field
from pathlib import Path

from .errors import SchemaVersionMismatch, StoreError, StoreUnavailable

SCHEMA_VERSION = 1

# Catalog tables, in creation order. The sandbox whitelist and the integrity
# checks both derive from this tuple.
CATALOG_TABLES = (
    "data_set_category",
    "data_set",
    "subject",
    "image_file",
    "assessment_type",
    "clinical_variable",
    "score_code",
    "assessment_value",
    "pipeline",
    "algorithm",
    "pipeline_algorithm",
    "user_account",
    "group_def",
    "user_group",
)

META_TABLE = "atlas_meta"

SCHEMA_SQL = """
CREATE TABLE IF NOT EXISTS atlas_meta (
    id              INTEGER PRIMARY KEY CHECK (id = 1),
    schema_version  INTEGER NOT NULL,
    created_on      TEXT NOT NULL
);

CREATE TABLE IF NOT EXISTS data_set_category (
    id          INTEGER PRIMARY KEY AUTOINCREMENT,
    name        TEXT NOT NULL UNIQUE CHECK (name <> ''),
    description TEXT NOT NULL DEFAULT ''
);

CREATE TABLE IF NOT EXISTS data_set (
    id          INTEGER PRIMARY KEY AUTOINCREMENT,
    category_id INTEGER NOT NULL REFERENCES data_set_category(id),
    name        TEXT NOT NULL CHECK (name <> ''),
    root_lfn    TEXT NOT NULL CHECK (root_lfn <> ''),
    owner       TEXT NOT NULL DEFAULT '',
    created_on  TEXT NOT NULL,
    UNIQUE (category_id, name)
);

CREATE TABLE IF NOT EXISTS subject (
    id           INTEGER PRIMARY KEY AUTOINCREMENT,
    dataset_id   INTEGER NOT NULL REFERENCES data_set(id),
    subject_code TEXT NOT NULL,
    directory_id TEXT,
    UNIQUE (dataset_id, subject_code)
);

CREATE TABLE IF NOT EXISTS image_file (
    id          INTEGER PRIMARY KEY AUTOINCREMENT,
    dataset_id  INTEGER NOT NULL REFERENCES data_set(id),
    subject_id  INTEGER REFERENCES subject(id),
    file_name   TEXT NOT NULL,
    lfn         TEXT NOT NULL UNIQUE,
    file_type   TEXT NOT NULL DEFAULT '',
    description TEXT NOT NULL DEFAULT '',
    added_on    TEXT NOT NULL,
    tokens      TEXT
);

CREATE TABLE IF NOT EXISTS assessment_type (
    id         INTEGER PRIMARY KEY AUTOINCREMENT,
    dataset_id INTEGER NOT NULL REFERENCES data_set(id),
    name       TEXT NOT NULL CHECK (name <> ''),
    UNIQUE (dataset_id, name)
);

CREATE TABLE IF NOT EXISTS clinical_variable (
    id                 INTEGER PRIMARY KEY AUTOINCREMENT,
    assessment_type_id INTEGER NOT NULL REFERENCES assessment_type(id),
    name               TEXT NOT NULL CHECK (name <> ''),
    value_kind         TEXT NOT NULL CHECK (value_kind IN ('numeric', 'text', 'date')),
    description        TEXT NOT NULL DEFAULT '',
    comments           TEXT NOT NULL DEFAULT '',
    UNIQUE (assessment_type_id, name)
);

CREATE TABLE IF NOT EXISTS score_code (
    id          INTEGER PRIMARY KEY AUTOINCREMENT,
    variable_id INTEGER NOT NULL REFERENCES clinical_variable(id),
    code        TEXT NOT NULL,
    label       TEXT NOT NULL DEFAULT '',
    UNIQUE (variable_id, code)
);

CREATE TABLE IF NOT EXISTS assessment_value (
    id          INTEGER PRIMARY KEY AUTOINCREMENT,
    subject_id  INTEGER NOT NULL REFERENCES subject(id),
    variable_id INTEGER NOT NULL REFERENCES clinical_variable(id),
    value       TEXT NOT NULL,
    occurrence  INTEGER NOT NULL DEFAULT 0,
    UNIQUE (subject_id, variable_id, occurrence)
);

CREATE TABLE IF NOT EXISTS pipeline (
    id          INTEGER PRIMARY KEY AUTOINCREMENT,
    name        TEXT NOT NULL CHECK (name <> ''),
    lfn         TEXT NOT NULL CHECK (lfn <> ''),
    version     TEXT NOT NULL DEFAULT '',
    description TEXT NOT NULL DEFAULT '',
    owner       TEXT NOT NULL DEFAULT '',
    UNIQUE (name, version)
);

CREATE TABLE IF NOT EXISTS algorithm (
    id    INTEGER PRIMARY KEY AUTOINCREMENT,
    name  TEXT NOT NULL CHECK (name <> ''),
    lfn   TEXT NOT NULL CHECK (lfn <> ''),
    owner TEXT NOT NULL DEFAULT '',
    UNIQUE (name, lfn)
);

CREATE TABLE IF NOT EXISTS pipeline_algorithm (
    pipeline_id  INTEGER NOT NULL REFERENCES pipeline(id),
    algorithm_id INTEGER NOT NULL REFERENCES algorithm(id),
    position     INTEGER NOT NULL CHECK (position >= 0),
    PRIMARY KEY (pipeline_id, algorithm_id),
    UNIQUE (pipeline_id, position)
) WITHOUT ROWID;

CREATE TABLE IF NOT EXISTS user_account (
    id    INTEGER PRIMARY KEY AUTOINCREMENT,
    login TEXT NOT NULL UNIQUE,
    role  TEXT NOT NULL DEFAULT ''
);

CREATE TABLE IF NOT EXISTS group_def (
    id   INTEGER PRIMARY KEY AUTOINCREMENT,
    name TEXT NOT NULL UNIQUE
);

CREATE TABLE IF NOT EXISTS user_group (
    user_id  INTEGER NOT NULL REFERENCES user_account(id),
    group_id INTEGER NOT NULL REFERENCES group_def(id),
    PRIMARY KEY (user_id, group_id)
) WITHOUT ROWID;

CREATE INDEX IF NOT EXISTS idx_image_file_lfn ON image_file (lfn);
CREATE INDEX IF NOT EXISTS idx_image_file_subject ON image_file (subject_id);
CREATE INDEX IF NOT EXISTS idx_subject_code ON subject (subject_code);
CREATE INDEX IF NOT EXISTS idx_clinical_variable_name ON clinical_variable (name);
CREATE INDEX IF NOT EXISTS idx_assessment_value_variable_value
    ON assessment_value (variable_id, value);
"""

# (child table, fk column, parent table) triples used by validate_integrity.
_FOREIGN_KEYS = (
    ("data_set", "category_id", "data_set_category"),
    ("subject", "dataset_id", "data_set"),
    ("image_file", "dataset_id", "data_set"),
    ("image_file", "subject_id", "subject"),
    ("assessment_type", "dataset_id", "data_set"),
    ("clinical_variable", "assessment_type_id", "assessment_type"),
    ("score_code", "variable_id", "clinical_variable"),
    ("assessment_value", "subject_id", "subject"),
    ("assessment_value", "variable_id", "clinical_variable"),
    ("pipeline_algorithm", "pipeline_id", "pipeline"),
    ("pipeline_algorithm", "algorithm_id", "algorithm"),
    ("user_group", "user_id", "user_account"),
    ("user_group", "group_id", "group_def"),
)


@dataclass
class SchemaHandle:
    """Connection factory for one catalog database file."""

    path: str

    def connect(self) -> sqlite3.Connection:
        conn = sqlite3.connect(self.path)
        conn.execute("PRAGMA busy_timeout = 10000")
        return conn

    def connect_readonly(self) -> sqlite3.Connection:
        uri = f"file:{self.path}?mode=ro"
        try:
            conn = sqlite3.connect(uri, uri=True)
        except sqlite3.OperationalError as exc:
            raise StoreUnavailable(f"cannot open {self.path} read-only: {exc}") from exc
        conn.execute("PRAGMA busy_timeout = 10000")
        conn.execute("PRAGMA query_only = ON")
        return conn


@dataclass
class IntegrityReport:
    """Outcome of a full referential sweep over the catalog."""

    dangling_refs: list[tuple[str, str, int]] = field(default_factory=list)
    orphan_images: list[str] = field(default_factory=list)
    duplicate_codes: list[tuple[int, str]] = field(default_factory=list)

    @property
    def is_clean(self) -> bool:
        return not (self.dangling_refs or self.orphan_images or self.duplicate_codes)

    def summary(self) -> str:
        if self.is_clean:
            return "integrity: clean"
        return (
            f"integrity: {len(self.dangling_refs)} dangling reference(s), "
            f"{len(self.orphan_images)} orphan image(s), "
            f"{len(self.duplicate_codes)} duplicate score code(s)"
        )


def _existing_tables(conn: sqlite3.Connection) -> set[str]:
    rows = conn.execute(
        "SELECT name FROM sqlite_master WHERE type = 'table' AND name NOT LIKE 'sqlite_%'"
    ).fetchall()
    return {r[0] for r in rows}


def create_schema(store: str | Path | SchemaHandle) -> SchemaHandle:
    """Create (or verify) the catalog schema at the given database path.

    Idempotent: re-running against a store already at the current schema
    version changes nothing. A store holding any other tables is rejected.
    """
    handle = store if isinstance(store, SchemaHandle) else SchemaHandle(str(store))
    parent = Path(handle.path).expanduser().resolve().parent
    if not parent.is_dir():
        raise StoreUnavailable(f"parent directory {parent} does not exist")
    try:
        conn = handle.connect()
    except sqlite3.Error as exc:
        raise StoreUnavailable(f"cannot open {handle.path}: {exc}") from exc
    try:
        existing = _existing_tables(conn)
        if existing:
            if META_TABLE not in existing or not existing.issuperset(CATALOG_TABLES):
                raise SchemaVersionMismatch(
                    f"{handle.path} holds tables that are not a version-{SCHEMA_VERSION} catalog"
                )
            version = conn.execute("SELECT schema_version FROM atlas_meta WHERE id = 1").fetchone()
            if version is None or version[0] != SCHEMA_VERSION:
                raise SchemaVersionMismatch(
                    f"{handle.path} is at schema version {version and version[0]}, "
                    f"expected {SCHEMA_VERSION}"
                )
        with conn:
            conn.executescript(SCHEMA_SQL)
            conn.execute(
                "INSERT OR IGNORE INTO atlas_meta (id, schema_version, created_on) "
                "VALUES (1, ?, datetime('now'))",
                (SCHEMA_VERSION,),
            )
    finally:
        conn.close()
    return handle


def validate_integrity(handle: SchemaHandle) -> IntegrityReport:
    """Sweep the catalog for dangling references, orphan images, and
    duplicate (variable, code) pairs."""
    report = IntegrityReport()
    try:
        conn = handle.connect_readonly()
    except StoreUnavailable:
        raise
    try:
        if not _existing_tables(conn):
            return report
        for child, column, parent_table in _FOREIGN_KEYS:
            # link tables are WITHOUT ROWID; identify their rows by the fk value
            ident = column if child in ("pipeline_algorithm", "user_group") else "rowid"
            rows = conn.execute(
                f"SELECT c.{ident} FROM {child} c WHERE c.{column} IS NOT NULL "
                f"AND NOT EXISTS (SELECT 1 FROM {parent_table} p WHERE p.id = c.{column})"
            ).fetchall()
            report.dangling_refs.extend((child, column, r[0]) for r in rows)
        rows = conn.execute("SELECT lfn FROM image_file WHERE subject_id IS NULL ORDER BY lfn").fetchall()
        report.orphan_images.extend(r[0] for r in rows)
        rows = conn.execute(
            "SELECT variable_id, code FROM score_code GROUP BY variable_id, code HAVING COUNT(*) > 1"
        ).fetchall()
        report.duplicate_codes.extend((r[0], r[1]) for r in rows)
    except sqlite3.Error as exc:
        raise StoreError(str(exc)) from exc
    finally:
        conn.close()
    return report


def dump_store(handle: SchemaHandle) -> bytes:
    """Serialize the full store content; equal stores give equal bytes."""
    conn = handle.connect_readonly()
    try:
        return "\n".join(conn.iterdump()).encode("utf-8")
    finally:
        conn.close()


# lfn synthesis: catalog entries point at grid storage via logical file names
# of the form <prefix>/<DATASET>/IMAGES/<intermediate>/<subjectdir>/<file>.
DEFAULT_LFN_PREFIX = "/grid/vo.neugrid.eu/data"


def build_lfn(prefix: str, dataset_name: str, intermediate: str, dir_name: str, file_name: str) -> str:
    parts = [prefix.rstrip("/"), dataset_name, "IMAGES"]
    if intermediate:
        parts.append(intermediate)
    parts.extend([dir_name, file_name])
    return "/".join(parts)
