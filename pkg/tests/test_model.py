import sqlite3

import pytest

from neuroatlas.errors import SchemaVersionMismatch, StoreUnavailable
from neuroatlas.model import (
    CATALOG_TABLES,
    META_TABLE,
    SchemaHandle,
    create_schema,
    dump_store,
    validate_integrity,
)


@pytest.fixture
def handle(tmp_path):
    return create_schema(tmp_path / "atlas.db")


def table_names(handle):
    conn = handle.connect()
    try:
        rows = conn.execute(
            "SELECT name FROM sqlite_master WHERE type='table' AND name NOT LIKE 'sqlite_%'"
        ).fetchall()
        return {r[0] for r in rows}
    finally:
        conn.close()


def test_create_schema_builds_all_catalog_tables(handle):
    assert table_names(handle) == set(CATALOG_TABLES) | {META_TABLE}


def test_create_schema_is_idempotent(handle):
    before = dump_store(handle)
    create_schema(handle.path)
    assert dump_store(handle) == before


def test_create_schema_rejects_foreign_store(tmp_path):
    path = tmp_path / "other.db"
    conn = sqlite3.connect(path)
    conn.execute("CREATE TABLE sensor (id INTEGER PRIMARY KEY, reading REAL)")
    conn.commit()
    conn.close()
    with pytest.raises(SchemaVersionMismatch):
        create_schema(path)


def test_create_schema_rejects_version_drift(tmp_path, handle):
    conn = SchemaHandle(handle.path).connect()
    conn.execute("UPDATE atlas_meta SET schema_version = 99")
    conn.commit()
    conn.close()
    with pytest.raises(SchemaVersionMismatch):
        create_schema(handle.path)


def test_create_schema_requires_reachable_path(tmp_path):
    with pytest.raises(StoreUnavailable):
        create_schema(tmp_path / "no" / "such" / "dir" / "atlas.db")


def test_duplicate_lfn_violates_constraint(handle):
    conn = handle.connect()
    conn.execute("INSERT INTO data_set_category (name) VALUES ('C')")
    conn.execute(
        "INSERT INTO data_set (category_id, name, root_lfn, created_on) VALUES (1, 'D', '/d', '')"
    )
    conn.execute(
        "INSERT INTO image_file (dataset_id, file_name, lfn, added_on) VALUES (1, 'a', '/d/a', '')"
    )
    with pytest.raises(sqlite3.IntegrityError):
        conn.execute(
            "INSERT INTO image_file (dataset_id, file_name, lfn, added_on) VALUES (1, 'b', '/d/a', '')"
        )
    conn.close()


def test_duplicate_score_code_violates_constraint(handle):
    conn = handle.connect()
    conn.executescript(
        """
        INSERT INTO data_set_category (name) VALUES ('C');
        INSERT INTO data_set (category_id, name, root_lfn, created_on) VALUES (1, 'D', '/d', '');
        INSERT INTO assessment_type (dataset_id, name) VALUES (1, 'D');
        INSERT INTO clinical_variable (assessment_type_id, name, value_kind)
            VALUES (1, 'maritalstatus', 'numeric');
        INSERT INTO score_code (variable_id, code, label) VALUES (1, '2', 'Married/common law');
        """
    )
    with pytest.raises(sqlite3.IntegrityError):
        conn.execute("INSERT INTO score_code (variable_id, code, label) VALUES (1, '2', 'again')")
    conn.close()


def test_validate_integrity_empty_store_is_clean(handle):
    report = validate_integrity(handle)
    assert report.is_clean
    assert report.summary() == "integrity: clean"


def test_validate_integrity_reports_dangling_family(handle):
    conn = handle.connect()
    conn.executescript(
        """
        INSERT INTO data_set_category (name) VALUES ('C');
        INSERT INTO data_set (category_id, name, root_lfn, created_on) VALUES (1, 'D', '/d', '');
        INSERT INTO subject (dataset_id, subject_code) VALUES (1, 'CC0001');
        INSERT INTO assessment_type (dataset_id, name) VALUES (1, 'D');
        INSERT INTO clinical_variable (assessment_type_id, name, value_kind)
            VALUES (1, 'age', 'numeric');
        INSERT INTO assessment_value (subject_id, variable_id, value) VALUES (1, 1, '40');
        DELETE FROM subject WHERE id = 1;
        """
    )
    conn.commit()
    conn.close()
    report = validate_integrity(handle)
    assert not report.is_clean
    assert ("assessment_value", "subject_id", 1) in report.dangling_refs


def test_validate_integrity_reports_orphan_images(handle):
    conn = handle.connect()
    conn.executescript(
        """
        INSERT INTO data_set_category (name) VALUES ('C');
        INSERT INTO data_set (category_id, name, root_lfn, created_on) VALUES (1, 'D', '/d', '');
        INSERT INTO image_file (dataset_id, subject_id, file_name, lfn, added_on)
            VALUES (1, NULL, 'a.nii', '/d/a.nii', '');
        """
    )
    conn.commit()
    conn.close()
    report = validate_integrity(handle)
    assert report.orphan_images == ["/d/a.nii"]


def test_algorithm_shared_by_two_pipelines_stored_once(handle):
    conn = handle.connect()
    conn.executescript(
        """
        INSERT INTO pipeline (name, lfn, version) VALUES ('p1', '/p1.sh', '1');
        INSERT INTO pipeline (name, lfn, version) VALUES ('p2', '/p2.sh', '1');
        INSERT INTO algorithm (name, lfn) VALUES ('skullstrip', '/a.sh');
        INSERT INTO pipeline_algorithm (pipeline_id, algorithm_id, position) VALUES (1, 1, 0);
        INSERT INTO pipeline_algorithm (pipeline_id, algorithm_id, position) VALUES (2, 1, 0);
        """
    )
    conn.commit()
    assert conn.execute("SELECT COUNT(*) FROM algorithm").fetchone()[0] == 1
    assert conn.execute("SELECT COUNT(*) FROM pipeline_algorithm").fetchone()[0] == 2
    conn.close()


def test_readonly_connection_refuses_writes(handle):
    conn = handle.connect_readonly()
    with pytest.raises(sqlite3.OperationalError):
        conn.execute("INSERT INTO data_set_category (name) VALUES ('X')")
    conn.close()
