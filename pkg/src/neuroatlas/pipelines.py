"""Pipeline and algorithm catalog.

A pipeline descriptor arrives as a flat JSON document (name, lfn, version,
description, owner, algorithms: [{name, lfn}, ...]). Indexing stages the
document to a temporary spool file, validates that no mandatory field is null
or empty, then commits the pipeline, its algorithms, and the ordered
many-to-many links. Algorithm identity is (name, lfn): a step already known
under both is reused, never duplicated.
"""

from __future__ import annotations

import json
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

from .errors import DuplicatePipeline, NullField, PipelineNotFound
from .model import SchemaHandle
from .query import DEFAULT_PAGE_SIZE, ResultPage, _paginate, escape_like


@dataclass(frozen=True)
class PipelineDescriptor:
    name: str
    lfn: str
    version: str = ""
    description: str = ""
    owner: str = ""
    algorithms: tuple[tuple[str, str], ...] = ()  # (name, lfn) in execution order

    @classmethod
    def from_dict(cls, raw: dict) -> "PipelineDescriptor":
        return cls(
            name=raw.get("name", "") or "",
            lfn=raw.get("lfn", "") or "",
            version=raw.get("version", "") or "",
            description=raw.get("description", "") or "",
            owner=raw.get("owner", "") or "",
            algorithms=tuple(
                (a.get("name", "") or "", a.get("lfn", "") or "")
                for a in raw.get("algorithms", [])
            ),
        )

    @classmethod
    def from_json_file(cls, path) -> "PipelineDescriptor":
        with open(path, "rb") as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "lfn": self.lfn,
            "version": self.version,
            "description": self.description,
            "owner": self.owner,
            "algorithms": [{"name": n, "lfn": l} for n, l in self.algorithms],
        }


def _validate(descriptor: PipelineDescriptor) -> None:
    if not descriptor.name.strip():
        raise NullField("pipeline name is empty")
    if not descriptor.lfn.strip():
        raise NullField("pipeline lfn is empty")
    for name, lfn in descriptor.algorithms:
        if not name.strip():
            raise NullField("algorithm name is empty")
        if not lfn.strip():
            raise NullField(f"algorithm {name!r} has an empty lfn")


def index_pipeline(handle: SchemaHandle, descriptor: PipelineDescriptor) -> int:
    """Stage, validate, and commit one pipeline; returns its id."""
    _validate(descriptor)
    # spool the incoming document before touching the store
    with tempfile.NamedTemporaryFile(
        "w", prefix="atlas-pipeline-", suffix=".json", delete=False
    ) as spool:
        json.dump(descriptor.to_dict(), spool)
        spool_path = Path(spool.name)
    try:
        conn = handle.connect()
        try:
            conn.execute("BEGIN IMMEDIATE")
            exists = conn.execute(
                "SELECT 1 FROM pipeline WHERE name = ? AND version = ?",
                (descriptor.name, descriptor.version),
            ).fetchone()
            if exists:
                raise DuplicatePipeline(f"{descriptor.name} version {descriptor.version!r}")
            pipeline_id = conn.execute(
                "INSERT INTO pipeline (name, lfn, version, description, owner) VALUES (?,?,?,?,?)",
                (
                    descriptor.name,
                    descriptor.lfn,
                    descriptor.version,
                    descriptor.description,
                    descriptor.owner,
                ),
            ).lastrowid
            for position, (name, lfn) in enumerate(descriptor.algorithms):
                row = conn.execute(
                    "SELECT id FROM algorithm WHERE name = ? AND lfn = ?", (name, lfn)
                ).fetchone()
                algorithm_id = (
                    row[0]
                    if row
                    else conn.execute(
                        "INSERT INTO algorithm (name, lfn, owner) VALUES (?,?,?)",
                        (name, lfn, descriptor.owner),
                    ).lastrowid
                )
                conn.execute(
                    "INSERT INTO pipeline_algorithm (pipeline_id, algorithm_id, position)"
                    " VALUES (?,?,?)",
                    (pipeline_id, algorithm_id, position),
                )
            conn.commit()
            return pipeline_id
        except BaseException:
            conn.rollback()
            raise
        finally:
            conn.close()
    finally:
        spool_path.unlink(missing_ok=True)


def list_pipelines(
    handle: SchemaHandle,
    name_contains: str | None = None,
    owner: str | None = None,
    page: int = 0,
    page_size: int = DEFAULT_PAGE_SIZE,
) -> ResultPage:
    """Pipelines filtered by case-insensitive name substring and exact owner."""
    sql = (
        "SELECT id, name, lfn, version, description, owner FROM pipeline"
    )
    clauses, bindings = [], []
    if name_contains:
        clauses.append("name LIKE ? ESCAPE '\\'")
        bindings.append(f"%{escape_like(name_contains)}%")
    if owner:
        clauses.append("owner = ?")
        bindings.append(owner)
    if clauses:
        sql += " WHERE " + " AND ".join(clauses)
    sql += " ORDER BY id"
    conn = handle.connect_readonly()
    try:
        return _paginate(conn, sql, tuple(bindings), page, page_size, wrap=False)
    finally:
        conn.close()


@dataclass
class AlgorithmRow:
    id: int
    name: str
    lfn: str
    owner: str
    position: int = 0

    def to_dict(self) -> dict:
        return {"id": self.id, "name": self.name, "lfn": self.lfn, "owner": self.owner,
                "position": self.position}


def algorithms_of(handle: SchemaHandle, pipeline_id: int) -> list[AlgorithmRow]:
    """The pipeline's algorithms in link-position order."""
    conn = handle.connect_readonly()
    try:
        if conn.execute("SELECT 1 FROM pipeline WHERE id = ?", (pipeline_id,)).fetchone() is None:
            raise PipelineNotFound(f"no pipeline with id {pipeline_id}")
        rows = conn.execute(
            "SELECT a.id, a.name, a.lfn, a.owner, pa.position FROM pipeline_algorithm pa"
            " JOIN algorithm a ON a.id = pa.algorithm_id"
            " WHERE pa.pipeline_id = ? ORDER BY pa.position",
            (pipeline_id,),
        ).fetchall()
        return [AlgorithmRow(id=r[0], name=r[1], lfn=r[2], owner=r[3], position=r[4]) for r in rows]
    finally:
        conn.close()
