"""HTTP API over the catalog: browsing, querying, export, pipelines, ingest.

Every route except /health requires a bearer token resolved against a static
token file (JSON mapping token -> {user, role, expires}). Errors cross the
wire as {"code": <error class>, "message": <human readable>}. Each handled
request, including failures, appends one entry to the in-process request log.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
import time
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

from fastapi import Depends, FastAPI, Query, Request
from fastapi.responses import JSONResponse, StreamingResponse
from pydantic import BaseModel, Field

from . import export as export_mod
from . import pipelines as pipelines_mod
from . import query as query_mod
from .errors import (
    AtlasError,
    DuplicateDataset,
    DuplicatePipeline,
    IngestInProgress,
    MalformedCsv,
    MissingParam,
    MissingSubjectColumn,
    MultiStatement,
    MutationForbidden,
    NonWhitelistedTable,
    NotFound,
    NullField,
    ParseError,
    PipelineNotFound,
    RaggedRow,
    SchemaVersionMismatch,
    StoreError,
    StoreUnavailable,
    TypeMismatch,
    Unauthorized,
    UnknownQueryId,
    UnknownVariable,
)
from .ingest import IngestConfig, ingest_dataset
from .model import CATALOG_TABLES, DEFAULT_LFN_PREFIX, create_schema
from .sandbox import readonly_authorizer, validate_sql

ERROR_STATUS = {
    Unauthorized: 401,
    MutationForbidden: 403,
    MultiStatement: 403,
    NonWhitelistedTable: 403,
    ParseError: 400,
    MissingParam: 400,
    TypeMismatch: 400,
    UnknownQueryId: 400,
    MalformedCsv: 400,
    MissingSubjectColumn: 400,
    RaggedRow: 400,
    NotFound: 404,
    PipelineNotFound: 404,
    UnknownVariable: 404,
    DuplicateDataset: 409,
    DuplicatePipeline: 409,
    IngestInProgress: 409,
    NullField: 422,
    StoreUnavailable: 503,
    SchemaVersionMismatch: 500,
    StoreError: 500,
}


@dataclass(frozen=True)
class Principal:
    user: str
    role: str


@dataclass
class RequestLogEntry:
    timestamp: str
    principal: str
    operation: str
    params_digest: str
    elapsed_ms: float
    outcome: int


class TokenStore:
    """Static bearer-token table loaded from a JSON file."""

    def __init__(self, tokens: dict[str, dict]):
        self.tokens = tokens

    @classmethod
    def from_file(cls, path) -> "TokenStore":
        with open(path, "rb") as fh:
            return cls(json.load(fh))

    def resolve(self, token: str) -> Principal:
        entry = self.tokens.get(token)
        if entry is None:
            raise Unauthorized("the supplied token is not recognised; please sign in again")
        expires = entry.get("expires")
        if expires is not None:
            now = datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
            if now >= expires:
                raise Unauthorized("this session token has expired; please sign in again")
        return Principal(user=entry.get("user", ""), role=entry.get("role", ""))


# -- request bodies -----------------------------------------------------------

class PredicateBody(BaseModel):
    variable_id: int
    op: str
    operand: str | int | float | list[str | int | float]
    combinator: str = "AND"

    def to_predicate(self) -> query_mod.Predicate:
        operand = self.operand
        if isinstance(operand, list):
            operand = tuple(str(o) for o in operand)
        else:
            operand = str(operand)
        return query_mod.Predicate(
            variable_id=self.variable_id, op=self.op, operand=operand, combinator=self.combinator
        )


class QueryBody(BaseModel):
    dataset_id: int
    assessment_type_id: int | None = None
    predicates: list[PredicateBody] = Field(default_factory=list)

    def to_filter(self) -> query_mod.FilterExpression:
        return query_mod.FilterExpression(
            dataset_id=self.dataset_id,
            assessment_type_id=self.assessment_type_id,
            predicates=tuple(p.to_predicate() for p in self.predicates),
        )


class SqlBody(BaseModel):
    sql: str


class PredefinedBody(BaseModel):
    query_id: str
    params: dict = Field(default_factory=dict)


class PipelineBody(BaseModel):
    name: str = ""
    lfn: str = ""
    version: str = ""
    description: str = ""
    owner: str = ""
    algorithms: list[dict] = Field(default_factory=list)


class IngestBody(BaseModel):
    root: str
    dataset: str
    category: str
    replace: bool = False


def _digest(request: Request, body: bytes) -> str:
    payload = request.url.path.encode() + b"?" + request.url.query.encode() + b"|" + body
    return hashlib.sha256(payload).hexdigest()[:12]


def create_app(
    db_path: str | Path,
    token_path: str | Path | None = None,
    lfn_prefix: str = DEFAULT_LFN_PREFIX,
) -> FastAPI:
    handle = create_schema(db_path)
    tokens = TokenStore.from_file(token_path) if token_path else TokenStore({})

    app = FastAPI(title="atlas", version="0.1.0")
    app.state.handle = handle
    app.state.tokens = tokens
    app.state.lfn_prefix = lfn_prefix
    app.state.request_log: list[RequestLogEntry] = []
    app.state.ingest_lock = threading.Lock()

    def require_auth(request: Request) -> Principal:
        header = request.headers.get("authorization", "")
        if not header.lower().startswith("bearer "):
            raise Unauthorized("missing bearer token; supply an Authorization header")
        principal = tokens.resolve(header[7:].strip())
        request.state.principal = principal
        return principal

    @app.exception_handler(AtlasError)
    async def atlas_error_handler(request: Request, exc: AtlasError):
        status = ERROR_STATUS.get(type(exc), 500)
        return JSONResponse(
            status_code=status,
            content={"code": type(exc).__name__, "message": str(exc)},
        )

    @app.middleware("http")
    async def request_logger(request: Request, call_next):
        body = await request.body()
        started = time.perf_counter()
        response = await call_next(request)
        elapsed_ms = (time.perf_counter() - started) * 1000.0
        principal = getattr(request.state, "principal", None)
        app.state.request_log.append(
            RequestLogEntry(
                timestamp=datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%S.%fZ"),
                principal=principal.user if principal else "",
                operation=f"{request.method} {request.url.path}",
                params_digest=_digest(request, body),
                elapsed_ms=elapsed_ms,
                outcome=response.status_code,
            )
        )
        return response

    @app.get("/health")
    def health():
        return {"status": "ok"}

    @app.get("/datasets")
    def datasets(_: Principal = Depends(require_auth)):
        return query_mod.list_datasets(handle)

    @app.get("/datasets/{dataset_id}/subdatasets")
    def subdatasets(dataset_id: int, _: Principal = Depends(require_auth)):
        return query_mod.list_subdatasets(handle, dataset_id)

    @app.get("/subdatasets/{assessment_type_id}/variables")
    def variables(assessment_type_id: int, _: Principal = Depends(require_auth)):
        return query_mod.list_variables(handle, assessment_type_id)

    @app.get("/variables/{variable_id}/dictionary")
    def dictionary(variable_id: int, _: Principal = Depends(require_auth)):
        return query_mod.variable_metadata(handle, variable_id).to_dict()

    @app.post("/query")
    def run_query(
        body: QueryBody,
        page: int = Query(0, ge=0),
        page_size: int = Query(query_mod.DEFAULT_PAGE_SIZE, gt=0),
        _: Principal = Depends(require_auth),
    ):
        compiled = query_mod.compile_filter(handle, body.to_filter())
        return query_mod.execute(handle, compiled, page, page_size).to_dict()

    @app.post("/query/sql")
    def run_sql(
        body: SqlBody,
        page: int = Query(0, ge=0),
        page_size: int = Query(query_mod.DEFAULT_PAGE_SIZE, gt=0),
        _: Principal = Depends(require_auth),
    ):
        return query_mod.sandbox_execute(handle, body.sql, page, page_size).to_dict()

    @app.post("/query/copysql")
    def copy_sql(body: QueryBody, _: Principal = Depends(require_auth)):
        return {"sql": query_mod.copy_sql(handle, body.to_filter())}

    @app.post("/query/predefined")
    def run_predefined(
        body: PredefinedBody,
        page: int = Query(0, ge=0),
        page_size: int = Query(query_mod.DEFAULT_PAGE_SIZE, gt=0),
        _: Principal = Depends(require_auth),
    ):
        return query_mod.run_predefined(handle, body.query_id, body.params, page, page_size).to_dict()

    def _stream_rows(sql_text: str, bindings: tuple, sandboxed: bool):
        conn = handle.connect_readonly()
        if sandboxed:
            conn.set_authorizer(readonly_authorizer(CATALOG_TABLES))
        try:
            cursor = conn.execute(sql_text, bindings)
            columns = [d[0] for d in cursor.description]
            for row in cursor:
                yield dict(zip(columns, row))
        finally:
            conn.close()

    @app.get("/export")
    def export_result(
        format: str = Query(..., pattern="^(xml|csv)$"),
        filter: str | None = None,
        sql: str | None = None,
        _: Principal = Depends(require_auth),
    ):
        if filter:
            body = QueryBody.model_validate_json(filter)
            expression = body.to_filter()
            compiled = query_mod.compile_filter(handle, expression)
            seen: list[str] = []
            for predicate in expression.predicates:
                name = query_mod.variable_metadata(handle, predicate.variable_id).name
                if name not in seen:
                    seen.append(name)
            rows = _stream_rows(compiled.sql_text, compiled.bindings, sandboxed=False)
            variable_fields = tuple(seen)
        elif sql:
            validate_sql(sql, CATALOG_TABLES)
            rows = _stream_rows(sql, (), sandboxed=True)
            variable_fields = ()
        else:
            raise MissingParam("export needs a 'filter' or 'sql' query parameter")
        chunks = (
            export_mod.iter_xml(rows, variable_fields)
            if format == "xml"
            else export_mod.iter_csv(rows, variable_fields)
        )
        filename = export_mod.stamp_filename(format)
        return StreamingResponse(
            chunks,
            media_type="application/xml" if format == "xml" else "text/csv",
            headers={"Content-Disposition": f'attachment; filename="{filename}"'},
        )

    @app.get("/pipelines")
    def pipelines(
        name: str | None = None,
        owner: str | None = None,
        page: int = Query(0, ge=0),
        page_size: int = Query(query_mod.DEFAULT_PAGE_SIZE, gt=0),
        _: Principal = Depends(require_auth),
    ):
        return pipelines_mod.list_pipelines(handle, name, owner, page, page_size).to_dict()

    @app.get("/pipelines/{pipeline_id}/algorithms")
    def pipeline_algorithms(pipeline_id: int, _: Principal = Depends(require_auth)):
        return [a.to_dict() for a in pipelines_mod.algorithms_of(handle, pipeline_id)]

    @app.post("/pipelines", status_code=201)
    def add_pipeline(body: PipelineBody, _: Principal = Depends(require_auth)):
        descriptor = pipelines_mod.PipelineDescriptor.from_dict(body.model_dump())
        return {"id": pipelines_mod.index_pipeline(handle, descriptor)}

    @app.post("/ingest", status_code=201)
    def run_ingest(body: IngestBody, principal: Principal = Depends(require_auth)):
        if principal.role != "admin":
            raise Unauthorized("ingest needs the admin role")
        if not app.state.ingest_lock.acquire(blocking=False):
            raise IngestInProgress("another ingest is already running; retry later")
        try:
            report = ingest_dataset(
                body.root,
                body.dataset,
                body.category,
                handle,
                IngestConfig(lfn_prefix=app.state.lfn_prefix, owner=principal.user),
                replace=body.replace,
            )
            return report.__dict__
        finally:
            app.state.ingest_lock.release()

    return app


def create_app_from_env() -> FastAPI:
    return create_app(
        db_path=os.environ.get("ATLAS_DB_PATH", "atlas.db"),
        token_path=os.environ.get("ATLAS_TOKEN_FILE"),
        lfn_prefix=os.environ.get("ATLAS_LFN_PREFIX", DEFAULT_LFN_PREFIX),
    )
