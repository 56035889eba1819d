"""Command-line interface: `atlas <subcommand>`.

Subcommands: ingest, pipeline add, query, export, serve, synth, crawl.
The store path comes from --db or the ATLAS_DB_PATH environment variable.

--where expressions use one operator per predicate: `var=value` (equal),
`var!=value` (not equal), `var<value`, `var>value`, `var~value` (substring),
`var==value` (exact string). Multiple --where flags combine with AND.
"""

from __future__ import annotations

import argparse
import json
import os
import re
import sys
from pathlib import Path

from . import query as query_mod
from .crawler import crawl, detect_layout
from .errors import AtlasError
from .export import export_csv, export_xml
from .ingest import IngestConfig, ingest_dataset
from .model import DEFAULT_LFN_PREFIX, create_schema
from .pipelines import PipelineDescriptor, index_pipeline
from .synth import SynthSpec, generate

_WHERE_RE = re.compile(r"^(?P<var>[^=!<>~]+?)\s*(?P<op>==|!=|=|<|>|~)\s*(?P<value>.*)$")

_WHERE_OPS = {"=": "EQ", "!=": "NEQ", "<": "LT", ">": "GT", "~": "LIKE", "==": "EXACT"}


def parse_where(expression: str) -> tuple[str, str, str, str]:
    m = _WHERE_RE.match(expression)
    if not m:
        raise AtlasError(
            f"cannot parse --where {expression!r}; expected <variable><op><value> "
            f"with op one of {sorted(_WHERE_OPS)}"
        )
    return m.group("var").strip(), _WHERE_OPS[m.group("op")], m.group("value"), "AND"


def _db_path(args) -> str:
    return args.db or os.environ.get("ATLAS_DB_PATH", "atlas.db")


def _build_filter(handle, args) -> query_mod.FilterExpression:
    dataset_id = query_mod.resolve_dataset(handle, args.dataset)
    assessment_type_id = None
    if args.assessment:
        for sub in query_mod.list_subdatasets(handle, dataset_id):
            if sub["name"] == args.assessment:
                assessment_type_id = sub["id"]
                break
        else:
            raise AtlasError(f"dataset {args.dataset!r} has no sub-dataset {args.assessment!r}")
    named = [parse_where(w) for w in args.where or []]
    return query_mod.build_filter(handle, dataset_id, named, assessment_type_id)


def cmd_ingest(args) -> int:
    config = IngestConfig(
        lfn_prefix=args.lfn_prefix,
        allow_ragged=args.allow_ragged,
        owner=args.owner,
    )
    report = ingest_dataset(
        args.root, args.dataset, args.category, _db_path(args), config, replace=args.replace
    )
    for line in report.lines():
        print(line)
    return 0


def cmd_pipeline_add(args) -> int:
    handle = create_schema(_db_path(args))
    descriptor = PipelineDescriptor.from_json_file(args.file)
    pipeline_id = index_pipeline(handle, descriptor)
    print(f"pipeline {descriptor.name!r} indexed with id {pipeline_id}")
    return 0


def _print_table(records: list[dict]) -> None:
    if not records:
        return
    columns = list(records[0])
    widths = [max(len(c), *(len(str(r[c])) for r in records)) for c in columns]
    print("  ".join(c.ljust(w) for c, w in zip(columns, widths)))
    for record in records:
        print("  ".join(str(record[c]).ljust(w) for c, w in zip(columns, widths)))


def cmd_query(args) -> int:
    handle = create_schema(_db_path(args))
    compiled = query_mod.compile_filter(handle, _build_filter(handle, args))
    page = query_mod.execute(handle, compiled, args.page, args.page_size)
    if args.json:
        print(json.dumps(page.to_dict(), indent=1))
        return 0
    shown_from = args.page * args.page_size
    _print_table(page.records)
    print(
        f"Total Records {page.total} - Displaying {min(shown_from, page.total)} - "
        f"{shown_from + len(page.records)}  ({page.elapsed_ms:.1f} ms)"
    )
    return 0


def cmd_export(args) -> int:
    handle = create_schema(_db_path(args))
    expression = _build_filter(handle, args)
    compiled = query_mod.compile_filter(handle, expression)
    result = query_mod.execute(handle, compiled, 0, sys.maxsize // 2)
    names: list[str] = []
    for predicate in expression.predicates:
        name = query_mod.variable_metadata(handle, predicate.variable_id).name
        if name not in names:
            names.append(name)
    exporter = export_xml if args.format == "xml" else export_csv
    document = exporter(result.records, tuple(names))
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    target = outdir / document.suggested_filename
    target.write_bytes(document.body)
    print(f"{result.total} record(s) exported to {target}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    app = create_app(_db_path(args), args.tokens, args.lfn_prefix)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def cmd_synth(args) -> int:
    spec = SynthSpec.from_json(args.spec)
    manifest = generate(spec, args.outdir, lfn_prefix=args.lfn_prefix)
    print(json.dumps(manifest.counts, indent=1, sort_keys=True))
    return 0


def cmd_crawl(args) -> int:
    tree = crawl(args.root, max_depth=args.max_depth)
    if args.json:
        print(tree.to_json())
        return 0
    dirs = files = 0
    stack = [tree.root]
    while stack:
        node = stack.pop()
        if node.kind == "dir":
            dirs += 1
            stack.extend(node.children)
        else:
            files += 1
    print(f"{tree.root_path}: {dirs} directories, {files} files")
    try:
        layout = detect_layout(tree)
        print(
            f"layout: clinical={layout.clinical_dir} images={layout.images_dir} "
            f"sub_levels={layout.sub_levels}"
        )
    except AtlasError as exc:
        print(f"layout: not a dataset root ({exc})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="atlas", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_db(p):
        p.add_argument("--db", default=None, help="catalog database path (or ATLAS_DB_PATH)")

    p = sub.add_parser("ingest", help="index a dataset tree into the catalog")
    p.add_argument("root")
    p.add_argument("--dataset", required=True)
    p.add_argument("--category", required=True)
    p.add_argument("--replace", action="store_true")
    p.add_argument("--allow-ragged", action="store_true", help="tolerate ragged CSV rows")
    p.add_argument("--owner", default="")
    p.add_argument("--lfn-prefix", default=os.environ.get("ATLAS_LFN_PREFIX", DEFAULT_LFN_PREFIX))
    add_db(p)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("pipeline", help="pipeline catalog commands")
    pipe_sub = p.add_subparsers(dest="pipeline_command", required=True)
    q = pipe_sub.add_parser("add", help="index a pipeline descriptor (JSON file)")
    q.add_argument("file")
    add_db(q)
    q.set_defaults(func=cmd_pipeline_add)

    p = sub.add_parser("query", help="filter image records by clinical variables")
    p.add_argument("--dataset", required=True)
    p.add_argument("--assessment", default=None, help="sub-dataset (assessment type) name")
    p.add_argument("--where", action="append", metavar="VAR<OP>VALUE")
    p.add_argument("--page", type=int, default=0)
    p.add_argument("--page-size", type=int, default=query_mod.DEFAULT_PAGE_SIZE)
    p.add_argument("--json", action="store_true", help="print the raw result page as JSON")
    add_db(p)
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("export", help="export a filtered result to XML or CSV")
    p.add_argument("--format", choices=("xml", "csv"), required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--assessment", default=None)
    p.add_argument("--where", action="append", metavar="VAR<OP>VALUE")
    p.add_argument("--out", default=".", help="output directory")
    add_db(p)
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("serve", help="run the HTTP API")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=int(os.environ.get("ATLAS_PORT", "8080")))
    p.add_argument("--tokens", default=os.environ.get("ATLAS_TOKEN_FILE"))
    p.add_argument("--lfn-prefix", default=os.environ.get("ATLAS_LFN_PREFIX", DEFAULT_LFN_PREFIX))
    add_db(p)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("synth", help="generate a synthetic dataset tree with manifest")
    p.add_argument("spec", help="SynthSpec JSON file")
    p.add_argument("outdir")
    p.add_argument("--lfn-prefix", default=DEFAULT_LFN_PREFIX)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("crawl", help="walk a dataset root and describe it")
    p.add_argument("root")
    p.add_argument("--json", action="store_true", help="print the canonical JSON tree")
    p.add_argument("--max-depth", type=int, default=32)
    p.set_defaults(func=cmd_crawl)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except AtlasError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
