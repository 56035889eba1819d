import random

import pytest

from neuroatlas.errors import (
    MissingParam,
    NotFound,
    TypeMismatch,
    UnknownQueryId,
    UnknownVariable,
)
from neuroatlas.ingest import ingest_dataset
from neuroatlas.model import create_schema
from neuroatlas.query import (
    DEFAULT_FIELDS,
    FilterExpression,
    Predicate,
    build_filter,
    compile_filter,
    copy_sql,
    execute,
    list_datasets,
    list_subdatasets,
    list_variables,
    resolve_dataset,
    resolve_variable,
    run_predefined,
    sandbox_execute,
    variable_metadata,
)
from neuroatlas.synth import (
    Manifest,
    OraclePredicate,
    SynthSpec,
    VariableSpec,
    generate,
    oracle_query,
)

from corpus import EMPLOYMENTSTATUS_CODES, MARITALSTATUS_CODES
from filtergen import random_named_predicates


@pytest.fixture(scope="module")
def fixture(tmp_path_factory):
    """20-subject depth-1 dataset, ingested; returns (handle, manifest, dataset_id)."""
    root = tmp_path_factory.mktemp("queryfix")
    spec = SynthSpec(name="NUSYN", n_subjects=20, files_per_subject=(3, 8), seed=42,
                     missing_cell_rate=0.15)
    manifest = generate(spec, root / "data")
    handle = create_schema(root / "atlas.db")
    ingest_dataset(root / "data", "NUSYN", "NUSYN", handle)
    return handle, manifest, resolve_dataset(handle, "NUSYN")


def named_filter(handle, dataset_id, named):
    return build_filter(handle, dataset_id, named)


def engine_lfns(handle, f, page_size=100000):
    page = execute(handle, compile_filter(handle, f), 0, page_size)
    return sorted(r["lfn"] for r in page.records)


def to_oracle(named):
    return [OraclePredicate(n, op, operand, combinator) for n, op, operand, combinator in named]


def test_vacuous_filter_returns_all_images(fixture):
    handle, manifest, dataset_id = fixture
    f = FilterExpression(dataset_id=dataset_id)
    assert engine_lfns(handle, f) == manifest.all_lfns()


def test_two_predicate_eq_filter_matches_oracle(fixture):
    handle, manifest, dataset_id = fixture
    named = [("maritalstatus", "EQ", "2", "AND"), ("employmentstatus", "EQ", "5", "AND")]
    got = engine_lfns(handle, named_filter(handle, dataset_id, named))
    assert got == oracle_query(manifest, to_oracle(named))


@pytest.mark.parametrize(
    "named",
    [
        [("maritalstatus", "NEQ", "2", "AND")],
        [("maritalstatus", "NOT_IN", ("2", "3"), "AND")],
        [("gender", "EXACT", "male", "AND")],
        [("gender", "LIKE", "MALE", "AND")],
        [("age", "GT", "40", "AND")],
        [("age", "LT", "30.5", "AND")],
        [("visitdate", "GT", "2010-06-15", "AND")],
        [("visitdate", "LT", "2010-01-01", "AND")],
        [("maritalstatus", "EQ", "2", "AND"), ("gender", "EQ", "female", "OR")],
        [("age", "GT", "30", "AND"), ("age", "LT", "50", "AND"), ("race", "NEQ", "9", "OR")],
    ],
)
def test_operator_semantics_match_oracle(fixture, named):
    handle, manifest, dataset_id = fixture
    got = engine_lfns(handle, named_filter(handle, dataset_id, named))
    assert got == oracle_query(manifest, to_oracle(named))
    assert got or oracle_query(manifest, to_oracle(named)) == []


def test_random_filters_match_oracle(fixture):
    handle, manifest, dataset_id = fixture
    rng = random.Random(2024)
    for _ in range(60):
        named = random_named_predicates(rng, manifest)
        got = engine_lfns(handle, named_filter(handle, dataset_id, named))
        assert got == oracle_query(manifest, to_oracle(named)), named


def test_compile_is_deterministic(fixture):
    handle, _, dataset_id = fixture
    named = [("maritalstatus", "EQ", "2", "AND"), ("age", "GT", "30", "OR")]
    f = named_filter(handle, dataset_id, named)
    a = compile_filter(handle, f)
    b = compile_filter(handle, f)
    assert a.sql_text == b.sql_text
    assert a.bindings == b.bindings
    assert a.sql_text.count("?") == len(a.bindings)


def test_projection_carries_default_fields_and_variables(fixture):
    handle, _, dataset_id = fixture
    f = named_filter(handle, dataset_id, [("maritalstatus", "EQ", "2", "AND")])
    page = execute(handle, compile_filter(handle, f))
    if page.records:
        record = page.records[0]
        assert list(record)[: len(DEFAULT_FIELDS)] == list(DEFAULT_FIELDS)
        assert "maritalstatus" in record
        assert record["maritalstatus"] == "2"
        assert record["assessment_type"] == "NUSYN"
        assert record["subject_id"].startswith("nG+NUSYN+")


def test_duplicate_variable_projected_once(fixture):
    handle, _, dataset_id = fixture
    named = [("age", "GT", "25", "AND"), ("age", "LT", "60", "AND")]
    page = execute(handle, compile_filter(handle, named_filter(handle, dataset_id, named)))
    assert page.records, "range should match someone"
    assert list(page.records[0]).count("age") == 1


def test_type_mismatch_on_non_numeric_operand(fixture):
    handle, _, dataset_id = fixture
    with pytest.raises(TypeMismatch):
        compile_filter(handle, named_filter(handle, dataset_id, [("age", "GT", "abc", "AND")]))


def test_type_mismatch_on_ordered_text_comparison(fixture):
    handle, _, dataset_id = fixture
    with pytest.raises(TypeMismatch):
        compile_filter(handle, named_filter(handle, dataset_id, [("gender", "LT", "m", "AND")]))


def test_unknown_variable_rejected(fixture):
    handle, _, dataset_id = fixture
    with pytest.raises(UnknownVariable):
        resolve_variable(handle, dataset_id, "nosuchvar")
    with pytest.raises(UnknownVariable):
        compile_filter(
            handle,
            FilterExpression(dataset_id=dataset_id, predicates=(Predicate(999999, "EQ", "1"),)),
        )


def test_not_in_requires_non_empty_list(fixture):
    handle, _, dataset_id = fixture
    f = FilterExpression(
        dataset_id=dataset_id,
        predicates=(Predicate(variable_id=1, op="NOT_IN", operand=()),),
    )
    with pytest.raises(TypeMismatch):
        compile_filter(handle, f)


def test_ordering_is_stable(fixture):
    handle, _, dataset_id = fixture
    q = compile_filter(handle, FilterExpression(dataset_id=dataset_id))
    first = [r["lfn"] for r in execute(handle, q, 0, 10000).records]
    second = [r["lfn"] for r in execute(handle, q, 0, 10000).records]
    assert first == second == sorted(first)


def test_pagination_partition(tmp_path):
    spec = SynthSpec(name="PAGED", n_subjects=70, files_per_subject=(10, 10), seed=8)
    generate(spec, tmp_path / "data")
    handle = create_schema(tmp_path / "atlas.db")
    ingest_dataset(tmp_path / "data", "PAGED", "PAGED", handle)
    q = compile_filter(handle, FilterExpression(dataset_id=resolve_dataset(handle, "PAGED")))
    pages = [execute(handle, q, page, 300) for page in range(3)]
    assert [len(p.records) for p in pages] == [300, 300, 100]
    assert {p.total for p in pages} == {700}
    stitched = [r["lfn"] for p in pages for r in p.records]
    unpaged = [r["lfn"] for r in execute(handle, q, 0, 100000).records]
    assert stitched == unpaged
    assert len(set(stitched)) == 700


def test_page_past_the_end_is_empty_not_an_error(fixture):
    handle, manifest, dataset_id = fixture
    q = compile_filter(handle, FilterExpression(dataset_id=dataset_id))
    page = execute(handle, q, 5, 10000)
    assert page.records == []
    assert page.total == len(manifest.all_lfns())


def test_elapsed_ms_is_measured(fixture):
    handle, _, dataset_id = fixture
    page = execute(handle, compile_filter(handle, FilterExpression(dataset_id=dataset_id)))
    assert page.elapsed_ms >= 0.0


def test_copy_sql_round_trips_through_sandbox(fixture):
    handle, _, dataset_id = fixture
    named = [("maritalstatus", "EQ", "2", "AND"), ("employmentstatus", "EQ", "5", "AND")]
    f = named_filter(handle, dataset_id, named)
    direct = execute(handle, compile_filter(handle, f), 0, 10000)
    inlined = copy_sql(handle, f)
    assert "?" not in inlined
    via_sandbox = sandbox_execute(handle, inlined, 0, 10000)
    assert [r["lfn"] for r in via_sandbox.records] == [r["lfn"] for r in direct.records]


def test_copy_sql_empty_filter_has_no_predicates(fixture):
    handle, _, dataset_id = fixture
    sql = copy_sql(handle, FilterExpression(dataset_id=dataset_id))
    assert "LIKE" not in sql and "av0" not in sql
    page = sandbox_execute(handle, sql, 0, 10000)
    assert page.total == execute(handle, compile_filter(handle, FilterExpression(dataset_id=dataset_id)), 0, 1).total


def test_copy_sql_escapes_quotes(tmp_path):
    spec = SynthSpec(
        name="QDS",
        n_subjects=6,
        files_per_subject=(1, 2),
        seed=3,
        variables=(VariableSpec(name="surname", value_kind="text", values=("o'connor", "smith")),),
    )
    manifest = generate(spec, tmp_path / "data")
    handle = create_schema(tmp_path / "atlas.db")
    ingest_dataset(tmp_path / "data", "QDS", "QDS", handle)
    dataset_id = resolve_dataset(handle, "QDS")
    named = [("surname", "EQ", "o'connor", "AND")]
    f = named_filter(handle, dataset_id, named)
    inlined = copy_sql(handle, f)
    got = sandbox_execute(handle, inlined, 0, 1000)
    assert sorted(r["lfn"] for r in got.records) == oracle_query(manifest, to_oracle(named))


def test_edited_where_clause_widens_result(fixture):
    handle, manifest, dataset_id = fixture
    base = [("maritalstatus", "EQ", "2", "AND")]
    widened = base + [("maritalstatus", "EQ", "3", "OR")]
    sql = copy_sql(handle, named_filter(handle, dataset_id, base))
    edited = sql.replace(
        "CAST(av0.value AS REAL) = 2.0", "(CAST(av0.value AS REAL) = 2.0 OR av0.value = '3')"
    )
    assert edited != sql
    got = sandbox_execute(handle, edited, 0, 10000)
    assert sorted(r["lfn"] for r in got.records) == oracle_query(manifest, to_oracle(widened))


# -- catalog browsing ---------------------------------------------------------

def test_list_datasets_nests_by_category(fixture):
    handle, _, dataset_id = fixture
    cats = list_datasets(handle)
    assert [c["name"] for c in cats] == ["NUSYN"]
    assert [d["name"] for d in cats[0]["datasets"]] == ["NUSYN"]
    assert cats[0]["datasets"][0]["id"] == dataset_id
    assert cats[0]["datasets"][0]["root_lfn"].endswith("/NUSYN")


def test_flat_dataset_has_single_implicit_subdataset(fixture):
    handle, _, dataset_id = fixture
    subs = list_subdatasets(handle, dataset_id)
    assert len(subs) == 1
    assert subs[0]["name"] == "NUSYN"
    names = [v["name"] for v in list_variables(handle, subs[0]["id"])]
    assert "maritalstatus" in names and "employmentstatus" in names


def test_oasis_style_subdatasets(tmp_path):
    spec = SynthSpec(
        name="OASYN", sub_levels=2, n_subjects=4, files_per_subject=(1, 2), seed=6,
        assessments=("OASYN-CrossSection", "OASYN-Longitudinal"),
    )
    generate(spec, tmp_path / "data")
    handle = create_schema(tmp_path / "atlas.db")
    ingest_dataset(tmp_path / "data", "OASYN", "OASYN", handle)
    subs = list_subdatasets(handle, resolve_dataset(handle, "OASYN"))
    assert [s["name"] for s in subs] == ["OASYN-CrossSection", "OASYN-Longitudinal"]


def test_list_subdatasets_unknown_dataset(fixture):
    handle, _, _ = fixture
    with pytest.raises(NotFound):
        list_subdatasets(handle, 424242)
    with pytest.raises(NotFound):
        list_variables(handle, 424242)


def test_variable_metadata_returns_dictionary_entry(fixture):
    handle, _, dataset_id = fixture
    meta = variable_metadata(handle, resolve_variable(handle, dataset_id, "maritalstatus"))
    assert meta.codes == MARITALSTATUS_CODES
    assert meta.codes["2"] == "Married/common law"
    assert meta.description == "Marital Status"
    meta = variable_metadata(handle, resolve_variable(handle, dataset_id, "employmentstatus"))
    assert meta.codes == EMPLOYMENTSTATUS_CODES
    assert meta.codes["5"] == "Student full-time"


def test_variable_metadata_empty_codes(fixture):
    handle, _, dataset_id = fixture
    meta = variable_metadata(handle, resolve_variable(handle, dataset_id, "age"))
    assert meta.codes == {}
    with pytest.raises(NotFound):
        variable_metadata(handle, 999999)


# -- predefined queries -------------------------------------------------------

def test_predefined_all_datasets_carries_metadata_fields(fixture):
    handle, _, _ = fixture
    page = run_predefined(handle, "all_datasets")
    assert page.total == 1
    assert list(page.records[0]) == ["name", "id", "lfn", "owner", "created_on"]


def test_predefined_all_imagefiles(fixture):
    handle, manifest, _ = fixture
    page = run_predefined(handle, "all_imagefiles", page_size=100000)
    assert page.total == len(manifest.all_lfns())


def test_predefined_search_matches_substring_scan(fixture):
    handle, manifest, _ = fixture
    needle = "MPR1"
    page = run_predefined(handle, "search_imagefiles", {"needle": needle}, page_size=100000)
    expected = sorted(
        f["lfn"]
        for s in manifest.subjects
        for f in s["files"]
        if needle.lower() in f["name"].lower() or needle.lower() in f["lfn"].lower()
    )
    assert sorted(r["lfn"] for r in page.records) == expected


def test_predefined_search_in_dataset_restricts(tmp_path):
    handle = create_schema(tmp_path / "atlas.db")
    for name, seed in (("DS1", 1), ("DS2", 2)):
        generate(SynthSpec(name=name, n_subjects=3, files_per_subject=(2, 3), seed=seed),
                 tmp_path / name)
        ingest_dataset(tmp_path / name, name, "CAT", handle)
    ds1 = resolve_dataset(handle, "DS1")
    everywhere = run_predefined(handle, "search_imagefiles", {"needle": "nG+"}, page_size=10000)
    scoped = run_predefined(
        handle, "search_imagefiles_in_dataset", {"needle": "nG+", "dataset_id": ds1},
        page_size=10000,
    )
    assert scoped.total < everywhere.total
    assert all(r["dataset_id"] == ds1 for r in scoped.records)


def test_predefined_unknown_query_id(fixture):
    handle, _, _ = fixture
    with pytest.raises(UnknownQueryId):
        run_predefined(handle, "bogus")


def test_predefined_search_requires_needle(fixture):
    handle, _, _ = fixture
    with pytest.raises(MissingParam):
        run_predefined(handle, "search_imagefiles", {})
    with pytest.raises(MissingParam):
        run_predefined(handle, "search_imagefiles_in_dataset", {"needle": "x"})
