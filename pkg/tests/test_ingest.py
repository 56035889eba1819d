import pytest

from neuroatlas.errors import (
    ConflictingSubject,
    DuplicateDataset,
    DuplicateVariable,
    MalformedCsv,
    MissingSubjectColumn,
    RaggedRow,
)
from neuroatlas.ingest import (
    ClinicalRow,
    IngestConfig,
    ingest_dataset,
    link_images,
    parse_clinical_csv,
    parse_dictionary,
    parse_score_codes,
)
from neuroatlas.model import SchemaHandle, create_schema, validate_integrity
from neuroatlas.naming import NUSDAST_CONVENTION
from neuroatlas.synth import SynthSpec, generate

from corpus import (
    EMPLOYMENTSTATUS_CODES,
    EMPLOYMENTSTATUS_CODES_RAW,
    MARITALSTATUS_CODES,
    MARITALSTATUS_CODES_RAW,
)


# -- dictionary parsing -------------------------------------------------------

def dictionary_csv(rows):
    head = "variable,description,type,codes,comments\n"
    return (head + "\n".join(rows)).encode()


def test_parse_dictionary_maritalstatus_codes():
    csv_bytes = dictionary_csv([f'maritalstatus,Marital Status,numeric,"{MARITALSTATUS_CODES_RAW}",'])
    [(var, codes)] = parse_dictionary(csv_bytes)
    assert var.name == "maritalstatus"
    assert var.value_kind == "numeric"
    assert len(codes) == 7
    assert {c.code: c.label for c in codes} == MARITALSTATUS_CODES
    assert {c.code: c.label for c in codes}["2"] == "Married/common law"


def test_parse_dictionary_employmentstatus_codes():
    csv_bytes = dictionary_csv([f'employmentstatus,Employment Status,,"{EMPLOYMENTSTATUS_CODES_RAW}",'])
    [(var, codes)] = parse_dictionary(csv_bytes)
    assert len(codes) == 7
    assert {c.code: c.label for c in codes}["5"] == "Student full-time"
    # codes present and no explicit type -> numeric
    assert var.value_kind == "numeric"


def test_parse_dictionary_header_only():
    assert parse_dictionary(b"variable,description,type,codes,comments\n") == []


def test_parse_dictionary_duplicate_variable():
    with pytest.raises(DuplicateVariable):
        parse_dictionary(dictionary_csv(["age,Age,numeric,,", "age,Age again,numeric,,"]))


def test_parse_dictionary_requires_variable_column():
    with pytest.raises(MalformedCsv):
        parse_dictionary(b"name,description\nx,y\n")


def test_score_code_micro_syntax_tolerates_spacing():
    codes = parse_score_codes("0 ='Other' 1 ='Single' 5='Widowed' 9 = 'Unknown'")
    assert {c.code: c.label for c in codes} == {
        "0": "Other",
        "1": "Single",
        "5": "Widowed",
        "9": "Unknown",
    }


def test_score_codes_preserve_label_text():
    [code] = parse_score_codes("2 ='Married/common law'")
    assert code.label == "Married/common law"


# -- clinical CSV parsing -----------------------------------------------------

def test_parse_clinical_csv_cell_count_oracle():
    # 20 subjects x 5 variables with exactly 3 empty cells -> 97 values
    header = "subject,v1,v2,v3,v4,v5"
    lines = [header]
    emptied = {(3, 2), (7, 4), (15, 1)}  # (row index, variable index)
    expected = 0
    for i in range(20):
        cells = []
        for j in range(5):
            if (i, j) in emptied:
                cells.append("")
            else:
                cells.append(f"val{i}{j}")
                expected += 1
    # build rows again for the actual csv (loop above counted)
        lines.append(f"S{i:03d}," + ",".join(cells))
    rows, warnings, skipped = parse_clinical_csv("\n".join(lines).encode())
    assert len(rows) == 20
    assert sum(len(r.values) for r in rows) == expected == 97
    assert warnings == [] and skipped == 0


def test_parse_clinical_csv_strips_whitespace_and_skips_empty_cells():
    rows, _, _ = parse_clinical_csv(b"subject,a,b\n S1 , 42 ,\n")
    assert rows[0].subject_code == "S1"
    assert rows[0].values == [("a", "42")]


def test_parse_clinical_csv_missing_subject_cell_skips_row():
    rows, warnings, skipped = parse_clinical_csv(b"subject,a\n,1\nS2,2\n")
    assert [r.subject_code for r in rows] == ["S2"]
    assert skipped == 1
    assert any("skipped" in w for w in warnings)


def test_parse_clinical_csv_empty_data_section():
    rows, warnings, skipped = parse_clinical_csv(b"subject,a,b\n")
    assert rows == [] and warnings == [] and skipped == 0


def test_parse_clinical_csv_ragged_row_strict():
    with pytest.raises(RaggedRow):
        parse_clinical_csv(b"subject,a,b\nS1,1\n")


def test_parse_clinical_csv_ragged_row_tolerated_with_flag():
    rows, warnings, _ = parse_clinical_csv(b"subject,a,b\nS1,1\n", allow_ragged=True)
    assert rows[0].values == [("a", "1")]
    assert any("ragged" in w for w in warnings)


def test_parse_clinical_csv_requires_subject_column():
    with pytest.raises(MissingSubjectColumn):
        parse_clinical_csv(b"patient,a\nx,1\n")


def test_parse_clinical_csv_rejects_non_utf8():
    with pytest.raises(MalformedCsv):
        parse_clinical_csv(b"subject,a\n\xff\xfe,1\n")


# -- image linkage ------------------------------------------------------------

def nusdast_files(code, n):
    mods = ["MPR1", "MPR2", "MPR3", "MPR4", "FLSH", "3DSF"]
    return [f"nG+DS+{code}+M0+1T5+{mods[i]}+ORIG+V01.nii.bz2" for i in range(n)]


def test_link_images_links_by_directory_suffix():
    dirs = [("nG+DS+CC0001", "", nusdast_files("CC0001", 4))]
    rows = [ClinicalRow("CC0001", [("a", "1")])]
    result = link_images(dirs, rows, NUSDAST_CONVENTION)
    assert len(result.links["CC0001"]) == 4
    assert result.orphan_images == 0
    assert result.directory_ids["CC0001"] == "nG+DS+CC0001"


def test_link_images_conflicting_subject():
    dirs = [("nG+DS+CC0001", "", ["nG+DS+CC0002+M0+1T5+MPR1+ORIG+V01.nii.bz2"])]
    with pytest.raises(ConflictingSubject):
        link_images(dirs, [ClinicalRow("CC0001", [])], NUSDAST_CONVENTION)


def test_link_images_orphan_directory():
    dirs = [("nG+DS+CC0009", "", nusdast_files("CC0009", 3))]
    result = link_images(dirs, [ClinicalRow("CC0001", [])], NUSDAST_CONVENTION)
    assert result.orphan_images == 3
    assert result.links == {}
    assert len(result.images) == 3  # orphans are still indexed


def test_link_images_unparseable_names_are_recorded():
    dirs = [("nG+DS+CC0001", "", ["README", "notes.txt"])]
    result = link_images(dirs, [ClinicalRow("CC0001", [])], NUSDAST_CONVENTION)
    assert result.images == []
    assert sorted(result.unparsed) == ["nG+DS+CC0001/README", "nG+DS+CC0001/notes.txt"]


# -- full ingest --------------------------------------------------------------

@pytest.fixture
def store(tmp_path):
    return create_schema(tmp_path / "atlas.db")


def test_ingest_counts_match_manifest(tmp_path, store):
    spec = SynthSpec(name="SYNDS", n_subjects=20, files_per_subject=(3, 33), seed=7,
                     missing_cell_rate=0.1)
    manifest = generate(spec, tmp_path / "data")
    report = ingest_dataset(tmp_path / "data", "SYNDS", "SYNCAT", store)
    assert report.subjects_indexed == manifest.counts["subjects"]
    assert report.images_indexed == manifest.counts["files"]
    assert report.values_indexed == manifest.counts["nonempty_cells"]
    assert report.orphan_images == 0
    assert report.unparsed_files == 0
    assert validate_integrity(store).is_clean


def test_ingest_lfns_match_manifest_and_disk(tmp_path, store):
    spec = SynthSpec(name="SYNDS", n_subjects=5, files_per_subject=(2, 4), seed=3)
    manifest = generate(spec, tmp_path / "data")
    ingest_dataset(tmp_path / "data", "SYNDS", "SYNCAT", store)
    conn = store.connect()
    lfns = sorted(r[0] for r in conn.execute("SELECT lfn FROM image_file").fetchall())
    conn.close()
    assert lfns == manifest.all_lfns()
    prefix = manifest.doc["lfn_prefix"] + "/SYNDS"
    for lfn in lfns:
        local = tmp_path / "data" / lfn[len(prefix) + 1 :]
        assert local.is_file()


def test_ingest_depth3_dataset(tmp_path, store):
    spec = SynthSpec(name="FB", convention="FBIRN", sub_levels=3, n_subjects=4,
                     files_per_subject=(2, 3), seed=5)
    manifest = generate(spec, tmp_path / "data")
    report = ingest_dataset(tmp_path / "data", "FB", "FBCAT", store)
    assert report.images_indexed == manifest.counts["files"]
    assert report.values_indexed == manifest.counts["nonempty_cells"]
    conn = store.connect()
    names = [r[0] for r in conn.execute("SELECT name FROM assessment_type ORDER BY name")]
    conn.close()
    assert names == sorted(spec.assessment_names())


def test_ingest_empty_dataset(tmp_path, store):
    (tmp_path / "data" / "CLINICAL_VARIABLES").mkdir(parents=True)
    (tmp_path / "data" / "IMAGES").mkdir()
    report = ingest_dataset(tmp_path / "data", "EMPTY", "CAT", store)
    assert report.subjects_indexed == 0
    assert report.images_indexed == 0
    assert report.values_indexed == 0


def test_ingest_duplicate_dataset_rejected(tmp_path, store):
    generate(SynthSpec(name="D", n_subjects=2, files_per_subject=(1, 2), seed=1), tmp_path / "d")
    ingest_dataset(tmp_path / "d", "D", "C", store)
    with pytest.raises(DuplicateDataset):
        ingest_dataset(tmp_path / "d", "D", "C", store)


def normalized_rows(handle):
    conn = handle.connect()
    try:
        images = conn.execute(
            "SELECT i.lfn, i.file_name, i.file_type, s.subject_code FROM image_file i"
            " LEFT JOIN subject s ON s.id = i.subject_id ORDER BY i.lfn"
        ).fetchall()
        values = conn.execute(
            "SELECT s.subject_code, v.name, av.value, av.occurrence FROM assessment_value av"
            " JOIN subject s ON s.id = av.subject_id"
            " JOIN clinical_variable v ON v.id = av.variable_id"
            " ORDER BY s.subject_code, v.name, av.occurrence"
        ).fetchall()
        codes = conn.execute(
            "SELECT v.name, c.code, c.label FROM score_code c"
            " JOIN clinical_variable v ON v.id = c.variable_id ORDER BY v.name, c.code"
        ).fetchall()
        return images, values, codes
    finally:
        conn.close()


def test_ingest_replace_is_idempotent(tmp_path, store):
    generate(SynthSpec(name="D", n_subjects=6, files_per_subject=(2, 5), seed=9), tmp_path / "d")
    ingest_dataset(tmp_path / "d", "D", "C", store)
    before = normalized_rows(store)
    report = ingest_dataset(tmp_path / "d", "D", "C", store, replace=True)
    assert normalized_rows(store) == before
    conn = store.connect()
    assert conn.execute("SELECT COUNT(*) FROM data_set").fetchone()[0] == 1
    conn.close()
    assert report.images_indexed > 0


def test_ingest_rolls_back_on_conflict(tmp_path, store):
    spec = SynthSpec(name="D", n_subjects=3, files_per_subject=(1, 2), seed=2)
    generate(spec, tmp_path / "d")
    # plant a file whose token subject disagrees with its directory
    subject_dir = next((tmp_path / "d" / "IMAGES").iterdir())
    bad = subject_dir / "nG+D+ZZ9999+M0+1T5+MPR1+ORIG+V01.nii.bz2"
    bad.write_bytes(b"x")
    with pytest.raises(ConflictingSubject):
        ingest_dataset(tmp_path / "d", "D", "C", store)
    conn = store.connect()
    assert conn.execute("SELECT COUNT(*) FROM data_set").fetchone()[0] == 0
    assert conn.execute("SELECT COUNT(*) FROM image_file").fetchone()[0] == 0
    conn.close()


def test_ingest_conservation_with_stray_files(tmp_path, store):
    spec = SynthSpec(name="D", n_subjects=6, files_per_subject=(3, 4), seed=13)
    manifest = generate(spec, tmp_path / "d")
    subject_dir = next((tmp_path / "d" / "IMAGES").iterdir())
    (subject_dir / "README").write_text("stray")
    report = ingest_dataset(tmp_path / "d", "D", "C", store)
    assert report.images_indexed == manifest.counts["files"]
    assert report.unparsed_files == 1
    assert report.images_indexed + report.unparsed_files == manifest.counts["files"] + 1


def test_ingest_summary_files_are_indexed(tmp_path, store):
    spec = SynthSpec(name="D", n_subjects=10, files_per_subject=(5, 20), seed=21)
    manifest = generate(spec, tmp_path / "d")
    assert manifest.counts["summary_files"] > 0, "fixture should include .rec/.ifh files"
    ingest_dataset(tmp_path / "d", "D", "C", store)
    conn = store.connect()
    summary = conn.execute(
        "SELECT COUNT(*) FROM image_file WHERE file_type IN ('.rec', '.ifh')"
    ).fetchone()[0]
    conn.close()
    assert summary == manifest.counts["summary_files"]


def test_ingest_orphan_images_indexed_without_subject(tmp_path, store):
    spec = SynthSpec(name="D", n_subjects=2, files_per_subject=(2, 2), seed=4)
    generate(spec, tmp_path / "d")
    extra = tmp_path / "d" / "IMAGES" / "nG+D+XX0001"
    extra.mkdir()
    (extra / "nG+D+XX0001+M0+1T5+MPR1+ORIG+V01.nii.bz2").write_bytes(b"x")
    report = ingest_dataset(tmp_path / "d", "D", "C", store)
    assert report.orphan_images == 1
    conn = store.connect()
    orphans = conn.execute("SELECT COUNT(*) FROM image_file WHERE subject_id IS NULL").fetchone()[0]
    conn.close()
    assert orphans == 1
    report2 = validate_integrity(store)
    assert report2.orphan_images and not report2.dangling_refs


def test_ingest_auto_creates_undictionaried_variables(tmp_path, store):
    root = tmp_path / "d"
    (root / "CLINICAL_VARIABLES").mkdir(parents=True)
    (root / "IMAGES" / "nG+D+S1").mkdir(parents=True)
    (root / "IMAGES" / "nG+D+S1" / "nG+D+S1+M0+1T5+MPR1+ORIG+V01.nii.bz2").write_bytes(b"x")
    (root / "CLINICAL_VARIABLES" / "dictionary.csv").write_text(
        "variable,description,type,codes,comments\nage,Age,numeric,,\n"
    )
    (root / "CLINICAL_VARIABLES" / "clinical.csv").write_text("subject,age,shoesize\nS1,40,9\n")
    report = ingest_dataset(root, "D", "C", store)
    assert report.values_indexed == 2
    assert any("shoesize" in w for w in report.warnings)
    conn = store.connect()
    kind = conn.execute(
        "SELECT value_kind, description FROM clinical_variable WHERE name = 'shoesize'"
    ).fetchone()
    conn.close()
    assert kind == ("text", "")


def test_ingest_merges_multiple_csvs_by_subject(tmp_path, store):
    root = tmp_path / "d"
    (root / "CLINICAL_VARIABLES").mkdir(parents=True)
    (root / "IMAGES").mkdir(parents=True)
    (root / "CLINICAL_VARIABLES" / "dictionary.csv").write_text(
        "variable,description,type,codes,comments\na,A,numeric,,\nb,B,numeric,,\n"
    )
    (root / "CLINICAL_VARIABLES" / "clinical_part1.csv").write_text("subject,a\nS1,1\nS2,2\n")
    (root / "CLINICAL_VARIABLES" / "clinical_part2.csv").write_text("subject,b\nS1,3\nS3,4\n")
    report = ingest_dataset(root, "D", "C", store)
    assert report.subjects_indexed == 3
    assert report.values_indexed == 4


def test_ingest_nusdast_scale(tmp_path, store):
    spec = SynthSpec(name="BIGN", n_subjects=368, files_per_subject=(3, 33), seed=17)
    manifest = generate(spec, tmp_path / "data")
    report = ingest_dataset(tmp_path / "data", "BIGN", "BIGCAT", store)
    assert report.subjects_indexed == 368
    assert report.images_indexed == manifest.counts["files"]
    per_subject = [len(s["files"]) for s in manifest.subjects]
    assert min(per_subject) >= 3 and max(per_subject) <= 33
