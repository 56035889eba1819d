"""Synthetic dataset trees with a ground-truth manifest.

generate() writes an on-disk dataset (CLINICAL_VARIABLES + IMAGES) shaped like
the real dataset families (depth 1, 2, or 3 under IMAGES) together with a
manifest recording every file, token, and clinical cell it created. The
manifest is the oracle for ingest and query tests.

oracle_query() answers filters by a brute-force scan of the manifest. It
deliberately shares no code with the SQL compiler so that equivalence tests
between the two are meaningful.
"""

from __future__ import annotations

import csv
import io
import json
import random
from dataclasses import dataclass, field
from datetime import date, timedelta
from pathlib import Path

from .errors import OutdirNotEmpty, UnknownVariable
from .model import DEFAULT_LFN_PREFIX, build_lfn
from .naming import SUMMARY_EXTENSIONS, ScanNameTokens, convention_by_name, render_scan_filename

TIMEPOINTS = ("M0", "M24", "M48")
STATES = ("ORIG", "PROC")
VERSIONS = ("V01", "V02")
EXTENSIONS = (".nii.bz2", ".tar.bz2", ".rec", ".ifh")
EXTENSION_WEIGHTS = (45, 35, 10, 10)


@dataclass(frozen=True)
class VariableSpec:
    name: str
    value_kind: str  # numeric | text | date
    description: str = ""
    comments: str = ""
    codes: dict[str, str] | None = None
    values: tuple[str, ...] | None = None
    numeric_range: tuple[float, float] | None = None
    date_range: tuple[str, str] | None = None

    def codes_cell(self) -> str:
        if not self.codes:
            return ""
        return " ".join(f"{code} ='{label}'" for code, label in self.codes.items())


DEFAULT_VARIABLES = (
    VariableSpec(
        name="maritalstatus",
        value_kind="numeric",
        description="Marital Status",
        codes={
            "0": "Other",
            "1": "Single",
            "2": "Married/common law",
            "3": "Divorced",
            "4": "Separated",
            "5": "Widowed",
            "9": "Unknown",
        },
    ),
    VariableSpec(
        name="employmentstatus",
        value_kind="numeric",
        description="Employment Status",
        codes={
            "0": "Other",
            "1": "Employed full-time",
            "2": "Employed part-time",
            "3": "Unemployed",
            "4": "Homemaker full-time",
            "5": "Student full-time",
            "6": "Student part-time",
        },
    ),
    VariableSpec(name="gender", value_kind="text", description="Gender", values=("male", "female")),
    VariableSpec(
        name="race",
        value_kind="numeric",
        description="Race",
        codes={"1": "White", "2": "Black or African American", "3": "Asian", "9": "Unknown"},
    ),
    VariableSpec(name="age", value_kind="numeric", description="Age at scan", numeric_range=(18.0, 65.0)),
    VariableSpec(
        name="visitdate",
        value_kind="date",
        description="Date of the study visit",
        date_range=("2008-01-01", "2012-12-31"),
    ),
)


@dataclass
class SynthSpec:
    name: str
    convention: str = "NUSDAST"
    sub_levels: int = 1
    intermediate_fanout: tuple[int, int] = (2, 3)
    n_subjects: int = 20
    files_per_subject: tuple[int, int] = (3, 33)
    variables: tuple[VariableSpec, ...] = DEFAULT_VARIABLES
    assessments: tuple[str, ...] | None = None
    missing_cell_rate: float = 0.0
    seed: int = 7

    def __post_init__(self):
        if self.sub_levels not in (1, 2, 3):
            raise ValueError("sub_levels must be 1, 2, or 3")
        lo, hi = self.files_per_subject
        if lo < 0 or hi < lo:
            raise ValueError("files_per_subject must be a non-empty inclusive range")
        if not (0 <= self.missing_cell_rate < 1):
            raise ValueError("missing_cell_rate must be in [0, 1)")
        if "+" in self.name:
            raise ValueError("dataset name may not contain the token separator '+'")

    def assessment_names(self) -> list[str]:
        if self.sub_levels == 1:
            return [self.name]
        if self.sub_levels == 2:
            names = self.assessments or (f"{self.name}-CrossSection", f"{self.name}-Longitudinal")
            return list(names)
        leafs = self.assessments or ("ASI",)
        phases = self.intermediate_fanout[0]
        return [f"phase{p}/{leaf}" for p in range(1, phases + 1) for leaf in leafs]

    @classmethod
    def from_json(cls, path) -> "SynthSpec":
        with open(path, "rb") as fh:
            raw = json.load(fh)
        variables = tuple(
            VariableSpec(
                name=v["name"],
                value_kind=v["value_kind"],
                description=v.get("description", ""),
                comments=v.get("comments", ""),
                codes=v.get("codes"),
                values=tuple(v["values"]) if v.get("values") else None,
                numeric_range=tuple(v["numeric_range"]) if v.get("numeric_range") else None,
                date_range=tuple(v["date_range"]) if v.get("date_range") else None,
            )
            for v in raw.get("variables", [])
        ) or DEFAULT_VARIABLES
        return cls(
            name=raw["name"],
            convention=raw.get("convention", "NUSDAST"),
            sub_levels=raw.get("sub_levels", 1),
            intermediate_fanout=tuple(raw.get("intermediate_fanout", (2, 3))),
            n_subjects=raw.get("n_subjects", 20),
            files_per_subject=tuple(raw.get("files_per_subject", (3, 33))),
            variables=variables,
            assessments=tuple(raw["assessments"]) if raw.get("assessments") else None,
            missing_cell_rate=raw.get("missing_cell_rate", 0.0),
            seed=raw.get("seed", 7),
        )


class Manifest:
    """Ground truth for one generated tree."""

    def __init__(self, doc: dict):
        self.doc = doc

    @property
    def dataset(self) -> str:
        return self.doc["dataset"]

    @property
    def subjects(self) -> list[dict]:
        return self.doc["subjects"]

    @property
    def assessments(self) -> list[dict]:
        return self.doc["assessments"]

    @property
    def counts(self) -> dict:
        return self.doc["counts"]

    def all_lfns(self) -> list[str]:
        return sorted(f["lfn"] for s in self.subjects for f in s["files"])

    def lfns_of(self, subject_code: str) -> list[str]:
        for s in self.subjects:
            if s["subject_code"] == subject_code:
                return [f["lfn"] for f in s["files"]]
        return []

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.doc, indent=1, sort_keys=True, ensure_ascii=False))

    @classmethod
    def load(cls, path) -> "Manifest":
        with open(path, "rb") as fh:
            return cls(json.load(fh))


def _subject_codes(spec: SynthSpec, rng: random.Random) -> list[str]:
    if spec.convention == "FBIRN":
        pool = rng.sample(range(10**8), spec.n_subjects)
        return [f"0009{n:08d}" for n in sorted(pool)]
    pool = rng.sample(range(10**4), spec.n_subjects) if spec.n_subjects <= 10**4 else rng.sample(
        range(10**8), spec.n_subjects
    )
    width = 4 if spec.n_subjects <= 10**4 else 8
    return [f"CC{n:0{width}d}" for n in sorted(pool)]


def _directory_name(spec: SynthSpec, code: str) -> str:
    # FBIRN-style subject directories carry only the project prefix
    if spec.convention == "FBIRN":
        return f"nG+{code}"
    return f"nG+{spec.name}+{code}"


def _intermediate(spec: SynthSpec, rng: random.Random) -> str:
    if spec.sub_levels == 1:
        return ""
    if spec.sub_levels == 2:
        return f"disc{1 + rng.randrange(spec.intermediate_fanout[0])}"
    phase = 1 + rng.randrange(spec.intermediate_fanout[0])
    centre = 1 + rng.randrange(spec.intermediate_fanout[1])
    return f"phase{phase}/CENTRE{centre:04d}"


def _file_tokens(spec: SynthSpec, convention, code: str, rng: random.Random) -> list[ScanNameTokens]:
    lo, hi = spec.files_per_subject
    count = rng.randint(lo, hi)
    if convention.timepoint_present:
        stems = [(tp, m, st, v) for tp in TIMEPOINTS for m in sorted(convention.known_modalities or {"MPR1"})
                 for st in STATES for v in VERSIONS]
    else:
        stems = [(None, m, st, v) for m in sorted(convention.known_modalities or {"MPR1"})
                 for st in STATES for v in VERSIONS]
    count = min(count, len(stems))
    chosen = rng.sample(stems, count)
    tokens = []
    for tp, modality, state, version in chosen:
        ext = rng.choices(EXTENSIONS, weights=EXTENSION_WEIGHTS)[0]
        tokens.append(
            ScanNameTokens(
                project="nG",
                dataset=spec.name if spec.convention != "FBIRN" else f"{spec.name}1",
                subject_code=code,
                timepoint=tp,
                field_strength="1T5",
                modality=modality,
                state=state,
                version=version,
                extension=ext,
            )
        )
    return tokens


def _draw_value(var: VariableSpec, rng: random.Random) -> str:
    if var.codes:
        return rng.choice(sorted(var.codes))
    if var.values:
        return rng.choice(list(var.values))
    if var.numeric_range:
        lo, hi = var.numeric_range
        return f"{rng.uniform(lo, hi):.1f}"
    if var.date_range:
        start = date.fromisoformat(var.date_range[0])
        end = date.fromisoformat(var.date_range[1])
        return (start + timedelta(days=rng.randrange((end - start).days + 1))).isoformat()
    return f"{rng.randrange(100)}"


def _write_csv(path: Path, header: list[str], rows: list[list[str]]) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(header)
    writer.writerows(rows)
    path.write_text(buf.getvalue())


def generate(spec: SynthSpec, outdir, lfn_prefix: str = DEFAULT_LFN_PREFIX) -> Manifest:
    """Write the dataset tree under outdir and return (and save) its manifest.

    Deterministic for a given spec: same seed, same bytes.
    """
    outdir = Path(outdir)
    if outdir.exists() and any(outdir.iterdir()):
        raise OutdirNotEmpty(str(outdir))
    outdir.mkdir(parents=True, exist_ok=True)
    convention = convention_by_name(spec.convention)
    rng = random.Random(spec.seed)

    codes = _subject_codes(spec, rng)
    images_dir = outdir / "IMAGES"
    images_dir.mkdir()
    subjects_doc = []
    n_files = n_summary = 0
    for code in codes:
        dir_name = _directory_name(spec, code)
        intermediate = _intermediate(spec, rng)
        subject_dir = images_dir.joinpath(*(intermediate.split("/") if intermediate else []), dir_name)
        subject_dir.mkdir(parents=True, exist_ok=True)
        files_doc = []
        for tokens in _file_tokens(spec, convention, code, rng):
            file_name = render_scan_filename(tokens, convention)
            lfn = build_lfn(lfn_prefix, spec.name, intermediate, dir_name, file_name)
            (subject_dir / file_name).write_bytes(f"synthetic scan {lfn}\n".encode())
            classification = "summary" if tokens.extension in SUMMARY_EXTENSIONS else "scan"
            n_files += 1
            n_summary += classification == "summary"
            files_doc.append(
                {
                    "name": file_name,
                    "lfn": lfn,
                    "classification": classification,
                    "tokens": tokens.to_dict(),
                }
            )
        files_doc.sort(key=lambda f: f["name"])
        subjects_doc.append(
            {
                "subject_code": code,
                "directory": dir_name,
                "intermediate": intermediate,
                "files": files_doc,
            }
        )

    clinical_root = outdir / "CLINICAL_VARIABLES"
    clinical_root.mkdir()
    assessments_doc = []
    nonempty = 0
    for assessment in spec.assessment_names():
        target = clinical_root if spec.sub_levels == 1 else clinical_root / assessment
        target.mkdir(parents=True, exist_ok=True)
        _write_csv(
            target / "dictionary.csv",
            ["variable", "description", "type", "codes", "comments"],
            [[v.name, v.description, v.value_kind, v.codes_cell(), v.comments] for v in spec.variables],
        )
        values: dict[str, dict[str, str | None]] = {}
        rows = []
        for code in codes:
            row = [code]
            cells: dict[str, str | None] = {}
            for var in spec.variables:
                if spec.missing_cell_rate and rng.random() < spec.missing_cell_rate:
                    cells[var.name] = None
                    row.append("")
                else:
                    value = _draw_value(var, rng)
                    cells[var.name] = value
                    row.append(value)
                    nonempty += 1
            values[code] = cells
            rows.append(row)
        _write_csv(target / "clinical.csv", ["subject"] + [v.name for v in spec.variables], rows)
        assessments_doc.append(
            {
                "name": assessment,
                "variables": [
                    {
                        "name": v.name,
                        "value_kind": v.value_kind,
                        "description": v.description,
                        "comments": v.comments,
                        "codes": v.codes or {},
                    }
                    for v in spec.variables
                ],
                "values": values,
            }
        )

    manifest = Manifest(
        {
            "dataset": spec.name,
            "convention": spec.convention,
            "sub_levels": spec.sub_levels,
            "lfn_prefix": lfn_prefix,
            "seed": spec.seed,
            "subjects": subjects_doc,
            "assessments": assessments_doc,
            "counts": {
                "subjects": len(codes),
                "files": n_files,
                "summary_files": n_summary,
                "nonempty_cells": nonempty,
            },
        }
    )
    manifest.save(outdir / "manifest.json")
    return manifest


# -- brute-force oracle -------------------------------------------------------

OPERATORS = ("EQ", "NEQ", "LT", "GT", "LIKE", "EXACT", "NOT_IN")


@dataclass(frozen=True)
class OraclePredicate:
    """A predicate named by variable (and optionally assessment), evaluated
    against the manifest without any SQL."""

    variable: str
    op: str
    operand: str | tuple[str, ...]
    combinator: str = "AND"
    assessment: str | None = None


_ASCII_LOWER = str.maketrans(
    "ABCDEFGHIJKLMNOPQRSTUVWXYZ", "abcdefghijklmnopqrstuvwxyz"
)


def ascii_casefold(text: str) -> str:
    """ASCII-only lowercasing, matching the store's LIKE semantics."""
    return text.translate(_ASCII_LOWER)


def _match(op: str, kind: str, value: str | None, operand) -> bool:
    if value is None:
        return False
    if op == "EQ":
        if kind == "numeric":
            return float(value) == float(operand)
        return value == operand
    if op == "NEQ":
        if kind == "numeric":
            return float(value) != float(operand)
        return value != operand
    if op in ("LT", "GT"):
        if kind == "numeric":
            left, right = float(value), float(operand)
        else:
            left, right = value, str(operand)
        return left < right if op == "LT" else left > right
    if op == "LIKE":
        return ascii_casefold(str(operand)) in ascii_casefold(value)
    if op == "EXACT":
        return value == operand
    if op == "NOT_IN":
        return value not in tuple(operand)
    raise ValueError(f"unknown operator {op}")


def _resolve(manifest: Manifest, predicate: OraclePredicate) -> tuple[dict, dict]:
    for assessment in manifest.assessments:
        if predicate.assessment and assessment["name"] != predicate.assessment:
            continue
        for var in assessment["variables"]:
            if var["name"] == predicate.variable:
                return assessment, var
    raise UnknownVariable(predicate.variable)


def oracle_query(manifest: Manifest, predicates: list[OraclePredicate]) -> list[str]:
    """Expected lfn set for a filter: a linear scan over the manifest."""
    resolved = [(p, *_resolve(manifest, p)) for p in predicates]
    matched_lfns: list[str] = []
    for subject in manifest.subjects:
        code = subject["subject_code"]
        verdict = None
        for predicate, assessment, var in resolved:
            value = assessment["values"].get(code, {}).get(predicate.variable)
            ok = _match(predicate.op, var["value_kind"], value, predicate.operand)
            if verdict is None:
                verdict = ok
            elif predicate.combinator == "OR":
                verdict = verdict or ok
            else:
                verdict = verdict and ok
        if verdict is None or verdict:
            matched_lfns.extend(f["lfn"] for f in subject["files"])
    return sorted(matched_lfns)
