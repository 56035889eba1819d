"""Scan-filename convention parsing.

Scan files are named as separator-joined token sequences, e.g.

    nG+NUSDAST+CC0196+M0+1T5+MPR1+ORIG+V01.nii.bz2
    nG+FBIRN1+000900000106+1T5+BH1+ORIG+V02.tar.bz2

The first convention carries a timepoint token (M0/M24/...), the second does
not. Parsing is strict on token count, strict on the state and version tokens,
and lenient on everything else (modality vocabularies grow over time).
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field

from .errors import (
    AmbiguousConvention,
    MalformedVersion,
    NamingError,
    NoMatchingConvention,
    TokenCountMismatch,
    UnknownStateToken,
)

STATES = ("ORIG", "PROC")

_VERSION_RE = re.compile(r"^V\d+$")

# Extensions that mark a file as a scan image (vs. a summary sidecar).
IMAGE_EXTENSIONS = frozenset(
    {".nii", ".nii.gz", ".nii.bz2", ".tar.gz", ".tar.bz2", ".dcm", ".img", ".hdr", ".mnc"}
)

# Extensions of per-subject summary sidecar files.
SUMMARY_EXTENSIONS = frozenset({".rec", ".ifh"})

MANDATORY_FIELDS = (
    "project",
    "dataset",
    "subject_code",
    "field_strength",
    "modality",
    "state",
    "version",
)


@dataclass(frozen=True)
class ScanNameTokens:
    """Structured form of one scan filename."""

    project: str
    dataset: str
    subject_code: str
    timepoint: str | None
    field_strength: str
    modality: str
    state: str
    version: str
    extension: str

    def to_dict(self) -> dict:
        return {
            "project": self.project,
            "dataset": self.dataset,
            "subject_code": self.subject_code,
            "timepoint": self.timepoint,
            "field_strength": self.field_strength,
            "modality": self.modality,
            "state": self.state,
            "version": self.version,
            "extension": self.extension,
        }


def _default_order(timepoint_present: bool) -> tuple[str, ...]:
    if timepoint_present:
        return (
            "project",
            "dataset",
            "subject_code",
            "timepoint",
            "field_strength",
            "modality",
            "state",
            "version",
        )
    return MANDATORY_FIELDS


@dataclass(frozen=True)
class ConventionSpec:
    """One dataset family's filename grammar."""

    name: str
    timepoint_present: bool = True
    separator: str = "+"
    token_order: tuple[str, ...] = field(default=())
    known_modalities: frozenset[str] | None = None

    def __post_init__(self):
        if not self.token_order:
            object.__setattr__(self, "token_order", _default_order(self.timepoint_present))
        missing = set(MANDATORY_FIELDS) - set(self.token_order)
        if missing:
            raise ValueError(f"token_order misses mandatory fields: {sorted(missing)}")


NUSDAST_CONVENTION = ConventionSpec(
    name="NUSDAST",
    timepoint_present=True,
    known_modalities=frozenset({"3DSF", "FLSH", "MPR1", "MPR2", "MPR3", "MPR4", "MPRA"}),
)

FBIRN_CONVENTION = ConventionSpec(
    name="FBIRN",
    timepoint_present=False,
    known_modalities=frozenset(
        {"BH1", "BH2", "MMN1", "MMN2", "MPR", "R1", "R2", "SIRP", "SM1", "SM2", "SM3", "SM4", "T2"}
    ),
)

DEFAULT_CONVENTIONS = [NUSDAST_CONVENTION, FBIRN_CONVENTION]


def split_extension(name: str) -> tuple[str, str]:
    """Split at the first dot: ("a+b+V01", ".nii.bz2"). No dot -> ("", ext empty)."""
    dot = name.find(".")
    if dot < 0:
        return name, ""
    return name[:dot], name[dot:]


def parse_scan_filename(name: str, convention: ConventionSpec) -> ScanNameTokens:
    """Parse one filename under the given convention.

    The extension is everything from the first dot after the version token,
    so multi-part extensions like ".nii.bz2" stay whole.
    """
    if not name:
        raise TokenCountMismatch("empty filename")
    stem, extension = split_extension(name)
    parts = stem.split(convention.separator)
    order = convention.token_order
    if len(parts) != len(order):
        raise TokenCountMismatch(
            f"{name!r}: expected {len(order)} {convention.separator!r}-separated tokens "
            f"under {convention.name}, got {len(parts)}"
        )
    tokens = dict(zip(order, parts))
    if tokens["state"] not in STATES:
        raise UnknownStateToken(f"{name!r}: state token {tokens['state']!r} is not one of {STATES}")
    if not _VERSION_RE.match(tokens["version"]):
        raise MalformedVersion(f"{name!r}: version token {tokens['version']!r} does not match V<digits>")
    return ScanNameTokens(
        project=tokens["project"],
        dataset=tokens["dataset"],
        subject_code=tokens["subject_code"],
        timepoint=tokens.get("timepoint"),
        field_strength=tokens["field_strength"],
        modality=tokens["modality"],
        state=tokens["state"],
        version=tokens["version"],
        extension=extension,
    )


def render_scan_filename(tokens: ScanNameTokens, convention: ConventionSpec) -> str:
    """Inverse of parse_scan_filename; byte-exact for every parseable name."""
    values = tokens.to_dict()
    parts = [values[f] for f in convention.token_order]
    if any(p is None for p in parts):
        raise ValueError(f"tokens lack a field required by convention {convention.name}")
    return convention.separator.join(parts) + tokens.extension


def try_parse(name: str, convention: ConventionSpec) -> ScanNameTokens | None:
    try:
        return parse_scan_filename(name, convention)
    except NamingError:
        return None


def classify_auxiliary(
    name: str,
    registry: list[ConventionSpec] | None = None,
    image_extensions: frozenset[str] = IMAGE_EXTENSIONS,
) -> str:
    """Classify a filename as "scan", "summary", or "unknown".

    .rec/.ifh sidecars are summaries; names parseable under a registered
    convention with an image-bearing extension are scans.
    """
    _, extension = split_extension(name)
    if extension in SUMMARY_EXTENSIONS:
        return "summary"
    if extension in image_extensions:
        for convention in registry if registry is not None else DEFAULT_CONVENTIONS:
            if try_parse(name, convention) is not None:
                return "scan"
    return "unknown"


def detect_convention(
    names: list[str],
    registry: list[ConventionSpec] | None = None,
    threshold: float = 0.9,
    strict: bool = False,
) -> ConventionSpec:
    """Pick the convention under which >= threshold of the sampled names parse.

    Ties go to registry order unless strict, which raises AmbiguousConvention.
    """
    if not names:
        raise NoMatchingConvention("empty filename sample")
    registry = registry if registry is not None else DEFAULT_CONVENTIONS
    if not registry:
        raise NoMatchingConvention("empty convention registry")
    candidates = []
    for convention in registry:
        hits = sum(1 for n in names if try_parse(n, convention) is not None)
        rate = hits / len(names)
        if rate >= threshold:
            candidates.append((convention, rate))
    if not candidates:
        raise NoMatchingConvention(
            f"no convention parses >= {threshold:.0%} of the {len(names)} sampled names"
        )
    if len(candidates) > 1 and strict:
        names_ = [c.name for c, _ in candidates]
        raise AmbiguousConvention(f"conventions {names_} all exceed the parse threshold")
    return candidates[0][0]


def load_conventions(path) -> list[ConventionSpec]:
    """Load a convention registry from a JSON config file.

    Each record: {"name", "timepoint_present", "separator", "token_order"?,
    "known_modalities"?}.
    """
    with open(path, "rb") as fh:
        raw = json.load(fh)
    registry = []
    for rec in raw:
        registry.append(
            ConventionSpec(
                name=rec["name"],
                timepoint_present=rec.get("timepoint_present", True),
                separator=rec.get("separator", "+"),
                token_order=tuple(rec.get("token_order", ())),
                known_modalities=(
                    frozenset(rec["known_modalities"]) if rec.get("known_modalities") else None
                ),
            )
        )
    return registry


def convention_by_name(name: str, registry: list[ConventionSpec] | None = None) -> ConventionSpec:
    for convention in registry if registry is not None else DEFAULT_CONVENTIONS:
        if convention.name == name:
            return convention
    raise NoMatchingConvention(f"no convention named {name!r}")
