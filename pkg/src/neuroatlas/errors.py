"""Exception hierarchy for the atlas catalog.

Every operation-level failure mode has its own class so callers (CLI, HTTP
service, tests) can map errors without string matching.
"""


class AtlasError(Exception):
    """Base class for all catalog errors."""


# -- store / schema ----------------------------------------------------------

class StoreUnavailable(AtlasError):
    pass


class SchemaVersionMismatch(AtlasError):
    pass


class StoreError(AtlasError):
    """Unexpected failure inside the relational store."""


# -- crawling / layout -------------------------------------------------------

class PathNotFound(AtlasError):
    pass


class PermissionDenied(AtlasError):
    pass


class MissingClinicalDir(AtlasError):
    pass


class MissingImagesDir(AtlasError):
    pass


class AmbiguousDepth(AtlasError):
    pass


# -- filename parsing --------------------------------------------------------

class NamingError(AtlasError):
    """Base for scan-filename parsing failures."""


class TokenCountMismatch(NamingError):
    pass


class UnknownStateToken(NamingError):
    pass


class MalformedVersion(NamingError):
    pass


class NoMatchingConvention(AtlasError):
    pass


class AmbiguousConvention(AtlasError):
    pass


# -- CSV ingest --------------------------------------------------------------

class MalformedCsv(AtlasError):
    pass


class DuplicateVariable(AtlasError):
    pass


class MissingSubjectColumn(AtlasError):
    pass


class RaggedRow(AtlasError):
    pass


class ConflictingSubject(AtlasError):
    pass


class DuplicateDataset(AtlasError):
    pass


# -- pipeline catalog --------------------------------------------------------

class NullField(AtlasError):
    pass


class DuplicatePipeline(AtlasError):
    pass


class PipelineNotFound(AtlasError):
    pass


# -- querying ----------------------------------------------------------------

class NotFound(AtlasError):
    pass


class UnknownQueryId(AtlasError):
    pass


class MissingParam(AtlasError):
    pass


class TypeMismatch(AtlasError):
    pass


class UnknownVariable(AtlasError):
    pass


# -- SQL sandbox -------------------------------------------------------------

class SandboxRejected(AtlasError):
    """Base for sandbox refusals of user-supplied SQL."""


class ParseError(SandboxRejected):
    pass


class MutationForbidden(SandboxRejected):
    pass


class MultiStatement(SandboxRejected):
    pass


class NonWhitelistedTable(SandboxRejected):
    pass


# -- export ------------------------------------------------------------------

class MissingDefaultField(AtlasError):
    pass


# -- synthetic fixtures ------------------------------------------------------

class OutdirNotEmpty(AtlasError):
    pass


# -- service -----------------------------------------------------------------

class Unauthorized(AtlasError):
    pass


class IngestInProgress(AtlasError):
    pass
