"""Exception types shared across the package."""


class BinhoundError(Exception):
    """Base class for all domain errors."""


# -- binary scanning -------------------------------------------------------

class MalformedHeader(BinhoundError):
    """PE header is truncated or internally inconsistent."""


class EmptyImports(BinhoundError):
    """Import hash requested for a binary with no import table."""


class EmptyInput(BinhoundError):
    """Operation needs at least one byte / one element."""


# -- indicators ------------------------------------------------------------

class KnowledgeUnavailable(BinhoundError):
    """Knowledge store handle is closed; verification cannot run."""


class SpanMismatch(BinhoundError):
    """Indicator spans no longer line up with the response text."""


# -- knowledge base --------------------------------------------------------

class SchemaViolation(BinhoundError):
    """An ingest line does not match the document schema."""

    def __init__(self, line_no: int, field: str, message: str = ""):
        self.line_no = line_no
        self.field = field
        super().__init__(f"line {line_no}: field '{field}'" + (f": {message}" if message else ""))


class IoFailure(BinhoundError):
    """Underlying file I/O failed."""


# -- retrieval -------------------------------------------------------------

class IndexNotBuilt(BinhoundError):
    """Search requested before the collection index was built."""


class EmptyList(BinhoundError):
    """Pooling requested over zero vectors."""


class DimensionMismatch(BinhoundError):
    """Vectors in one pooling call differ in dimension."""


class ScorerFailure(BinhoundError):
    """Pluggable rerank scorer raised; caller keeps the fused order."""


# -- attribution -----------------------------------------------------------

class CtiUnavailable(BinhoundError):
    """CTI client errored; labeling falls through to the imphash path."""


class NoSignal(BinhoundError):
    """Every vendor-label token was generic; no family can be voted."""


# -- metrics / gate --------------------------------------------------------

class WeightSumViolation(BinhoundError):
    """Weights must be non-negative and sum to 1."""


class ThresholdOrderViolation(BinhoundError):
    """Gate thresholds must satisfy 0 <= tau_retry <= tau_accept <= 1."""


# -- engine ----------------------------------------------------------------

class UnsupportedFileType(BinhoundError):
    """Static chain only runs on PE executables."""


class AllToolsFailed(BinhoundError):
    """Every static-chain adapter failed; caller proceeds query-only."""


class GeneratorUnavailable(BinhoundError):
    """No generator configured and no transcript to fall back on."""


class MissingTranscript(BinhoundError):
    """Report assembly needs a static-analysis transcript."""


# -- corpus ----------------------------------------------------------------

class TooFewRecords(BinhoundError):
    """Augmentation partition needs at least three records."""
