"""
Exception hierarchy for the retrieval-control harness.

Every error raised on purpose by the core package derives from HarnessError,
so the command line can map domain failures to exit codes in one place.
"""


class HarnessError(Exception):
    """Base class for all harness errors."""


class UsageError(HarnessError):
    """Invalid command-line arguments or experiment configuration."""


class SchemaError(HarnessError):
    """Malformed element schema (empty, dangling references, empty keyword sets)."""


class RejectedLinkError(HarnessError):
    """A link was requested with a score below the link threshold."""

    def __init__(self, evidence_id, element_id, score, threshold):
        super().__init__(
            f"link {evidence_id} -> {element_id} rejected: "
            f"score {score:.3f} < threshold {threshold:.2f}"
        )
        self.evidence_id = evidence_id
        self.element_id = element_id
        self.score = score


class UndefinedCoverageError(HarnessError):
    """Element coverage requested on a map without elements."""


class CorpusError(HarnessError):
    """Corpus or synonym file could not be parsed, or holds duplicate ids."""


class ManifestIntegrityError(HarnessError):
    """Pilot manifest is missing, unreadable, or fails its checksum."""


class SelectorUnavailableError(HarnessError):
    """External selector could not be reached after all retries."""


class SelectorProtocolError(HarnessError):
    """External selector replied with a payload that breaks the protocol."""

    def __init__(self, message, raw):
        super().__init__(message)
        self.raw = raw


class RunError(HarnessError):
    """A run failed part-way; the partial trace is attached."""

    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace
