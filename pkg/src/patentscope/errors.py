"""Exception hierarchy shared by every stage of the pipeline."""


class PatentscopeError(Exception):
    """Base class for all errors raised by this package."""


# ingest
class IngestError(PatentscopeError):
    pass


class ImageOnlyPdf(IngestError):
    """The PDF has no extractable text layer (would need OCR)."""


class ExtractorFailed(IngestError):
    pass


class EncodingError(IngestError):
    pass


class EmptyAfterFilter(IngestError):
    pass


# embedding / index
class RetrievalError(PatentscopeError):
    pass


class InvalidChunkParams(RetrievalError, ValueError):
    pass


class ProviderUnavailable(RetrievalError):
    pass


class DimensionMismatch(RetrievalError, ValueError):
    pass


class IndexIoError(RetrievalError, OSError):
    pass


class CorruptIndex(RetrievalError):
    pass


# context
class BudgetImpossible(PatentscopeError):
    pass


# llm
class LLMError(PatentscopeError):
    pass


class TransportError(LLMError):
    pass


class AuthError(LLMError):
    pass


class RateLimited(LLMError):
    def __init__(self, message, retry_after=None):
        super().__init__(message)
        self.retry_after = retry_after


class MalformedResponse(LLMError):
    """The model answered with something the runtime cannot accept.

    ``reason`` is a short machine-readable tag (``unknown_tool``,
    ``bad_arguments``, ``script_exhausted``, ``bad_payload``) and
    ``tool_call`` carries the offending call when one could be parsed.
    """

    def __init__(self, message, reason="bad_payload", tool_call=None):
        super().__init__(message)
        self.reason = reason
        self.tool_call = tool_call


# tools
class ToolError(PatentscopeError):
    pass


class NotFound(ToolError):
    pass


class BackendError(ToolError):
    pass


class FixtureMissing(NotFound):
    pass


class EmptyKeywords(ToolError, ValueError):
    pass


class TooManyKeywords(ToolError, ValueError):
    pass


class InvalidKeywords(ToolError, ValueError):
    pass


class UnknownTool(ToolError):
    pass


class HandlerError(ToolError):
    def __init__(self, tool_name, cause):
        super().__init__(f"{tool_name}: {cause}")
        self.tool_name = tool_name
        self.cause = cause


# agents
class AgentError(PatentscopeError):
    pass


class TurnLimitExceeded(AgentError):
    pass


class PipelineError(AgentError):
    def __init__(self, role, cause):
        super().__init__(f"agent {role} failed: {cause}")
        self.role = role
        self.cause = cause


# report
class ReportError(PatentscopeError):
    pass


class MissingSection(ReportError):
    def __init__(self, role):
        super().__init__(f"missing section for role {role}")
        self.role = role


class ConverterUnconfigured(ReportError):
    pass


class ConverterFailed(ReportError):
    pass


# eval
class MetricError(PatentscopeError, ValueError):
    pass


class EmptyReference(MetricError):
    pass


class NoReferenceBigrams(MetricError):
    pass


class EmptySequence(MetricError):
    pass


class EmptyInput(MetricError):
    pass


# config
class ConfigError(PatentscopeError):
    pass
