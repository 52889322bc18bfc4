"""Exceptions raised across the judgeforge collection."""


class JudgeForgeError(Exception):
    """Base class for every error raised by `prefect_judgeforge`."""


# verdict parsing


class VerdictError(JudgeForgeError, ValueError):
    """A judge output could not be turned into a verdict."""


class MissingMarker(VerdictError):
    """No `[[...]]` score or verdict marker was found."""


class OutOfRange(VerdictError):
    """A score lies outside the active rating system."""


class NotAnInteger(VerdictError):
    """A bracketed token that should hold a score is not an integer."""


class AmbiguousVerdict(VerdictError):
    """More than one distinct pairwise verdict marker was found."""


class UnknownScenario(JudgeForgeError, LookupError):
    """A scenario name or id does not resolve in the catalog."""


# metrics


class MetricsError(JudgeForgeError, ValueError):
    """Invalid input to a meta-evaluation metric."""


class EmptyInput(MetricsError):
    """A metric or fit received no rows."""


class InvalidCount(MetricsError):
    """A weighting row carries a non-positive count."""


class TooFewValues(MetricsError):
    """A statistic needs more values than were supplied."""


class LengthMismatch(MetricsError):
    """Paired sequences differ in length."""


class ZeroVariance(MetricsError):
    """A correlation input has no variance."""


class ScenarioMismatch(MetricsError):
    """Two reports do not cover the same scenarios."""


class InvalidHistogram(MetricsError):
    """A histogram does not sum to one over the rating range."""


class DegenerateBaseline(MetricsError):
    """A random baseline coincides with the ideal metric value."""


# prompt rendering


class PromptError(JudgeForgeError, ValueError):
    """A prompt cannot be rendered from the given inputs."""


class MissingReference(PromptError):
    """A reference answer or reference text is required but absent."""


class WrongResponseCount(PromptError):
    """The number of responses does not match the judging mode."""


class EmptyInstruction(PromptError):
    """The instruction to classify is empty."""


class EmptyCatalog(PromptError):
    """The scenario catalog holds no scenarios."""


class WrongSeedCount(PromptError):
    """Questioning prompts take exactly three seed examples."""


class MissingField(PromptError):
    """A quiz spec lacks a field its scenario requires."""


class EmptyText(PromptError):
    """A text argument that must be non-empty is empty."""


class UnresolvedPlaceholder(PromptError):
    """A template placeholder had no value at render time."""


class UnknownCriterion(PromptError, LookupError):
    """A criterion name does not belong to the task's scenario."""


# gateway


class GatewayError(JudgeForgeError):
    """A model endpoint call failed."""


class TransientError(GatewayError):
    """A failure worth retrying (throttling, timeouts, server errors)."""


class RateLimited(TransientError):
    """The endpoint throttled the request."""


class GatewayTimeout(TransientError):
    """The request timed out or the connection failed."""


class ServerError(TransientError):
    """The endpoint answered with a 5xx status."""


class AuthError(GatewayError):
    """The endpoint rejected the credentials. Never retried."""


class ProtocolError(GatewayError):
    """The response body does not follow the expected schema."""


class UnsupportedByProvider(GatewayError):
    """The provider cannot serve this kind of request."""


# data engineering


class ForgeError(JudgeForgeError, ValueError):
    """A fine-tuning data operation cannot proceed."""


class ParseFailure(ForgeError):
    """Model output does not match the expected skeleton."""


class MissingScore(ForgeError):
    """A record carries neither an overall score nor a pairwise verdict."""


class NotPairwise(ForgeError):
    """A pairwise-only operation received a non-pairwise record."""


class NoAliases(ForgeError):
    """No gate-passing alias exists for a criterion."""


class NoRegressionModel(ForgeError):
    """Criteria down-sampling was requested without a fitted regression."""


class DegenerateAnswer(ForgeError):
    """The unconditioned answer loss is zero."""


class ScorerFailure(ForgeError):
    """The token scorer failed or returned unusable scores."""


class EmptyAfterFilter(ForgeError):
    """No record survived the selection filter."""


class KTooLarge(ForgeError):
    """More clusters were requested than there are rows."""


class PoolExhausted(ForgeError):
    """A composition quota exceeds the available pool."""


# harness


class HarnessError(JudgeForgeError, ValueError):
    """Benchmark orchestration failed."""


class IdMismatch(HarnessError):
    """A judgment does not resolve to a benchmark record."""


class UnsupportedFormat(HarnessError):
    """The requested report format is not supported."""


class RecordFileError(HarnessError):
    """A JSONL line could not be decoded into its record type."""
