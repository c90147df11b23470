"""Exception hierarchy.

Everything raised on purpose derives from :class:`OWGError`. The CLI maps
:class:`BackendError` to exit code 3 and :class:`DataError` to exit code 4.
"""


class OWGError(Exception):
    pass


class DataError(OWGError):
    pass


class BackendError(OWGError):
    pass


# imaging
class MissingFile(DataError, FileNotFoundError):
    pass


class DimensionMismatch(DataError, ValueError):
    pass


class NonContiguousIds(DataError, ValueError):
    pass


class InvalidDepth(DataError, ValueError):
    pass


class EmptyProjection(DataError):
    pass


class UnknownSegment(DataError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


# markers
class PaletteExhausted(DataError):
    pass


class GraspOutsideCrop(DataError):
    pass


class DegenerateRectangle(DataError, ValueError):
    pass


# prompts
class EmptyQuery(DataError, ValueError):
    pass


class UnknownTarget(DataError):
    pass


class NoGrasps(DataError):
    pass


# parsing
class ParseError(DataError):
    pass


class MissingAnswerBlock(ParseError):
    pass


class ArityViolation(ParseError):
    pass


class OutOfRangeId(ParseError):
    pass


class AllSamplesUnparsable(ParseError):
    pass


# grasping
class NoViableGrasp(DataError):
    pass


class EmptyTarget(DataError):
    pass


class MissingWorldCentroid(DataError):
    pass


class InvalidDepthAtGrasp(DataError):
    pass


# sim
class PlacementExhausted(DataError):
    pass


class UnknownObject(DataError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class NoFreeSpace(DataError):
    pass


# harness
class DatasetFormatError(DataError):
    pass


# vlm backends
class AuthError(BackendError):
    pass


class RateLimited(BackendError):
    pass


class BackendUnavailable(BackendError):
    pass


class MalformedRemoteResponse(BackendError):
    pass


class ReplayMiss(BackendError, KeyError):
    def __init__(self, key):
        super().__init__(f"no transcript entry for key {key}")
        self.key = key

    def __str__(self):
        return Exception.__str__(self)


class ProviderError(BackendError):
    pass


# executor
class StageError(OWGError):
    """A pipeline stage failed; ``stage`` is one of ground/plan/grasp/rank."""

    def __init__(self, stage, message, cause=None):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage
        self.cause = cause


class GroundingFailed(StageError):
    pass


class PlanningFailed(StageError):
    pass
