"""Exception types raised across the pipeline."""


class TekoError(Exception):
    """Base class for all pipeline errors."""


class MissingFile(TekoError, FileNotFoundError):
    pass


class MalformedRecord(TekoError, ValueError):
    def __init__(self, line, reason=""):
        self.line = line
        msg = f"malformed record at line {line}"
        if reason:
            msg += f": {reason}"
        super().__init__(msg)


class DuplicateId(TekoError, ValueError):
    def __init__(self, id_):
        self.id = id_
        super().__init__(f"duplicate id {id_!r}")


class UnknownId(TekoError, KeyError):
    def __init__(self, id_):
        self.id = id_
        super().__init__(f"unknown id {id_!r}")

    def __str__(self):
        return self.args[0]


class EmptyCorpus(TekoError, ValueError):
    pass


class RatioOutOfRange(TekoError, ValueError):
    pass


class TooFewLabeled(TekoError, ValueError):
    def __init__(self, cls, count, needed):
        self.cls = cls
        super().__init__(f"class {cls} has {count} labeled documents, need at least {needed}")


class PriorOutOfRange(TekoError, ValueError):
    pass


class ThresholdOutOfRange(TekoError, ValueError):
    pass


class ScoreOutOfRange(TekoError, ValueError):
    pass


class DimensionMismatch(TekoError, ValueError):
    pass


class EmptyKnowledgeBase(TekoError, ValueError):
    pass


class EmptyDescriptions(TekoError, ValueError):
    pass


class ZeroVector(TekoError, ValueError):
    pass


class TooFewEntities(TekoError, ValueError):
    pass


class InconsistentIds(TekoError, ValueError):
    pass


class UnknownTypePair(TekoError, ValueError):
    pass


class EmptyNeighborhood(TekoError, ValueError):
    pass


class NonFiniteActivation(TekoError, FloatingPointError):
    pass


class EmptyMask(TekoError, ValueError):
    pass


class EmptyPairs(TekoError, ValueError):
    pass


class NoEdges(TekoError, ValueError):
    pass


class GraphTooDense(TekoError, ValueError):
    pass


class DivergedLoss(TekoError, FloatingPointError):
    pass


class LengthMismatch(TekoError, ValueError):
    pass


class TooFewPoints(TekoError, ValueError):
    pass


class ConfigInvalid(TekoError, ValueError):
    def __init__(self, field, reason=""):
        self.field = field
        msg = f"invalid config field {field!r}"
        if reason:
            msg += f": {reason}"
        super().__init__(msg)


class MissingUpstreamArtifact(TekoError, RuntimeError):
    def __init__(self, stage, path=None):
        self.stage = stage
        msg = f"missing upstream artifact from stage {stage!r}"
        if path is not None:
            msg += f" ({path})"
        super().__init__(msg)
