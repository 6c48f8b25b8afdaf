"""Exception taxonomy shared across the pipeline."""


class PlaneAlignError(Exception):
    """Base class for all pipeline errors."""


class EmptyInput(PlaneAlignError):
    """An operation received an empty collection it cannot work with."""


class NotUnit(PlaneAlignError):
    """A direction vector was expected to have unit norm."""


class DegenerateSample(PlaneAlignError):
    """A point sample has no spread, so the solver is underdetermined."""


class AllPointsFiltered(PlaneAlignError):
    """Every point was removed by the filter cascade."""


class OutOfBounds(PlaneAlignError):
    """A coordinate lies outside the raster it indexes."""


class TooFewPairs(PlaneAlignError):
    """A loss needs more correspondence pairs than were supplied."""


class DegenerateWeights(PlaneAlignError):
    """Confidence weights sum to zero; the weighted mean is undefined."""


class NonFiniteLoss(PlaneAlignError):
    """Training produced a NaN/inf loss.

    Carries the last parameter state that still evaluated to a finite loss.
    """

    def __init__(self, message, last_good=None, step=None):
        super().__init__(message)
        self.last_good = last_good
        self.step = step


class EmptyDensity(PlaneAlignError):
    """The density map has zero total mass; nothing to sample."""


class NoConsensus(PlaneAlignError):
    """RANSAC could not find enough inliers.

    ``best_count`` records the largest inlier set seen before giving up.
    """

    def __init__(self, message, best_count=0):
        super().__init__(message)
        self.best_count = best_count


class FeatureFileError(PlaneAlignError):
    """Base class for feature-file parse failures."""


class BadMagic(FeatureFileError):
    """The file does not start with the FMAP magic bytes."""


class DimOverflow(FeatureFileError):
    """Header dimensions are zero or imply an implausibly large payload."""


class TruncatedFile(FeatureFileError):
    """Payload length does not match the header dimensions."""


class ConfigError(PlaneAlignError):
    """A run configuration failed schema validation."""


class ParseError(PlaneAlignError):
    """An input file could not be parsed."""
