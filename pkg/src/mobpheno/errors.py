"""Exception hierarchy.

Every error is either a ``DataError`` (bad or insufficient input data, CLI
exit code 1) or a ``ConfigError`` (bad configuration, CLI exit code 2).
"""


class MobphenoError(Exception):
    pass


class DataError(MobphenoError):
    pass


class ConfigError(MobphenoError):
    pass


# ingest
class MalformedHeader(DataError):
    pass


class EmptyTrace(DataError):
    pass


# ddp
class AllBinsAbsent(DataError):
    pass


class InsufficientCoverage(DataError):
    pass


# circadian
class DegenerateVariance(DataError):
    pass


class InsufficientDays(DataError):
    pass


class ZeroDenominator(DataError):
    pass


# phenotypes
class TooFewPoints(DataError):
    pass


class HomeUndefined(DataError):
    pass


class SingleDay(DataError):
    pass


# analysis
class InsufficientSamples(DataError):
    pass


class MetricMissingForGroup(DataError):
    pass


# predict
class NoClassVariation(DataError):
    pass


class AllSkipped(DataError):
    pass


# synth / cli
class InvalidSpec(ConfigError):
    pass


class ConfigInvalid(ConfigError):
    pass


class MissingUpstreamArtifact(ConfigError):
    pass
