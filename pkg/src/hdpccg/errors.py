"""Exception hierarchy shared by every stage of the toolkit.

The CLI maps ``DataError`` subclasses to exit code 2 and ``AuditError`` to
exit code 3; anything else escaping a stage is a bug.
"""


class HdpCcgError(Exception):
    pass


class DataError(HdpCcgError):
    """Bad input data: malformed files, empty corpora, unknown symbols."""


class CategorySyntaxError(DataError, ValueError):
    pass


class LimitError(HdpCcgError, ValueError):
    """A category exceeds the configured depth or arity cap."""


class EmptyInput(DataError):
    pass


class EmptyCorpus(DataError):
    pass


class UnknownToken(DataError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class NoParse(DataError):
    pass


class LengthMismatch(DataError):
    pass


class DimensionMismatch(DataError):
    pass


class EmptyScene(DataError):
    pass


class MissingScene(DataError):
    pass


class SpecError(DataError):
    """A synthetic grammar specification that cannot generate sentences."""


class ConfigError(DataError):
    pass


class AuditError(HdpCcgError):
    """Incremental sufficient statistics disagree with a rebuild from scratch."""


class IoError(DataError, OSError):
    """A file could not be read or written."""
