"""Exception hierarchy shared by every pipeline stage."""

from __future__ import annotations


class PDRError(Exception):
    """Base class for all errors raised by this package."""


# corpus
class DecodeError(PDRError, ValueError):
    pass


class EmptyDocument(PDRError, ValueError):
    pass


class SchemaError(PDRError, ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)


class DanglingRef(PDRError, KeyError):
    def __str__(self) -> str:  # KeyError quotes its argument otherwise
        return str(self.args[0]) if self.args else ""


# model backends
class BackendError(PDRError):
    pass


class BackendUnavailable(BackendError):
    pass


class Timeout(BackendError):
    pass


class RateLimited(BackendError):
    pass


class EmbedBackendError(BackendError):
    pass


class MalformedOutput(PDRError):
    def __init__(self, message: str, raw: str = ""):
        self.raw = raw
        super().__init__(message)


class MissingKey(MalformedOutput):
    pass


class ScoreOutOfRange(MalformedOutput):
    pass


# pipeline stages
class EmptyCorpus(PDRError):
    pass


class ProfileSchemaError(PDRError):
    pass


class MissingGapQuery(PDRError, ValueError):
    pass


class EmptyGeneration(PDRError):
    pass


# run lifecycle
class ConfigError(PDRError):
    pass


class IncompleteRun(PDRError):
    pass
