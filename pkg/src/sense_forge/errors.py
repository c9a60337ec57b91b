"""Exception hierarchy.

Everything the CLI maps to exit code 1 derives from :class:`SenseForgeError`.
"""

from __future__ import annotations


class SenseForgeError(Exception):
    """Base class for domain errors."""


# schemas
class NotADatabaseError(SenseForgeError):
    pass


class NoSuchTableError(SenseForgeError):
    def __init__(self, table: str) -> None:
        super().__init__(f"no such table: {table}")
        self.table = table


# datasets
class DatasetParseError(SenseForgeError):
    def __init__(self, path: str, line: int, message: str) -> None:
        super().__init__(f"{path}:{line}: {message}")
        self.path = path
        self.line = line


class MissingFieldError(DatasetParseError):
    def __init__(self, path: str, line: int, field: str) -> None:
        super().__init__(path, line, f"missing field {field!r}")
        self.field = field


class DuplicateIdError(DatasetParseError):
    def __init__(self, path: str, line: int, record_id: int) -> None:
        super().__init__(path, line, f"duplicate id {record_id}")
        self.record_id = record_id


# prompts
class UnknownTableInSampleError(SenseForgeError):
    pass


class WrongFewShotCountError(SenseForgeError):
    pass


class NotEnoughExamplesError(SenseForgeError):
    pass


# metrics / sql analysis
class UnparsableSqlError(SenseForgeError):
    def __init__(self, sql: str, reason: str = "") -> None:
        super().__init__(f"cannot parse SQL: {sql!r}" + (f" ({reason})" if reason else ""))
        self.sql = sql


class MissingDatabaseError(SenseForgeError):
    def __init__(self, db_id: str, path: str) -> None:
        super().__init__(f"no database file for {db_id!r} at {path}")
        self.db_id = db_id


class MissingPredictionError(SenseForgeError):
    def __init__(self, example_id: int) -> None:
        super().__init__(f"no prediction for example {example_id}")
        self.example_id = example_id


# LLM endpoints
class EndpointError(SenseForgeError):
    pass


class NetworkError(EndpointError):
    pass


class AuthError(EndpointError):
    pass


class RateLimitedError(EndpointError):
    pass


# synthesis
class MissingSectionError(SenseForgeError):
    def __init__(self, section: str) -> None:
        super().__init__(f"missing section {section!r}")
        self.section = section


class TrailingContentError(SenseForgeError):
    pass


# preference data
class GoldExecutionFailedError(SenseForgeError):
    def __init__(self, example_id: int, detail: str = "") -> None:
        msg = f"gold SQL of example {example_id} failed to execute"
        super().__init__(msg + (f": {detail}" if detail else ""))
        self.example_id = example_id


# losses
class EmptySequenceError(SenseForgeError):
    pass


class NonFiniteInputError(SenseForgeError):
    pass
