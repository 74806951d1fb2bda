"""Exception hierarchy shared across the package.

Every error carries a stable ``code`` (its class name) so the command line
front end can report it in a machine-readable field.
"""


class KgFairError(Exception):
    @property
    def code(self) -> str:
        return type(self).__name__


class DataError(KgFairError):
    """Problems with graph content or pipeline inputs (CLI exit code 2)."""


class ConfigError(KgFairError):
    """Problems with a run configuration (CLI exit code 1)."""


# graph
class TypeConstraintViolation(DataError, ValueError):
    pass


class IndexOutOfRange(DataError, IndexError):
    pass


class EdgeNotFound(DataError, KeyError):
    pass


class DuplicateEdge(DataError, ValueError):
    pass


class ZeroDegree(DataError, ValueError):
    pass


class ParseError(DataError, ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


# numerics
class ShapeMismatch(KgFairError, ValueError):
    pass


class NonFiniteInput(KgFairError, ValueError):
    pass


class EmptyInput(KgFairError, ValueError):
    pass


# model / training
class SchemaMismatch(DataError, ValueError):
    pass


class InsufficientNodes(DataError, ValueError):
    pass


class NoTargetEdges(DataError, ValueError):
    pass


# fairness
class NoFreeDrugs(DataError, ValueError):
    pass


class NoTestableEdges(DataError, ValueError):
    pass


class EmptyTestSet(DataError, ValueError):
    pass


class CannotEnsureDisjointness(UserWarning):
    """Warning: a free drug had no unused treats-edge and was dropped."""


# generator / config
class InvalidParams(ConfigError, ValueError):
    pass


class UnknownKey(ConfigError, KeyError):
    def __init__(self, key: str, line: int | None = None):
        self.key = key
        self.line = line
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}unknown key {key!r}")

    def __str__(self) -> str:
        return self.args[0]


class RangeError(ConfigError, ValueError):
    def __init__(self, key: str, message: str, line: int | None = None):
        self.key = key
        self.line = line
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}{key}: {message}")


class ConfigParseError(ConfigError, ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)
