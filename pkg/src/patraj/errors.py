"""Exception hierarchy.

Each exception carries a ``category`` used by the CLI to pick an exit code.
"""


class PatrajError(Exception):
    category = "error"
    exit_code = 1


class ConfigError(PatrajError, ValueError):
    category = "config"
    exit_code = 2


class DataIntegrityError(PatrajError, ValueError):
    category = "data-integrity"
    exit_code = 3


class CodeParseError(PatrajError, ValueError):
    """A code string does not match the expected ICD-9 shape."""

    category = "code-parse"
    exit_code = 4

    def __init__(self, code, reason):
        self.code = code
        self.reason = reason
        super().__init__(f"cannot parse code {code!r}: {reason}")


class MappingMiss(PatrajError, KeyError):
    """Lookup of a code that the mapping table does not cover."""

    category = "mapping-miss"
    exit_code = 4

    def __init__(self, code, table_name=""):
        self.code = code
        self.table_name = table_name
        super().__init__(code)

    def __str__(self):
        where = f" in {self.table_name}" if self.table_name else ""
        return f"no mapping for {self.code!r}{where}"


class NumericalIntegrityError(PatrajError, ArithmeticError):
    category = "numerical"
    exit_code = 5


class CheckpointMismatch(PatrajError, ValueError):
    category = "checkpoint"
    exit_code = 6
