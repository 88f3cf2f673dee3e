"""Exception hierarchy.

Every error carries a ``status`` string from a fixed vocabulary so the CLI can
map failures onto stable exit statuses.
"""

from __future__ import annotations

OK = "ok"
INPUT_ERROR = "input error"
CONTRACT_ERROR = "contract error"
NUMERIC_ERROR = "numeric error"

EXIT_CODES = {OK: 0, INPUT_ERROR: 2, CONTRACT_ERROR: 3, NUMERIC_ERROR: 4}


class NetPowerError(Exception):
    status = INPUT_ERROR


class InputError(NetPowerError, ValueError):
    status = INPUT_ERROR


class ParseError(InputError):
    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(where + message)


class ReferentialIntegrityError(InputError):
    pass


class OverSubscriptionError(InputError):
    def __init__(self, node: str, total: float):
        self.node = node
        self.total = total
        super().__init__(f"incoming ownership of {node!r} sums to {total:.9g} > 1")


class LookupFailure(InputError, KeyError):
    def __str__(self) -> str:
        return str(self.args[0]) if self.args else ""


class ContractError(NetPowerError):
    status = CONTRACT_ERROR


class SizeGuardError(ContractError):
    pass


class NumericError(NetPowerError, ArithmeticError):
    status = NUMERIC_ERROR
