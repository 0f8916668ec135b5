"""Exception hierarchy.

Each class carries the process exit code the CLI maps it to.
"""

from __future__ import annotations


class SandwatchError(Exception):
    exit_code = 5


class ConfigInvalid(SandwatchError):
    exit_code = 2


class InputError(SandwatchError):
    exit_code = 3


class MalformedRow(InputError):
    def __init__(self, row: int, reason: str) -> None:
        super().__init__(f"row {row}: {reason}")
        self.row = row
        self.reason = reason


class DuplicateKey(InputError):
    pass


class InconsistentBlock(InputError):
    pass


class UnknownFormat(InputError):
    pass


class InvalidRange(InputError):
    pass


class OverlappingRanges(InputError):
    pass


class ConflictingLabels(InputError):
    pass


class MissingStageInput(InputError):
    pass


class CacheCorrupt(InputError):
    pass


class EmptyInput(InputError):
    pass


class EmptyCohort(InputError):
    pass


class InfeasibleConfig(ConfigInvalid):
    pass


class ProviderError(SandwatchError):
    exit_code = 4


class ProviderUnavailable(ProviderError):
    pass


class MalformedResponse(ProviderError):
    pass


class InvariantViolation(SandwatchError):
    exit_code = 5
