"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 1, GuardError -> 2,
KernelError and any other runtime failure -> 3.
"""


class LoopSoupError(Exception):
    """Base class for package errors."""


class ConfigError(LoopSoupError):
    """Malformed or inconsistent user configuration."""


class GuardError(LoopSoupError):
    """A documented precondition was violated (unsupported parameter
    range, state-space guard, missing data)."""


class KernelError(LoopSoupError):
    """A simulation kernel aborted: step cap exceeded, memory budget
    exhausted, or an internal solver failed to converge."""
