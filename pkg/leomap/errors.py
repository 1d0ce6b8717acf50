"""Error categories shared by every stage.

The CLI maps each category to an exit code; module-specific errors subclass a
category together with the builtin that fits, so ``except ValueError`` keeps
working for callers that do not care about the category.
"""

from __future__ import annotations


class LeomapError(Exception):
    exit_code = 1


class UsageError(LeomapError):
    exit_code = 1


class ConfigError(LeomapError, ValueError):
    exit_code = 1


class InputDataError(LeomapError):
    exit_code = 2


class AdapterUnavailable(LeomapError, RuntimeError):
    """The probing adapter cannot run at all (missing privileges, missing backend)."""

    exit_code = 3
