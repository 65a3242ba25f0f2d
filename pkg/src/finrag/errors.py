"""Shared exception base for the finrag package.

Module-specific exceptions subclass :class:`FinragError` next to the code
that raises them, so callers can catch either the narrow type or the whole
family.
"""


class FinragError(Exception):
    pass
