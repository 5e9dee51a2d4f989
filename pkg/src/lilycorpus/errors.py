"""Shared exception hierarchy.

Module-specific errors subclass :class:`LilyCorpusError` so the CLI can map
any toolkit failure to a stable exit code. Errors caused by a missing or
broken external tool use :class:`ExternalToolError` instead (separate exit
code).
"""


class LilyCorpusError(Exception):
    """Base class for all toolkit errors caused by bad input or usage."""


class ExternalToolError(Exception):
    """Base class for failures of external programs (engraver, etc.)."""


class EmptyCorpus(LilyCorpusError):
    """An operation that needs at least one input file received none."""
