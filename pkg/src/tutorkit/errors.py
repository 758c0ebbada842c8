"""Shared exception base for the package.

Every module-specific error subclasses :class:`TutorKitError` so callers
(and the CLI) can catch domain failures without swallowing genuine bugs.
"""

from __future__ import annotations


class TutorKitError(Exception):
    """Base class for all errors raised by this package."""
