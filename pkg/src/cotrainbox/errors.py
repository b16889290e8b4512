"""Exception types shared across the package.

The CLI maps these onto process exit codes: usage errors exit 2 (argparse
already does this), data errors exit 3, backend errors exit 4.
"""

from __future__ import annotations


class CoTrainError(Exception):
    """Base class for all package errors."""


class DataError(CoTrainError):
    """Malformed or inconsistent input data (manifests, configs, wire payloads)."""


class BackendError(CoTrainError):
    """A detector backend failed: bad handle, worker crash, undecodable response."""
