"""Exception types shared across the package."""


class NdfieldError(Exception):
    """Base class for ndfield errors."""


class DataError(NdfieldError):
    """Malformed or inconsistent input data (files, manifests, dimensions)."""


class DivergenceError(NdfieldError):
    """Reconstruction produced non-finite loss or parameters."""
