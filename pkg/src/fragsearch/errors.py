"""Exception types shared across the package."""


class FragsearchError(Exception):
    """Base class for all errors raised by this package."""


class MeshFormatError(FragsearchError):
    """Malformed or unreadable mesh file.

    Carries the file path plus a line number (text formats) or byte
    offset (binary formats) when one is known.
    """

    def __init__(self, message, path=None, line=None, offset=None):
        loc = ""
        if line is not None:
            loc = f" (line {line})"
        elif offset is not None:
            loc = f" (byte offset {offset})"
        prefix = f"{path}: " if path else ""
        super().__init__(f"{prefix}{message}{loc}")
        self.path = path
        self.line = line
        self.offset = offset


class UnsupportedFormatError(MeshFormatError):
    """File uses a format variant this package does not read."""


class DegenerateGeometryError(FragsearchError):
    """Input geometry is flat, collinear, or otherwise rank-deficient."""


class InsufficientDataError(FragsearchError):
    """Too few valid samples to produce a meaningful descriptor."""


class BinningMismatchError(FragsearchError):
    """Two histograms do not share range and bin count."""


class ZeroMassError(FragsearchError):
    """Histogram has no mass; distances are undefined."""


class CalibrationRequiredError(FragsearchError):
    """Operation needs thresholds/normalizers; run calibration first."""


class VersionMismatchError(FragsearchError):
    """Descriptor versions are inconsistent across the dataset."""


class StaleStoreError(FragsearchError):
    """Persisted store was produced by a different descriptor version."""


class IntegrityError(FragsearchError):
    """Persisted store bytes do not match their recorded hashes."""


class UnknownFragmentError(FragsearchError):
    """Fragment id is not present in the store."""


class PropertyNotEnabledError(FragsearchError):
    """Query requested a property its fragment class does not enable."""

    def __init__(self, prop, fragment_class, enabled):
        names = ", ".join(sorted(str(p) for p in enabled))
        super().__init__(
            f"property '{prop}' is not enabled for class '{fragment_class}'; "
            f"enabled: {names}"
        )
        self.property = prop
        self.fragment_class = fragment_class
        self.enabled = frozenset(enabled)


class StoreLockError(FragsearchError):
    """Another process holds the store write lock."""


class RecipeError(FragsearchError):
    """Synthetic-corpus recipe is invalid."""


class ConfigError(FragsearchError):
    """Configuration file or flags are invalid."""
