"""Exception types for tensor-file and artifact handling.

Bad call arguments raise plain ``ValueError``; the classes below cover
problems found in files on disk.
"""


class SpecQuantError(Exception):
    """Base class for artifact and tensor-file errors."""


class FormatError(SpecQuantError):
    """Container is malformed: bad magic, header, or manifest version."""


class ShapeError(SpecQuantError):
    """Structure does not match its declaration: ndim, dtype, or size."""


class DataError(SpecQuantError):
    """Values are invalid: NaN/Inf, out-of-range codes, non-positive scales."""
