"""Exception hierarchy shared across the package."""


class ValidationError(ValueError):
    """Invalid input: wrong shape, out-of-range parameter, broken invariant."""


class NumericalError(ArithmeticError):
    """A computation produced NaN or inf."""


class FormatError(ValueError):
    """Malformed binary file. ``code`` names the failure."""

    code = "format"


class BadMagicError(FormatError):
    code = "bad_magic"

    def __init__(self, found=b""):
        super().__init__(f"bad magic: {found!r}")


class UnsupportedVersionError(FormatError):
    code = "unsupported_version"

    def __init__(self, version):
        super().__init__(f"unsupported version: {version}")


class DimensionMismatchError(FormatError):
    code = "dim_mismatch"


class TruncatedFileError(FormatError):
    code = "truncated"

    def __init__(self, detail=""):
        super().__init__("truncated" + (f": {detail}" if detail else ""))
