"""Exception hierarchy shared by every stage of the pipeline."""


class TcfpError(Exception):
    """Base class for all errors raised by this package."""


class DataError(TcfpError):
    """Bad input data or file contents (CLI exit code 3)."""


class MalformedHeader(DataError):
    pass


class UnsupportedEncoding(DataError):
    pass


class SignalTooShort(DataError):
    pass


class DegeneratePatch(DataError):
    pass


class InsufficientPatches(DataError):
    pass


class DuplicateSongId(DataError):
    pass


class FormatVersionMismatch(DataError):
    pass


class InsufficientSupport(DataError):
    pass


class OutOfBand(DataError):
    pass


class SilentSignal(DataError):
    pass


class ConfigError(TcfpError):
    """Invalid or unknown configuration key (CLI exit code 2)."""
