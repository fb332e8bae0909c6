"""Exception hierarchy shared by the library, the service, and the CLI.

The three concrete categories map onto CLI exit codes (usage=1, data=2,
numeric=3) and onto HTTP error payloads emitted by the service.
"""


class QwdganError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1
    kind = "usage"


class ConfigError(QwdganError):
    """Invalid configuration, arguments, or operation preconditions."""

    exit_code = 1
    kind = "usage"


class ShapeError(ConfigError):
    """Tensor shape or divisibility violation; message names the offender."""


class DataError(QwdganError):
    """Missing/corrupt files, unsupported formats, malformed manifests."""

    exit_code = 2
    kind = "data"


class NumericError(QwdganError):
    """Non-finite values or degenerate numeric states during computation."""

    exit_code = 3
    kind = "numeric"
