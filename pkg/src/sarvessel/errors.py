"""Exception hierarchy shared by every sarvessel module.

Two roots matter to callers: :class:`ValidationError` (bad values, bad
configuration, malformed files; the CLI maps it to exit code 2) and
:class:`SceneIOError` (missing or unreadable files; exit code 3).
"""


class SarVesselError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(SarVesselError, ValueError):
    """A value violates a documented invariant or precondition."""


class ConfigError(ValidationError):
    """A configuration is inconsistent or out of range."""


class FormatError(ValidationError):
    """A file exists but its content does not follow the expected format."""


class SizeMismatchError(FormatError):
    """Header-declared dimensions disagree with the raw payload length."""


class NonFiniteError(ValidationError):
    """An array holds NaN or infinite values where finite ones are required."""


class UnknownBandError(FormatError):
    """A band label outside the supported polarisations."""


class PlacementError(ConfigError):
    """Synthetic targets could not be placed without overlap."""


class SceneTooSmallError(ConfigError):
    """The scene is smaller than the requested window."""


class ArchitectureMismatchError(ValidationError):
    """A weight file does not match the network it is loaded into."""


class SceneIOError(SarVesselError, OSError):
    """Reading or writing a file failed."""

    def __init__(self, message, path=None):
        super().__init__(message)
        self.path = path

    def __str__(self):
        msg = self.args[0] if self.args else ""
        return f"{msg} [{self.path}]" if self.path is not None else msg


class MissingFileError(SceneIOError, FileNotFoundError):
    """A required file does not exist."""
