"""Exception hierarchy shared by all modules.

Every domain failure derives from VideoPanelsError so the CLI can map it to
exit code 1 with a machine-parsable ``error=<ClassName>`` line.
"""


class VideoPanelsError(Exception):
    """Base class for all toolkit errors."""


class InvalidPolicy(VideoPanelsError):
    """Sampling policy parameters are out of range or unresolvable."""


class InsufficientFrames(VideoPanelsError):
    """More sample points requested than frames available."""


class SourceError(VideoPanelsError):
    """A frame source could not be probed or decoded."""


class EmptyVideo(SourceError):
    """The source contains zero decodable frames."""


class InvalidGeometry(VideoPanelsError):
    """Tile or grid dimensions are degenerate or inconsistent."""


class PlanViolation(VideoPanelsError):
    """Inputs do not match the sampling plan they claim to realize."""


class DatasetError(VideoPanelsError):
    """A dataset file or record violates the expected schema."""


class TemplateError(VideoPanelsError):
    """A prompt template is missing a required placeholder value."""


class EndpointError(VideoPanelsError):
    """The model endpoint failed after exhausting retries."""


class ConfigError(VideoPanelsError):
    """The request or endpoint configuration was rejected (no retry)."""


class ReportError(VideoPanelsError):
    """Two evaluation runs cannot be compared."""


class InvalidSpec(VideoPanelsError):
    """A synthetic-video spec is internally inconsistent."""
