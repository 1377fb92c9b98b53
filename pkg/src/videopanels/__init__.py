"""videopanels: trade spatial detail for temporal coverage in video QA.

Long videos overflow the image budget of vision-language models.  This
toolkit samples more frames than the budget allows, tiles them into grid
"panel" images so the request still fits, and measures what that buys on
multiple-choice benchmarks: dataset loading, prompt rendering, an HTTP
evaluation harness, baseline-vs-panels reports, and a synthetic
needle-in-a-haystack simulation that quantifies the coverage gain without a
real model.
"""

__version__ = "0.1.0"

from .errors import (  # noqa: F401
    ConfigError,
    DatasetError,
    EmptyVideo,
    EndpointError,
    InsufficientFrames,
    InvalidGeometry,
    InvalidPolicy,
    InvalidSpec,
    PlanViolation,
    ReportError,
    SourceError,
    TemplateError,
    VideoPanelsError,
)
from .policy import (  # noqa: F401
    GammaSpec,
    SamplePlan,
    SamplingPolicy,
    VideoMeta,
    plan_baseline,
    plan_lowres,
    plan_sampling,
    resolve_gamma,
    uniform_indices,
)
