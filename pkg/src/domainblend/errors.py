"""Exception hierarchy shared by the whole pipeline.

Every error carries a short machine-parsable category so the CLI can emit
``error: <category>: <detail>`` lines and map categories to exit codes.
"""


class PipelineError(Exception):
    """Base class for all pipeline failures."""

    category = "runtime"


class ConfigError(PipelineError):
    """Invalid configuration value or unusable combination of settings."""

    category = "config"


class FormatError(PipelineError):
    """On-disk artifact is malformed (bad magic, version, truncation...)."""

    category = "format"


class ShapeError(PipelineError):
    """Array dimensions disagree with what an operation requires."""

    category = "shape"


class SamplingError(PipelineError):
    """An episode cannot be drawn under the given policy/store."""

    category = "sampling"


class UnknownSampleError(PipelineError):
    """A sample id is not present in the feature store."""

    category = "lookup"
