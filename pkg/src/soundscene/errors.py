"""Exception types shared across the pipeline.

The CLI maps these onto exit codes: usage problems exit 1, data problems
exit 2, infeasible scenes exit 3.
"""


class SoundSceneError(Exception):
    """Base class for all pipeline errors."""


class DataFormatError(SoundSceneError):
    """A file could not be parsed or an encoding is unsupported."""


class ValidationError(SoundSceneError):
    """Inputs parsed but violate a documented contract."""


class InfeasibleError(SoundSceneError):
    """A scene cannot be satisfied: unsatisfiable sampling request,
    impossible layout, or degenerate audio (e.g. silent foreground)."""
