"""Exception types shared across the engine."""


class ShapeError(ValueError):
    """Tensor extents are incompatible with the requested operation."""


class FormatError(ValueError):
    """A file does not conform to the expected binary/text format."""


class ValidationError(ValueError):
    """Well-formed data violates a declared constraint."""


class OptimizationError(RuntimeError):
    """An optimizer run became non-finite or otherwise unusable."""


class PipelineError(RuntimeError):
    """A pipeline stage failed; the message is tagged with the stage name."""

    def __init__(self, stage, message):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage
