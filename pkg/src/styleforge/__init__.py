"""styleforge: CPU style transfer, optimization-based and feed-forward.

The package is organized around small, testable pieces:

* :mod:`styleforge.tensor_core` - (C, H, W) tensor primitives with gradients
* :mod:`styleforge.vgg` - network specs, SFW1 weight files, forward/backward
* :mod:`styleforge.losses` - content/style/TV objective terms and masks
* :mod:`styleforge.optimize` - Adam and L-BFGS over image pixels
* :mod:`styleforge.color_transfer` - affine color statistics matching
* :mod:`styleforge.wct` - whitening/coloring transforms and stylization
* :mod:`styleforge.pipeline` - image I/O and the end-to-end runs
* :mod:`styleforge.cli` - the ``styleforge`` command
"""

from .errors import (
    FormatError,
    OptimizationError,
    PipelineError,
    ShapeError,
    ValidationError,
)

__version__ = "0.1.0"

__all__ = [
    "FormatError",
    "OptimizationError",
    "PipelineError",
    "ShapeError",
    "ValidationError",
    "__version__",
]
