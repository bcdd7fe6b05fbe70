"""vdkit: desk-scale vehicle damage perception toolkit.

Quadtree-attention mask refinement, part/damage instance reasoning with
vehicle damage code synthesis, focal-CTC sequence recognition pieces, and a
COCO-style evaluation suite. Numerics run on a compiled kernel core with a
bit-identical pure python fallback (see vdkit._backend).
"""

from ._backend import BACKEND
from .errors import (
    ConfigError,
    CtcInfeasibleError,
    InputError,
    InvariantError,
    StageError,
    VdkitError,
)

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "ConfigError",
    "CtcInfeasibleError",
    "InputError",
    "InvariantError",
    "StageError",
    "VdkitError",
    "__version__",
]
