"""Spectral descriptors for deformable triangle meshes.

Laplace-Beltrami spectra (shape DNA), heat and wave kernel signatures, and
task-trained spectral filters learned from positive/negative point pairs,
with ROC/CMC evaluation protocols and a synthetic shape corpus.
"""

from .errors import (
    DataError,
    MeshValidationError,
    NumericalError,
    ParseError,
    SpecdescError,
)
from .mesh import TriangleMesh, load_mesh

__version__ = "0.1.0"

__all__ = [
    "TriangleMesh",
    "load_mesh",
    "SpecdescError",
    "ParseError",
    "MeshValidationError",
    "DataError",
    "NumericalError",
    "__version__",
]
