"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: data problems (bad files, bad meshes,
missing inputs) exit 3, numerical failures (solver breakdown, infeasible
training) exit 4.
"""


class SpecdescError(Exception):
    """Base class for all package errors."""


class ParseError(SpecdescError, ValueError):
    """A mesh or config file is malformed."""


class MeshValidationError(SpecdescError, ValueError):
    """A mesh violates a structural invariant (degenerate face, non-manifold
    edge, multiple components, bad index)."""


class DataError(SpecdescError, ValueError):
    """Inputs are structurally fine but unusable: dimension mismatch, missing
    file, not enough samples, empty candidate pools."""


class NumericalError(SpecdescError, RuntimeError):
    """A numerical procedure failed: eigensolver non-convergence,
    near-singular covariance, no feasible descriptor dimensions."""
