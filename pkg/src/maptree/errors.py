"""Exception hierarchy shared across the package.

Every error raised by the library derives from :class:`MapTreeError` so callers
(and the CLI) can map failure classes to exit codes without string matching.
"""


class MapTreeError(Exception):
    """Base class for all library errors."""


class ParseError(MapTreeError):
    """A mesh file could not be parsed in its declared format."""


class ValidationError(MapTreeError):
    """A mesh violates a structural invariant (index range, manifoldness, ...)."""


class EmptySourceSet(MapTreeError):
    """Geodesic computation was requested with no source vertices."""


class CountTooLarge(MapTreeError):
    """More samples were requested than vertices exist."""


class DegenerateAngle(MapTreeError):
    """A cotangent weight blew up on a degenerate triangle."""


class SolverNoConvergence(MapTreeError):
    """The sparse eigensolver exceeded its iteration cap."""


class KTooLarge(MapTreeError):
    """More eigenpairs were requested than the mesh supports."""


class DimensionMismatch(MapTreeError):
    """Matrix/basis dimensions are inconsistent for the requested operation."""


class NonSquare(MapTreeError):
    """A square functional map was required."""


class SingularLeastSquares(MapTreeError):
    """The stacked refit system is rank-deficient (degenerate bases)."""


class ZeroConstantSum(MapTreeError):
    """The constant eigenfunction sums to ~0; the root map is undefined."""


class GroupTooLarge(MapTreeError):
    """An eigenvalue group exceeds the configured enumeration size."""


class BasisExhausted(MapTreeError):
    """A node cannot be expanded because the basis has no next eigenfunction."""


class PreconditionViolated(MapTreeError):
    """A guarded operation was called outside its stated preconditions."""


class MissingDistances(MapTreeError):
    """A geodesic lookup referenced a vertex that is not a cached source."""


class AllFacesDegenerate(MapTreeError):
    """Every image triangle collapsed; the per-face map is undefined."""


class EmptyCandidates(MapTreeError):
    """A selection operation received an empty candidate list."""


class NonSymmetric(MapTreeError):
    """A matrix expected to be symmetric (a distance matrix) is not."""


class UnknownFlag(MapTreeError):
    """An unrecognized command-line flag was passed."""
