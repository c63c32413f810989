"""Cotangent Laplace–Beltrami discretization and truncated spectral bases.

The stiffness/mass pair defines the generalized eigenproblem
``W phi = lambda M phi`` whose smallest-eigenvalue solutions form the
low-frequency basis used by every downstream map computation. Bases are
mass-orthonormal (``Phi^T M Phi = I``) and sign-fixed so repeated runs are
bit-identical on the same input.
"""

import os

import numpy as np
from scipy import sparse
from scipy.linalg import eigh
from scipy.sparse.linalg import ArpackError, ArpackNoConvergence, eigsh

from .errors import (
    DegenerateAngle,
    KTooLarge,
    ParseError,
    SingularLeastSquares,
    SolverNoConvergence,
    ValidationError,
)

_COT_LIMIT = 1e8
_CACHE_ENV = "MAPTREE_CACHE_DIR"


class LaplacianPair:
    """Stiffness matrix W (cotangent weights) and lumped mass diagonal M.

    ``stiffness`` is sparse symmetric CSR with zero row sums; ``mass`` is the
    strictly positive diagonal of M as a 1-D array (one third of the incident
    face areas per vertex).
    """

    def __init__(self, stiffness, mass):
        self.stiffness = stiffness
        self.mass = np.asarray(mass, dtype=np.float64)

    @property
    def num_vertices(self):
        return self.mass.shape[0]

    def mass_matrix(self):
        """The mass diagonal as a sparse matrix."""
        return sparse.diags(self.mass)


class SpectralBasis:
    """Truncated eigenbasis of the Laplace–Beltrami operator.

    :param eigenvalues: ascending (k,) array, first entry ~0 on a connected mesh.
    :param eigenfunctions: (n, k) matrix Phi, column i the i-th eigenfunction.
    :param mass: (n,) lumped vertex masses (diagonal of M).

    The adjoint (Moore–Penrose pseudoinverse for a mass-orthonormal basis) is
    ``Phi^T M``, applied by :meth:`adjoint_apply`.
    """

    def __init__(self, eigenvalues, eigenfunctions, mass):
        self.eigenvalues = np.asarray(eigenvalues, dtype=np.float64)
        self.eigenfunctions = np.asarray(eigenfunctions, dtype=np.float64)
        self.mass = np.asarray(mass, dtype=np.float64)
        if self.eigenfunctions.shape != (self.mass.shape[0], self.eigenvalues.shape[0]):
            raise ValidationError("basis shapes are inconsistent")

    @property
    def num_vertices(self):
        return self.eigenfunctions.shape[0]

    @property
    def num_functions(self):
        return self.eigenfunctions.shape[1]

    def adjoint_apply(self, values):
        """Phi^T M applied to per-vertex values (vector or (n, d) stack)."""
        values = np.asarray(values, dtype=np.float64)
        if values.ndim == 1:
            return self.eigenfunctions.T @ (self.mass * values)
        return self.eigenfunctions.T @ (self.mass[:, None] * values)

    def project(self, values):
        """Mass-weighted least-squares coefficients of per-vertex values.

        Minimizes ||Phi x - f|| in the mass norm, which realizes the
        pseudo-inverse on any basis: it reduces to ``adjoint_apply`` exactly
        when the functions are mass-orthonormal (whole-mesh bases) and remains
        the correct projection on sample-restricted bases, where plain
        Phi^T M is not a pseudo-inverse any more.
        """
        rhs = self.adjoint_apply(values)
        phi = self.eigenfunctions
        gram = phi.T @ (self.mass[:, None] * phi)
        try:
            return np.linalg.solve(gram, rhs)
        except np.linalg.LinAlgError as exc:
            raise SingularLeastSquares(
                f"basis of {self.num_functions} functions is rank-deficient "
                f"on {self.num_vertices} vertices") from exc

    def truncate(self, k):
        """A view of the first ``k`` basis functions."""
        if k > self.num_functions:
            raise KTooLarge(f"requested {k} of {self.num_functions} basis functions")
        return SpectralBasis(self.eigenvalues[:k], self.eigenfunctions[:, :k], self.mass)

    def restrict(self, sample_indices):
        """Quadrature restriction to a vertex subset.

        Rows of Phi are gathered at the samples and the retained masses are
        rescaled to preserve the total, so sample-level inner products
        approximate the dense ones.
        """
        idx = np.asarray(sample_indices, dtype=np.int64)
        m = self.mass[idx]
        m = m * (self.mass.sum() / m.sum())
        return SpectralBasis(self.eigenvalues, self.eigenfunctions[idx], m)


def build_laplacian(mesh):
    """Cotangent-weight stiffness matrix with barycentric lumped masses.

    Off-diagonal W(i,j) = -(cot a_ij + cot b_ij)/2 over the (at most two)
    angles opposite edge (i,j); diagonal entries make row sums zero, giving
    x^T W x = sum_ij w_ij (x_i - x_j)^2 >= 0 up to round-off.

    :raises DegenerateAngle: some cotangent magnitude exceeds 1e8
        (numerically collapsed triangle corner).
    """
    v = mesh.vertex_positions
    f = mesh.faces
    n = mesh.num_vertices

    rows, cols, vals = [], [], []
    # corner c of each face contributes cot(angle at c)/2 to the opposite edge
    for c, (a, b) in enumerate([(1, 2), (2, 0), (0, 1)]):
        u1 = v[f[:, a]] - v[f[:, c]]
        u2 = v[f[:, b]] - v[f[:, c]]
        cross = np.linalg.norm(np.cross(u1, u2), axis=1)
        cot = np.einsum("ij,ij->i", u1, u2) / np.where(cross > 0.0, cross, 1.0)
        cot = np.where(cross > 0.0, cot, np.inf)
        if np.any(np.abs(cot) > _COT_LIMIT):
            bad = int(np.flatnonzero(np.abs(cot) > _COT_LIMIT)[0])
            raise DegenerateAngle(f"collapsed corner {c} of face {bad}")
        rows.append(f[:, a])
        cols.append(f[:, b])
        vals.append(0.5 * cot)

    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    weights = sparse.coo_matrix(
        (np.concatenate([vals, vals]),
         (np.concatenate([rows, cols]), np.concatenate([cols, rows]))),
        shape=(n, n),
    ).tocsr()
    stiffness = sparse.diags(np.asarray(weights.sum(axis=1)).ravel()) - weights
    return LaplacianPair(stiffness.tocsr(), mesh.vertex_areas)


def compute_basis(laplacian, k):
    """Smallest-k solutions of W phi = lambda M phi, mass-orthonormal.

    Shift-invert Lanczos with shift -1e-8 (the kernel of W makes plain
    smallest-magnitude iteration stagnate); a dense solve takes over when k
    approaches the vertex count, where Lanczos cannot run. Columns are
    sign-fixed: the entry of largest magnitude is positive.

    :raises KTooLarge: k exceeds the vertex count.
    :raises SolverNoConvergence: iteration cap exceeded.
    """
    n = laplacian.num_vertices
    if k < 1:
        raise ValidationError("k must be >= 1")
    if k > n:
        raise KTooLarge(f"requested {k} eigenpairs of a {n}-vertex operator")

    if k >= n - 1 or n < 32:
        vals, vecs = eigh(
            laplacian.stiffness.toarray(), np.diag(laplacian.mass)
        )
        vals, vecs = vals[:k], vecs[:, :k]
    else:
        try:
            vals, vecs = eigsh(
                laplacian.stiffness,
                k=k,
                M=laplacian.mass_matrix().tocsc(),
                sigma=-1e-8,
                v0=np.full(n, 1.0 / np.sqrt(n)),
            )
        except ArpackNoConvergence as exc:
            raise SolverNoConvergence(str(exc)) from exc
        except ArpackError as exc:
            raise SolverNoConvergence(str(exc)) from exc
        order = np.argsort(vals)
        vals, vecs = vals[order], vecs[:, order]

    # the kernel eigenvalue comes back as +/-1e-14; clamp it to exactly 0
    vals = np.where((vals < 0.0) & (vals > -1e-8), 0.0, vals)
    peak = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[peak, np.arange(vecs.shape[1])])
    signs[signs == 0.0] = 1.0
    return SpectralBasis(vals, vecs * signs, laplacian.mass)


def group_eigenvalues(basis, start_index, epsilon):
    """Largest contiguous run of near-equal eigenvalues from ``start_index``.

    Indices are 1-based eigenvalue labels (the constant mode is lambda_1,
    matching the usual subscript convention). Returns the inclusive label pair
    (start_index, p) where p is the largest label with
    lambda_p - lambda_start <= epsilon < lambda_{p+1} - lambda_start (the
    second inequality vacuous at the end of the basis).

    :param basis: a :class:`SpectralBasis` or a bare eigenvalue sequence.
    """
    values = getattr(basis, "eigenvalues", basis)
    values = np.asarray(values, dtype=np.float64)
    if not 1 <= start_index <= values.shape[0]:
        raise ValidationError(f"start index {start_index} outside basis of size {values.shape[0]}")
    first = start_index - 1
    p = first
    while p + 1 < values.shape[0] and values[p + 1] - values[first] <= epsilon:
        p += 1
    return (start_index, p + 1)


class EigenGrouping:
    """Partition of a basis prefix into near-degenerate eigenvalue groups."""

    def __init__(self, group_boundaries, epsilon):
        self.group_boundaries = list(group_boundaries)
        self.epsilon = float(epsilon)

    @classmethod
    def compute(cls, basis, epsilon, limit=None):
        """Group a basis prefix greedily from label 1 (1-based, inclusive).

        :param limit: stop once groups cover at least this many columns
            (default: the whole basis).
        """
        values = getattr(basis, "eigenvalues", basis)
        values = np.asarray(values, dtype=np.float64)
        stop = values.shape[0] if limit is None else min(limit, values.shape[0])
        bounds = []
        start = 1
        while start <= stop:
            rng = group_eigenvalues(values, start, epsilon)
            bounds.append(rng)
            start = rng[1] + 1
        return cls(bounds, epsilon)


def project_function(basis, f):
    """Spectral coefficients of a per-vertex function: Phi^T M f."""
    f = np.asarray(f, dtype=np.float64)
    if f.shape[0] != basis.num_vertices:
        raise ValidationError("function length does not match the basis")
    return basis.adjoint_apply(f)


def save_basis(basis, path):
    """Write a basis as a flat binary file.

    Layout: int64 header (n, k), then k eigenvalues, then n*k column-major
    eigenfunction entries, all 64-bit little-endian.
    """
    n, k = basis.eigenfunctions.shape
    with open(path, "wb") as out:
        np.array([n, k], dtype="<i8").tofile(out)
        basis.eigenvalues.astype("<f8").tofile(out)
        np.asfortranarray(basis.eigenfunctions).astype("<f8").T.tofile(out)


def load_basis(path, mass):
    """Read a basis written by :func:`save_basis`.

    :param mass: lumped vertex masses of the owning mesh (not stored in the
        file; recomputed cheaply from connectivity).
    """
    raw = np.fromfile(path, dtype="<i8", count=2)
    if raw.size < 2:
        raise ParseError(f"truncated basis file {path}")
    n, k = int(raw[0]), int(raw[1])
    body = np.fromfile(path, dtype="<f8", offset=16)
    if body.size != k + n * k:
        raise ParseError(f"basis file {path} has wrong payload size")
    eigenvalues = body[:k]
    functions = body[k:].reshape((n, k), order="F")
    if mass.shape[0] != n:
        raise ParseError(f"basis file {path} does not match the mesh ({n} vs {mass.shape[0]} vertices)")
    return SpectralBasis(eigenvalues, functions, mass)


def basis_for_mesh(mesh, k, cache_dir=None):
    """Compute (or load from cache) the first-k basis of a mesh.

    The cache directory is the explicit argument if given, else the
    ``MAPTREE_CACHE_DIR`` environment variable, else caching is off. Cache
    files are keyed by the mesh content hash; a cached basis with at least k
    functions is truncated, a smaller one is recomputed and overwritten.
    """
    if cache_dir is None:
        cache_dir = os.environ.get(_CACHE_ENV)
    path = None
    if cache_dir:
        os.makedirs(cache_dir, exist_ok=True)
        path = os.path.join(cache_dir, mesh.content_hash() + ".basis")
        if os.path.exists(path):
            cached = load_basis(path, mesh.vertex_areas)
            if cached.num_functions >= k:
                return cached.truncate(k)
    basis = compute_basis(build_laplacian(mesh), k)
    if path is not None:
        save_basis(basis, path)
    return basis
