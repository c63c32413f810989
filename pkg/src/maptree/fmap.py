"""Functional maps: spectral-domain representation of vertex correspondences,
conversions to and from pointwise maps, and the algebraic energies used to
rank and prune them.

Orientation convention, used everywhere in this package: a
:class:`FunctionalMap` with ``source_id`` S1 and ``target_id`` S2 is the
matrix C that carries spectral coefficients of functions on S2 to
coefficients on S1 — rows are indexed by S1's basis (k1), columns by S2's
basis (k2). The matching pointwise map sends S1 vertices to S2 vertices.
"""

import json

import numpy as np

from .errors import DimensionMismatch, NonSquare, ParseError, ValidationError


class PointwiseMap:
    """A vertex-to-vertex correspondence stored in index form.

    ``targets[i]`` is the codomain vertex index assigned to domain vertex
    (or domain sample) ``i``. ``domain_size == len(targets)`` always;
    ``codomain_size`` bounds the target indices.
    """

    def __init__(self, targets, codomain_size):
        self.targets = np.asarray(targets, dtype=np.int64)
        if self.targets.ndim != 1:
            raise ValidationError("targets must be a flat index list")
        self.codomain_size = int(codomain_size)
        if self.targets.size and (
            self.targets.min() < 0 or self.targets.max() >= self.codomain_size
        ):
            raise ValidationError("target index outside [0, codomain_size)")

    @property
    def domain_size(self):
        return self.targets.shape[0]

    def __eq__(self, other):
        return (
            isinstance(other, PointwiseMap)
            and self.codomain_size == other.codomain_size
            and np.array_equal(self.targets, other.targets)
        )

    def agreement(self, other):
        """Fraction of positions where two maps over the same domain agree."""
        if self.domain_size != other.domain_size:
            raise DimensionMismatch("maps have different domains")
        return float(np.mean(self.targets == other.targets))


class FunctionalMap:
    """Dense spectral map matrix with shape identifiers.

    ``matrix`` has one row per source-shape basis function and one column per
    target-shape basis function; it may be rectangular.
    """

    def __init__(self, matrix, source_id="S1", target_id="S2"):
        self.matrix = np.asarray(matrix, dtype=np.float64)
        if self.matrix.ndim != 2 or min(self.matrix.shape) < 1:
            raise ValidationError("functional map must be a 2-D matrix")
        if not np.all(np.isfinite(self.matrix)):
            raise ValidationError("functional map has non-finite entries")
        self.source_id = str(source_id)
        self.target_id = str(target_id)

    @property
    def rows(self):
        return self.matrix.shape[0]

    @property
    def cols(self):
        return self.matrix.shape[1]

    def leading(self, k):
        """The k x k leading principal submatrix (as a plain array)."""
        return self.matrix[:k, :k]

    def transposed(self):
        """The same matrix read in the opposite direction."""
        return FunctionalMap(self.matrix.T, self.target_id, self.source_id)


def nearest_rows(queries, candidates, block=1024):
    """Index of the Euclidean-nearest candidate row for every query row.

    Brute force (exact), processed in query blocks to bound memory; ties
    resolve to the lowest candidate index.
    """
    queries = np.asarray(queries, dtype=np.float64)
    candidates = np.asarray(candidates, dtype=np.float64)
    if queries.shape[1] != candidates.shape[1]:
        raise DimensionMismatch("query/candidate dimensions differ")
    cand_sq = np.einsum("ij,ij->i", candidates, candidates)
    out = np.empty(queries.shape[0], dtype=np.int64)
    for lo in range(0, queries.shape[0], block):
        q = queries[lo:lo + block]
        d2 = cand_sq[None, :] - 2.0 * (q @ candidates.T)
        out[lo:lo + block] = np.argmin(d2, axis=1)
    return out


def pointwise_to_functional(pmap, basis1, basis2, k1, k2,
                            source_id="S1", target_id="S2"):
    """Spectral encoding of a pointwise map: C = Phi1^T M1 (Phi2 gathered by the map).

    The result has k1 rows (basis of the pmap's domain shape) and k2 columns
    (basis of its codomain shape) and carries codomain functions to domain
    functions.
    """
    if pmap.domain_size != basis1.num_vertices:
        raise DimensionMismatch("map domain does not match basis1")
    if pmap.codomain_size != basis2.num_vertices:
        raise DimensionMismatch("map codomain does not match basis2")
    if k1 > basis1.num_functions or k2 > basis2.num_functions:
        raise DimensionMismatch("requested size exceeds a basis")
    gathered = basis2.eigenfunctions[pmap.targets, :k2]
    matrix = basis1.truncate(k1).project(gathered)
    return FunctionalMap(matrix, source_id, target_id)


def functional_to_pointwise(fmap, basis1, basis2,
                            source_vertices=None, candidate_vertices=None):
    """Recover a pointwise map from a functional map by spectral nearest neighbors.

    Each domain vertex is embedded by pushing its truncated spectral
    coordinates through the map (row i of Phi1 C) and matched to the nearest
    row of Phi2; this direction reproduces any vertex permutation exactly at
    full rank, independent of the vertex-area weights. ``source_vertices``
    restricts which domain rows are queried (one output entry per listed
    vertex, in order); ``candidate_vertices`` restricts the searched codomain
    rows, with returned indices still in full-codomain terms.
    """
    k1, k2 = fmap.rows, fmap.cols
    if k1 > basis1.num_functions or k2 > basis2.num_functions:
        raise DimensionMismatch("functional map exceeds a basis size")
    queries = basis1.eigenfunctions[:, :k1]
    if source_vertices is not None:
        queries = queries[np.asarray(source_vertices, dtype=np.int64)]
    queries = queries @ fmap.matrix
    phi2 = basis2.eigenfunctions[:, :k2]
    if candidate_vertices is not None:
        candidate_vertices = np.asarray(candidate_vertices, dtype=np.int64)
        phi2 = phi2[candidate_vertices]
    hits = nearest_rows(queries, phi2)
    if candidate_vertices is not None:
        hits = candidate_vertices[hits]
    return PointwiseMap(hits, basis2.num_vertices)


def energy_ortho(fmap):
    """Squared Frobenius deviation of C C^T from the identity (row-sized)."""
    c = fmap.matrix
    gram = c @ c.T
    gram[np.diag_indices_from(gram)] -= 1.0
    return float(np.sum(gram * gram))


def energy_lap_comm(fmap, eigs1, eigs2):
    """Squared Frobenius norm of the Laplacian commutator.

    With rows indexed by the source basis (spectrum ``eigs1``) and columns by
    the target basis (``eigs2``), the commutator entry (i, j) is
    (eigs1[i] - eigs2[j]) * C[i, j].
    """
    eigs1 = np.asarray(eigs1, dtype=np.float64)
    eigs2 = np.asarray(eigs2, dtype=np.float64)
    if eigs1.shape[0] != fmap.rows or eigs2.shape[0] != fmap.cols:
        raise DimensionMismatch("eigenvalue lists do not match the map shape")
    comm = (eigs1[:, None] - eigs2[None, :]) * fmap.matrix
    return float(np.sum(comm * comm))


def energy_zoomout(fmap):
    """Multi-scale orthogonality energy over leading principal submatrices.

    Sum over k of (1/k) * ||C^(k) C^(k)T - I_k||_F^2; defined for square maps.
    """
    if fmap.rows != fmap.cols:
        raise NonSquare("multi-scale energy needs a square map")
    total = 0.0
    for k in range(1, fmap.rows + 1):
        sub = fmap.leading(k)
        gram = sub @ sub.T
        gram[np.diag_indices_from(gram)] -= 1.0
        total += np.sum(gram * gram) / k
    return float(total)


def fmap_distance(a, b):
    """Frobenius distance between two same-shape functional maps."""
    if a.matrix.shape != b.matrix.shape:
        raise DimensionMismatch("functional maps differ in shape")
    return float(np.linalg.norm(a.matrix - b.matrix))


def embed_block(base, block):
    """Block-diagonal extension of a map by a signed-permutation block.

    Result = [[base, 0], [0, block]]; rectangular blocks are allowed and
    produce a rectangular map. Shape identifiers carry over from ``base``.
    """
    block = np.asarray(block, dtype=np.float64)
    if block.ndim != 2:
        raise ValidationError("block must be a 2-D matrix")
    r0, c0 = base.matrix.shape
    r1, c1 = block.shape
    out = np.zeros((r0 + r1, c0 + c1))
    out[:r0, :c0] = base.matrix
    out[r0:, c0:] = block
    return FunctionalMap(out, base.source_id, base.target_id)


def fmap_to_json(fmap):
    """Plain-dict form: {source_id, target_id, rows, cols, row_major_values}."""
    return {
        "source_id": fmap.source_id,
        "target_id": fmap.target_id,
        "rows": fmap.rows,
        "cols": fmap.cols,
        "row_major_values": [float(x) for x in fmap.matrix.reshape(-1)],
    }


def fmap_from_json(payload):
    rows, cols = int(payload["rows"]), int(payload["cols"])
    values = np.asarray(payload["row_major_values"], dtype=np.float64)
    if values.size != rows * cols:
        raise ParseError("row_major_values length does not match rows*cols")
    return FunctionalMap(values.reshape(rows, cols),
                         payload["source_id"], payload["target_id"])


def save_functional_map(fmap, path):
    with open(path, "w") as out:
        json.dump(fmap_to_json(fmap), out)


def load_functional_map(path):
    with open(path, "r") as f:
        try:
            payload = json.load(f)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid functional-map file {path}: {exc}") from exc
    return fmap_from_json(payload)


def save_pointwise_map(pmap, path):
    """Text format: header "n_source n_target", then one 0-based index per line."""
    with open(path, "w") as out:
        out.write(f"{pmap.domain_size} {pmap.codomain_size}\n")
        out.write("\n".join(str(int(t)) for t in pmap.targets))
        if pmap.domain_size:
            out.write("\n")


def load_pointwise_map(path):
    with open(path, "r") as f:
        lines = [ln.strip() for ln in f if ln.strip()]
    if not lines:
        raise ParseError(f"empty map file {path}")
    try:
        n_source, n_target = (int(x) for x in lines[0].split())
        targets = [int(ln) for ln in lines[1:]]
    except ValueError as exc:
        raise ParseError(f"malformed map file {path}: {exc}") from exc
    if len(targets) != n_source:
        raise ParseError(f"map file {path} declares {n_source} entries, has {len(targets)}")
    return PointwiseMap(targets, n_target)
