"""Map-space landscape tooling: geodesic distances between maps, classical
MDS, seeded k-means, and random-map generation.

These are the instruments for looking at a population of maps at once —
embedding an ensemble into 2D and clustering it shows the basins the refiner
falls into.
"""

from typing import NamedTuple

import numpy as np

from .errors import (
    DimensionMismatch,
    KTooLarge,
    MissingDistances,
    NonSymmetric,
    ValidationError,
)
from .fmap import PointwiseMap


class MapEnsemble:
    """A population of pointwise maps over one common domain."""

    def __init__(self, maps, labels=None):
        self.maps = list(maps)
        if not self.maps:
            raise ValidationError("an ensemble needs at least one map")
        d = self.maps[0].domain_size
        c = self.maps[0].codomain_size
        for m in self.maps:
            if m.domain_size != d or m.codomain_size != c:
                raise ValidationError("ensemble maps differ in domain/codomain")
        self.labels = list(labels) if labels is not None else None
        if self.labels is not None and len(self.labels) != len(self.maps):
            raise ValidationError("one label per map required")

    def __len__(self):
        return len(self.maps)


class Landscape2D:
    """2D embedding of an ensemble: one coordinate pair per map, the
    embedding stress, and (after clustering) per-map cluster ids."""

    def __init__(self, coordinates, stress, cluster_ids=None):
        self.coordinates = np.asarray(coordinates, dtype=np.float64)
        self.stress = float(stress)
        self.cluster_ids = None if cluster_ids is None else np.asarray(cluster_ids, dtype=np.int64)


class MapDistance(NamedTuple):
    mean: float
    max: float


def map_pair_distance(a, b, geo):
    """How far apart two maps send the same vertices.

    Returns the mean and max normalized geodesic distance between the image
    pairs (a(v), b(v)) over the shared domain; the max is the delta of
    delta-closeness.
    """
    if a.domain_size != b.domain_size:
        raise DimensionMismatch(
            f"maps have different domains ({a.domain_size} vs {b.domain_size})")
    rows = np.array([-1 if geo.row_of(v) is None else geo.row_of(v) for v in a.targets],
                    dtype=np.int64)
    if (rows < 0).any():
        missing = int(a.targets[int(np.flatnonzero(rows < 0)[0])])
        raise MissingDistances(f"image vertex {missing} is not a geodesic source")
    d = geo.distances[rows, b.targets]
    return MapDistance(float(np.mean(d)), float(np.max(d)))


def distance_matrix(ensemble, geo):
    """Symmetric matrix of mean map-pair distances over an ensemble.

    Same value as :func:`map_pair_distance`'s mean for every pair, but the
    image rows are resolved once per map and each matrix row is a single
    gather, which is what makes thousand-map ensembles practical.
    """
    m = len(ensemble)
    targets = np.stack([mp.targets for mp in ensemble.maps])
    lookup = np.full(int(geo.distances.shape[1]), -1, dtype=np.int64)
    lookup[geo.sample_indices] = np.arange(geo.sample_indices.shape[0])
    rows = lookup[targets]
    if (rows < 0).any():
        bad = int(targets.ravel()[int(np.flatnonzero(rows.ravel() < 0)[0])])
        raise MissingDistances(f"image vertex {bad} is not a geodesic source")
    out = np.zeros((m, m))
    for i in range(m):
        out[i] = geo.distances[rows[i][None, :], targets].mean(axis=1)
    return 0.5 * (out + out.T)


def mds_embed(dist):
    """Classical (Torgerson) MDS to 2D.

    Double-centers the squared distances and reads coordinates off the top
    two spectral components. The reported stress is the relative residual
    between input distances and embedded distances.
    """
    d = np.asarray(dist, dtype=np.float64)
    if d.ndim != 2 or d.shape[0] != d.shape[1]:
        raise NonSymmetric("distance matrix must be square")
    if not np.allclose(d, d.T, atol=1e-9):
        raise NonSymmetric("distance matrix must be symmetric")
    n = d.shape[0]
    j = np.eye(n) - np.full((n, n), 1.0 / n)
    gram = -0.5 * j @ (d * d) @ j
    vals, vecs = np.linalg.eigh(gram)
    order = np.argsort(vals)[::-1][:2]
    top = np.clip(vals[order], 0.0, None)
    coords = np.zeros((n, 2))
    coords[:, :len(order)] = vecs[:, order] * np.sqrt(top)
    emb = np.linalg.norm(coords[:, None, :] - coords[None, :, :], axis=2)
    denom = np.sum(d * d)
    stress = 0.0 if denom == 0.0 else float(np.sqrt(np.sum((d - emb) ** 2) / denom))
    return Landscape2D(coords, stress)


def kmeans(points, k, seed):
    """Seeded Lloyd clustering; deterministic for fixed inputs.

    Centers start at ``k`` distinct seeded-random points; assignment ties go
    to the lowest cluster id; an emptied cluster keeps its previous center.
    Stops at convergence or 100 iterations.
    """
    pts = np.asarray(points, dtype=np.float64)
    if k > pts.shape[0]:
        raise KTooLarge(f"k={k} exceeds {pts.shape[0]} points")
    rng = np.random.default_rng(seed)
    centers = pts[rng.choice(pts.shape[0], size=k, replace=False)].copy()
    ids = np.zeros(pts.shape[0], dtype=np.int64)
    for _ in range(100):
        d2 = np.sum((pts[:, None, :] - centers[None, :, :]) ** 2, axis=2)
        new_ids = np.argmin(d2, axis=1)
        for c in range(k):
            sel = new_ids == c
            if sel.any():
                centers[c] = pts[sel].mean(axis=0)
        if np.array_equal(new_ids, ids):
            ids = new_ids
            break
        ids = new_ids
    return ids


def random_maps(domain_size, codomain_size, count, seed, labels=None):
    """Seeded ensemble of uniformly random maps (the chance-level baseline)."""
    if count < 1:
        raise ValidationError("count must be >= 1")
    rng = np.random.default_rng(seed)
    targets = rng.integers(0, codomain_size, size=(count, domain_size))
    maps = [PointwiseMap(t, codomain_size) for t in targets]
    return MapEnsemble(maps, labels)
