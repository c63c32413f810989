"""Map quality measurements: geodesic accuracy and distortion, smoothness,
per-face conformal distortion, orientation behavior, and the algebraic
energies, bundled into a serializable report.

All geodesic quantities ride on :class:`maptree.mesh.GeodesicCache`, i.e.
graph distances divided by sqrt(total_area); reports state this normalization
explicitly so numbers are comparable across shapes.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import AllFacesDegenerate, DimensionMismatch, MissingDistances


def _rows_for(geo, vertices, what):
    rows = np.array([-1 if geo.row_of(v) is None else geo.row_of(v) for v in vertices],
                    dtype=np.int64)
    if (rows < 0).any():
        missing = int(vertices[int(np.flatnonzero(rows < 0)[0])])
        raise MissingDistances(f"{what}: vertex {missing} is not a geodesic source")
    return rows


def accuracy(pmap, gt, geo):
    """Mean normalized geodesic distance between a map and its ground truth.

    For every source vertex the distance is measured on the target shape
    between the two images; ``geo`` must have the ground-truth images among
    its sources.
    """
    if pmap.domain_size != gt.domain_size:
        raise DimensionMismatch("map and ground truth differ in domain")
    rows = _rows_for(geo, gt.targets, "accuracy")
    return float(np.mean(geo.distances[rows, pmap.targets]))


def geodesic_distortion(pmap, geo1, geo2, samples):
    """Mean squared change of pairwise distances under the map.

    Averages (G1(i,j) - G2(T(i),T(j)))^2 over ordered sample pairs i != j;
    0 exactly for a self-identity and for any map preserving the edge graph.
    """
    samples = np.asarray(samples, dtype=np.int64)
    rows1 = _rows_for(geo1, samples, "geodesic_distortion (source)")
    images = pmap.targets[samples]
    rows2 = _rows_for(geo2, images, "geodesic_distortion (target)")
    d1 = geo1.distances[np.ix_(rows1, samples)]
    d2 = geo2.distances[np.ix_(rows2, images)]
    diff = d1 - d2
    n = samples.shape[0]
    off = ~np.eye(n, dtype=bool)
    return float(np.mean(diff[off] ** 2))


def dirichlet_energy(pmap, laplacian1, positions2):
    """Smoothness of the mapped coordinates: sum over x,y,z of P^T W1 P.

    P gathers target positions by the map, ordered by source vertices. Zero
    for a constant map; non-negative up to round-off (W1 is PSD).
    """
    p = np.asarray(positions2, dtype=np.float64)[pmap.targets]
    return float(np.sum(p * (laplacian1.stiffness @ p)))


def _per_face_maps(pmap, mesh1, mesh2):
    """2x2 linear maps taking each source triangle to its image triangle.

    Both triangles are flattened in their own planes; the image frame's
    orientation is aligned with the averaged target vertex normals, so a
    negative determinant means the map reverses the target surface
    orientation. Faces whose image collapses are returned as None.
    """
    v1 = mesh1.vertex_positions
    v2 = mesh2.vertex_positions
    normals2 = mesh2.vertex_normals()
    maps = []
    for tri in mesh1.faces:
        p0, p1, p2 = v1[tri]
        u, w = p1 - p0, p2 - p0
        n_src = np.cross(u, w)
        area2_src = np.linalg.norm(n_src)
        if area2_src < 1e-15:
            maps.append(None)
            continue
        e1 = u / np.linalg.norm(u)
        e2 = np.cross(n_src / area2_src, e1)
        q_src = np.array([[u @ e1, w @ e1], [u @ e2, w @ e2]])

        img = pmap.targets[tri]
        q0, q1, q2 = v2[img]
        a, b = q1 - q0, q2 - q0
        n_img = np.cross(a, b)
        area2_img = np.linalg.norm(n_img)
        if area2_img < 1e-12 * area2_src:
            maps.append(None)
            continue
        n_img = n_img / area2_img
        n_ref = normals2[img].sum(axis=0)
        if n_ref @ n_img < 0.0:
            n_img = -n_img
        f1 = a / np.linalg.norm(a)
        f2 = np.cross(n_img, f1)
        q_img = np.array([[a @ f1, b @ f1], [a @ f2, b @ f2]])
        maps.append(q_img @ np.linalg.inv(q_src))
    return maps


def conformal_distortion(pmap, mesh1, mesh2):
    """Mean per-face angle distortion: sigma1/sigma2 + sigma2/sigma1 - 2.

    Faces with collapsed images are skipped (a collapse is map failure, not
    distortion ~0); their count is available via
    :func:`conformal_distortion_detail`.
    """
    value, _, _ = conformal_distortion_detail(pmap, mesh1, mesh2)
    return value


def conformal_distortion_detail(pmap, mesh1, mesh2):
    """(mean distortion, skipped face count, orientation-flip fraction)."""
    maps = _per_face_maps(pmap, mesh1, mesh2)
    total = 0.0
    flips = 0
    kept = 0
    for a in maps:
        if a is None:
            continue
        s = np.linalg.svd(a, compute_uv=False)
        if s[1] < 1e-300:
            continue
        total += s[0] / s[1] + s[1] / s[0] - 2.0
        if np.linalg.det(a) < 0.0:
            flips += 1
        kept += 1
    if kept == 0:
        raise AllFacesDegenerate("every image triangle is degenerate")
    skipped = len(maps) - kept
    return total / kept, skipped, flips / kept


def orientation_flip_fraction(pmap, mesh1, mesh2):
    """Fraction of faces whose image reverses the target surface orientation
    (negative determinant of the per-face 2x2 map)."""
    _, _, fraction = conformal_distortion_detail(pmap, mesh1, mesh2)
    return fraction


@dataclass
class QualityReport:
    """One map's measurement row. ``accuracy`` stays None without ground
    truth; everything else is always filled."""

    geodesic_distortion: float
    dirichlet_energy: float
    conformal_distortion: float
    energy_ortho: float
    energy_lapcomm: float
    orientation_flip_fraction: float
    accuracy: Optional[float] = None
    metadata: dict = field(default_factory=dict)

    def to_json(self):
        out = {
            "accuracy": self.accuracy,
            "geodesic_distortion": self.geodesic_distortion,
            "dirichlet_energy": self.dirichlet_energy,
            "conformal_distortion": self.conformal_distortion,
            "energy_ortho": self.energy_ortho,
            "energy_lapcomm": self.energy_lapcomm,
            "orientation_flip_fraction": self.orientation_flip_fraction,
        }
        out.update({"metadata": self.metadata})
        return out


def quality_report(pmap, fmap, mesh1, mesh2, laplacian1, geo1, geo2, samples,
                   eigs1, eigs2, gt=None, geo_gt=None):
    """Assemble the full report for one dense map.

    :param fmap: the map's spectral encoding (for the algebraic energies).
    :param geo1/geo2: geodesic caches covering ``samples`` and their images.
    :param gt, geo_gt: optional ground truth and a cache covering its images.
    """
    from .fmap import energy_lap_comm, energy_ortho

    distortion, skipped, flip_fraction = conformal_distortion_detail(pmap, mesh1, mesh2)
    acc = None
    if gt is not None:
        acc = accuracy(pmap, gt, geo_gt if geo_gt is not None else geo2)
    return QualityReport(
        accuracy=acc,
        geodesic_distortion=geodesic_distortion(pmap, geo1, geo2, samples),
        dirichlet_energy=dirichlet_energy(pmap, laplacian1, mesh2.vertex_positions),
        conformal_distortion=distortion,
        energy_ortho=energy_ortho(fmap),
        energy_lapcomm=energy_lap_comm(fmap, eigs1[:fmap.rows], eigs2[:fmap.cols]),
        orientation_flip_fraction=flip_fraction,
        metadata={
            "distortion_samples": int(np.asarray(samples).shape[0]),
            "degenerate_faces_skipped": int(skipped),
            "geodesic_normalization": "edge-graph Dijkstra / sqrt(total_area)",
            "orientation_metric": "det sign of the per-face 2x2 map (surrogate)",
        },
    )
