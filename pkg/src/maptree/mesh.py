"""Triangle-mesh substrate: loading, validation, geometry, graph geodesics,
farthest-point sampling, and connected-component decomposition.

Meshes are plain ``(vertices, faces)`` arrays wrapped in :class:`TriangleMesh`.
All geodesic quantities are graph (Dijkstra) distances over the edge graph,
divided by ``sqrt(total_area)`` so they are dimensionless and comparable
across shapes; see :func:`geodesic_distances`.
"""

import os

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

from .errors import (
    CountTooLarge,
    EmptySourceSet,
    ParseError,
    ValidationError,
)

_DEGENERATE_AREA_FACTOR = 1e-12


class TriangleMesh:
    """An immutable validated triangle mesh.

    :param vertex_positions: (n, 3) array-like of vertex coordinates.
    :param faces: (m, 3) array-like of vertex index triples, counter-clockwise.
    :param validate: run structural validation (index ranges, manifold edges,
        degenerate faces). Disable only for meshes that were already validated.

    Attributes
    ----------
    vertex_positions : (n, 3) float64 array
    faces            : (m, 3) int64 array
    total_area       : float, sum of face areas
    """

    def __init__(self, vertex_positions, faces, validate=True):
        self.vertex_positions = np.ascontiguousarray(vertex_positions, dtype=np.float64)
        self.faces = np.ascontiguousarray(faces, dtype=np.int64)
        if self.vertex_positions.ndim != 2 or self.vertex_positions.shape[1] != 3:
            raise ValidationError("vertex_positions must be an (n, 3) array")
        if self.faces.ndim != 2 or self.faces.shape[1] != 3:
            raise ValidationError("faces must be an (m, 3) array")
        if validate:
            self._validate()
        self.face_areas = _face_areas(self.vertex_positions, self.faces)
        if validate and len(self.faces) > 0:
            bad = np.flatnonzero(self.face_areas < _DEGENERATE_AREA_FACTOR * self.face_areas.mean())
            if bad.size:
                raise ValidationError(f"degenerate face {bad[0]} (area {self.face_areas[bad[0]]:g})")
        self.total_area = float(self.face_areas.sum())
        if validate and not self.total_area > 0.0:
            raise ValidationError("mesh has zero total area")
        self._vertex_areas = None
        self._edges = None
        self._adjacency = None

    @property
    def num_vertices(self):
        return self.vertex_positions.shape[0]

    @property
    def num_faces(self):
        return self.faces.shape[0]

    def _validate(self):
        n = self.num_vertices
        if self.faces.size:
            if self.faces.min() < 0 or self.faces.max() >= n:
                bad = np.flatnonzero((self.faces < 0).any(axis=1) | (self.faces >= n).any(axis=1))[0]
                raise ValidationError(f"face {bad} references out-of-range vertex index")
            same = (
                (self.faces[:, 0] == self.faces[:, 1])
                | (self.faces[:, 1] == self.faces[:, 2])
                | (self.faces[:, 0] == self.faces[:, 2])
            )
            if same.any():
                raise ValidationError(f"face {np.flatnonzero(same)[0]} repeats a vertex index")
            # edge-manifold: every undirected edge shared by at most 2 faces
            e = np.sort(self.faces[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
            _, counts = np.unique(e, axis=0, return_counts=True)
            if (counts > 2).any():
                over = np.unique(e, axis=0)[counts > 2][0]
                raise ValidationError(f"non-manifold edge ({over[0]}, {over[1]}) shared by >2 faces")

    @property
    def vertex_areas(self):
        """Lumped per-vertex areas: one third of the incident face areas."""
        if self._vertex_areas is None:
            va = np.zeros(self.num_vertices)
            np.add.at(va, self.faces.reshape(-1), np.repeat(self.face_areas / 3.0, 3))
            self._vertex_areas = va
        return self._vertex_areas

    @property
    def edges(self):
        """Unique undirected edges as a sorted (e, 2) index array."""
        if self._edges is None:
            e = np.sort(self.faces[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
            self._edges = np.unique(e, axis=0)
        return self._edges

    def edge_graph(self):
        """Sparse symmetric (n, n) CSR matrix of Euclidean edge lengths."""
        if self._adjacency is None:
            e = self.edges
            lengths = np.linalg.norm(
                self.vertex_positions[e[:, 0]] - self.vertex_positions[e[:, 1]], axis=1
            )
            n = self.num_vertices
            g = sparse.coo_matrix(
                (np.concatenate([lengths, lengths]),
                 (np.concatenate([e[:, 0], e[:, 1]]), np.concatenate([e[:, 1], e[:, 0]]))),
                shape=(n, n),
            )
            self._adjacency = g.tocsr()
        return self._adjacency

    def vertex_neighbors(self, v):
        """Indices of the 1-ring neighbors of vertex ``v``."""
        g = self.edge_graph()
        return g.indices[g.indptr[v]:g.indptr[v + 1]]

    def vertex_normals(self):
        """Area-weighted per-vertex unit normals (CCW face orientation)."""
        v = self.vertex_positions
        f = self.faces
        fn = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
        vn = np.zeros_like(v)
        np.add.at(vn, f.reshape(-1), np.repeat(fn, 3, axis=0))
        norms = np.linalg.norm(vn, axis=1)
        norms[norms == 0.0] = 1.0
        return vn / norms[:, None]

    def scaled(self, factor):
        """A copy with vertex positions multiplied by ``factor``."""
        return TriangleMesh(self.vertex_positions * factor, self.faces, validate=False)

    def content_hash(self):
        """SHA-256 hex digest of the raw vertex and face buffers."""
        import hashlib

        h = hashlib.sha256()
        h.update(self.vertex_positions.tobytes())
        h.update(self.faces.tobytes())
        return h.hexdigest()


def _face_areas(vertices, faces):
    if len(faces) == 0:
        return np.zeros(0)
    cross = np.cross(
        vertices[faces[:, 1]] - vertices[faces[:, 0]],
        vertices[faces[:, 2]] - vertices[faces[:, 0]],
    )
    return 0.5 * np.linalg.norm(cross, axis=1)


class GeodesicCache:
    """Normalized graph-geodesic distances from a set of source vertices.

    ``distances[i, j]`` is the shortest edge-path length from
    ``sample_indices[i]`` to vertex ``j``, divided by ``sqrt(total_area)``
    of the mesh. Unreachable vertices hold ``+inf``.
    """

    def __init__(self, sample_indices, distances):
        self.sample_indices = np.asarray(sample_indices, dtype=np.int64)
        self.distances = np.asarray(distances, dtype=np.float64)
        self._row_of = {int(v): i for i, v in enumerate(self.sample_indices)}

    def row_of(self, vertex):
        """Row index of ``vertex`` in the distance matrix, or None."""
        return self._row_of.get(int(vertex))

    def has_source(self, vertex):
        return int(vertex) in self._row_of

    def between(self, u, v):
        """Normalized distance between source vertex ``u`` and any vertex ``v``."""
        from .errors import MissingDistances

        row = self._row_of.get(int(u))
        if row is None:
            raise MissingDistances(f"vertex {u} is not a geodesic source")
        return self.distances[row, int(v)]

    def sample_block(self):
        """The symmetric sample x sample sub-matrix."""
        return self.distances[:, self.sample_indices]


class ComponentSplit:
    """Edge-connected components of a mesh.

    ``component_meshes[i]`` is a standalone mesh; ``vertex_maps[i][j]`` is the
    original-mesh vertex index of its vertex ``j``.
    """

    def __init__(self, component_meshes, vertex_maps):
        self.component_meshes = list(component_meshes)
        self.vertex_maps = [np.asarray(m, dtype=np.int64) for m in vertex_maps]

    def __len__(self):
        return len(self.component_meshes)


def load_mesh(path, format=None):
    """Load and validate a triangle mesh from an ASCII OFF, OBJ, or PLY file.

    :param path: file path.
    :param format: "OFF", "OBJ", or "PLY"; inferred from the extension when None.
    :return: validated :class:`TriangleMesh` with total_area computed.
    :raises ParseError: the file does not parse in the declared format.
    :raises ValidationError: structural invariant violated (reported element).
    """
    if format is None:
        format = os.path.splitext(path)[1].lstrip(".").upper()
    format = format.upper()
    with open(path, "r") as f:
        text = f.read()
    if format == "OFF":
        verts, faces = _parse_off(text)
    elif format == "OBJ":
        verts, faces = _parse_obj(text)
    elif format == "PLY":
        verts, faces = _parse_ply(text)
    else:
        raise ParseError(f"unknown mesh format '{format}'")
    return TriangleMesh(verts, faces)


def _content_lines(text):
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            yield line


def _parse_off(text):
    lines = _content_lines(text)
    try:
        header = next(lines)
    except StopIteration:
        raise ParseError("empty OFF file")
    if header.upper() != "OFF":
        raise ParseError("missing OFF header")
    try:
        counts = next(lines).split()
        nv, nf = int(counts[0]), int(counts[1])
        verts = np.array([next(lines).split()[:3] for _ in range(nv)], dtype=np.float64)
        faces = []
        for _ in range(nf):
            parts = next(lines).split()
            if int(parts[0]) != 3:
                raise ParseError("only triangular faces are supported")
            faces.append([int(parts[1]), int(parts[2]), int(parts[3])])
    except (StopIteration, ValueError, IndexError) as exc:
        raise ParseError(f"malformed OFF file: {exc}") from exc
    return verts, np.array(faces, dtype=np.int64).reshape(-1, 3)


def _parse_obj(text):
    verts, faces = [], []
    try:
        for line in _content_lines(text):
            parts = line.split()
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                if len(parts) != 4:
                    raise ParseError("only triangular faces are supported")
                # f entries may be "i", "i/j", or "i/j/k"; vertex index comes first
                faces.append([int(p.split("/")[0]) - 1 for p in parts[1:4]])
    except (ValueError, IndexError) as exc:
        raise ParseError(f"malformed OBJ file: {exc}") from exc
    return (np.array(verts, dtype=np.float64).reshape(-1, 3),
            np.array(faces, dtype=np.int64).reshape(-1, 3))


def _parse_ply(text):
    lines = text.splitlines()
    if not lines or lines[0].strip() != "ply":
        raise ParseError("missing ply header")
    nv = nf = None
    vertex_props = []
    in_vertex_element = False
    body_start = None
    for i, raw in enumerate(lines[1:], start=1):
        line = raw.strip()
        if line.startswith("format"):
            if "ascii" not in line:
                raise ParseError("only ASCII PLY is supported")
        elif line.startswith("element vertex"):
            nv = int(line.split()[2])
            in_vertex_element = True
        elif line.startswith("element face"):
            nf = int(line.split()[2])
            in_vertex_element = False
        elif line.startswith("element"):
            in_vertex_element = False
        elif line.startswith("property") and in_vertex_element:
            vertex_props.append(line.split()[-1])
        elif line == "end_header":
            body_start = i + 1
            break
    if body_start is None or nv is None or nf is None:
        raise ParseError("incomplete PLY header")
    try:
        ix, iy, iz = (vertex_props.index(c) for c in ("x", "y", "z"))
    except ValueError:
        raise ParseError("PLY vertex element lacks x/y/z properties")
    body = [ln.split() for ln in lines[body_start:] if ln.strip()]
    if len(body) < nv + nf:
        raise ParseError("PLY body shorter than declared element counts")
    try:
        verts = np.array(
            [[row[ix], row[iy], row[iz]] for row in body[:nv]], dtype=np.float64
        )
        faces = []
        for row in body[nv:nv + nf]:
            if int(row[0]) != 3:
                raise ParseError("only triangular faces are supported")
            faces.append([int(row[1]), int(row[2]), int(row[3])])
    except (ValueError, IndexError) as exc:
        raise ParseError(f"malformed PLY body: {exc}") from exc
    return verts, np.array(faces, dtype=np.int64).reshape(-1, 3)


def save_ply(mesh, path, vertex_colors=None):
    """Write a mesh as ASCII PLY, optionally with per-vertex RGB colors.

    :param vertex_colors: optional (n, 3) uint8 array (used for map
        visualization by color transfer).
    """
    v = mesh.vertex_positions
    f = mesh.faces
    with open(path, "w") as out:
        out.write("ply\nformat ascii 1.0\n")
        out.write(f"element vertex {len(v)}\n")
        out.write("property float x\nproperty float y\nproperty float z\n")
        if vertex_colors is not None:
            vertex_colors = np.asarray(vertex_colors, dtype=np.uint8)
            out.write("property uchar red\nproperty uchar green\nproperty uchar blue\n")
        out.write(f"element face {len(f)}\n")
        out.write("property list uchar int vertex_indices\nend_header\n")
        if vertex_colors is None:
            for p in v:
                out.write(f"{p[0]:.9g} {p[1]:.9g} {p[2]:.9g}\n")
        else:
            for p, c in zip(v, vertex_colors):
                out.write(f"{p[0]:.9g} {p[1]:.9g} {p[2]:.9g} {c[0]} {c[1]} {c[2]}\n")
        for tri in f:
            out.write(f"3 {tri[0]} {tri[1]} {tri[2]}\n")


def normalize_to_unit_area(mesh):
    """Uniformly rescale a mesh so its total surface area is 1.

    Connectivity is unchanged; idempotent on already-unit-area meshes.
    """
    if not mesh.total_area > 0.0:
        raise ValidationError("cannot normalize a zero-area mesh")
    return mesh.scaled(1.0 / np.sqrt(mesh.total_area))


def geodesic_distances(mesh, sources):
    """Dijkstra shortest paths on the edge graph from the given sources.

    Edge weights are Euclidean lengths; every distance is divided by
    ``sqrt(total_area)`` so the result is scale-invariant. Unreachable
    vertices get ``+inf``.

    :param sources: iterable of source vertex indices.
    :return: :class:`GeodesicCache` with one row per source.
    """
    sources = np.asarray(list(sources), dtype=np.int64)
    if sources.size == 0:
        raise EmptySourceSet("at least one source vertex is required")
    graph = mesh.edge_graph()
    dist = csgraph.dijkstra(graph, directed=False, indices=sources)
    dist /= np.sqrt(mesh.total_area)
    return GeodesicCache(sources, dist)


def default_seed_vertex(mesh):
    """Deterministic FPS seed: the vertex of maximum lumped area
    (ties broken by lowest index)."""
    return int(np.argmax(mesh.vertex_areas))


def farthest_point_sample(mesh, count, seed_vertex=None):
    """Greedy geodesic farthest-point sampling.

    Starting from ``seed_vertex`` (default: max-lumped-area vertex), each step
    adds the vertex farthest from the current sample set under the normalized
    graph-geodesic metric, ties broken by lowest vertex index.

    :return: int64 array of ``count`` distinct vertex indices, in pick order.
    :raises CountTooLarge: ``count`` exceeds the vertex count.
    """
    n = mesh.num_vertices
    if count > n:
        raise CountTooLarge(f"requested {count} samples from {n} vertices")
    if seed_vertex is None:
        seed_vertex = default_seed_vertex(mesh)
    graph = mesh.edge_graph()
    samples = np.empty(count, dtype=np.int64)
    samples[0] = seed_vertex
    if count == 1:
        return samples
    min_dist = csgraph.dijkstra(graph, directed=False, indices=seed_vertex)
    for i in range(1, count):
        # np.argmax returns the first maximizer -> lowest-index tie-break
        nxt = int(np.argmax(min_dist))
        samples[i] = nxt
        np.minimum(min_dist, csgraph.dijkstra(graph, directed=False, indices=nxt),
                   out=min_dist)
    return samples


def connected_components(mesh):
    """Split a mesh into its edge-connected components.

    :return: :class:`ComponentSplit`; vertex maps are injective and jointly
        cover all vertices. Isolated vertices form single-vertex entries only
        if present in the input (validated meshes have none).
    """
    n = mesh.num_vertices
    graph = mesh.edge_graph()
    n_comp, labels = csgraph.connected_components(graph, directed=False)
    meshes, vmaps = [], []
    for c in range(n_comp):
        vmap = np.flatnonzero(labels == c)
        local = -np.ones(n, dtype=np.int64)
        local[vmap] = np.arange(vmap.size)
        face_mask = labels[mesh.faces[:, 0]] == c
        sub_faces = local[mesh.faces[face_mask]]
        meshes.append(TriangleMesh(mesh.vertex_positions[vmap], sub_faces, validate=False))
        vmaps.append(vmap)
    return ComponentSplit(meshes, vmaps)
