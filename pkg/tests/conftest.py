import numpy as np
import pytest

from _meshes import center_split_grid, diagonal_grid, tetrahedron

import maptree as mt


@pytest.fixture(scope="session")
def small_grid():
    """10x10-cell unit square, 121 vertices — the workhorse fixture."""
    return diagonal_grid(10, 10)


@pytest.fixture(scope="session")
def small_grid_basis(small_grid):
    return mt.compute_basis(mt.build_laplacian(small_grid), 15)


@pytest.fixture(scope="session")
def rect_grid():
    """Mirror-symmetric rectangle (Klein four-group of exact automorphisms)."""
    return center_split_grid(8, 5, width=np.sqrt(2.3))


@pytest.fixture(scope="session")
def rect_basis(rect_grid):
    return mt.compute_basis(mt.build_laplacian(rect_grid), min(40, rect_grid.num_vertices))


@pytest.fixture(scope="session")
def tet():
    return tetrahedron()


def min_plus_closure(dist):
    """Independent all-pairs shortest paths (Floyd-Warshall, dense numpy)."""
    d = dist.copy()
    n = d.shape[0]
    for k in range(n):
        np.minimum(d, d[:, k:k + 1] + d[k:k + 1, :], out=d)
    return d


def dense_edge_lengths(mesh):
    """Dense symmetric edge-length matrix with inf for non-edges."""
    n = mesh.num_vertices
    d = np.full((n, n), np.inf)
    np.fill_diagonal(d, 0.0)
    for a, b in mesh.edges:
        w = float(np.linalg.norm(mesh.vertex_positions[a] - mesh.vertex_positions[b]))
        d[a, b] = d[b, a] = w
    return d
