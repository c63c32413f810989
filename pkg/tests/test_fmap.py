import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _meshes import bumpy_grid, diagonal_grid, permuted_copy

from maptree import (
    DimensionMismatch,
    FunctionalMap,
    NonSquare,
    ParseError,
    PointwiseMap,
    ValidationError,
    build_laplacian,
    compute_basis,
    embed_block,
    energy_lap_comm,
    energy_ortho,
    energy_zoomout,
    fmap_distance,
    functional_to_pointwise,
    load_functional_map,
    load_pointwise_map,
    nearest_rows,
    pointwise_to_functional,
    save_functional_map,
    save_pointwise_map,
)


class TestPointwiseMap:
    def test_basic(self):
        pm = PointwiseMap(np.array([2, 0, 1]), 3)
        assert pm.domain_size == 3
        assert pm.codomain_size == 3

    def test_rejects_out_of_range(self):
        with pytest.raises(ValidationError):
            PointwiseMap(np.array([0, 3]), 3)
        with pytest.raises(ValidationError):
            PointwiseMap(np.array([-1]), 3)

    def test_agreement(self):
        a = PointwiseMap(np.array([0, 1, 2, 3]), 4)
        b = PointwiseMap(np.array([0, 1, 3, 2]), 4)
        assert a.agreement(b) == 0.5
        assert b.agreement(a) == 0.5

    def test_agreement_requires_same_shape(self):
        a = PointwiseMap(np.array([0, 1]), 4)
        b = PointwiseMap(np.array([0, 1, 2]), 4)
        with pytest.raises(DimensionMismatch):
            a.agreement(b)

    def test_equality(self):
        a = PointwiseMap(np.array([1, 0]), 2)
        assert a == PointwiseMap(np.array([1, 0]), 2)
        assert a != PointwiseMap(np.array([0, 1]), 2)


class TestFunctionalMap:
    def test_shape_and_ids(self):
        fm = FunctionalMap(np.ones((3, 2)), "a", "b")
        assert (fm.rows, fm.cols) == (3, 2)
        assert fm.source_id == "a" and fm.target_id == "b"

    def test_rejects_nonfinite(self):
        with pytest.raises(ValidationError):
            FunctionalMap(np.array([[np.nan]]), "a", "b")

    def test_leading_and_transposed(self):
        m = np.arange(12.0).reshape(4, 3)
        fm = FunctionalMap(m, "a", "b")
        assert np.allclose(fm.leading(2), m[:2, :2])
        t = fm.transposed()
        assert np.allclose(t.matrix, m.T)
        assert (t.source_id, t.target_id) == ("b", "a")


class TestNearestRows:
    @settings(max_examples=25, deadline=None)
    @given(st.integers(1, 12), st.integers(1, 12), st.integers(1, 5),
           st.integers(0, 2 ** 31 - 1))
    def test_matches_brute_force(self, nq, nc, dim, seed):
        rng = np.random.default_rng(seed)
        q = rng.normal(size=(nq, dim))
        c = rng.normal(size=(nc, dim))
        got = nearest_rows(q, c)
        dists = ((q[:, None, :] - c[None, :, :]) ** 2).sum(axis=2)
        assert (got == dists.argmin(axis=1)).all()

    def test_ties_break_to_lowest_index(self):
        q = np.zeros((1, 2))
        c = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]])
        assert nearest_rows(q, c)[0] == 0

    def test_blocked_evaluation_consistent(self):
        rng = np.random.default_rng(0)
        q = rng.normal(size=(500, 3))
        c = rng.normal(size=(40, 3))
        assert (nearest_rows(q, c, block=64) == nearest_rows(q, c)).all()


class TestConversion:
    def test_identity_map_gives_identity_matrix(self, small_grid, small_grid_basis):
        n = small_grid.num_vertices
        ident = PointwiseMap(np.arange(n), n)
        c = pointwise_to_functional(ident, small_grid_basis, small_grid_basis, 6, 6)
        assert np.abs(c.matrix - np.eye(6)).max() < 1e-12

    def test_adjoint_formula_oracle(self, small_grid, small_grid_basis):
        rng = np.random.default_rng(3)
        n = small_grid.num_vertices
        pm = PointwiseMap(rng.integers(0, n, n), n)
        c = pointwise_to_functional(pm, small_grid_basis, small_grid_basis, 5, 7)
        phi = small_grid_basis.eigenfunctions
        m = small_grid_basis.mass
        oracle = phi[:, :5].T @ (m[:, None] * phi[pm.targets, :7])
        assert np.allclose(c.matrix, oracle)

    def test_full_basis_round_trip_exact(self):
        mesh = bumpy_grid(5, 4)  # 50 vertices, asymmetric
        n = mesh.num_vertices
        basis = compute_basis(build_laplacian(mesh), n)
        rng = np.random.default_rng(9)
        perm = rng.permutation(n)
        pm = PointwiseMap(perm, n)
        c = pointwise_to_functional(pm, basis, basis, n, n)
        back = functional_to_pointwise(c, basis, basis)
        assert (back.targets == perm).all()

    def test_restricted_nn(self, small_grid, small_grid_basis):
        n = small_grid.num_vertices
        ident = PointwiseMap(np.arange(n), n)
        c = pointwise_to_functional(ident, small_grid_basis, small_grid_basis, 8, 8)
        sources = np.array([0, 5, 9])
        out = functional_to_pointwise(c, small_grid_basis, small_grid_basis,
                                      source_vertices=sources,
                                      candidate_vertices=np.arange(n))
        assert (out.targets == sources).all()

    def test_ids_propagate(self, small_grid_basis):
        pm = PointwiseMap(np.arange(121), 121)
        c = pointwise_to_functional(pm, small_grid_basis, small_grid_basis, 3, 3,
                                    source_id="left", target_id="right")
        assert (c.source_id, c.target_id) == ("left", "right")


class TestEnergies:
    def test_ortho_of_orthonormal_is_zero(self):
        rng = np.random.default_rng(1)
        q, _ = np.linalg.qr(rng.normal(size=(5, 5)))
        assert energy_ortho(FunctionalMap(q, "a", "b")) < 1e-24

    def test_ortho_known_value(self):
        fm = FunctionalMap(np.array([[1.0, 0.0], [0.0, 0.0]]), "a", "b")
        assert np.isclose(energy_ortho(fm), 1.0)

    def test_lap_comm_published_example(self):
        c = FunctionalMap(np.eye(2), "a", "b")
        assert np.isclose(energy_lap_comm(c, [0.0, 1.0], [0.0, 2.0]), 1.0)

    def test_lap_comm_matches_commutator_norm(self):
        rng = np.random.default_rng(4)
        m = rng.normal(size=(4, 4))
        e1 = np.sort(rng.uniform(0, 10, 4))
        e2 = np.sort(rng.uniform(0, 10, 4))
        fm = FunctionalMap(m, "a", "b")
        commutator = np.diag(e1) @ m - m @ np.diag(e2)
        assert np.isclose(energy_lap_comm(fm, e1, e2),
                          np.linalg.norm(commutator, "fro") ** 2)

    def test_zoomout_all_ones_example(self):
        fm = FunctionalMap(np.ones((2, 2)), "a", "b")
        assert np.isclose(energy_zoomout(fm), 5.0)

    def test_zoomout_identity_is_zero(self):
        assert energy_zoomout(FunctionalMap(np.eye(4), "a", "b")) == 0.0

    def test_zoomout_rejects_rectangular(self):
        with pytest.raises(NonSquare):
            energy_zoomout(FunctionalMap(np.ones((2, 3)), "a", "b"))

    def test_fmap_distance_frobenius(self):
        a = FunctionalMap(np.eye(3), "a", "b")
        b = FunctionalMap(np.zeros((3, 3)), "a", "b")
        assert np.isclose(fmap_distance(a, b), np.sqrt(3.0))
        with pytest.raises(DimensionMismatch):
            fmap_distance(a, FunctionalMap(np.zeros((2, 3)), "a", "b"))


class TestEmbedBlock:
    def test_block_diagonal_structure(self):
        base = FunctionalMap(np.array([[2.0]]), "s", "t")
        block = np.array([[0.0, 1.0], [-1.0, 0.0]])
        out = embed_block(base, block)
        expect = np.array([[2.0, 0, 0], [0, 0, 1], [0, -1, 0]])
        assert np.allclose(out.matrix, expect)
        assert (out.source_id, out.target_id) == ("s", "t")

    def test_rectangular_block(self):
        base = FunctionalMap(np.eye(2), "s", "t")
        out = embed_block(base, np.array([[1.0], [0.0]]))
        assert out.matrix.shape == (4, 3)


class TestSerialization:
    def test_fmap_json_round_trip(self, tmp_path):
        m = np.arange(6.0).reshape(2, 3)
        fm = FunctionalMap(m, "src", "dst")
        p = tmp_path / "m.fmap.json"
        save_functional_map(fm, p)
        back = load_functional_map(p)
        assert np.allclose(back.matrix, m)
        assert back.source_id == "src" and back.target_id == "dst"

    def test_fmap_json_fields(self, tmp_path):
        import json

        fm = FunctionalMap(np.array([[1.0, 2.0]]), "a", "b")
        p = tmp_path / "m.json"
        save_functional_map(fm, p)
        payload = json.loads(p.read_text())
        assert payload["rows"] == 1 and payload["cols"] == 2
        assert payload["row_major_values"] == [1.0, 2.0]
        assert payload["source_id"] == "a" and payload["target_id"] == "b"

    def test_pointwise_map_file_round_trip(self, tmp_path):
        pm = PointwiseMap(np.array([4, 0, 3]), 5)
        p = tmp_path / "m.map"
        save_pointwise_map(pm, p)
        text = p.read_text().splitlines()
        assert text[0] == "3 5"
        assert [int(x) for x in text[1:]] == [4, 0, 3]
        back = load_pointwise_map(p)
        assert back == pm

    def test_pointwise_map_parse_errors(self, tmp_path):
        p = tmp_path / "bad.map"
        p.write_text("2\n0\n1\n")
        with pytest.raises(ParseError):
            load_pointwise_map(p)
        p.write_text("3 3\n0\n1\n")
        with pytest.raises(ParseError):
            load_pointwise_map(p)

    def test_pointwise_map_out_of_range_entry(self, tmp_path):
        p = tmp_path / "bad.map"
        p.write_text("2 3\n0\n7\n")
        with pytest.raises(ValidationError):
            load_pointwise_map(p)


@settings(max_examples=20, deadline=None)
@given(st.integers(2, 30), st.integers(0, 2 ** 31 - 1))
def test_plancherel_per_column(n_seed, seed):
    """Full-basis coefficient norms equal mass-weighted function norms."""
    mesh = diagonal_grid(4, 3)
    n = mesh.num_vertices
    basis = compute_basis(build_laplacian(mesh), n)
    rng = np.random.default_rng(seed)
    ta, tb = rng.integers(0, n, n), rng.integers(0, n, n)
    ca = pointwise_to_functional(PointwiseMap(ta, n), basis, basis, n, n)
    cb = pointwise_to_functional(PointwiseMap(tb, n), basis, basis, n, n)
    diff_coeff = np.linalg.norm(ca.matrix - cb.matrix, axis=0)
    pulled = basis.eigenfunctions[ta] - basis.eigenfunctions[tb]
    diff_norm = np.sqrt(np.einsum("vk,v,vk->k", pulled, basis.mass, pulled))
    assert np.allclose(diff_coeff, diff_norm, rtol=1e-8, atol=1e-12)
