"""End-to-end tests for the command-line surface: configuration precedence,
every subcommand on tiny fixtures, artifact layout, reproducibility, exit
codes, and failure manifests."""

import csv
import json
import os

import numpy as np
import pytest

from maptree import (
    FunctionalMap,
    load_pointwise_map,
    save_functional_map,
    save_pointwise_map,
    PointwiseMap,
)
from maptree.cli import main, parse_config, run
from maptree.errors import ParseError, UnknownFlag, ValidationError

from _meshes import (
    bumpy_grid,
    center_split_grid,
    grid_vertex_permutation,
    permuted_copy,
    two_component_mesh,
)


def _write_off(mesh, path):
    with open(path, "w") as out:
        out.write("OFF\n")
        out.write(f"{mesh.num_vertices} {mesh.num_faces} 0\n")
        for v in mesh.vertex_positions:
            out.write(f"{float(v[0])!r} {float(v[1])!r} {float(v[2])!r}\n")
        for f in mesh.faces:
            out.write(f"3 {f[0]} {f[1]} {f[2]}\n")


@pytest.fixture(scope="module")
def mesh_files(tmp_path_factory):
    """A small bumpy grid, a vertex-permuted copy, and the permutation map."""
    root = tmp_path_factory.mktemp("meshes")
    mesh1 = bumpy_grid(6, 5)
    mesh2, perm = permuted_copy(mesh1, seed=7)
    src = root / "bumpy.off"
    dst = root / "bumpy_permuted.off"
    gt = root / "gt.map"
    _write_off(mesh1, src)
    _write_off(mesh2, dst)
    save_pointwise_map(PointwiseMap(perm, mesh2.num_vertices), str(gt))
    return str(src), str(dst), str(gt), perm


@pytest.fixture(scope="module")
def rect_file(tmp_path_factory):
    """The doubly mirror-symmetric rectangle (Klein four-group of isometries)."""
    root = tmp_path_factory.mktemp("rect")
    mesh = center_split_grid(11, 7, width=np.sqrt(2.3), height=1.0)
    path = root / "rect.off"
    _write_off(mesh, path)
    return str(path), mesh


class TestParseConfig:
    def test_defaults(self, mesh_files):
        src, dst, _, _ = mesh_files
        cfg = parse_config(["explore", "--source", src, "--target", dst])
        assert cfg.mode == "pair"
        assert cfg.epsilon_group == 1.0
        assert cfg.epsilon_ortho == 0.5
        assert cfg.epsilon_lapcomm == 0.5
        assert cfg.kappa == 10
        assert cfg.sample_count == 300
        assert cfg.k_final == 50
        assert cfg.dedup_agreement == 0.95
        assert cfg.max_group_size == 3
        assert cfg.max_leaves == 64
        assert cfg.refine_budget == 5
        assert cfg.seed == 0

    def test_flag_overrides_default(self, mesh_files):
        src, dst, _, _ = mesh_files
        cfg = parse_config(
            ["explore", "--source", src, "--target", dst, "--kappa", "20"]
        )
        assert cfg.kappa == 20

    def test_flag_beats_config_file(self, mesh_files, tmp_path):
        src, dst, _, _ = mesh_files
        cfg_file = tmp_path / "cfg.json"
        cfg_file.write_text(json.dumps({"sample_count": 500, "kappa": 12}))
        cfg = parse_config(
            ["explore", "--source", src, "--target", dst,
             "--config", str(cfg_file), "--samples", "200"]
        )
        assert cfg.sample_count == 200  # flag wins
        assert cfg.kappa == 12          # file beats default

    def test_unknown_flag_raises(self, mesh_files):
        src, dst, _, _ = mesh_files
        with pytest.raises(UnknownFlag):
            parse_config(["explore", "--source", src, "--target", dst, "--bogus", "1"])

    def test_unknown_config_key_raises(self, mesh_files, tmp_path):
        src, dst, _, _ = mesh_files
        cfg_file = tmp_path / "cfg.json"
        cfg_file.write_text(json.dumps({"not_a_setting": 3}))
        with pytest.raises(UnknownFlag, match="not_a_setting"):
            parse_config(["explore", "--source", src, "--target", dst,
                          "--config", str(cfg_file)])

    def test_wrong_type_names_the_key(self, mesh_files, tmp_path):
        src, dst, _, _ = mesh_files
        for bad in ('{"kappa": "ten"}', '{"kappa": 10.5}', '{"kappa": true}'):
            cfg_file = tmp_path / "cfg.json"
            cfg_file.write_text(bad)
            with pytest.raises(TypeError, match="kappa"):
                parse_config(["explore", "--source", src, "--target", dst,
                              "--config", str(cfg_file)])

    def test_malformed_json_raises_parse_error(self, mesh_files, tmp_path):
        src, dst, _, _ = mesh_files
        cfg_file = tmp_path / "cfg.json"
        cfg_file.write_text("{not json")
        with pytest.raises(ParseError):
            parse_config(["explore", "--source", src, "--target", dst,
                          "--config", str(cfg_file)])

    def test_usage_errors_exit_64(self, capsys):
        assert main(["explore", "--bogus"]) == 64
        assert main(["not-a-command"]) == 64
        err = capsys.readouterr().err
        assert "usage error" in err


def _explore_args(src, dst, out, extra=()):
    return ["explore", "--source", src, "--target", dst, "--out", out,
            "--k-final", "16", "--sample-count", "64", "--kappa", "6",
            *extra]


@pytest.fixture(scope="module")
def explore_out(mesh_files, tmp_path_factory):
    src, dst, gt, _ = mesh_files
    out = str(tmp_path_factory.mktemp("run") / "out")
    code = main(_explore_args(src, dst, out, extra=["--gt", gt]))
    assert code == 0
    return out


class TestExploreEndToEnd:
    def test_artifact_layout(self, explore_out):
        manifest = json.load(open(os.path.join(explore_out, "manifest.json")))
        assert manifest["status"] == "ok"
        assert manifest["mode"] == "pair"
        assert manifest["tree_file"] == "tree.json"
        assert os.path.isfile(os.path.join(explore_out, "tree.json"))
        assert os.path.isfile(os.path.join(explore_out, "timings.json"))
        assert len(manifest["maps"]) >= 1
        for entry in manifest["maps"]:
            assert os.path.isfile(os.path.join(explore_out, entry["map_file"]))
            assert os.path.isfile(os.path.join(explore_out, entry["report_file"]))

    def test_inputs_are_digested(self, explore_out, mesh_files):
        src, dst, gt, _ = mesh_files
        manifest = json.load(open(os.path.join(explore_out, "manifest.json")))
        assert manifest["inputs"]["source"]["path"] == src
        assert len(manifest["inputs"]["source"]["sha256"]) == 64
        assert manifest["inputs"]["gt_file"]["path"] == gt

    def test_permuted_copy_is_recovered(self, explore_out, mesh_files):
        # The construction permutation must be among the survivors with
        # (sampled) accuracy indistinguishable from zero.
        _, _, _, perm = mesh_files
        manifest = json.load(open(os.path.join(explore_out, "manifest.json")))
        best_agree, best_acc = 0.0, np.inf
        for entry in manifest["maps"]:
            pm = load_pointwise_map(os.path.join(explore_out, entry["map_file"]))
            report = json.load(open(os.path.join(explore_out, entry["report_file"])))
            agree = float(np.mean(pm.targets == perm))
            if agree > best_agree:
                best_agree, best_acc = agree, report["accuracy"]
        assert best_agree == 1.0
        assert best_acc < 1e-6

    def test_reports_carry_leaf_provenance(self, explore_out):
        manifest = json.load(open(os.path.join(explore_out, "manifest.json")))
        entry = manifest["maps"][0]
        report = json.load(open(os.path.join(explore_out, entry["report_file"])))
        assert report["leaf"]["node_id"] == entry["node_id"]
        assert report["leaf"]["dims"] == entry["dims"]
        assert report["metadata"]["accuracy_samples"] > 0

    def test_reruns_are_byte_identical(self, mesh_files, tmp_path):
        # The same invocation twice in a row must reproduce every artifact
        # byte for byte (timings are kept out of the manifest for this).
        src, dst, _, _ = mesh_files
        out = str(tmp_path / "run")
        args = _explore_args(src, dst, out)
        assert main(args) == 0
        manifest = json.load(open(os.path.join(out, "manifest.json")))
        compare = ["manifest.json", "tree.json"]
        compare += [e["map_file"] for e in manifest["maps"]]
        compare += [e["report_file"] for e in manifest["maps"]]
        first = {rel: open(os.path.join(out, rel), "rb").read() for rel in compare}
        assert main(args) == 0
        for rel in compare:
            again = open(os.path.join(out, rel), "rb").read()
            assert first[rel] == again, f"{rel} differs between identical runs"

    def test_color_ply_flag_writes_transfers(self, mesh_files, tmp_path):
        src, dst, _, _ = mesh_files
        out = str(tmp_path / "ply_run")
        assert main(_explore_args(src, dst, out, extra=["--color-ply"])) == 0
        assert os.path.isfile(os.path.join(out, "ply", "source.ply"))
        assert os.path.isfile(os.path.join(out, "ply", "00_target.ply"))

    def test_basis_cache_env_is_used(self, mesh_files, tmp_path, monkeypatch):
        # A cached second run must reproduce exactly the first run's results.
        src, dst, _, _ = mesh_files
        cache = tmp_path / "cache"
        monkeypatch.setenv("MAPTREE_CACHE_DIR", str(cache))
        out = str(tmp_path / "run")
        args = _explore_args(src, dst, out)
        assert main(args) == 0
        cached = list(cache.glob("*.basis"))
        assert len(cached) == 2  # one per distinct mesh
        tree_first = open(os.path.join(out, "tree.json"), "rb").read()
        map_first = open(os.path.join(out, "maps/00.map"), "rb").read()
        assert main(args) == 0  # this run loads the bases from the cache
        assert open(os.path.join(out, "tree.json"), "rb").read() == tree_first
        assert open(os.path.join(out, "maps/00.map"), "rb").read() == map_first


class TestSelfsymMode:
    def test_rectangle_lists_all_four_isometries(self, rect_file, tmp_path):
        path, mesh = rect_file
        out = str(tmp_path / "out")
        code = main(["selfsym", "--source", path, "--out", out])
        assert code == 0
        manifest = json.load(open(os.path.join(out, "manifest.json")))
        assert len(manifest["maps"]) == 4
        sel = manifest["extras"]["selection"]
        assert not sel["no_symmetry_found"]
        # The winner moves vertices; the identity is one of the other leaves.
        assert max(sel["displacements"]) > 0.02
        assert min(sel["displacements"]) < 1e-9
        # A full symmetry covers (essentially) the whole shape.
        region = os.path.join(out, sel["region_file"])
        mask = [line.strip() == "1" for line in open(region)]
        assert len(mask) == mesh.num_vertices
        assert sel["region_fraction"] == pytest.approx(np.mean(mask))
        assert np.mean(mask) > 0.95


class TestComponentsMode:
    def test_two_tetrahedra(self, tmp_path):
        mesh = two_component_mesh()
        path = str(tmp_path / "pair.off")
        _write_off(mesh, path)
        out = str(tmp_path / "out")
        code = main(["components", "--source", path, "--out", out,
                     "--k-final", "4", "--sample-count", "4", "--kappa", "2"])
        assert code == 0
        manifest = json.load(open(os.path.join(out, "manifest.json")))
        comps = manifest["extras"]["components"]
        assert len(comps) == 2
        assert all(c["num_vertices"] == 4 for c in comps)
        for c in comps:
            verts = [int(x) for x in open(os.path.join(out, c["vertex_map_file"]))]
            assert len(verts) == 4
        runs = manifest["extras"]["pair_runs"]
        assert sorted(tuple(r["components"]) for r in runs) == [(0, 0), (0, 1), (1, 1)]
        for r in runs:
            assert r["surviving_leaves"] >= 1
            for entry in r["maps"]:
                assert os.path.isfile(os.path.join(out, r["dir"], entry["map_file"]))


class TestRefineMode:
    def test_corrupted_map_is_repaired(self, mesh_files, tmp_path):
        src, dst, _, perm = mesh_files
        n = perm.shape[0]
        rng = np.random.default_rng(3)
        corrupted = perm.copy()
        bad = rng.choice(n, size=n // 5, replace=False)
        corrupted[bad] = rng.integers(0, n, size=bad.shape[0])
        map_file = str(tmp_path / "init.map")
        save_pointwise_map(PointwiseMap(corrupted, n), map_file)
        out = str(tmp_path / "out")
        code = main(["refine", "--source", src, "--target", dst,
                     "--map", map_file, "--out", out,
                     "--k-final", "16", "--sample-count", "64"])
        assert code == 0
        refined = load_pointwise_map(os.path.join(out, "maps/00.map"))
        before = float(np.mean(corrupted == perm))
        after = float(np.mean(refined.targets == perm))
        assert after > before
        assert after >= 0.95

    def test_mismatched_map_fails_with_manifest(self, mesh_files, tmp_path):
        src, dst, _, _ = mesh_files
        map_file = str(tmp_path / "tiny.map")
        save_pointwise_map(PointwiseMap(np.zeros(3, dtype=np.int64), 5), map_file)
        out = str(tmp_path / "out")
        code = main(["refine", "--source", src, "--target", dst,
                     "--map", map_file, "--out", out])
        assert code >= 10
        manifest = json.load(open(os.path.join(out, "manifest.json")))
        assert manifest["status"] == "failed"
        assert manifest["error_class"] == "ValidationError"


class TestMetricsMode:
    def test_report_for_ground_truth_map(self, mesh_files, tmp_path, capsys):
        src, dst, gt, _ = mesh_files
        out = str(tmp_path / "out")
        code = main(["metrics", "--source", src, "--target", dst,
                     "--map", gt, "--gt", gt, "--out", out,
                     "--sample-count", "40"])
        assert code == 0
        report = json.load(open(os.path.join(out, "report.json")))
        assert report["accuracy"] == 0.0
        assert report["conformal_distortion"] == pytest.approx(0.0, abs=1e-9)
        assert report["orientation_flip_fraction"] == 0.0
        assert report["metadata"]["energy_basis_size"] == 20
        printed = json.loads(capsys.readouterr().out.split("wrote")[0])
        assert printed == report


class TestSelectMode:
    def test_cycle_selection_from_manifest(self, tmp_path):
        ident = np.eye(4)
        flip = np.diag([1.0, -1.0, 1.0, -1.0])
        files = {}
        for name, mat in [("i", ident), ("f", flip)]:
            rel = f"cand_{name}.json"
            save_functional_map(FunctionalMap(mat, "x", "y"), str(tmp_path / rel))
            files[name] = rel
        pairs = {
            "shapes": ["a", "b", "c"],
            "pairs": [
                {"a": "a", "b": "b", "candidates": [files["i"], files["f"]],
                 "init_scores": [1.0, 0.0]},
                {"a": "a", "b": "c", "candidates": [files["i"], files["f"]],
                 "init_scores": [0.0, 1.0]},
                {"a": "b", "b": "c", "candidates": [files["i"], files["f"]],
                 "init_scores": [0.0, 1.0]},
            ],
            "triplets": [["a", "b", "c"]],
        }
        pairs_file = str(tmp_path / "pairs.json")
        with open(pairs_file, "w") as f:
            json.dump(pairs, f)
        out = str(tmp_path / "out")
        code = main(["select", "--pairs", pairs_file, "--out", out])
        assert code == 0
        selection = json.load(open(os.path.join(out, "selection.json")))
        assert all(e == 0.0 for e in selection["energies"].values())
        assert selection["sweeps"] <= 3
        manifest = json.load(open(os.path.join(out, "manifest.json")))
        assert manifest["shape_ids"] == ["a", "b", "c"]


class TestLandscapeMode:
    def test_csv_loads_and_is_consistent(self, rect_file, tmp_path):
        path, _ = rect_file
        out = str(tmp_path / "out")
        code = main(["landscape", "--source", path, "--out", out,
                     "--count", "10", "--clusters", "2",
                     "--sample-count", "30", "--k-final", "10"])
        assert code == 0
        with open(os.path.join(out, "landscape.csv")) as f:
            rows = list(csv.DictReader(f))
        assert len(rows) == 10
        assert set(rows[0]) == {"map_id", "x", "y", "cluster", "geodesic_distortion"}
        clusters = {int(r["cluster"]) for r in rows}
        assert clusters <= {0, 1}
        for r in rows:
            assert np.isfinite(float(r["x"]))
            assert float(r["geodesic_distortion"]) >= 0.0
        manifest = json.load(open(os.path.join(out, "manifest.json")))
        assert manifest["extras"]["count"] == 10
        assert manifest["extras"]["stress"] >= 0.0


class TestFailureHandling:
    def test_missing_input_exits_nonzero_with_failure_manifest(self, tmp_path, capsys):
        out = str(tmp_path / "out")
        code = main(["explore", "--source", str(tmp_path / "absent.off"),
                     "--target", str(tmp_path / "absent2.off"), "--out", out])
        assert code >= 10
        assert "ValidationError" in capsys.readouterr().err
        manifest = json.load(open(os.path.join(out, "manifest.json")))
        assert manifest["status"] == "failed"
        assert manifest["error_class"] == "ValidationError"
        assert "absent" in manifest["message"]
        # no partial outputs beyond the failure manifest
        assert not os.path.isdir(os.path.join(out, "maps"))
        assert not os.path.isfile(os.path.join(out, "tree.json"))

    def test_run_requires_known_mode(self, tmp_path):
        from maptree.cli import RunConfig

        with pytest.raises(ValidationError):
            run(RunConfig(mode="nonsense", out_dir=str(tmp_path / "o")))

    def test_exit_codes_stable_per_error_class(self, tmp_path):
        # The same failure twice gives the same code.
        out1, out2 = str(tmp_path / "a"), str(tmp_path / "b")
        c1 = main(["explore", "--source", "x.off", "--target", "y.off", "--out", out1])
        c2 = main(["explore", "--source", "x.off", "--target", "y.off", "--out", out2])
        assert c1 == c2 >= 10
