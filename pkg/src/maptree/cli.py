"""Command-line surface, configuration handling, and run orchestration.

Subcommands: explore (pair mode), selfsym, components, refine, metrics,
select, landscape. Every run writes a deterministic artifact layout under the
output directory::

    out/
      manifest.json     run summary (stable bytes for identical inputs)
      tree.json         the explored candidate tree (explore-family modes)
      maps/NN.map       dense pointwise maps, zero-padded survivor order
      reports/NN.json   per-map quality reports
      landscape.csv     map-space embedding (landscape mode)
      timings.json      wall-clock phase breakdown (excluded from manifest
                        bytes so reruns stay byte-identical)

Numeric settings resolve as: command-line flag > JSON config file > defaults.
"""

import argparse
import csv
import json
import os
import sys
import time
from dataclasses import asdict, dataclass, fields

import numpy as np

from .analysis import Landscape2D, MapEnsemble, distance_matrix, kmeans, mds_embed, random_maps
from .errors import MapTreeError, ParseError, UnknownFlag, ValidationError
from .fmap import (
    FunctionalMap,
    PointwiseMap,
    fmap_from_json,
    load_functional_map,
    load_pointwise_map,
    pointwise_to_functional,
    save_pointwise_map,
)
from .mesh import (
    GeodesicCache,
    connected_components,
    farthest_point_sample,
    geodesic_distances,
    load_mesh,
    normalize_to_unit_area,
    save_ply,
)
from .metrics import accuracy as metric_accuracy
from .metrics import quality_report
from .refine import MapPair, RefineConfig, bijective_zoomout, dense_readout, zoomout
from .select import CandidateSet, extract_symmetric_region, select_by_cycles, select_self_symmetry
from .spectral import basis_for_mesh, build_laplacian
from .tree import ExplorationConfig, explore, init_tree, save_tree
from . import errors as _errors

_MODES = ("pair", "selfsym", "components", "refine", "metrics", "select", "landscape")

_DEFAULTS = {
    "epsilon_group": 1.0,
    "epsilon_ortho": 0.5,
    "epsilon_lapcomm": 0.5,
    "kappa": 10,
    "max_group_size": 3,
    "dedup_agreement": 0.95,
    "refine_budget": 5,
    "sample_count": 300,
    "k_final": 50,
    "max_leaves": 64,
    "k_init": 5,
    "k_step": 1,
    "count": 1000,
    "seed": 0,
    "clusters": 2,
    "selfsym_threshold": 0.02,
    "region_threshold": 0.05,
}

_FIELD_TYPES = {
    "epsilon_group": float, "epsilon_ortho": float, "epsilon_lapcomm": float,
    "kappa": int, "max_group_size": int, "dedup_agreement": float,
    "refine_budget": int, "sample_count": int, "k_final": int,
    "max_leaves": int, "k_init": int, "k_step": int, "count": int,
    "seed": int, "clusters": int, "selfsym_threshold": float,
    "region_threshold": float,
}


@dataclass
class RunConfig:
    """Everything one run needs; see module docstring for precedence."""

    mode: str
    source: str = None
    target: str = None
    map_file: str = None
    gt_file: str = None
    pairs_file: str = None
    out_dir: str = "out"
    verbosity: int = 0
    color_ply: bool = False
    epsilon_group: float = 1.0
    epsilon_ortho: float = 0.5
    epsilon_lapcomm: float = 0.5
    kappa: int = 10
    max_group_size: int = 3
    dedup_agreement: float = 0.95
    refine_budget: int = 5
    sample_count: int = 300
    k_final: int = 50
    max_leaves: int = 64
    k_init: int = 5
    k_step: int = 1
    count: int = 1000
    seed: int = 0
    clusters: int = 2
    selfsym_threshold: float = 0.02
    region_threshold: float = 0.05


@dataclass
class RunManifest:
    """Run summary written as manifest.json. Timing values live in a separate
    file (referenced by name) so the manifest bytes are input-deterministic."""

    mode: str
    config: dict
    inputs: dict
    shape_ids: list
    maps: list
    tree_file: str = None
    timing_file: str = "timings.json"
    extras: dict = None
    status: str = "ok"

    def to_json(self):
        out = asdict(self)
        if out["extras"] is None:
            out.pop("extras")
        return out


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UnknownFlag(message)


def _build_parser():
    parser = _Parser(prog="maptree", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, source=True, target=False):
        if source:
            p.add_argument("--source", required=True, help="source mesh (OFF/OBJ/PLY)")
        if target:
            p.add_argument("--target", required=True, help="target mesh")
        p.add_argument("--out", dest="out_dir", default="out")
        p.add_argument("--config", dest="config_file", default=None,
                       help="JSON file with default overrides")
        p.add_argument("-v", "--verbose", dest="verbosity", action="count", default=0)
        for name in ("epsilon-group", "epsilon-ortho", "epsilon-lapcomm",
                     "kappa", "max-group-size", "dedup-agreement",
                     "refine-budget", "sample-count", "k-final", "max-leaves",
                     "k-init", "k-step", "seed"):
            key = name.replace("-", "_")
            flags = [f"--{name}"]
            if name == "sample-count":
                flags.append("--samples")
            p.add_argument(*flags, dest=key, type=_FIELD_TYPES[key], default=None)

    p = sub.add_parser("explore", help="all near-isometric maps between two meshes")
    common(p, target=True)
    p.add_argument("--gt", dest="gt_file", default=None, help="ground-truth .map for accuracy")
    p.add_argument("--color-ply", action="store_true", help="write color-transfer PLYs")

    p = sub.add_parser("selfsym", help="self-symmetry maps of one mesh")
    common(p)
    p.add_argument("--selfsym-threshold", type=float, default=None)
    p.add_argument("--region-threshold", type=float, default=None)

    p = sub.add_parser("components", help="split a mesh and map components pairwise")
    common(p)

    p = sub.add_parser("refine", help="refine an existing map")
    common(p, target=True)
    p.add_argument("--map", dest="map_file", required=True, help="initial .map file")

    p = sub.add_parser("metrics", help="quality report for an existing map")
    common(p, target=True)
    p.add_argument("--map", dest="map_file", required=True)
    p.add_argument("--gt", dest="gt_file", default=None)

    p = sub.add_parser("select", help="cycle-consistent selection over a collection")
    common(p, source=False)
    p.add_argument("--pairs", dest="pairs_file", required=True,
                   help="JSON manifest of shapes, per-pair candidates, triplets")

    p = sub.add_parser("landscape", help="map-space embedding of random self-maps")
    common(p)
    p.add_argument("--count", type=int, default=None)
    p.add_argument("--clusters", type=int, default=None)
    return parser


def parse_config(argv):
    """argv -> RunConfig with flag > config-file > default precedence.

    :raises UnknownFlag: unrecognized flag or config-file key.
    :raises TypeError: config-file value of the wrong type (named).
    """
    ns = _build_parser().parse_args(argv)
    values = dict(_DEFAULTS)
    config_file = getattr(ns, "config_file", None)
    if config_file:
        with open(config_file) as f:
            try:
                loaded = json.load(f)
            except json.JSONDecodeError as exc:
                raise ParseError(f"config file {config_file}: {exc}") from exc
        for key, val in loaded.items():
            if key not in _FIELD_TYPES:
                raise UnknownFlag(f"config file key '{key}' is not a known setting")
            want = _FIELD_TYPES[key]
            if isinstance(val, bool) or not isinstance(val, (int, float)):
                raise TypeError(f"{key}: expected {want.__name__}, got {val!r}")
            if want is int and float(val) != int(val):
                raise TypeError(f"{key}: expected {want.__name__}, got {val!r}")
            values[key] = want(val)
    for key in _FIELD_TYPES:
        flag = getattr(ns, key, None)
        if flag is not None:
            values[key] = flag

    mode = "pair" if ns.command == "explore" else ns.command
    return RunConfig(
        mode=mode,
        source=getattr(ns, "source", None),
        target=getattr(ns, "target", None),
        map_file=getattr(ns, "map_file", None),
        gt_file=getattr(ns, "gt_file", None),
        pairs_file=getattr(ns, "pairs_file", None),
        out_dir=ns.out_dir,
        verbosity=getattr(ns, "verbosity", 0),
        color_ply=getattr(ns, "color_ply", False),
        **values,
    )


def _log(cfg, message):
    if cfg.verbosity > 0:
        print(message, file=sys.stderr)


def _check_inputs(cfg):
    for label in ("source", "target", "map_file", "gt_file", "pairs_file"):
        path = getattr(cfg, label)
        if path is not None and not os.path.isfile(path):
            raise ValidationError(f"{label} file not found: {path}")


def _sha256(path):
    import hashlib

    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _input_digest(cfg):
    out = {}
    for label in ("source", "target", "map_file", "gt_file", "pairs_file"):
        path = getattr(cfg, label)
        if path is not None:
            out[label] = {"path": path, "sha256": _sha256(path)}
    return out


def _shape_id(path):
    return os.path.splitext(os.path.basename(path))[0]


def _load_unit(path):
    return normalize_to_unit_area(load_mesh(path))


def _config_snapshot(cfg):
    snap = asdict(cfg)
    snap.pop("verbosity")
    return snap


def _write_json(path, payload):
    with open(path, "w") as out:
        json.dump(payload, out, indent=1, sort_keys=True)
        out.write("\n")


def _exploration_config(cfg, k_eff):
    return ExplorationConfig(
        epsilon_group=cfg.epsilon_group,
        epsilon_ortho=cfg.epsilon_ortho,
        epsilon_lapcomm=cfg.epsilon_lapcomm,
        kappa=cfg.kappa,
        max_group_size=cfg.max_group_size,
        dedup_agreement=cfg.dedup_agreement,
        refine_budget=cfg.refine_budget,
        sample_count=cfg.sample_count,
        k_final=k_eff,
        max_leaves=cfg.max_leaves,
    )


def _explore_pair(cfg, mesh1, mesh2, id1, id2, out_dir, gt=None, timings=None):
    """Shared core of the explore-family modes: run the tree, write maps,
    reports, and tree.json into ``out_dir``; return manifest fragments."""
    timings = timings if timings is not None else {}
    t0 = time.perf_counter()
    k_eff = min(cfg.k_final, mesh1.num_vertices, mesh2.num_vertices)
    b1 = basis_for_mesh(mesh1, k_eff)
    b2 = b1 if mesh2 is mesh1 else basis_for_mesh(mesh2, k_eff)
    timings["basis"] = timings.get("basis", 0.0) + time.perf_counter() - t0

    t0 = time.perf_counter()
    s1 = farthest_point_sample(mesh1, min(cfg.sample_count, mesh1.num_vertices))
    s2 = s1 if mesh2 is mesh1 else farthest_point_sample(
        mesh2, min(cfg.sample_count, mesh2.num_vertices))
    samples = None
    if cfg.sample_count < mesh1.num_vertices or cfg.sample_count < mesh2.num_vertices:
        samples = (s1, s2)
    tree = init_tree(b1, b2, _exploration_config(cfg, k_eff), (id1, id2))
    explore(tree, (b1, b2), samples=samples)
    leaves = tree.surviving_leaves()
    timings["explore"] = timings.get("explore", 0.0) + time.perf_counter() - t0
    _log(cfg, f"{id1} -> {id2}: {len(leaves)} surviving map(s), "
              f"{len(tree.nodes)} nodes explored")

    os.makedirs(os.path.join(out_dir, "maps"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, "reports"), exist_ok=True)

    t0 = time.perf_counter()
    geo1 = geodesic_distances(mesh1, s1)
    image_union = [gt.targets[s1]] if gt is not None else []
    image_union += [leaf.dense_pair.pi_12.targets[s1] for leaf in leaves]
    geo2 = geo1 if mesh2 is mesh1 and not image_union else None
    if image_union:
        union = np.unique(np.concatenate(image_union + [s2]))
        geo2 = geodesic_distances(mesh2, union)
    elif geo2 is None:
        geo2 = geodesic_distances(mesh2, s2)
    lap1 = build_laplacian(mesh1)
    timings["geodesics"] = timings.get("geodesics", 0.0) + time.perf_counter() - t0

    t0 = time.perf_counter()
    map_entries = []
    map_files = {}
    for i, leaf in enumerate(leaves):
        map_rel = f"maps/{i:02d}.map"
        report_rel = f"reports/{i:02d}.json"
        save_pointwise_map(leaf.dense_pair.pi_12, os.path.join(out_dir, map_rel))
        map_files[leaf.node_id] = map_rel

        report = quality_report(
            leaf.dense_pair.pi_12, leaf.final_fmap, mesh1, mesh2, lap1,
            geo1, geo2, s1, b1.eigenvalues, b2.eigenvalues,
        )
        if gt is not None:
            report.accuracy = metric_accuracy(
                PointwiseMap(leaf.dense_pair.pi_12.targets[s1], mesh2.num_vertices),
                PointwiseMap(gt.targets[s1], mesh2.num_vertices),
                geo2,
            )
            report.metadata["accuracy_samples"] = int(s1.shape[0])
        payload = report.to_json()
        payload["leaf"] = {
            "node_id": leaf.node_id,
            "dims": [leaf.rows, leaf.cols],
            "pruning_energies": {"ortho": leaf.energies[0], "lap_comm": leaf.energies[1]}
            if leaf.energies else None,
            "drift": leaf.drift,
        }
        _write_json(os.path.join(out_dir, report_rel), payload)
        map_entries.append({
            "index": i,
            "node_id": leaf.node_id,
            "map_file": map_rel,
            "report_file": report_rel,
            "dims": [leaf.rows, leaf.cols],
        })
    timings["metrics"] = timings.get("metrics", 0.0) + time.perf_counter() - t0

    save_tree(tree, os.path.join(out_dir, "tree.json"), map_files)

    if cfg.color_ply and leaves:
        _write_color_transfer(mesh1, mesh2, leaves, out_dir)
    return tree, leaves, map_entries, (b1, b2), (s1, s2), (geo1, geo2)


def _write_color_transfer(mesh1, mesh2, leaves, out_dir):
    """Teaser-style visualization: source colored by its coordinates, each map
    shown by transferring those colors onto the target."""
    ply_dir = os.path.join(out_dir, "ply")
    os.makedirs(ply_dir, exist_ok=True)
    v = mesh1.vertex_positions
    span = v.max(axis=0) - v.min(axis=0)
    span[span == 0.0] = 1.0
    colors1 = np.clip((v - v.min(axis=0)) / span * 255.0, 0, 255).astype(np.uint8)
    save_ply(mesh1, os.path.join(ply_dir, "source.ply"), colors1)
    for i, leaf in enumerate(leaves):
        colors2 = colors1[leaf.dense_pair.pi_21.targets]
        save_ply(mesh2, os.path.join(ply_dir, f"{i:02d}_target.ply"), colors2)


def _run_pair(cfg):
    timings = {}
    t0 = time.perf_counter()
    mesh1 = _load_unit(cfg.source)
    mesh2 = _load_unit(cfg.target)
    gt = load_pointwise_map(cfg.gt_file) if cfg.gt_file else None
    if gt is not None and gt.domain_size != mesh1.num_vertices:
        raise ValidationError("ground-truth map does not match the source mesh")
    timings["load"] = time.perf_counter() - t0

    tree, leaves, map_entries, _, _, _ = _explore_pair(
        cfg, mesh1, mesh2, _shape_id(cfg.source), _shape_id(cfg.target),
        cfg.out_dir, gt=gt, timings=timings)
    manifest = RunManifest(
        mode=cfg.mode,
        config=_config_snapshot(cfg),
        inputs=_input_digest(cfg),
        shape_ids=[_shape_id(cfg.source), _shape_id(cfg.target)],
        maps=map_entries,
        tree_file="tree.json",
        extras={"max_leaves_hit": tree.max_leaves_hit,
                "surviving_leaves": len(leaves)},
    )
    return manifest, timings


def _run_selfsym(cfg):
    timings = {}
    t0 = time.perf_counter()
    mesh = _load_unit(cfg.source)
    timings["load"] = time.perf_counter() - t0
    sid = _shape_id(cfg.source)

    tree, leaves, map_entries, bases, samples, geos = _explore_pair(
        cfg, mesh, mesh, sid, sid, cfg.out_dir, timings=timings)
    b1 = bases[0]
    geo1 = geos[0]

    extras = {"max_leaves_hit": tree.max_leaves_hit, "surviving_leaves": len(leaves)}
    if leaves:
        t0 = time.perf_counter()
        candidates = [(leaf.final_fmap, leaf.dense_pair.pi_12) for leaf in leaves]
        choice = select_self_symmetry(
            candidates, b1.eigenvalues, geo1,
            displacement_threshold=cfg.selfsym_threshold)
        extras["selection"] = {
            "chosen_index": int(choice.index),
            "no_symmetry_found": bool(choice.no_symmetry_found),
            "displacements": [float(d) for d in choice.displacements],
        }
        if not choice.no_symmetry_found and mesh.num_vertices <= 5000:
            geo_all = geodesic_distances(mesh, np.arange(mesh.num_vertices))
            mask = extract_symmetric_region(
                candidates[choice.index][1], geo_all,
                threshold=cfg.region_threshold, mesh=mesh)
            region_rel = "region.txt"
            with open(os.path.join(cfg.out_dir, region_rel), "w") as out:
                out.write("\n".join("1" if m else "0" for m in mask))
                out.write("\n")
            extras["selection"]["region_file"] = region_rel
            extras["selection"]["region_fraction"] = float(np.mean(mask))
        timings["selection"] = time.perf_counter() - t0

    manifest = RunManifest(
        mode=cfg.mode,
        config=_config_snapshot(cfg),
        inputs=_input_digest(cfg),
        shape_ids=[sid, sid],
        maps=map_entries,
        tree_file="tree.json",
        extras=extras,
    )
    return manifest, timings


def _run_components(cfg):
    timings = {}
    t0 = time.perf_counter()
    whole = load_mesh(cfg.source)
    split = connected_components(whole)
    timings["load"] = time.perf_counter() - t0
    sid = _shape_id(cfg.source)

    comp_info = []
    for i, vmap in enumerate(split.vertex_maps):
        rel = f"comp_{i}.verts"
        with open(os.path.join(cfg.out_dir, rel), "w") as out:
            out.write("\n".join(str(int(v)) for v in vmap))
            out.write("\n")
        comp_info.append({
            "index": i,
            "num_vertices": int(split.component_meshes[i].num_vertices),
            "num_faces": int(split.component_meshes[i].num_faces),
            "vertex_map_file": rel,
        })

    runs = []
    meshes = [normalize_to_unit_area(m) for m in split.component_meshes]
    for i in range(len(meshes)):
        for j in range(i, len(meshes)):
            sub_rel = f"pair_{i}_{j}"
            sub_dir = os.path.join(cfg.out_dir, sub_rel)
            os.makedirs(sub_dir, exist_ok=True)
            m1, m2 = meshes[i], (meshes[i] if i == j else meshes[j])
            tree, leaves, map_entries, _, _, _ = _explore_pair(
                cfg, m1, m2, f"{sid}#{i}", f"{sid}#{j}", sub_dir, timings=timings)
            runs.append({
                "components": [i, j],
                "dir": sub_rel,
                "surviving_leaves": len(leaves),
                "maps": map_entries,
                "max_leaves_hit": tree.max_leaves_hit,
            })
    manifest = RunManifest(
        mode=cfg.mode,
        config=_config_snapshot(cfg),
        inputs=_input_digest(cfg),
        shape_ids=[sid],
        maps=[],
        extras={"components": comp_info, "pair_runs": runs},
    )
    return manifest, timings


def _run_refine(cfg):
    timings = {}
    t0 = time.perf_counter()
    mesh1 = _load_unit(cfg.source)
    mesh2 = _load_unit(cfg.target)
    init_map = load_pointwise_map(cfg.map_file)
    if init_map.domain_size != mesh1.num_vertices:
        raise ValidationError("initial map does not match the source mesh")
    if init_map.codomain_size != mesh2.num_vertices:
        raise ValidationError("initial map does not match the target mesh")
    timings["load"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    k_eff = min(cfg.k_final, mesh1.num_vertices, mesh2.num_vertices)
    k_init = min(cfg.k_init, k_eff)
    b1 = basis_for_mesh(mesh1, k_eff)
    b2 = basis_for_mesh(mesh2, k_eff)
    timings["basis"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    s1 = farthest_point_sample(mesh1, min(cfg.sample_count, mesh1.num_vertices))
    s2 = farthest_point_sample(mesh2, min(cfg.sample_count, mesh2.num_vertices))
    r1, r2 = b1.restrict(s1), b2.restrict(s2)
    seed_fmap = pointwise_to_functional(init_map, b1, b2, k_init, k_init,
                                        _shape_id(cfg.source), _shape_id(cfg.target))
    from .fmap import functional_to_pointwise

    pair = MapPair(
        functional_to_pointwise(seed_fmap, r1, r2),
        functional_to_pointwise(seed_fmap.transposed(), r2, r1),
    )
    rcfg = RefineConfig(k_init=k_init, k_step=cfg.k_step, k_final=k_eff,
                        sample_count=max(k_eff, min(s1.shape[0], s2.shape[0])))
    energy_log = [] if cfg.verbosity > 0 else None
    pair = bijective_zoomout(pair, r1, r2, rcfg, energy_log=energy_log)
    dense = dense_readout(pair, r1, r2, b1, b2, k_eff)
    timings["refine"] = time.perf_counter() - t0

    os.makedirs(os.path.join(cfg.out_dir, "maps"), exist_ok=True)
    save_pointwise_map(dense.pi_12, os.path.join(cfg.out_dir, "maps/00.map"))
    if energy_log is not None:
        with open(os.path.join(cfg.out_dir, "energy_log.csv"), "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["k", "E_ZM_12", "E_ZM_21", "E_bij"])
            writer.writerows(energy_log)
    manifest = RunManifest(
        mode=cfg.mode,
        config=_config_snapshot(cfg),
        inputs=_input_digest(cfg),
        shape_ids=[_shape_id(cfg.source), _shape_id(cfg.target)],
        maps=[{"index": 0, "map_file": "maps/00.map", "dims": [k_eff, k_eff]}],
    )
    return manifest, timings


def _run_metrics(cfg):
    timings = {}
    t0 = time.perf_counter()
    mesh1 = _load_unit(cfg.source)
    mesh2 = _load_unit(cfg.target)
    pmap = load_pointwise_map(cfg.map_file)
    if pmap.domain_size != mesh1.num_vertices or pmap.codomain_size != mesh2.num_vertices:
        raise ValidationError("map file does not match the meshes")
    gt = load_pointwise_map(cfg.gt_file) if cfg.gt_file else None
    timings["load"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    k = min(20, mesh1.num_vertices, mesh2.num_vertices)
    b1 = basis_for_mesh(mesh1, k)
    b2 = basis_for_mesh(mesh2, k)
    fm = pointwise_to_functional(pmap, b1, b2, k, k,
                                 _shape_id(cfg.source), _shape_id(cfg.target))
    s1 = farthest_point_sample(mesh1, min(cfg.sample_count, mesh1.num_vertices))
    geo1 = geodesic_distances(mesh1, s1)
    union = [pmap.targets[s1]]
    if gt is not None:
        union.append(gt.targets[s1])
    geo2 = geodesic_distances(mesh2, np.unique(np.concatenate(union)))
    report = quality_report(pmap, fm, mesh1, mesh2, build_laplacian(mesh1),
                            geo1, geo2, s1, b1.eigenvalues, b2.eigenvalues)
    if gt is not None:
        report.accuracy = metric_accuracy(
            PointwiseMap(pmap.targets[s1], mesh2.num_vertices),
            PointwiseMap(gt.targets[s1], mesh2.num_vertices), geo2)
        report.metadata["accuracy_samples"] = int(s1.shape[0])
    report.metadata["energy_basis_size"] = k
    timings["metrics"] = time.perf_counter() - t0

    payload = report.to_json()
    _write_json(os.path.join(cfg.out_dir, "report.json"), payload)
    print(json.dumps(payload, indent=1, sort_keys=True))
    manifest = RunManifest(
        mode=cfg.mode,
        config=_config_snapshot(cfg),
        inputs=_input_digest(cfg),
        shape_ids=[_shape_id(cfg.source), _shape_id(cfg.target)],
        maps=[{"index": 0, "map_file": cfg.map_file, "report_file": "report.json"}],
    )
    return manifest, timings


def _run_select(cfg):
    timings = {}
    t0 = time.perf_counter()
    with open(cfg.pairs_file) as f:
        try:
            spec = json.load(f)
        except json.JSONDecodeError as exc:
            raise ParseError(f"pairs manifest {cfg.pairs_file}: {exc}") from exc
    base_dir = os.path.dirname(os.path.abspath(cfg.pairs_file))
    cand = CandidateSet()
    for entry in spec.get("pairs", []):
        a, b = str(entry["a"]), str(entry["b"])
        fmaps = []
        for rel in entry["candidates"]:
            fm = load_functional_map(os.path.join(base_dir, rel))
            fmaps.append(FunctionalMap(fm.matrix, a, b))
        cand.add_pair(a, b, fmaps, entry.get("init_scores"))
    triplets = [tuple(t) for t in spec.get("triplets", [])]
    timings["load"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    result = select_by_cycles(cand, triplets)
    timings["select"] = time.perf_counter() - t0
    _write_json(os.path.join(cfg.out_dir, "selection.json"), result.to_json())
    manifest = RunManifest(
        mode=cfg.mode,
        config=_config_snapshot(cfg),
        inputs=_input_digest(cfg),
        shape_ids=[str(s) for s in spec.get("shapes", [])],
        maps=[],
        extras={"selection_file": "selection.json", "sweeps": result.sweeps},
    )
    return manifest, timings


def _run_landscape(cfg):
    timings = {}
    t0 = time.perf_counter()
    mesh = _load_unit(cfg.source)
    timings["load"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    k = min(20, mesh.num_vertices)
    basis = basis_for_mesh(mesh, k)
    s = farthest_point_sample(mesh, min(cfg.sample_count, mesh.num_vertices))
    restricted = basis.restrict(s)
    geo_full = geodesic_distances(mesh, s)
    geo = GeodesicCache(np.arange(s.shape[0]), geo_full.distances[:, s])
    timings["basis"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    raw = random_maps(s.shape[0], s.shape[0], cfg.count, cfg.seed)
    rcfg = RefineConfig(k_init=2, k_step=1, k_final=k,
                        sample_count=max(k, s.shape[0]))
    refined = [zoomout(m, restricted, restricted, rcfg) for m in raw.maps]
    ensemble = MapEnsemble(refined)
    timings["refine"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    dist = distance_matrix(ensemble, geo)
    landscape = mds_embed(dist)
    ids = kmeans(landscape.coordinates, min(cfg.clusters, len(refined)), cfg.seed)
    landscape.cluster_ids = ids

    from .metrics import geodesic_distortion

    all_idx = np.arange(s.shape[0])
    distortions = [geodesic_distortion(m, geo, geo, all_idx) for m in refined]
    timings["landscape"] = time.perf_counter() - t0

    csv_rel = "landscape.csv"
    with open(os.path.join(cfg.out_dir, csv_rel), "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["map_id", "x", "y", "cluster", "geodesic_distortion"])
        for i in range(len(refined)):
            writer.writerow([i, repr(float(landscape.coordinates[i, 0])),
                             repr(float(landscape.coordinates[i, 1])),
                             int(ids[i]), repr(float(distortions[i]))])
    manifest = RunManifest(
        mode=cfg.mode,
        config=_config_snapshot(cfg),
        inputs=_input_digest(cfg),
        shape_ids=[_shape_id(cfg.source)],
        maps=[],
        extras={"landscape_file": csv_rel, "stress": landscape.stress,
                "count": cfg.count, "samples": int(s.shape[0])},
    )
    return manifest, timings


_RUNNERS = {
    "pair": _run_pair,
    "selfsym": _run_selfsym,
    "components": _run_components,
    "refine": _run_refine,
    "metrics": _run_metrics,
    "select": _run_select,
    "landscape": _run_landscape,
}


def run(config):
    """Execute one configured run; write all artifacts; return the manifest.

    On a library error a minimal failure manifest is written (when the output
    directory is usable) before the error propagates.
    """
    if config.mode not in _RUNNERS:
        raise ValidationError(f"unknown mode '{config.mode}'")
    os.makedirs(config.out_dir, exist_ok=True)
    start = time.perf_counter()
    try:
        _check_inputs(config)
        manifest, timings = _RUNNERS[config.mode](config)
    except MapTreeError as exc:
        _write_json(os.path.join(config.out_dir, "manifest.json"), {
            "status": "failed",
            "mode": config.mode,
            "error_class": type(exc).__name__,
            "message": str(exc),
        })
        raise
    timings["total"] = time.perf_counter() - start
    _write_json(os.path.join(config.out_dir, "timings.json"),
                {k: round(v, 6) for k, v in sorted(timings.items())})
    _write_json(os.path.join(config.out_dir, "manifest.json"), manifest.to_json())
    return manifest


def _exit_code(exc):
    """Stable nonzero exit code per error class (alphabetical, from 10)."""
    classes = sorted(
        (name for name in dir(_errors)
         if isinstance(getattr(_errors, name), type)
         and issubclass(getattr(_errors, name), MapTreeError)
         and getattr(_errors, name) is not MapTreeError),
    )
    try:
        return 10 + classes.index(type(exc).__name__)
    except ValueError:
        return 1


def main(argv=None):
    argv = sys.argv[1:] if argv is None else argv
    try:
        config = parse_config(argv)
    except UnknownFlag as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 64
    except (MapTreeError, TypeError) as exc:
        print(f"config error [{type(exc).__name__}]: {exc}", file=sys.stderr)
        return 64
    try:
        manifest = run(config)
    except MapTreeError as exc:
        print(f"error [{type(exc).__name__}] in mode '{config.mode}': {exc}",
              file=sys.stderr)
        return _exit_code(exc)
    print(f"wrote {os.path.join(config.out_dir, 'manifest.json')} "
          f"({len(manifest.maps)} map file(s))")
    return 0


if __name__ == "__main__":
    sys.exit(main())
