"""Candidate-map tree: breadth-first enumeration of low-frequency map
initializations, refinement of each candidate, and pruning by algebraic
energies and duplicate detection.

A node holds a refined functional map of some (rows, cols) size; its children
extend it by one eigenvalue group per shape, enumerating every signed
injective assignment between the grouped basis functions. Children that
refine into a low-quality map, or into the same correspondence as an
earlier-created leaf, are pruned. Exploration stops growing a branch once its
map is larger than the ``kappa`` threshold; surviving leaves then get one full
refinement pass and a dense vertex-level readout.
"""

import json
import warnings
from dataclasses import dataclass
from itertools import permutations, product

import numpy as np

from .errors import (
    BasisExhausted,
    GroupTooLarge,
    PreconditionViolated,
    ValidationError,
    ZeroConstantSum,
)
from .fmap import (
    FunctionalMap,
    embed_block,
    energy_lap_comm,
    energy_ortho,
    fmap_to_json,
    functional_to_pointwise,
    pointwise_to_functional,
)
from .refine import MapPair, RefineConfig, bijective_zoomout, dense_readout, refine_node
from .spectral import group_eigenvalues


class NodeStatus:
    UNEXPLORED = "unexplored"
    EXPLORED = "explored"
    PRUNED_QUALITY = "pruned_quality"
    PRUNED_DUPLICATE = "pruned_duplicate"


@dataclass(frozen=True)
class ExplorationConfig:
    """Thresholds and budgets steering tree growth.

    epsilon_group: eigenvalue-grouping width (on unit-area spectra).
    epsilon_ortho / epsilon_lapcomm: pruning bounds on the normalized
        orthogonality / Laplacian-commutativity energies.
    kappa: a leaf stops expanding once max(rows, cols) exceeds this.
    max_group_size: largest eigenvalue group enumerated exhaustively.
    dedup_agreement: sample-agreement fraction that marks a duplicate.
    refine_budget: extra frequencies per in-tree refinement call.
    sample_count: vertices per shape used during exploration.
    k_final: size of the final full refinement of surviving leaves.
    max_leaves: hard cap on surviving leaves (guards runaway growth).
    """

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

    def __post_init__(self):
        if min(self.epsilon_group, self.epsilon_ortho, self.epsilon_lapcomm) <= 0:
            raise ValidationError("thresholds must be positive")
        if self.kappa < 2:
            raise ValidationError("kappa must be >= 2")
        if not 0.0 < self.dedup_agreement <= 1.0:
            raise ValidationError("dedup_agreement must be in (0, 1]")
        if min(self.max_group_size, self.refine_budget,
               self.sample_count, self.k_final, self.max_leaves) < 1:
            raise ValidationError("sizes and budgets must be >= 1")


class MapTreeNode:
    """One candidate map. ``energies`` holds the normalized
    (orthogonality, Laplacian-commutativity) pair recorded at pruning time;
    ``pair`` the refined sample-level pointwise maps; ``drift`` the Frobenius
    distance between this node's leading principal submatrix and its parent's
    map (how far refinement moved the shared block)."""

    def __init__(self, node_id, fmap, parent=None):
        self.node_id = node_id
        self.fmap = fmap
        self.parent = parent
        self.children = []
        self.status = NodeStatus.UNEXPLORED
        self.energies = None
        self.pair = None
        self.drift = None
        self.terminal = False
        self.dense_pair = None
        self.final_fmap = None
        self.final_energies = None

    @property
    def rows(self):
        return self.fmap.rows

    @property
    def cols(self):
        return self.fmap.cols

    @property
    def is_leaf(self):
        return not self.children

    @property
    def pruned(self):
        return self.status in (NodeStatus.PRUNED_QUALITY, NodeStatus.PRUNED_DUPLICATE)


class MapTree:
    """The full candidate tree plus bookkeeping for deterministic ordering."""

    def __init__(self, root, shape_ids, config):
        self.root = root
        self.shape_ids = shape_ids
        self.config = config
        self.nodes = [root]
        self.max_leaves_hit = False
        self.samples = None

    def new_node(self, fmap, parent):
        node = MapTreeNode(len(self.nodes), fmap, parent)
        self.nodes.append(node)
        return node

    def surviving_leaves(self):
        """Leaves that were not pruned, in creation order."""
        return [n for n in self.nodes if n.is_leaf and not n.pruned]


def init_tree(basis1, basis2, cfg, shape_ids=("S1", "S2")):
    """Root the tree at the 1x1 constant-to-constant map.

    The root value is the ratio of the plain vertex sums of the two first
    basis functions (target over source); on unit-area meshes both constants
    integrate the same way and the root is [[1]] up to discretization.
    """
    s1 = float(np.sum(basis1.eigenfunctions[:, 0]))
    s2 = float(np.sum(basis2.eigenfunctions[:, 0]))
    if abs(s1) < 1e-12 or abs(s2) < 1e-12:
        raise ZeroConstantSum("first basis function sums to zero")
    root_fmap = FunctionalMap(np.array([[s2 / s1]]), shape_ids[0], shape_ids[1])
    root = MapTreeNode(0, root_fmap)
    return MapTree(root, tuple(shape_ids), cfg)


def enumerate_signed_permutations(rows, cols, max_group_size=3):
    """All rows x cols matrices with entries in {0, +1, -1} assigning grouped
    basis functions injectively, signs included.

    For rows >= cols every column carries exactly one nonzero and every row at
    most one; when rows < cols the roles flip (every row exactly one nonzero),
    which keeps the assignment injective. Counts: n x n -> n! * 2^n,
    2 x 1 -> 4, 1 x 1 -> 2. Emission order is deterministic with the
    all-positive identity-like assignment first.

    :raises GroupTooLarge: max(rows, cols) exceeds ``max_group_size``.
    """
    if rows < 1 or cols < 1:
        raise ValidationError("rows and cols must be >= 1")
    if max(rows, cols) > max_group_size:
        raise GroupTooLarge(f"group of size {max(rows, cols)} exceeds cap {max_group_size}")
    flipped = rows < cols
    big, small = (cols, rows) if flipped else (rows, cols)
    out = []
    for placement in permutations(range(big), small):
        for signs in product((1.0, -1.0), repeat=small):
            m = np.zeros((big, small))
            m[placement, np.arange(small)] = signs
            out.append(m.T if flipped else m)
    return out


def _fallback_blocks(rows, cols):
    """Truncated candidate set for oversized eigenvalue groups: the
    rectangular identity plus its single-entry sign flips."""
    base = np.eye(rows, cols)
    out = [base]
    for i in range(min(rows, cols)):
        m = base.copy()
        m[i, i] = -1.0
        out.append(m)
    return out


def _normalized_energies(fmap, basis1, basis2):
    """Pruning energies made size- and scale-comparable.

    Orthogonality is divided by the larger map dimension; commutativity by the
    squared spectral range covered by the map, so a fixed threshold works at
    any tree depth.
    """
    r, c = fmap.rows, fmap.cols
    eigs1 = basis1.eigenvalues[:r]
    eigs2 = basis2.eigenvalues[:c]
    e_ortho = energy_ortho(fmap) / max(r, c)
    spread = max(eigs1[-1], eigs2[-1]) - min(eigs1[0], eigs2[0])
    e_lap = energy_lap_comm(fmap, eigs1, eigs2) / max(spread, 1e-30) ** 2
    return e_ortho, e_lap


def expand_node(tree, node, bases, refiner=refine_node):
    """Grow one node: group the next eigenvalues on both shapes, enumerate
    signed assignments between the groups, refine each block-extended
    candidate, and attach the results as unexplored children.

    :param bases: (basis1, basis2) the exploration bases (possibly restricted
        to the sample vertices).
    :param refiner: callable with the signature of
        :func:`maptree.refine.refine_node`.
    :return: the freshly attached children, ordered by ascending energy sum.
    :raises BasisExhausted: no further basis function exists on some shape;
        the node is marked explored and stays a (terminal) leaf.
    """
    if node.status != NodeStatus.UNEXPLORED:
        raise PreconditionViolated(f"node {node.node_id} is {node.status}")
    basis1, basis2 = bases
    cfg = tree.config
    if node.rows >= basis1.num_functions or node.cols >= basis2.num_functions:
        node.status = NodeStatus.EXPLORED
        node.terminal = True
        raise BasisExhausted(f"node {node.node_id} at the end of a basis")

    # eigenvalue labels are 1-based: a node of size r has consumed labels
    # 1..r, so the next unexplored label is r + 1
    g1 = group_eigenvalues(basis1, node.rows + 1, cfg.epsilon_group)
    g2 = group_eigenvalues(basis2, node.cols + 1, cfg.epsilon_group)
    rows = g1[1] - g1[0] + 1
    cols = g2[1] - g2[0] + 1
    try:
        blocks = enumerate_signed_permutations(rows, cols, cfg.max_group_size)
    except GroupTooLarge:
        warnings.warn(
            f"eigenvalue group of size {max(rows, cols)} exceeds "
            f"max_group_size={cfg.max_group_size}; falling back to "
            f"identity-plus-sign-flip candidates", RuntimeWarning)
        blocks = _fallback_blocks(rows, cols)

    children = []
    for block in blocks:
        seed = embed_block(node.fmap, block)
        refined, pair = refiner(seed, basis1, basis2, cfg.refine_budget)
        child = tree.new_node(refined, node)
        child.pair = pair
        child.energies = _normalized_energies(refined, basis1, basis2)
        child.drift = float(
            np.linalg.norm(refined.matrix[:node.rows, :node.cols] - node.fmap.matrix)
        )
        children.append(child)

    children.sort(key=lambda c: (c.energies[0] + c.energies[1], c.node_id))
    node.children = children
    node.status = NodeStatus.EXPLORED
    return children


def prune(tree, new_children):
    """Apply both pruning rules to freshly refined children.

    Rule 1 discards children whose normalized orthogonality or commutativity
    energy exceeds its threshold. Rule 2 discards a child whose sample-level
    map agrees with an earlier-created surviving leaf of the same size on at
    least ``dedup_agreement`` of the samples — the earlier leaf wins.
    """
    cfg = tree.config
    for child in sorted(new_children, key=lambda c: c.node_id):
        eo, el = child.energies
        if eo > cfg.epsilon_ortho or el > cfg.epsilon_lapcomm:
            child.status = NodeStatus.PRUNED_QUALITY
            continue
        for other in tree.nodes:
            if (other.node_id < child.node_id
                    and other.is_leaf and not other.pruned
                    and other.pair is not None
                    and other.rows == child.rows and other.cols == child.cols
                    and other.pair.pi_12.agreement(child.pair.pi_12) >= cfg.dedup_agreement):
                child.status = NodeStatus.PRUNED_DUPLICATE
                break


def _pair_from_fmap(fmap, basis1, basis2):
    from .fmap import PointwiseMap

    pi12 = functional_to_pointwise(fmap, basis1, basis2)
    pi21 = functional_to_pointwise(fmap.transposed(), basis2, basis1)
    return MapPair(pi12, pi21)


def _finalize_leaf(leaf, expl1, expl2, full1, full2, cfg):
    """Full refinement of a surviving leaf followed by a dense readout.

    Upsampling runs on the exploration bases to ``k_final``; the resulting
    sample-level pair is encoded at full size and a single dense NN pass on
    the concatenated embeddings produces vertex-level maps in both directions.
    """
    k_cap = min(cfg.k_final, expl1.num_functions, expl2.num_functions)
    k0 = max(leaf.rows, leaf.cols)
    pair = leaf.pair or _pair_from_fmap(leaf.fmap, expl1, expl2)
    if k0 < k_cap:
        rcfg = RefineConfig(
            k_init=k0, k_step=1, k_final=k_cap,
            sample_count=max(k_cap, min(expl1.num_vertices, expl2.num_vertices)),
        )
        pair = bijective_zoomout(pair, expl1, expl2, rcfg)
    k = k_cap
    leaf.dense_pair = dense_readout(pair, expl1, expl2, full1, full2, k)
    leaf.final_fmap = pointwise_to_functional(
        leaf.dense_pair.pi_12, full1, full2, k, k,
        source_id=leaf.fmap.source_id, target_id=leaf.fmap.target_id,
    )


def explore(tree, bases, refiner=refine_node, samples=None):
    """Run the full exploration loop on an initialized tree.

    Unexplored leaves are processed breadth-first in creation order. A leaf
    whose map is larger than ``kappa`` in its bigger dimension is left as a
    survivor; anything smaller is expanded and its children pruned. When the
    survivor count reaches ``max_leaves`` expansion stops early (recorded on
    the tree). Afterwards every surviving leaf is refined to ``k_final``,
    given dense vertex-level maps, and passed through the pruning gates once
    more at the final size (junk that limped through at small sizes shows its
    true energies there).

    :param bases: (basis1, basis2) full-resolution bases.
    :param samples: optional (indices1, indices2) exploration subsets; when
        given, expansion and refinement run on the restricted bases and only
        the final readout touches all vertices.
    """
    full1, full2 = bases
    if samples is not None:
        expl1 = full1.restrict(samples[0])
        expl2 = full2.restrict(samples[1])
        tree.samples = (np.asarray(samples[0], dtype=np.int64),
                        np.asarray(samples[1], dtype=np.int64))
    else:
        expl1, expl2 = full1, full2
    cfg = tree.config

    queue = [n for n in tree.nodes if n.status == NodeStatus.UNEXPLORED]
    while queue:
        node = queue.pop(0)
        if node.status != NodeStatus.UNEXPLORED:
            continue
        if max(node.rows, node.cols) > cfg.kappa:
            continue
        survivors = len(tree.surviving_leaves())
        if survivors >= cfg.max_leaves:
            tree.max_leaves_hit = True
            break
        try:
            children = expand_node(tree, node, (expl1, expl2), refiner)
        except BasisExhausted:
            continue
        prune(tree, children)
        queue.extend(c for c in children if c.status == NodeStatus.UNEXPLORED)

    finalized = tree.surviving_leaves()
    for leaf in finalized:
        _finalize_leaf(leaf, expl1, expl2, full1, full2, cfg)

    # The discard rules apply to refined maps wherever they arise, so the
    # fully refined leaves pass through the same two gates: energies at the
    # final size, then vertex-level duplicates (earlier creation wins).
    for leaf in finalized:
        eo, el = _normalized_energies(leaf.final_fmap, full1, full2)
        leaf.final_energies = (eo, el)
        if eo > cfg.epsilon_ortho or el > cfg.epsilon_lapcomm:
            leaf.status = NodeStatus.PRUNED_QUALITY
    kept = []
    for leaf in (l for l in finalized if not l.pruned):
        for other in kept:
            if other.dense_pair.pi_12.agreement(leaf.dense_pair.pi_12) >= cfg.dedup_agreement:
                leaf.status = NodeStatus.PRUNED_DUPLICATE
                break
        else:
            kept.append(leaf)
    return tree


def check_recovered_isometries(tree, known_isometries, kappa, basis1, basis2):
    """Compare surviving leaves against a known isometry list.

    Each known vertex-level isometry is encoded as a kappa-sized functional
    map whose diagonal signs form its signature; the check passes iff the set
    of signatures of surviving leaves (leading kappa diagonal) equals the set
    derived from the known isometries. Only meaningful when the first kappa
    eigenvalues are simple and shared by both shapes.

    :raises PreconditionViolated: near-repeated eigenvalues make diagonal
        signatures basis-dependent, so the comparison would be meaningless.
    """
    e1 = basis1.eigenvalues[:kappa + 1]
    e2 = basis2.eigenvalues[:kappa + 1]
    scale = max(e1[-1], e2[-1], 1e-30)
    if np.min(np.diff(e1)) < 1e-3 * scale or np.min(np.diff(e2)) < 1e-3 * scale:
        raise PreconditionViolated("spectrum is not simple up to kappa")
    if np.max(np.abs(e1 - e2)) > 1e-3 * scale:
        raise PreconditionViolated("the two spectra differ up to kappa")

    expected = set()
    for iso in known_isometries:
        c = pointwise_to_functional(iso, basis1, basis2, kappa, kappa)
        expected.add(tuple(int(s) for s in np.sign(np.round(np.diag(c.matrix), 6))))
    found = set()
    for leaf in tree.surviving_leaves():
        if min(leaf.rows, leaf.cols) < kappa:
            return False
        found.add(tuple(int(s) for s in np.sign(np.round(np.diag(leaf.fmap.matrix)[:kappa], 6))))
    return expected == found


def tree_to_json(tree, map_files=None):
    """Serializable dict: nodes in creation order with id, parent_id, dims,
    status, energies, drift, and the node-size fmap payload; surviving leaves
    additionally reference their dense map files when ``map_files`` (dict
    node_id -> path) is given."""
    map_files = map_files or {}
    nodes = []
    for n in tree.nodes:
        entry = {
            "id": n.node_id,
            "parent_id": None if n.parent is None else n.parent.node_id,
            "dims": [n.rows, n.cols],
            "status": n.status,
            "energies": None if n.energies is None else
                {"ortho": n.energies[0], "lap_comm": n.energies[1]},
            "final_energies": None if n.final_energies is None else
                {"ortho": n.final_energies[0], "lap_comm": n.final_energies[1]},
            "drift": n.drift,
            "fmap": fmap_to_json(n.fmap),
        }
        if n.node_id in map_files:
            entry["map_file"] = map_files[n.node_id]
        nodes.append(entry)
    return {
        "shape_ids": list(tree.shape_ids),
        "max_leaves_hit": tree.max_leaves_hit,
        "nodes": nodes,
    }


def save_tree(tree, path, map_files=None):
    with open(path, "w") as out:
        json.dump(tree_to_json(tree, map_files), out, indent=1, sort_keys=True)
