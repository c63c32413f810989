"""Choosing among candidate maps: cycle-consistency coordinate descent over
shape collections, and automatic self-symmetry picking with region extraction.

Conventions: a candidate C for pair (a, b) has rows in a's basis and columns
in b's; the reverse direction is taken as its transpose. All candidates
entering cycle products must share one common size.
"""

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import (
    DimensionMismatch,
    EmptyCandidates,
    MissingDistances,
    ValidationError,
)
from .fmap import energy_lap_comm


class CandidateSet:
    """Per-pair candidate functional maps plus the current selection.

    ``init_scores`` optionally carries one scalar per candidate (an
    orientation-error surrogate computed upstream); when present it seeds the
    selection at the per-pair argmin, otherwise index 0 is used.
    """

    def __init__(self):
        self.candidates = {}
        self.selection = {}
        self.init_scores = {}

    def add_pair(self, a, b, fmaps, init_scores=None):
        fmaps = list(fmaps)
        if not fmaps:
            raise EmptyCandidates(f"pair ({a}, {b}) has no candidates")
        dims = {(f.rows, f.cols) for f in fmaps}
        if len(dims) != 1:
            raise DimensionMismatch(f"pair ({a}, {b}) mixes candidate sizes {dims}")
        key = (str(a), str(b))
        self.candidates[key] = fmaps
        if init_scores is not None:
            scores = [float(s) for s in init_scores]
            if len(scores) != len(fmaps):
                raise ValidationError("one init score per candidate required")
            self.init_scores[key] = scores
            self.selection[key] = int(np.argmin(scores))
        else:
            self.selection[key] = 0

    def pairs(self):
        return sorted(self.candidates)

    def selected(self, a, b):
        """The currently selected map for (a, b); reversed pairs transpose."""
        key = (str(a), str(b))
        if key in self.candidates:
            return self.candidates[key][self.selection[key]]
        rev = (str(b), str(a))
        if rev in self.candidates:
            return self.candidates[rev][self.selection[rev]].transposed()
        raise EmptyCandidates(f"no candidates stored for pair ({a}, {b})")


def cycle_energy(c12, star, partners):
    """Triplet-consistency residual of a candidate for pair (1, 2).

    For every partner shape j the three composition residuals
    ||C_1j C_j2 - C_12||_F + ||C_12 C_2j - C_1j||_F + ||C_j1 C_12 - C_2j||_F
    are accumulated, using the current selections in ``star`` for every pair
    other than (1, 2) itself.
    """
    total = 0.0
    s1, s2 = c12.source_id, c12.target_id
    for j in partners:
        c1j = star.selected(s1, j)
        cj2 = star.selected(j, s2)
        c2j = star.selected(s2, j)
        cj1 = star.selected(j, s1)
        for m in (c1j, cj2, c2j, cj1):
            if m.matrix.shape != c12.matrix.shape:
                raise DimensionMismatch("cycle products need one common size")
        total += np.linalg.norm(c1j.matrix @ cj2.matrix - c12.matrix)
        total += np.linalg.norm(c12.matrix @ c2j.matrix - c1j.matrix)
        total += np.linalg.norm(cj1.matrix @ c12.matrix - c2j.matrix)
    return float(total)


@dataclass
class SelectionResult:
    """Outcome of the cycle sweep: chosen candidate index and final energy per
    pair, sweeps used, and the per-update (pair, before, after) energy trail."""

    chosen: dict
    energies: dict
    sweeps: int
    history: list = field(default_factory=list)

    def to_json(self):
        return {
            "chosen": {f"{a}|{b}": int(i) for (a, b), i in sorted(self.chosen.items())},
            "energies": {f"{a}|{b}": float(e) for (a, b), e in sorted(self.energies.items())},
            "sweeps": self.sweeps,
        }


def _partners_for(pair, triplets):
    a, b = pair
    partners = set()
    for t in triplets:
        t = [str(x) for x in t]
        if a in t and b in t:
            partners.update(x for x in t if x not in (a, b))
    return sorted(partners)


def select_by_cycles(candidates, triplets, max_sweeps=5):
    """Coordinate descent on cycle consistency over all pairs.

    Selections start at the orientation-surrogate argmin (or index 0). Pairs
    are swept in sorted order; each step switches a pair to its
    lowest-cycle-energy candidate, ties going to the lowest index, keeping the
    current choice unless the energy strictly improves. Stops after a sweep
    with no change, or after ``max_sweeps``.
    """
    if not candidates.candidates:
        raise EmptyCandidates("no pairs to select over")
    pair_list = candidates.pairs()
    history = []
    sweeps = 0
    for _ in range(max_sweeps):
        sweeps += 1
        changed = False
        for pair in pair_list:
            partners = _partners_for(pair, triplets)
            fmaps = candidates.candidates[pair]
            current = candidates.selection[pair]
            scores = []
            for fm in fmaps:
                scores.append(cycle_energy(fm, candidates, partners))
            best = int(np.argmin(scores))
            if scores[best] < scores[current]:
                history.append((pair, scores[current], scores[best]))
                candidates.selection[pair] = best
                changed = True
        if not changed:
            break
    energies = {}
    for pair in pair_list:
        partners = _partners_for(pair, triplets)
        fm = candidates.candidates[pair][candidates.selection[pair]]
        energies[pair] = cycle_energy(fm, candidates, partners)
    return SelectionResult(dict(candidates.selection), energies, sweeps, history)


class SelfSymmetryChoice(NamedTuple):
    index: int
    no_symmetry_found: bool
    displacements: tuple
    lap_comm_gate: float


def select_self_symmetry(candidates, eigs, geo, displacement_threshold=0.02):
    """Pick the self-map that is far from the identity yet spectrally clean.

    Candidates whose Laplacian-commutativity energy exceeds the set's median
    are gated out; among the rest the one with the largest mean geodesic
    displacement from the identity wins. When even the best displacement stays
    under ``displacement_threshold`` there is no real symmetry to report: the
    most identity-like candidate is returned with the flag set.

    The gate uses the upper order-statistic median (element ``n // 2`` of the
    sorted energies) rather than the interpolated one: with two candidates the
    interpolated midpoint would always exclude the larger energy, even when
    the two differ only by floating-point noise.

    :param candidates: list of (FunctionalMap, PointwiseMap) self-map pairs.
    :param eigs: the shape's eigenvalues (self-maps: both sides share them).
    :param geo: cache whose sources are the displacement sample vertices.
    """
    if not candidates:
        raise EmptyCandidates("no self-map candidates")
    lap = []
    for fm, _ in candidates:
        lap.append(energy_lap_comm(fm, eigs[:fm.rows], eigs[:fm.cols]))
    gate = float(np.sort(lap)[len(lap) // 2])

    disps = []
    for _, pmap in candidates:
        rows = []
        for r, v in enumerate(geo.sample_indices):
            rows.append(geo.distances[r, pmap.targets[v]])
        disps.append(float(np.mean(rows)))

    admissible = [i for i in range(len(candidates)) if lap[i] <= gate]
    best = max(admissible, key=lambda i: (disps[i], -i))
    if disps[best] < displacement_threshold:
        nearest_identity = int(np.argmin(disps))
        return SelfSymmetryChoice(nearest_identity, True, tuple(disps), gate)
    return SelfSymmetryChoice(best, False, tuple(disps), gate)


def extract_symmetric_region(pmap, geo, threshold=0.05, mesh=None):
    """Vertices participating in a partial self-symmetry.

    A vertex qualifies when its round trip T(T(v)) returns within
    ``threshold`` (normalized geodesic), and — when a mesh is supplied for
    1-ring lookups — its displacement d(v, T(v)) is no more than 3x the median
    displacement of its neighbors, which suppresses isolated NN outliers.

    :param geo: cache with every vertex of the shape as a source.
    :return: boolean mask over vertices.
    """
    n = pmap.domain_size
    rows = np.array([-1 if geo.row_of(v) is None else geo.row_of(v) for v in range(n)],
                    dtype=np.int64)
    if (rows < 0).any():
        raise MissingDistances("region extraction needs all vertices as geodesic sources")
    round_trip = geo.distances[rows, pmap.targets[pmap.targets]]
    mask = round_trip < threshold
    if mesh is None:
        return mask
    displacement = geo.distances[rows, pmap.targets]
    for v in range(n):
        if not mask[v]:
            continue
        ring = mesh.vertex_neighbors(v)
        local = float(np.median(displacement[ring]))
        if displacement[v] > 3.0 * local + 1e-12:
            mask[v] = False
    return mask
