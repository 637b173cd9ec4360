"""Centerline skeletons, vascular graphs, and anatomical points of interest.

A binary vessel mask is thinned to a 1-voxel skeleton
(topology-preserving medial-axis thinning, 26-connected foreground /
6-connected background), then converted into a graph: voxels with one
skeleton neighbor become endpoint nodes, voxels with three or more
become junction nodes (adjacent junction voxels merge into a single
node), and chains of 2-neighbor voxels become edges carrying their
ordered centerline.  Points of interest are the nodes plus each edge's
centerline midpoint.

Degenerate skeleton shapes are handled conservatively: isolated voxels
are dropped, and a pure cycle gets a single anchor node with a self-loop
edge (counted twice in that node's degree).
"""

from __future__ import annotations

import itertools
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import ndimage as ndi
from skimage.morphology import skeletonize as _thin3d

from .errors import InputError
from .volume import PatchGrid, PatchIndex, Volume3D, linear_index, patches_containing

log = logging.getLogger(__name__)

_STRUCT26 = np.ones((3, 3, 3), dtype=bool)
# Fixed 26-neighborhood scan order (x-fastest) keeps all traversals deterministic.
_OFFSETS = tuple(
    (dx, dy, dz)
    for dz, dy, dx in itertools.product((-1, 0, 1), repeat=3)
    if (dx, dy, dz) != (0, 0, 0)
)

POI_KINDS = ("bifurcation", "endpoint", "midpoint")


@dataclass(frozen=True)
class GraphNode:
    id: int
    position: tuple[int, int, int]
    degree: int


@dataclass(frozen=True)
class GraphEdge:
    id: int
    n0: int
    n1: int
    centerline: tuple[tuple[int, int, int], ...]


@dataclass(frozen=True)
class VesselGraph:
    nodes: tuple[GraphNode, ...]
    edges: tuple[GraphEdge, ...]

    @property
    def is_empty(self) -> bool:
        return not self.nodes and not self.edges


@dataclass(frozen=True)
class POI:
    """An anatomically meaningful voxel: node or centerline midpoint."""

    poi_id: int
    position: tuple[int, int, int]
    kind: str
    source_id: int
    patch_memberships: tuple[PatchIndex, ...]


# --- simple-point machinery for the sequential thinning fallback ----------

_N26 = tuple(
    (dx, dy, dz)
    for dx in (-1, 0, 1) for dy in (-1, 0, 1) for dz in (-1, 0, 1)
    if (dx, dy, dz) != (0, 0, 0)
)
_ADJ26 = [
    [j for j in range(26) if j != i
     and max(abs(_N26[i][0] - _N26[j][0]), abs(_N26[i][1] - _N26[j][1]),
             abs(_N26[i][2] - _N26[j][2])) <= 1]
    for i in range(26)
]
_N18_IDX = [i for i, o in enumerate(_N26) if sum(map(abs, o)) <= 2]
_N6_IDX = [i for i, o in enumerate(_N26) if sum(map(abs, o)) == 1]
_ADJ6_18 = {
    i: [j for j in _N18_IDX if sum(abs(a - b) for a, b in zip(_N26[i], _N26[j])) == 1]
    for i in _N18_IDX
}


def _is_simple(nb: list) -> bool:
    """Topological simple-point test on a 26-neighborhood occupancy list.

    A voxel is simple iff its foreground neighbors form exactly one
    26-connected component and the background in its 18-neighborhood
    forms exactly one 6-connected component touching a face neighbor.
    """
    fg = [i for i in range(26) if nb[i]]
    if not fg:
        return False
    seen = {fg[0]}
    stack = [fg[0]]
    fg_set = set(fg)
    while stack:
        i = stack.pop()
        for j in _ADJ26[i]:
            if j in fg_set and j not in seen:
                seen.add(j)
                stack.append(j)
    if len(seen) != len(fg):
        return False  # foreground would split

    bg_faces = [i for i in _N6_IDX if not nb[i]]
    if not bg_faces:
        return False  # interior voxel
    bg18 = {i for i in _N18_IDX if not nb[i]}
    seen_bg = {bg_faces[0]}
    stack = [bg_faces[0]]
    while stack:
        i = stack.pop()
        for j in _ADJ6_18[i]:
            if j in bg18 and j not in seen_bg:
                seen_bg.add(j)
                stack.append(j)
    return all(f in seen_bg for f in bg_faces)


def _geodesic_pole(mask: np.ndarray, start) -> tuple:
    """Voxel 26-geodesically farthest from ``start`` (ties by linear index)."""
    dims = mask.shape
    seen = {start}
    frontier = [start]
    last = [start]
    while frontier:
        nxt = []
        for v in frontier:
            for dx, dy, dz in _N26:
                w = (v[0] + dx, v[1] + dy, v[2] + dz)
                if (
                    0 <= w[0] < dims[0] and 0 <= w[1] < dims[1] and 0 <= w[2] < dims[2]
                    and mask[w] and w not in seen
                ):
                    seen.add(w)
                    nxt.append(w)
        if nxt:
            last = nxt
        frontier = nxt
    return min(last, key=lambda v: linear_index(v, dims))


def _thin_component(mask: np.ndarray) -> np.ndarray:
    """Distance-ordered homotopic thinning of one small component.

    Sequential simple-point removal, peeling in increasing distance
    order.  The component's two geodesic poles are anchored so the
    surviving curve always spans the full structure (symmetric
    even-width shapes would otherwise erode from their end faces), and
    emerging curve endpoints are kept.  Only simple points are ever
    deleted, so topology is preserved by construction.
    """
    import heapq

    skel = mask.copy()
    dims = skel.shape
    first = min((tuple(int(c) for c in v) for v in np.argwhere(skel)),
                key=lambda v: linear_index(v, dims))
    pole_a = _geodesic_pole(skel, first)
    pole_b = _geodesic_pole(skel, pole_a)
    anchors = {pole_a, pole_b}

    dist = ndi.distance_transform_edt(skel)
    heap = [
        (float(dist[tuple(v)]), linear_index(v, dims), tuple(int(c) for c in v))
        for v in np.argwhere(skel)
    ]
    heapq.heapify(heap)
    while heap:
        _, _, v = heapq.heappop(heap)
        if not skel[v] or v in anchors:
            continue
        nb = []
        fg_count = 0
        for dx, dy, dz in _N26:
            x, y, z = v[0] + dx, v[1] + dy, v[2] + dz
            inside = 0 <= x < dims[0] and 0 <= y < dims[1] and 0 <= z < dims[2]
            occupied = bool(inside and skel[x, y, z])
            nb.append(occupied)
            fg_count += occupied
        if fg_count == 1:
            continue  # endpoint of a curve: keep
        if not _is_simple(nb):
            continue
        skel[v] = False
        for dx, dy, dz in _N26:
            x, y, z = v[0] + dx, v[1] + dy, v[2] + dz
            if 0 <= x < dims[0] and 0 <= y < dims[1] and 0 <= z < dims[2] and skel[x, y, z]:
                w = (x, y, z)
                heapq.heappush(heap, (float(dist[w]), linear_index(w, dims), w))
    return skel


def skeletonize(mask: Volume3D) -> Volume3D:
    """Thin a binary mask to a 1-voxel-wide centerline skeleton.

    Preserves the 26-connected component count and leaves already-thin
    lines unchanged.  The fast parallel thinning pass can delete or split
    components with perfectly even-symmetric cross-sections (observed in
    scikit-image's 3D skeletonize); any input component whose skeleton
    comes back empty or disconnected is redone with a sequential
    distance-ordered homotopic thinning that cannot break topology.
    """
    if mask.kind != "binary-mask":
        vals = np.unique(mask.data)
        if not np.isin(vals, (0, 1)).all():
            raise InputError("skeletonize expects a binary mask")
    fg = mask.data.astype(bool)
    thin = _thin3d(fg).astype(bool)

    labels, n = ndi.label(fg, structure=_STRUCT26)
    if n:
        objects = ndi.find_objects(labels)
        for i, sl in enumerate(objects, start=1):
            comp = labels[sl] == i
            got = thin[sl] & comp
            ok = got.any() and ndi.label(got, structure=_STRUCT26)[1] == 1
            if not ok:
                log.debug("rethinning component %d with the sequential fallback", i)
                thin[sl] = np.where(comp, _thin_component(comp), thin[sl])
    return Volume3D(thin.astype(np.uint8), mask.spacing, "binary-mask")


def _neighbor_counts(skel: np.ndarray) -> np.ndarray:
    full = ndi.convolve(skel.astype(np.uint8), _STRUCT26.astype(np.uint8), mode="constant")
    return full - skel.astype(np.uint8)


def _neighbors(skel: np.ndarray, v: tuple[int, int, int]):
    nx, ny, nz = skel.shape
    for dx, dy, dz in _OFFSETS:
        x, y, z = v[0] + dx, v[1] + dy, v[2] + dz
        if 0 <= x < nx and 0 <= y < ny and 0 <= z < nz and skel[x, y, z]:
            yield (x, y, z)


def _sorted_voxels(coords: np.ndarray, dims) -> list[tuple[int, int, int]]:
    voxels = [tuple(int(c) for c in row) for row in coords]
    voxels.sort(key=lambda v: linear_index(v, dims))
    return voxels


def _cluster_path(members: set, start, goal) -> list[tuple[int, int, int]]:
    """Shortest 26-adjacency path between two voxels of one cluster (BFS)."""
    if start == goal:
        return [start]
    prev = {start: None}
    frontier = [start]
    while frontier:
        nxt_frontier = []
        for v in frontier:
            for dx, dy, dz in _OFFSETS:
                w = (v[0] + dx, v[1] + dy, v[2] + dz)
                if w in members and w not in prev:
                    prev[w] = v
                    if w == goal:
                        path = [w]
                        while prev[path[-1]] is not None:
                            path.append(prev[path[-1]])
                        return path[::-1]
                    nxt_frontier.append(w)
        frontier = nxt_frontier
    raise RuntimeError("junction cluster unexpectedly disconnected")


def build_graph(skeleton: Volume3D) -> VesselGraph:
    """Convert a thin skeleton into nodes and centerline edges."""
    skel = skeleton.data.astype(bool)
    dims = skel.shape
    if not skel.any():
        return VesselGraph((), ())
    counts = _neighbor_counts(skel)

    junction_mask = skel & (counts >= 3)
    end_mask = skel & (counts == 1)
    iso_mask = skel & (counts == 0)
    if iso_mask.any():
        log.debug("dropping %d isolated skeleton voxel(s)", int(iso_mask.sum()))

    # Node seeds: junction clusters and endpoint voxels, ordered by their
    # first voxel in x-fastest linear order.
    members_by_node: list[list[tuple[int, int, int]]] = []
    positions: list[tuple[int, int, int]] = []
    jlabels, n_clusters = ndi.label(junction_mask, structure=_STRUCT26)
    seeds = []
    for label in range(1, n_clusters + 1):
        voxels = _sorted_voxels(np.argwhere(jlabels == label), dims)
        centroid = np.mean(voxels, axis=0)
        target = np.rint(centroid)
        best = min(
            voxels,
            key=lambda v: (float(((np.asarray(v) - target) ** 2).sum()), linear_index(v, dims)),
        )
        seeds.append((linear_index(voxels[0], dims), voxels, best))
    for v in _sorted_voxels(np.argwhere(end_mask), dims):
        seeds.append((linear_index(v, dims), [v], v))
    seeds.sort(key=lambda s: s[0])

    node_of: dict[tuple[int, int, int], int] = {}
    for node_id, (_, voxels, position) in enumerate(seeds):
        members_by_node.append(voxels)
        positions.append(position)
        for v in voxels:
            node_of[v] = node_id

    chain_mask = skel & (counts == 2) & ~junction_mask
    visited = np.zeros(dims, dtype=bool)
    raw_edges: list[tuple[int, int, list[tuple[int, int, int]]]] = []
    seen_direct: set[frozenset] = set()

    def trace_from(node_id: int, start_voxel, first_chain) -> None:
        path = [start_voxel, first_chain]
        visited[first_chain] = True
        prev, cur = start_voxel, first_chain
        while True:
            nxt = None
            for w in _neighbors(skel, cur):
                if w != prev:
                    nxt = w
                    break
            if nxt is None:  # dangling chain (numerically impossible for deg-2 voxels)
                raw_edges.append((node_id, node_id, path))
                return
            other = node_of.get(nxt)
            if other is not None:
                path.append(nxt)
                raw_edges.append((node_id, other, path))
                return
            path.append(nxt)
            visited[nxt] = True
            prev, cur = cur, nxt

    for node_id, voxels in enumerate(members_by_node):
        for nv in voxels:
            for w in _neighbors(skel, nv):
                other = node_of.get(w)
                if other == node_id:
                    continue
                if other is not None:
                    key = frozenset((nv, w))
                    if key in seen_direct:
                        continue
                    seen_direct.add(key)
                    raw_edges.append((node_id, other, [nv, w]))
                elif chain_mask[w] and not visited[w]:
                    trace_from(node_id, nv, w)

    # Pure cycles (no node voxel at all): anchor one node and a self-loop.
    remaining = chain_mask & ~visited
    while remaining.any():
        anchor = _sorted_voxels(np.argwhere(remaining), dims)[0]
        node_id = len(members_by_node)
        members_by_node.append([anchor])
        positions.append(anchor)
        node_of[anchor] = node_id
        first = next(iter(_neighbors(skel, anchor)))
        trace_from(node_id, anchor, first)
        visited[anchor] = True
        remaining = chain_mask & ~visited

    # Extend centerlines through junction clusters so they start and end
    # exactly at the node positions.
    edges: list[GraphEdge] = []
    degrees = [0] * len(members_by_node)
    for edge_id, (a, b, path) in enumerate(raw_edges):
        head = _cluster_path(set(members_by_node[a]), positions[a], path[0])
        tail = _cluster_path(set(members_by_node[b]), path[-1], positions[b])
        centerline = tuple(head + path[1:-1] + tail) if len(path) > 1 else tuple(head)
        edges.append(GraphEdge(edge_id, a, b, centerline))
        degrees[a] += 1
        degrees[b] += 1

    nodes = tuple(
        GraphNode(i, positions[i], degrees[i]) for i in range(len(members_by_node))
    )
    # Nodes that lost all their edges can only arise from isolated voxels,
    # which were never seeded; every seeded node has degree >= 1.
    return VesselGraph(nodes, tuple(edges))


# ---------------------------------------------------------------------------
# POIs
# ---------------------------------------------------------------------------


def _snap_to_foreground(mask: np.ndarray, pos):
    """Nearest foreground voxel in the 3x3x3 neighborhood, or None."""
    if mask[pos]:
        return pos
    dims = mask.shape
    best = None
    best_key = None
    for dx, dy, dz in _OFFSETS:
        q = (pos[0] + dx, pos[1] + dy, pos[2] + dz)
        if not all(0 <= q[a] < dims[a] for a in range(3)):
            continue
        if not mask[q]:
            continue
        key = (dx * dx + dy * dy + dz * dz, linear_index(q, dims))
        if best_key is None or key < best_key:
            best, best_key = q, key
    return best


def select_pois(graph: VesselGraph, mask: Volume3D, grid: PatchGrid) -> list[POI]:
    """One POI per node (kind from degree) plus one per edge midpoint.

    Node positions that fall on background after centroid rounding are
    snapped to the nearest foreground voxel within one voxel, or dropped
    with a warning.  Output order is fixed by (kind, source id).
    """
    fg = mask.data > 0
    raw: list[tuple[str, int, tuple[int, int, int]]] = []
    for node in graph.nodes:
        kind = "bifurcation" if node.degree >= 3 else "endpoint"
        raw.append((kind, node.id, node.position))
    for edge in graph.edges:
        mid = edge.centerline[len(edge.centerline) // 2]
        raw.append(("midpoint", edge.id, mid))
    raw.sort(key=lambda r: (r[0], r[1]))

    pois: list[POI] = []
    for kind, source_id, pos in raw:
        snapped = _snap_to_foreground(fg, pos)
        if snapped is None:
            log.warning("dropping %s POI at %s: no foreground within 1 voxel", kind, pos)
            continue
        memberships = tuple(patches_containing(grid, snapped))
        pois.append(POI(len(pois), snapped, kind, source_id, memberships))
    return pois


def classify_poi_status(
    poi: POI,
    patch: PatchIndex,
    grid: PatchGrid,
    prediction: Volume3D,
    gt: Volume3D,
) -> str:
    """TP/FP/FN/TN of the (prediction, ground truth) bits at the POI voxel.

    ``prediction`` may be the patch-sized stitching-free prediction for
    ``patch`` or a full-size volume.
    """
    start = grid.start_of(patch)
    local = tuple(poi.position[a] - start[a] for a in range(3))
    p = grid.patch_size
    if not all(0 <= local[a] < p for a in range(3)):
        raise InputError(f"POI {poi.position} outside patch {tuple(patch)}")
    if prediction.dims == (p, p, p):
        pred_bit = int(prediction.data[local] > 0)
    elif prediction.dims == gt.dims:
        pred_bit = int(prediction.data[poi.position] > 0)
    else:
        raise InputError(
            f"prediction dims {prediction.dims} match neither patch ({p},{p},{p}) nor volume {gt.dims}"
        )
    gt_bit = int(gt.data[poi.position] > 0)
    if pred_bit and gt_bit:
        return "TP"
    if pred_bit:
        return "FP"
    if gt_bit:
        return "FN"
    return "TN"


# ---------------------------------------------------------------------------
# Graph document I/O
# ---------------------------------------------------------------------------


def write_graph_json(graph: VesselGraph, path: str | Path) -> None:
    doc = {
        "nodes": [
            {"id": n.id, "pos": list(n.position), "degree": n.degree} for n in graph.nodes
        ],
        "edges": [
            {
                "id": e.id,
                "n0": e.n0,
                "n1": e.n1,
                "centerline": [list(v) for v in e.centerline],
            }
            for e in graph.edges
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def read_graph_json(path: str | Path) -> VesselGraph:
    """Load a graph document, e.g. one exported by an external extractor."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: malformed graph JSON ({exc})") from exc
    try:
        nodes = tuple(
            GraphNode(int(n["id"]), tuple(int(c) for c in n["pos"]), int(n["degree"]))
            for n in doc["nodes"]
        )
        edges = tuple(
            GraphEdge(
                int(e["id"]),
                int(e["n0"]),
                int(e["n1"]),
                tuple(tuple(int(c) for c in v) for v in e["centerline"]),
            )
            for e in doc["edges"]
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"{path}: graph document missing fields ({exc})") from exc
    return VesselGraph(nodes, edges)
