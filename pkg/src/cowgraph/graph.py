"""Attributed centerline graphs traced from labeled skeletons.

Graph nodes sit at skeleton voxels whose 26-neighbor count differs from two
and at label transitions; edges carry the polyline of world points walked
between nodes plus the anatomical label of their chain.  Post-processing
extracts the named anatomical nodes, removes spurious edges with rule-based
checks, and trims/smooths the polylines.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from . import labels as L
from .thinning import neighbor_count_26
from .volume import DistanceField, LabeledMask, Volume

_OFFSETS26 = [
    (dx, dy, dz)
    for dx in (-1, 0, 1)
    for dy in (-1, 0, 1)
    for dz in (-1, 0, 1)
    if (dx, dy, dz) != (0, 0, 0)
]


@dataclass
class GraphNode:
    id: int
    coords: np.ndarray
    voxel: tuple[int, int, int] | None = None


@dataclass
class GraphEdge:
    id: int
    u: int
    v: int
    points: np.ndarray  # (N, 3) world mm; points[0] at node u, points[-1] at node v
    label: int
    ce_radius: np.ndarray | None = None
    mis_radius: np.ndarray | None = None

    def arc_length(self) -> float:
        return float(np.linalg.norm(np.diff(self.points, axis=0), axis=1).sum())


class CenterlineGraph:
    """Spatial multigraph with polyline edges and anatomical labels."""

    def __init__(self, grid: Volume):
        self.grid = grid  # geometry carrier for world/voxel transforms
        self.nodes: dict[int, GraphNode] = {}
        self.edges: dict[int, GraphEdge] = {}
        self._incident: dict[int, list[int]] = {}
        self._next_node = 0
        self._next_edge = 0
        self.diagnostics: list[str] = []

    # -- construction -----------------------------------------------------
    def add_node(self, coords, voxel=None) -> int:
        nid = self._next_node
        self._next_node += 1
        self.nodes[nid] = GraphNode(nid, np.asarray(coords, dtype=np.float64), voxel)
        self._incident[nid] = []
        return nid

    def add_edge(self, u: int, v: int, points, label: int) -> int:
        eid = self._next_edge
        self._next_edge += 1
        pts = np.asarray(points, dtype=np.float64)
        self.edges[eid] = GraphEdge(eid, u, v, pts, int(label))
        self._incident[u].append(eid)
        if v != u:
            self._incident[v].append(eid)
        return eid

    def remove_edge(self, eid: int) -> None:
        edge = self.edges.pop(eid)
        self._incident[edge.u].remove(eid)
        if edge.v != edge.u:
            self._incident[edge.v].remove(eid)

    def prune_isolated_nodes(self) -> None:
        for nid in [n for n, inc in self._incident.items() if not inc]:
            del self._incident[nid]
            del self.nodes[nid]

    def copy(self) -> "CenterlineGraph":
        out = CenterlineGraph(self.grid)
        out.nodes = {
            nid: GraphNode(nid, n.coords.copy(), n.voxel) for nid, n in self.nodes.items()
        }
        out.edges = {
            eid: GraphEdge(
                eid,
                e.u,
                e.v,
                e.points.copy(),
                e.label,
                None if e.ce_radius is None else e.ce_radius.copy(),
                None if e.mis_radius is None else e.mis_radius.copy(),
            )
            for eid, e in self.edges.items()
        }
        out._incident = {nid: list(inc) for nid, inc in self._incident.items()}
        out._next_node = self._next_node
        out._next_edge = self._next_edge
        out.diagnostics = list(self.diagnostics)
        return out

    # -- queries -----------------------------------------------------------
    def degree(self, nid: int) -> int:
        return sum(2 if self.edges[e].u == self.edges[e].v else 1 for e in self._incident[nid])

    def incident_edges(self, nid: int) -> list[int]:
        return list(self._incident[nid])

    def neighbors(self, nid: int) -> list[tuple[int, int]]:
        """(other node, edge id) pairs, self-loops listed once."""
        out = []
        for eid in self._incident[nid]:
            e = self.edges[eid]
            out.append((e.v if e.u == nid else e.u, eid))
        return out

    def n_components(self) -> int:
        seen: set[int] = set()
        comps = 0
        for start in self.nodes:
            if start in seen:
                continue
            comps += 1
            stack = [start]
            seen.add(start)
            while stack:
                n = stack.pop()
                for other, _ in self.neighbors(n):
                    if other not in seen:
                        seen.add(other)
                        stack.append(other)
        return comps

    def cycle_rank(self) -> int:
        return len(self.edges) - len(self.nodes) + self.n_components()

    def total_points(self) -> int:
        return sum(len(e.points) for e in self.edges.values())

    def edge_is_bridge(self, eid: int) -> bool:
        e = self.edges[eid]
        if e.u == e.v:
            return False
        seen = {e.u}
        stack = [e.u]
        while stack:
            n = stack.pop()
            for other, via in self.neighbors(n):
                if via == eid or other in seen:
                    continue
                if other == e.v:
                    return False
                seen.add(other)
                stack.append(other)
        return True

    def validate(self) -> None:
        """Raise if structural invariants are broken (used by tests)."""
        degree_sum = sum(self.degree(n) for n in self.nodes)
        assert degree_sum == 2 * len(self.edges), "degree sum != 2E"
        max_step = 2 * float(np.linalg.norm(self.grid.spacing)) * np.sqrt(3)
        for e in self.edges.values():
            assert len(e.points) >= 2
            assert np.allclose(e.points[0], self.nodes[e.u].coords, atol=1e-6)
            assert np.allclose(e.points[-1], self.nodes[e.v].coords, atol=1e-6)
            steps = np.linalg.norm(np.diff(e.points, axis=0), axis=1)
            assert (steps < max_step).all(), "polyline step too long"


@dataclass(frozen=True)
class AnatomicalNode:
    """Named CoW landmark attached to a graph node."""

    id: int
    degree: int
    label: int
    segment: str
    name: str
    node_type: str
    coords: tuple[float, float, float]


# degree-1 vocabulary names per segment base name
_TERMINAL_NAMES = {
    "BA": "BA start",
    "PCA": "PCA end",
    "ICA": "ICA start",
    "MCA": "MCA end",
    "ACA": "ACA end",
    "3rd-A2": "3rd-A2 end",
}


def build_graph(labeled_skeleton: LabeledMask) -> CenterlineGraph:
    """Trace a voxel skeleton into a centerline graph.

    Nodes appear where the 26-neighbor count differs from two and where the
    anatomical label changes along a chain; a closed chain with no such point
    gets an anchor node at its lexicographically smallest voxel.  Edge labels
    are the majority vote of their chain (ties to the smaller code).
    """
    vol = labeled_skeleton.volume
    graph = CenterlineGraph(vol)
    skel = labeled_skeleton.data > 0
    if not skel.any():
        return graph
    codes = labeled_skeleton.data
    counts = neighbor_count_26(skel)
    shape = skel.shape

    def fg_neighbors(vox):
        x, y, z = vox
        out = []
        for dx, dy, dz in _OFFSETS26:
            n = (x + dx, y + dy, z + dz)
            if 0 <= n[0] < shape[0] and 0 <= n[1] < shape[1] and 0 <= n[2] < shape[2]:
                if skel[n]:
                    out.append(n)
        return out

    is_node_voxel = skel & (counts != 2)
    node_ids: dict[tuple[int, int, int], int] = {}

    def node_for(vox) -> int:
        if vox not in node_ids:
            node_ids[vox] = graph.add_node(vol.world_coords([vox])[0], vox)
        return node_ids[vox]

    def add_chain(chain: list[tuple[int, int, int]]) -> None:
        """Create edges for a voxel chain between two node voxels, splitting
        wherever the label changes."""
        splits = [0]
        for i in range(len(chain) - 1):
            if codes[chain[i]] != codes[chain[i + 1]]:
                splits.append(i + 1)
        splits.append(len(chain) - 1)
        splits = sorted(set(splits))
        for a, b in zip(splits[:-1], splits[1:]):
            part = chain[a : b + 1]
            if len(part) < 2:
                continue
            seg_codes = [int(codes[v]) for v in part]
            values, freq = np.unique(seg_codes, return_counts=True)
            label = int(values[freq == freq.max()].min())
            u = node_for(part[0])
            v = node_for(part[-1])
            graph.add_edge(u, v, vol.world_coords(part), label)

    visited_steps: set[tuple[tuple, tuple]] = set()
    node_voxels = sorted(map(tuple, np.argwhere(is_node_voxel)))
    for nv in node_voxels:
        for nb in sorted(fg_neighbors(nv)):
            if (nv, nb) in visited_steps:
                continue
            chain = [nv, nb]
            visited_steps.add((nv, nb))
            visited_steps.add((nb, nv))
            prev, cur = nv, nb
            while not is_node_voxel[cur]:
                nxt = [n for n in fg_neighbors(cur) if n != prev]
                if len(nxt) != 1:
                    break  # defensive: inconsistent neighbor counts
                nxt = nxt[0]
                visited_steps.add((cur, nxt))
                visited_steps.add((nxt, cur))
                chain.append(nxt)
                prev, cur = cur, nxt
            add_chain(chain)

    # leftover degree-2 voxels form pure cycles
    traversed = {v for step in visited_steps for v in step}
    remaining = sorted(
        vox for vox in map(tuple, np.argwhere(skel & (counts == 2))) if vox not in traversed
    )
    seen_cycle: set[tuple[int, int, int]] = set()
    for anchor in remaining:
        if anchor in seen_cycle:
            continue
        nbrs = sorted(fg_neighbors(anchor))
        chain = [anchor]
        prev, cur = anchor, nbrs[0]
        while cur != anchor:
            chain.append(cur)
            seen_cycle.add(cur)
            nxt = [n for n in fg_neighbors(cur) if n != prev]
            prev, cur = cur, nxt[0]
        chain.append(anchor)
        seen_cycle.add(anchor)
        add_chain(chain)

    return graph


def trace_branch(
    graph: CenterlineGraph,
    node: int,
    first_edge: int,
    labels: tuple[int, ...] | None = None,
    max_mm: float = np.inf,
):
    """Follow a branch from ``node`` through degree-2 nodes.

    Returns (points, per-point CE radii, edge label sequence, visited node
    ids, terminal node id).  ``labels`` restricts the walk to edges carrying
    those labels; the walk always stops at a node whose degree is not two or
    after ``max_mm`` of arc length.
    """
    points = [graph.nodes[node].coords]
    radii = [np.nan]
    labels_seq: list[int] = []
    node_ids = [node]
    visited: set[int] = set()
    current = node
    eid = first_edge
    length = 0.0
    while True:
        edge = graph.edges[eid]
        visited.add(eid)
        labels_seq.append(edge.label)
        pts = edge.points if edge.u == current else edge.points[::-1]
        ce = edge.ce_radius if edge.ce_radius is not None else np.full(len(pts), np.nan)
        ce = ce if edge.u == current else ce[::-1]
        truncated = False
        for p, r in zip(pts[1:], ce[1:]):
            length += float(np.linalg.norm(p - points[-1]))
            points.append(p)
            radii.append(r)
            if length >= max_mm:
                truncated = True
                break
        current = edge.v if edge.u == current else edge.u
        node_ids.append(current)
        if truncated or graph.degree(current) != 2:
            break
        options = [
            e
            for _, e in graph.neighbors(current)
            if e not in visited and (labels is None or graph.edges[e].label in labels)
        ]
        if not options:
            break
        eid = options[0]
    if len(radii) > 1 and np.isnan(radii[0]):
        radii[0] = radii[1]
    return np.asarray(points), np.asarray(radii), labels_seq, node_ids, current


def _effective_branch_label(graph: CenterlineGraph, node: int, eid: int) -> int:
    """Label a branch resolves to: the first label change along the walk, or
    the first edge's label when the branch is uniform."""
    _, _, labels_seq, _, _ = trace_branch(graph, node, eid, max_mm=15.0)
    first = labels_seq[0]
    for lab in labels_seq[1:]:
        if lab != first:
            return lab
    return first


def _classify_bifurcation(graph: CenterlineGraph, nid: int) -> tuple[int, str] | None:
    """(host segment code, node name) for a degree-3 node, or None."""
    eff = sorted(
        _effective_branch_label(graph, nid, eid) for eid in graph.incident_edges(nid)
    )
    ms = set(eff)
    pcoms = [l for l in eff if l in (L.R_PCOM, L.L_PCOM)]
    if len(pcoms) == 1:
        others = [l for l in eff if l not in (L.R_PCOM, L.L_PCOM)]
        if others:
            host = min(others, key=lambda l: (-others.count(l), l))
            if host in (L.R_ICA, L.L_ICA, L.R_PCA, L.L_PCA):
                return host, "Pcom bifurcation"
        return None
    if L.THIRD_A2 in ms and L.ACOM in ms:
        return L.ACOM, "3rd-A2 bifurcation"
    if L.ACOM in ms:
        acas = [l for l in eff if l in (L.R_ACA, L.L_ACA)]
        if acas:
            host = min(acas, key=lambda l: (-acas.count(l), l))
            return host, "Acom bifurcation"
        return None
    if L.BA in ms and (L.R_PCA in ms or L.L_PCA in ms):
        return L.BA, "BA bifurcation"
    if L.R_ICA in ms and (L.R_MCA in ms or L.R_ACA in ms):
        return L.R_ICA, "ICA bifurcation"
    if L.L_ICA in ms and (L.L_MCA in ms or L.L_ACA in ms):
        return L.L_ICA, "ICA bifurcation"
    return None


def extract_anatomical_nodes(
    graph: CenterlineGraph,
) -> tuple[list[AnatomicalNode], list[str]]:
    """Identify the named CoW nodes present in a labeled graph.

    Degree-1 nodes become segment start/end points, label changes at degree-2
    nodes become boundary points (one view per adjoining segment), and
    degree-3 nodes become named bifurcations.  Junctions that fit no known
    pattern are reported as diagnostics rather than nodes.
    """
    out: list[AnatomicalNode] = []
    diagnostics: list[str] = []

    def emit(nid: int, host: int, name: str, node_type: str) -> None:
        node = graph.nodes[nid]
        out.append(
            AnatomicalNode(
                id=nid,
                degree=graph.degree(nid),
                label=host,
                segment=L.SEGMENT_NAMES[host],
                name=name,
                node_type=node_type,
                coords=tuple(float(c) for c in node.coords),
            )
        )

    for nid in sorted(graph.nodes):
        deg = graph.degree(nid)
        if deg == 1:
            label = graph.edges[graph.incident_edges(nid)[0]].label
            name = _TERMINAL_NAMES.get(L.base_name(label))
            if name is None:
                diagnostics.append(
                    f"node {nid}: no terminal name for segment {L.SEGMENT_NAMES[label]}"
                )
                continue
            emit(nid, label, name, "start" if name.endswith("start") else "end")
        elif deg == 2:
            eids = graph.incident_edges(nid)
            if len(eids) != 2:
                continue  # self-loop anchor
            la, lb = (graph.edges[e].label for e in eids)
            if la == lb:
                continue
            for host, other in ((la, lb), (lb, la)):
                name = L.boundary_node_name(host, other)
                if name is None:
                    diagnostics.append(
                        f"node {nid}: boundary {L.SEGMENT_NAMES[host]}/"
                        f"{L.SEGMENT_NAMES[other]} not in the vocabulary"
                    )
                    continue
                emit(nid, host, name, "boundary")
        elif deg == 3:
            classified = _classify_bifurcation(graph, nid)
            if classified is None:
                incident = [graph.edges[e].label for e in graph.incident_edges(nid)]
                diagnostics.append(
                    f"node {nid}: unrecognized junction with labels {sorted(incident)}"
                )
                continue
            host, name = classified
            emit(nid, host, name, "bifurcation")
        else:
            incident = [graph.edges[e].label for e in graph.incident_edges(nid)]
            diagnostics.append(f"node {nid}: degree {deg} junction, labels {sorted(incident)}")
    return out, diagnostics


def _edge_mean_boundary_distance(
    graph: CenterlineGraph, edge: GraphEdge, dist: DistanceField
) -> float:
    idx = graph.grid.voxel_indices(edge.points)
    shape = dist.data.shape
    idx = np.clip(idx, 0, np.asarray(shape) - 1)
    return float(dist.data[idx[:, 0], idx[:, 1], idx[:, 2]].mean())


def _separated_by_background(
    graph: CenterlineGraph, e1: GraphEdge, e2: GraphEdge, dist: DistanceField
) -> bool:
    """Whether the straight segment between the two polyline midpoints leaves
    the vessel lumen; genuine fenestration channels enclose background."""
    m1 = e1.points[len(e1.points) // 2]
    m2 = e2.points[len(e2.points) // 2]
    n = max(int(np.linalg.norm(m2 - m1) / min(graph.grid.spacing)) * 2, 2)
    samples = m1 + np.linspace(0.0, 1.0, n + 1)[:, None] * (m2 - m1)
    idx = graph.grid.voxel_indices(samples)
    shape = np.asarray(dist.data.shape)
    idx = np.clip(idx, 0, shape - 1)
    return bool((dist.data[idx[:, 0], idx[:, 1], idx[:, 2]] <= 0).any())


def remove_spurious_edges(
    graph: CenterlineGraph, dist: DistanceField, self_loop_factor: float = 4.0
) -> CenterlineGraph:
    """Delete artifact edges, iterated to a fixed point.

    R1 removes self-loops shorter than ``self_loop_factor`` times the local
    boundary distance.  R2 collapses duplicate parallel edges within one
    label onto the best-centered one, keeping pairs whose midpoint connection
    crosses background (genuine fenestration channels).  R3 removes
    cross-segment edges whose segment pair has no anatomical junction, unless
    that would disconnect a component.
    """
    g = graph.copy()
    changed = True
    while changed:
        changed = False

        # R1: short self-loops
        for eid in sorted(g.edges):
            e = g.edges[eid]
            if e.u != e.v:
                continue
            node = g.nodes[e.u]
            local = float(dist.data[node.voxel]) if node.voxel is not None else 0.0
            if e.arc_length() < self_loop_factor * local:
                g.remove_edge(eid)
                g.diagnostics.append(f"R1: removed self-loop edge {eid} at node {e.u}")
                changed = True

        # R2: duplicate parallel edges within one label
        groups: dict[tuple[int, int, int], list[int]] = {}
        for eid in sorted(g.edges):
            e = g.edges[eid]
            if e.u == e.v:
                continue
            key = (min(e.u, e.v), max(e.u, e.v), e.label)
            groups.setdefault(key, []).append(eid)
        for key, eids in sorted(groups.items()):
            if len(eids) < 2:
                continue
            ranked = sorted(
                eids,
                key=lambda i: (-_edge_mean_boundary_distance(g, g.edges[i], dist), i),
            )
            survivors = [ranked[0]]
            for eid in ranked[1:]:
                if all(
                    _separated_by_background(g, g.edges[eid], g.edges[s], dist)
                    for s in survivors
                ):
                    survivors.append(eid)
                else:
                    g.remove_edge(eid)
                    g.diagnostics.append(f"R2: removed duplicate edge {eid} between {key[:2]}")
                    changed = True

        # R3: cross-segment edges without an anatomical junction
        def node_segment(nid: int, excluding: int) -> int:
            labs = [g.edges[e].label for e in g.incident_edges(nid) if e != excluding]
            if not labs:
                return g.edges[excluding].label
            return min(labs, key=lambda l: (-labs.count(l), l))

        for eid in sorted(g.edges):
            e = g.edges[eid]
            if e.u == e.v:
                continue
            seg_u = node_segment(e.u, eid)
            seg_v = node_segment(e.v, eid)
            if seg_u == seg_v or L.are_adjacent(seg_u, seg_v):
                continue
            if g.edge_is_bridge(eid):
                continue
            g.remove_edge(eid)
            g.diagnostics.append(
                f"R3: removed {L.SEGMENT_NAMES[seg_u]}-{L.SEGMENT_NAMES[seg_v]} edge {eid}"
            )
            changed = True

    g.prune_isolated_nodes()
    return g


def trim_and_smooth(
    graph: CenterlineGraph,
    dist: DistanceField,
    window: int = 5,
    trim_cap_mm: float = 1.0,
) -> CenterlineGraph:
    """Trim thinning caps at degree-1 termini and smooth polylines.

    Each terminus loses min(local boundary distance, ``trim_cap_mm``) of arc
    length; interior polyline points are then replaced by the unweighted mean
    of the window centered on them, with endpoints fixed.
    """
    if window < 3 or window % 2 == 0:
        raise ValueError(f"window must be odd and >= 3, got {window}")
    g = graph.copy()

    for nid in sorted(g.nodes):
        if g.degree(nid) != 1:
            continue
        eid = g.incident_edges(nid)[0]
        e = g.edges[eid]
        if len(e.points) <= 2:
            continue
        node = g.nodes[nid]
        local = float(dist.data[node.voxel]) if node.voxel is not None else trim_cap_mm
        trim = min(local, trim_cap_mm)
        if trim <= 0:
            continue
        pts = e.points if e.u == nid else e.points[::-1]
        arcs = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(pts, axis=0), axis=1))])
        keep = int(np.searchsorted(arcs, trim - 1e-9))
        keep = min(keep, len(pts) - 2)
        if keep <= 0:
            continue
        pts = pts[keep:]
        e.points = pts if e.u == nid else pts[::-1]
        node.coords = pts[0].copy()  # pts is oriented away from this terminus
        node.voxel = tuple(int(i) for i in g.grid.voxel_indices([node.coords])[0])

    half = window // 2
    for e in g.edges.values():
        pts = e.points
        if len(pts) <= 2:
            continue
        smoothed = pts.copy()
        for i in range(1, len(pts) - 1):
            lo = max(0, i - half)
            hi = min(len(pts), i + half + 1)
            smoothed[i] = pts[lo:hi].mean(axis=0)
        e.points = smoothed
    return g


def merge_single_label_graphs(
    main: CenterlineGraph,
    parts: dict[int, CenterlineGraph],
    snap_mm: float = 1.0,
) -> CenterlineGraph:
    """Replace per-label edges of the main graph with separately extracted
    single-label graphs, splicing their termini onto nearby anatomical nodes.

    A part is merged only when at least one terminal lies within ``snap_mm``
    of an identified bifurcation/boundary node; otherwise the main graph's
    edges for that label stay and a diagnostic is recorded.
    """
    g = main.copy()
    anatomical, _ = extract_anatomical_nodes(g)
    targets = [a for a in anatomical if a.node_type in ("bifurcation", "boundary")]
    for label in sorted(parts):
        part = parts[label]
        if not part.edges:
            continue
        terminals = [nid for nid in sorted(part.nodes) if part.degree(nid) == 1]
        snaps: dict[int, int] = {}
        for t in terminals:
            coords = part.nodes[t].coords
            best = None
            for a in targets:
                d = float(np.linalg.norm(np.asarray(a.coords) - coords))
                if d <= snap_mm and (best is None or d < best[0]):
                    best = (d, a.id)
            if best is not None:
                snaps[t] = best[1]
        if not snaps:
            g.diagnostics.append(
                f"merge skipped for {L.SEGMENT_NAMES[label]}: no terminal within "
                f"{snap_mm} mm of an anatomical node"
            )
            continue
        for eid in [e for e in sorted(g.edges) if g.edges[e].label == label]:
            g.remove_edge(eid)
        id_map: dict[int, int] = {}
        for nid in sorted(part.nodes):
            if nid in snaps:
                id_map[nid] = snaps[nid]
            else:
                n = part.nodes[nid]
                id_map[nid] = g.add_node(n.coords.copy(), n.voxel)
        for eid in sorted(part.edges):
            e = part.edges[eid]
            pts = e.points.copy()
            if e.u in snaps:
                pts[0] = g.nodes[id_map[e.u]].coords
            if e.v in snaps:
                pts[-1] = g.nodes[id_map[e.v]].coords
            g.add_edge(id_map[e.u], id_map[e.v], pts, e.label)
        g.prune_isolated_nodes()
    return g
