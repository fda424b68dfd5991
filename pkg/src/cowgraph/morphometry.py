"""Segment and bifurcation morphometrics on centerline graphs.

Segment geometry comes from least-squares cubic splines with chord-length
parameterization; tortuosity is arc length over endpoint distance minus one.
Bifurcations get the three inter-branch angles measured 1 mm out, and the
major ones (BA, ICA) additionally radius ratios and the exponent x solving
``r_p^x = r_c1^x + r_c2^x``.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import make_lsq_spline

from . import labels as L
from .graph import AnatomicalNode, CenterlineGraph, trace_branch

# A1/P1/C7 fallback windows (mm) when the communicating artery is absent,
# and the truncation caps for segments leaving the circle.
A1_WINDOW_MM = 15.57
P1_WINDOW_MM = 7.18
C7_WINDOW_MM = 7.08
PERIPHERAL_CAP_MM = 10.0
C6_CTA_CAP_MM = 5.0

ENERGY_OPTIMAL_EXPONENT = 7.0 / 3.0  # minimum-energy branching reference
FINET_COEFFICIENT = 0.678


class NoExponentError(ValueError):
    """The radius triple admits no branching exponent."""


class SegmentSpline:
    """Cubic least-squares fit of a polyline with exact endpoints.

    Knots are thinned to every third data parameter; a linear correction
    pins both endpoints to the data.  Fewer than four points fall back to
    the straight segment (zero curvature).
    """

    def __init__(self, points: np.ndarray):
        pts = np.asarray(points, dtype=np.float64)
        keep = np.ones(len(pts), dtype=bool)
        keep[1:] = np.linalg.norm(np.diff(pts, axis=0), axis=1) > 1e-12
        pts = pts[keep]
        self.points = pts
        self._line = len(pts) < 4
        if self._line:
            self._p0, self._p1 = pts[0], pts[-1]
            return
        chord = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        t = np.concatenate([[0.0], np.cumsum(chord)])
        t /= t[-1]
        interior = t[3:-3:3]
        knots = np.concatenate([[0.0] * 4, interior, [1.0] * 4])
        self._spline = make_lsq_spline(t, pts, knots, k=3)
        self._c0 = pts[0] - self._spline(0.0)
        self._c1 = pts[-1] - self._spline(1.0)
        self._d1 = self._spline.derivative(1)
        self._d2 = self._spline.derivative(2)

    def evaluate(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        if self._line:
            return self._p0 + np.multiply.outer(t, self._p1 - self._p0)
        base = self._spline(t)
        return base + np.multiply.outer(1.0 - t, self._c0) + np.multiply.outer(t, self._c1)

    def arc_length(self, samples: int = 1000) -> float:
        pts = self.evaluate(np.linspace(0.0, 1.0, samples))
        return float(np.linalg.norm(np.diff(pts, axis=0), axis=1).sum())

    def endpoint_distance(self) -> float:
        return float(np.linalg.norm(self.points[-1] - self.points[0]))

    def mean_curvature(self, samples: int = 100) -> float:
        if self._line:
            return 0.0
        t = np.linspace(0.0, 1.0, samples)
        d1 = self._d1(t) + (self._c1 - self._c0)
        d2 = self._d2(t)
        cross = np.cross(d1, d2)
        speed = np.linalg.norm(d1, axis=1)
        speed[speed == 0] = 1.0
        kappa = np.linalg.norm(cross, axis=1) / speed**3
        return float(kappa.mean())

    def tortuosity(self) -> float:
        length = self.endpoint_distance()
        if length == 0:
            return 0.0
        return self.arc_length() / length - 1.0


def fit_segment_spline(polyline) -> SegmentSpline:
    return SegmentSpline(np.asarray(polyline))


def solve_bifurcation_exponent(
    r_parent: float, r_child1: float, r_child2: float, tolerance: float = 1e-9
) -> float:
    """Exponent x with ``r_p^x = r_c1^x + r_c2^x`` by bisection on [0.1, 20].

    Requires the parent to outsize both children while staying below their
    sum, which makes the normalized residual strictly decreasing with a
    single root.
    """
    if r_parent <= max(r_child1, r_child2):
        raise NoExponentError(
            f"parent radius {r_parent} must exceed both children ({r_child1}, {r_child2})"
        )
    if r_child1 + r_child2 <= r_parent:
        raise NoExponentError(
            f"child radii sum {r_child1 + r_child2} must exceed the parent {r_parent}"
        )
    a, b = r_child1 / r_parent, r_child2 / r_parent

    def residual(x: float) -> float:
        return a**x + b**x - 1.0

    lo, hi = 0.1, 20.0
    if residual(lo) < 0 or residual(hi) > 0:
        raise NoExponentError("no exponent within [0.1, 20]")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        r = residual(mid)
        if abs(r) < tolerance:
            return mid
        if r > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# -- graph walks -----------------------------------------------------------


def _arc_lengths(points: np.ndarray) -> np.ndarray:
    if len(points) < 2:
        return np.zeros(len(points))
    return np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(points, axis=0), axis=1))])


def _point_at_arc(points: np.ndarray, arc: float) -> tuple[np.ndarray, bool]:
    """Interpolated point at arc distance; flags when the branch is shorter."""
    arcs = _arc_lengths(points)
    total = arcs[-1]
    if arc >= total:
        return points[-1], True
    i = int(np.searchsorted(arcs, arc))
    if arcs[i] == arc or i == 0:
        return points[i], False
    t = (arc - arcs[i - 1]) / (arcs[i] - arcs[i - 1])
    return points[i - 1] + t * (points[i] - points[i - 1]), False


def _radius_at_arc(points: np.ndarray, radii: np.ndarray, arc: float, n_avg: int = 3) -> float:
    """Mean radius over ``n_avg`` consecutive polyline points centered at the
    point nearest to the requested arc position."""
    arcs = _arc_lengths(points)
    i = int(np.abs(arcs - arc).argmin())
    half = n_avg // 2
    window = radii[max(0, i - half) : i + half + 1]
    window = window[~np.isnan(window)]
    return float(window.mean()) if window.size else float("nan")


# -- segment definitions ----------------------------------------------------


@dataclass(frozen=True)
class SegmentDefinition:
    """How to cut one named (sub)segment out of the graph.

    Either both anatomical bounds are given, or ``start`` anchors a walk of
    ``window_mm`` arc length (after skipping ``offset_mm``) along the listed
    labels, avoiding the branch that leads to ``away_from``.
    """

    name: str
    labels: tuple[int, ...]
    start: tuple[str, str] | None = None  # (segment, node name)
    end: tuple[str, str] | None = None
    window_mm: float | None = None
    offset_mm: float = 0.0
    away_from: tuple[str, str] | None = None
    cap_mm: float | None = None


@dataclass
class SegmentFeatures:
    name: str
    missing: bool = False
    median_radius_mm: float | None = None
    length_mm: float | None = None
    endpoint_distance_mm: float | None = None
    tortuosity: float | None = None
    volume_mm3: float | None = None
    mean_curvature_per_mm: float | None = None
    notes: list[str] = field(default_factory=list)


def _node_lookup(nodes: list[AnatomicalNode]) -> dict[tuple[str, str], AnatomicalNode]:
    table: dict[tuple[str, str], AnatomicalNode] = {}
    for n in nodes:
        table.setdefault((n.segment, n.name), n)
    return table


def _subgraph_path(graph: CenterlineGraph, labels, start_id: int, end_id: int):
    """Arc-shortest path within the labeled subgraph: (points, radii)."""
    dist: dict[int, float] = {start_id: 0.0}
    prev: dict[int, tuple[int, int]] = {}
    heap = [(0.0, start_id)]
    seen: set[int] = set()
    while heap:
        d, nid = heapq.heappop(heap)
        if nid in seen:
            continue
        seen.add(nid)
        if nid == end_id:
            break
        for other, eid in graph.neighbors(nid):
            if labels is not None and graph.edges[eid].label not in labels:
                continue
            nd = d + graph.edges[eid].arc_length()
            if nd < dist.get(other, np.inf):
                dist[other] = nd
                prev[other] = (nid, eid)
                heapq.heappush(heap, (nd, other))
    if end_id != start_id and end_id not in prev:
        return None
    chain: list[tuple[int, int]] = []
    cur = end_id
    while cur != start_id:
        parent, eid = prev[cur]
        chain.append((parent, eid))
        cur = parent
    chain.reverse()
    points: list = []
    radii: list = []
    cur = start_id
    for parent, eid in chain:
        e = graph.edges[eid]
        pts = e.points if e.u == cur else e.points[::-1]
        ce = e.ce_radius if e.ce_radius is not None else np.full(len(pts), np.nan)
        ce = ce if e.u == cur else ce[::-1]
        sl = slice(1, None) if points else slice(None)
        points.extend(pts[sl])
        radii.extend(ce[sl])
        cur = e.v if e.u == cur else e.u
    return np.asarray(points), np.asarray(radii)


def _anchored_walk(graph: CenterlineGraph, labels, anchor_id: int, avoid_id: int | None):
    """Longest labeled branch walk from the anchor, avoiding one direction."""
    best = None
    for other, eid in sorted(graph.neighbors(anchor_id), key=lambda p: p[1]):
        if graph.edges[eid].label not in labels:
            continue
        points, radii, _, node_ids, _ = trace_branch(graph, anchor_id, eid, labels=labels)
        if avoid_id is not None and avoid_id in node_ids:
            continue
        length = _arc_lengths(points)[-1]
        if best is None or length > best[0]:
            best = (length, points, radii)
    if best is None:
        return None
    return best[1], best[2]


def _clip_window(points, radii, offset: float, window: float | None):
    arcs = _arc_lengths(points)
    mask = arcs >= offset - 1e-9
    if window is not None:
        mask &= arcs <= offset + window + 1e-9
    return points[mask], radii[mask]


def resolve_segment(
    graph: CenterlineGraph, nodes: list[AnatomicalNode], definition: SegmentDefinition
):
    """Polyline and per-point CE radii for a definition, or None when the
    variant lacks the segment."""
    table = _node_lookup(nodes)
    start = table.get(definition.start) if definition.start else None
    if start is None:
        return None
    if definition.end is not None:
        end = table.get(definition.end)
        if end is None:
            return None
        resolved = _subgraph_path(graph, definition.labels, start.id, end.id)
        if resolved is None:
            return None
        points, radii = resolved
    else:
        avoid = table.get(definition.away_from) if definition.away_from else None
        walked = _anchored_walk(
            graph, definition.labels, start.id, avoid.id if avoid else None
        )
        if walked is None:
            return None
        points, radii = _clip_window(*walked, definition.offset_mm, definition.window_mm)
    if definition.cap_mm is not None:
        points, radii = _clip_window(points, radii, 0.0, definition.cap_mm)
    if len(points) < 2:
        return None
    return points, radii


def compute_segment_features(
    graph: CenterlineGraph, nodes: list[AnatomicalNode], definition: SegmentDefinition
) -> SegmentFeatures:
    """Spline-based features of one segment; marked missing when the
    segment's anchors or labeled path are absent from this variant."""
    out = SegmentFeatures(name=definition.name)
    resolved = resolve_segment(graph, nodes, definition)
    if resolved is None:
        out.missing = True
        return out
    points, radii = resolved
    spline = fit_segment_spline(points)
    out.length_mm = spline.arc_length()
    out.endpoint_distance_mm = spline.endpoint_distance()
    out.tortuosity = spline.tortuosity()
    out.mean_curvature_per_mm = spline.mean_curvature()
    interior = radii[1:-1]
    interior = interior[~np.isnan(interior)]
    if interior.size:
        out.median_radius_mm = float(np.median(interior))
    steps = np.linalg.norm(np.diff(points, axis=0), axis=1)
    mid_r = 0.5 * (radii[:-1] + radii[1:])
    ok = ~np.isnan(mid_r)
    if ok.any():
        out.volume_mm3 = float((np.pi * mid_r[ok] ** 2 * steps[ok]).sum())
    else:
        out.notes.append("no radii annotated; volume unavailable")
    return out


def define_subsegments(
    graph: CenterlineGraph,
    nodes: list[AnatomicalNode],
    pcom_present: dict[str, bool],
    acom_present: bool,
    modality: str = "MRA",
) -> list[SegmentDefinition]:
    """Instantiate the analysis (sub)segments for one CoW variant.

    Communicating-artery anchors bound P1/C7/A1 when present; otherwise the
    cohort-median windows stand in.  Segments leaving the circle are capped
    at 10 mm from their origin; the C6 cap drops to 5 mm for CTA, where the
    skull base hides the vessel.
    """
    if modality not in ("CTA", "MRA"):
        raise ValueError(f"modality must be CTA or MRA, got {modality}")
    c6_cap = C6_CTA_CAP_MM if modality == "CTA" else PERIPHERAL_CAP_MM
    defs: list[SegmentDefinition] = [
        SegmentDefinition(
            "BA", (L.BA,), start=("BA", "BA bifurcation"), window_mm=PERIPHERAL_CAP_MM
        )
    ]

    for side in ("R", "L"):
        pca = f"{side}-PCA"
        pca_label = L.SEGMENT_CODES[pca]
        pcom = f"{side}-Pcom"
        pcom_label = L.SEGMENT_CODES[pcom]
        ica = f"{side}-ICA"
        ica_label = L.SEGMENT_CODES[ica]
        has_pcom = pcom_present.get(side, False)

        if has_pcom:
            defs.append(
                SegmentDefinition(
                    f"{side}-PCA P1",
                    (pca_label,),
                    start=(pca, "BA boundary"),
                    end=(pca, "Pcom bifurcation"),
                )
            )
            defs.append(
                SegmentDefinition(
                    f"{side}-PCA P2",
                    (pca_label,),
                    start=(pca, "Pcom bifurcation"),
                    away_from=(pca, "BA boundary"),
                    window_mm=PERIPHERAL_CAP_MM,
                )
            )
            defs.append(
                SegmentDefinition(
                    pcom,
                    (pcom_label,),
                    start=(pcom, "ICA boundary"),
                    end=(pcom, "PCA boundary"),
                )
            )
            defs.append(
                SegmentDefinition(
                    f"{side}-ICA C7",
                    (ica_label,),
                    start=(ica, "Pcom bifurcation"),
                    end=(ica, "ICA bifurcation"),
                )
            )
            defs.append(
                SegmentDefinition(
                    f"{side}-ICA C6",
                    (ica_label,),
                    start=(ica, "Pcom bifurcation"),
                    away_from=(ica, "ICA bifurcation"),
                    window_mm=c6_cap,
                )
            )
        else:
            defs.append(
                SegmentDefinition(
                    f"{side}-PCA P1",
                    (pca_label,),
                    start=(pca, "BA boundary"),
                    window_mm=P1_WINDOW_MM,
                )
            )
            defs.append(
                SegmentDefinition(
                    f"{side}-PCA P2",
                    (pca_label,),
                    start=(pca, "BA boundary"),
                    offset_mm=P1_WINDOW_MM,
                    window_mm=PERIPHERAL_CAP_MM,
                )
            )
            defs.append(
                SegmentDefinition(
                    f"{side}-ICA C7",
                    (ica_label,),
                    start=(ica, "ICA bifurcation"),
                    window_mm=C7_WINDOW_MM,
                )
            )
            defs.append(
                SegmentDefinition(
                    f"{side}-ICA C6",
                    (ica_label,),
                    start=(ica, "ICA bifurcation"),
                    offset_mm=C7_WINDOW_MM,
                    window_mm=c6_cap,
                )
            )

        mca = f"{side}-MCA"
        defs.append(
            SegmentDefinition(
                mca,
                (L.SEGMENT_CODES[mca],),
                start=(mca, "ICA boundary"),
                window_mm=PERIPHERAL_CAP_MM,
            )
        )

        aca = f"{side}-ACA"
        aca_label = L.SEGMENT_CODES[aca]
        if acom_present:
            defs.append(
                SegmentDefinition(
                    f"{side}-ACA A1",
                    (aca_label,),
                    start=(aca, "ICA boundary"),
                    end=(aca, "Acom bifurcation"),
                )
            )
            defs.append(
                SegmentDefinition(
                    f"{side}-ACA A2",
                    (aca_label,),
                    start=(aca, "Acom bifurcation"),
                    away_from=(aca, "ICA boundary"),
                    window_mm=PERIPHERAL_CAP_MM,
                )
            )
        else:
            defs.append(
                SegmentDefinition(
                    f"{side}-ACA A1",
                    (aca_label,),
                    start=(aca, "ICA boundary"),
                    window_mm=A1_WINDOW_MM,
                )
            )
            defs.append(
                SegmentDefinition(
                    f"{side}-ACA A2",
                    (aca_label,),
                    start=(aca, "ICA boundary"),
                    offset_mm=A1_WINDOW_MM,
                    window_mm=PERIPHERAL_CAP_MM,
                )
            )

    if acom_present:
        defs.append(
            SegmentDefinition(
                "Acom",
                (L.ACOM,),
                start=("Acom", "R-ACA boundary"),
                end=("Acom", "L-ACA boundary"),
            )
        )
    defs.append(
        SegmentDefinition(
            "3rd-A2",
            (L.THIRD_A2,),
            start=("3rd-A2", "Acom boundary"),
            window_mm=PERIPHERAL_CAP_MM,
        )
    )
    return defs


# -- bifurcation features ----------------------------------------------------


@dataclass
class BifurcationFeatures:
    name: str
    node_id: int
    major: bool
    angles_deg: tuple[float, float, float] | None = None
    reduced_offset: bool = False
    r_parent_mm: float | None = None
    r_child1_mm: float | None = None
    r_child2_mm: float | None = None
    ratio_p_c1: float | None = None
    ratio_p_c2: float | None = None
    ratio_c1_c2: float | None = None
    radius_sum_ratio: float | None = None
    area_sum_ratio: float | None = None
    exponent: float | None = None
    d1_mm: float | None = None
    d2_mm: float | None = None
    notes: list[str] = field(default_factory=list)


def _first_other_label(labels_seq: list[int]) -> int | None:
    first = labels_seq[0]
    for lab in labels_seq[1:]:
        if lab != first:
            return lab
    return None


def _classify_branches(
    graph: CenterlineGraph, bif: AnatomicalNode, nodes: list[AnatomicalNode]
) -> dict[str, tuple] | None:
    """Map the three incident branches to parent/child1/child2 roles.

    Role conventions follow the anatomical reading direction: at the BA the
    children are R-PCA then L-PCA; at the ICA, MCA then ACA; at communicating
    bifurcations the distal continuation is child1 and the communicating
    branch child2.
    """
    table = _node_lookup(nodes)
    branches = []
    for _, eid in sorted(graph.neighbors(bif.id), key=lambda p: p[1]):
        points, radii, labels_seq, node_ids, terminal = trace_branch(graph, bif.id, eid)
        branches.append(
            {
                "points": points,
                "radii": radii,
                "labels": labels_seq,
                "other": _first_other_label(labels_seq),
                "node_ids": node_ids,
                "terminal": terminal,
            }
        )
    if len(branches) != 3:
        return None

    def take(predicate):
        for i, b in enumerate(branches):
            if b is not None and predicate(b):
                branches[i] = None
                return b
        return None

    roles: dict[str, tuple] = {}
    name = bif.name
    host = bif.label
    if name == "BA bifurcation":
        c1 = take(lambda b: L.R_PCA in ([b["other"]] + b["labels"]))
        c2 = take(lambda b: L.L_PCA in ([b["other"]] + b["labels"]))
        parent = take(lambda b: True)
    elif name == "ICA bifurcation":
        mca = L.R_MCA if host == L.R_ICA else L.L_MCA
        aca = L.R_ACA if host == L.R_ICA else L.L_ACA
        c1 = take(lambda b: mca in ([b["other"]] + b["labels"]))
        c2 = take(lambda b: aca in ([b["other"]] + b["labels"]))
        parent = take(lambda b: True)
    elif name == "Pcom bifurcation":
        pcom = L.R_PCOM if host in (L.R_ICA, L.R_PCA) else L.L_PCOM
        c2 = take(lambda b: pcom in ([b["other"]] + b["labels"]))
        if host in (L.R_ICA, L.L_ICA):
            ica_bif = table.get((L.SEGMENT_NAMES[host], "ICA bifurcation"))
            distal_id = ica_bif.id if ica_bif else None
            c1 = take(lambda b: distal_id is not None and distal_id in b["node_ids"])
            parent = take(lambda b: True)
        else:  # on the PCA: parent is P1 (toward the BA), child1 is P2
            parent = take(lambda b: L.BA in ([b["other"]] + b["labels"]))
            c1 = take(lambda b: True)
    elif name == "Acom bifurcation":
        c2 = take(lambda b: L.ACOM in ([b["other"]] + b["labels"]))
        ica = L.R_ICA if host == L.R_ACA else L.L_ICA
        parent = take(lambda b: ica in ([b["other"]] + b["labels"]))
        c1 = take(lambda b: True)
    elif name == "3rd-A2 bifurcation":
        c2 = take(lambda b: L.THIRD_A2 in ([b["other"]] + b["labels"]))
        parent = take(lambda b: L.R_ACA in ([b["other"]] + b["labels"]))
        c1 = take(lambda b: True)
    else:
        return None
    if parent is None or c1 is None or c2 is None:
        return None
    return {"parent": parent, "child1": c1, "child2": c2}


def compute_bifurcation_angles(
    graph: CenterlineGraph,
    bif: AnatomicalNode,
    nodes: list[AnatomicalNode],
    offset_mm: float = 1.0,
) -> BifurcationFeatures:
    """The three angles between branch directions sampled ``offset_mm`` out.

    Directions use the point at that arc distance rather than local tangents,
    which keeps the measurement stable against voxel-scale noise.  Branches
    shorter than the offset fall back to their far endpoint and flag it.
    """
    major = bif.name in ("BA bifurcation", "ICA bifurcation")
    if bif.name == "BA bifurcation":
        record_name = "BA bifurcation"
    elif bif.name == "ICA bifurcation":
        record_name = f"{bif.segment} bifurcation"
    else:
        record_name = f"{bif.segment} {bif.name}"
    out = BifurcationFeatures(name=record_name, node_id=bif.id, major=major)
    roles = _classify_branches(graph, bif, nodes)
    if roles is None:
        out.notes.append("branch roles could not be identified")
        return out
    center = np.asarray(bif.coords)
    dirs = {}
    reduced = False
    for role, branch in roles.items():
        point, short = _point_at_arc(branch["points"], offset_mm)
        reduced = reduced or short
        v = point - center
        norm = np.linalg.norm(v)
        if norm == 0:
            out.notes.append(f"{role} branch degenerate at the bifurcation")
            return out
        dirs[role] = v / norm

    def angle(a, b) -> float:
        return float(np.degrees(np.arccos(np.clip(np.dot(a, b), -1.0, 1.0))))

    out.angles_deg = (
        angle(dirs["parent"], dirs["child1"]),
        angle(dirs["parent"], dirs["child2"]),
        angle(dirs["child1"], dirs["child2"]),
    )
    out.reduced_offset = reduced
    return out


# boundary nodes marking the start of each child vessel, per major bifurcation
_CHILD_BOUNDARIES = {
    "BA bifurcation": ("R-PCA boundary", "L-PCA boundary"),
    "ICA bifurcation": ("MCA boundary", "ACA boundary"),
}


def compute_bifurcation_radius_features(
    graph: CenterlineGraph,
    bif: AnatomicalNode,
    nodes: list[AnatomicalNode],
    n_avg: int = 3,
    features: BifurcationFeatures | None = None,
) -> BifurcationFeatures:
    """Radius ratios and branching exponent for a major bifurcation.

    Sampling distance is the larger of the two arc distances from the
    bifurcation to the child boundary nodes; radii are averaged over
    ``n_avg`` consecutive polyline points at that arc position on each
    branch.  Minor bifurcations keep angle features only.
    """
    out = features or compute_bifurcation_angles(graph, bif, nodes)
    if bif.name not in _CHILD_BOUNDARIES:
        return out
    roles = _classify_branches(graph, bif, nodes)
    if roles is None:
        return out
    table = _node_lookup(nodes)
    boundary_names = _CHILD_BOUNDARIES[bif.name]
    host_segment = bif.segment

    distances = []
    for bname in boundary_names:
        anat = table.get((host_segment, bname))
        if anat is None:
            out.notes.append(f"missing {bname} on {host_segment}")
            return out
        arcs = None
        for role in ("child1", "child2"):
            branch = roles[role]
            if anat.id in branch["node_ids"]:
                pts = branch["points"]
                target = np.asarray(anat.coords)
                arc_pos = _arc_lengths(pts)
                j = int(np.linalg.norm(pts - target, axis=1).argmin())
                arcs = float(arc_pos[j])
                break
        if arcs is None:
            out.notes.append(f"{bname} not on a child branch")
            return out
        distances.append(arcs)

    d1, d2 = distances
    out.d1_mm, out.d2_mm = d1, d2
    sample = max(d1, d2)
    r_p = _radius_at_arc(roles["parent"]["points"], roles["parent"]["radii"], sample, n_avg)
    r_c1 = _radius_at_arc(roles["child1"]["points"], roles["child1"]["radii"], sample, n_avg)
    r_c2 = _radius_at_arc(roles["child2"]["points"], roles["child2"]["radii"], sample, n_avg)
    if any(np.isnan(r) for r in (r_p, r_c1, r_c2)):
        out.notes.append("radii unavailable at the sampling distance")
        return out
    out.r_parent_mm, out.r_child1_mm, out.r_child2_mm = r_p, r_c1, r_c2
    out.ratio_p_c1 = r_p / r_c1
    out.ratio_p_c2 = r_p / r_c2
    out.ratio_c1_c2 = r_c1 / r_c2
    out.radius_sum_ratio = r_p / (r_c1 + r_c2)
    out.area_sum_ratio = r_p**2 / (r_c1**2 + r_c2**2)
    try:
        out.exponent = solve_bifurcation_exponent(r_p, r_c1, r_c2)
    except NoExponentError as exc:
        out.notes.append(f"no exponent: {exc}")
    return out
