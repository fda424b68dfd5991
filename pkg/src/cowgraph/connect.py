"""Label transfer and A*-based skeleton reconnection.

Fragmented skeletons are repaired in two stages: first within each anatomical
label over that label's mask region, then across anatomically adjacent labels
over the union of both regions.  The search priority combines accumulated
path length, Euclidean distance to the goal, and a bonus for staying far from
the vessel boundary, which keeps bridges centered.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .labels import ADJACENT_SEGMENTS
from .thinning import Skeleton
from .volume import DistanceField, LabeledMask, Volume, euclidean_distance_field

_STRUCT26 = np.ones((3, 3, 3), dtype=bool)

_NEIGHBOR_OFFSETS = np.array(
    [
        (dx, dy, dz)
        for dx in (-1, 0, 1)
        for dy in (-1, 0, 1)
        for dz in (-1, 0, 1)
        if (dx, dy, dz) != (0, 0, 0)
    ],
    dtype=np.int64,
)


class TransferError(ValueError):
    """Skeleton and mask grids do not plausibly belong together."""


class NoPathError(RuntimeError):
    """A* could not reach the target component within the search domain."""


@dataclass(frozen=True)
class AStarParams:
    """Weights of the reconnection search priority."""

    w1: float = 1.0
    w2: float = 2.0

    def __post_init__(self):
        if self.w1 <= 0:
            raise ValueError(f"w1 must be positive, got {self.w1}")
        if self.w2 < 0:
            raise ValueError(f"w2 must be non-negative, got {self.w2}")


@dataclass(frozen=True)
class VoxelPath:
    """26-connected voxel chain with its physical arc length."""

    voxels: tuple[tuple[int, int, int], ...]
    length_mm: float


def transfer_labels(
    skeleton: Skeleton, mask: LabeledMask, max_distance_mm: float = 5.0
) -> LabeledMask:
    """Assign each skeleton voxel the label of the nearest labeled mask voxel.

    Voxels lying inside a labeled region take that label directly; exact
    distance ties go to the smaller label code.  A skeleton voxel farther
    than ``max_distance_mm`` from any labeled voxel signals a grid mismatch.
    """
    skel = skeleton.mask()
    if not skel.any():
        return LabeledMask(skeleton.volume.with_data(np.zeros(skeleton.volume.dims, np.uint8)))
    mdata = mask.data
    if not (mdata > 0).any():
        raise TransferError("mask has no labeled voxels")

    out = np.zeros(skeleton.volume.dims, dtype=np.uint8)
    direct = skel & (mdata > 0)
    out[direct] = mdata[direct]

    remaining = np.argwhere(skel & (mdata == 0))
    if remaining.size:
        spacing = np.asarray(mask.volume.spacing)
        query = remaining * spacing
        codes = sorted(int(c) for c in np.unique(mdata) if c > 0)
        dists = np.full((len(codes), len(remaining)), np.inf)
        for i, code in enumerate(codes):
            pts = np.argwhere(mdata == code) * spacing
            tree = cKDTree(pts)
            dists[i], _ = tree.query(query)
        best = dists.min(axis=0)
        if best.max() > max_distance_mm:
            worst = remaining[int(best.argmax())]
            raise TransferError(
                f"skeleton voxel {tuple(worst)} is {best.max():.2f} mm from any label "
                f"(limit {max_distance_mm} mm)"
            )
        # first label within a relative hair of the minimum wins the tie
        tol = 1e-9
        choice = (dists <= best * (1 + tol) + tol).argmax(axis=0)
        labels = np.asarray(codes, dtype=np.uint8)[choice]
        out[tuple(remaining.T)] = labels

    return LabeledMask(skeleton.volume.with_data(out))


def _closest_pair(a: np.ndarray, b: np.ndarray, spacing: np.ndarray):
    tree = cKDTree(b * spacing)
    d, j = tree.query(a * spacing)
    i = int(d.argmin())
    return tuple(a[i]), tuple(b[int(j[i])])


def connect_pair(
    a: np.ndarray,
    b: np.ndarray,
    domain: np.ndarray,
    dist: DistanceField,
    params: AStarParams,
    spacing: tuple[float, float, float],
) -> VoxelPath:
    """Best-first search from component ``a`` to component ``b``.

    Expansion follows 26-adjacent voxels of ``domain`` starting at the closest
    voxel pair; the priority of a voxel is ``g + w1 * d(voxel, goal) - w2 *
    boundary_distance(voxel)`` with ``g`` the accumulated step length in mm.
    Ties break lexicographically, making the result deterministic.
    """
    a = np.atleast_2d(np.asarray(a))
    b = np.atleast_2d(np.asarray(b))
    sp = np.asarray(spacing, dtype=np.float64)
    start, goal = _closest_pair(a, b, sp)
    b_set = set(map(tuple, b))
    goal_mm = np.asarray(goal) * sp
    dvals = dist.data
    shape = domain.shape

    def h(vox) -> float:
        return float(np.linalg.norm(np.asarray(vox) * sp - goal_mm))

    step_len = np.linalg.norm(_NEIGHBOR_OFFSETS * sp, axis=1)

    g_score: dict[tuple[int, int, int], float] = {start: 0.0}
    came: dict[tuple[int, int, int], tuple[int, int, int]] = {}
    closed: set[tuple[int, int, int]] = set()
    f0 = params.w1 * h(start) - params.w2 * float(dvals[start])
    heap: list[tuple[float, int, int, int]] = [(f0, *start)]
    while heap:
        f, x, y, z = heapq.heappop(heap)
        current = (x, y, z)
        if current in closed:
            continue
        closed.add(current)
        if current in b_set:
            path = [current]
            while path[-1] in came:
                path.append(came[path[-1]])
            path.reverse()
            length = 0.0
            for u, v in zip(path[:-1], path[1:]):
                length += float(np.linalg.norm((np.asarray(v) - np.asarray(u)) * sp))
            return VoxelPath(tuple(path), length)
        g_here = g_score[current]
        for off, step in zip(_NEIGHBOR_OFFSETS, step_len):
            nx, ny, nz = x + off[0], y + off[1], z + off[2]
            if not (0 <= nx < shape[0] and 0 <= ny < shape[1] and 0 <= nz < shape[2]):
                continue
            nvox = (int(nx), int(ny), int(nz))
            if nvox in closed or not domain[nvox]:
                continue
            g_new = g_here + float(step)
            if g_new < g_score.get(nvox, np.inf) - 1e-12:
                g_score[nvox] = g_new
                came[nvox] = current
                priority = g_new + params.w1 * h(nvox) - params.w2 * float(dvals[nvox])
                heapq.heappush(heap, (priority, *nvox))
    raise NoPathError(f"no path from {start} to {goal} within the domain")


def _rasterize_line(start, goal) -> list[tuple[int, int, int]]:
    """26-connected straight-line voxel chain between two voxels."""
    p0 = np.asarray(start, dtype=np.float64)
    p1 = np.asarray(goal, dtype=np.float64)
    n = int(np.abs(p1 - p0).max())
    if n == 0:
        return [tuple(start)]
    path = [tuple(start)]
    for t in np.linspace(0.0, 1.0, n + 1)[1:]:
        vox = tuple(int(v) for v in np.round(p0 + (p1 - p0) * t))
        if vox != path[-1]:
            path.append(vox)
    return path


def _components(fg: np.ndarray):
    labels, n = ndimage.label(fg, structure=_STRUCT26)
    return labels, n


def _bridge(
    skel: np.ndarray,
    a: np.ndarray,
    b: np.ndarray,
    domain: np.ndarray,
    dist: DistanceField,
    params: AStarParams,
    spacing,
) -> tuple[list[tuple[int, int, int]], bool]:
    """Connect two voxel sets, widening the domain on failure.

    Returns the added voxels and whether the declared rasterization fallback
    had to be used.
    """
    domain = domain | _points_mask(a, skel.shape) | _points_mask(b, skel.shape)
    try:
        path = connect_pair(a, b, domain, dist, params, spacing)
        return [v for v in path.voxels if not skel[v]], False
    except NoPathError:
        pass
    widened = ndimage.binary_dilation(domain, structure=_STRUCT26)
    try:
        path = connect_pair(a, b, widened, dist, params, spacing)
        return [v for v in path.voxels if not skel[v]], False
    except NoPathError:
        start, goal = _closest_pair(np.atleast_2d(a), np.atleast_2d(b), np.asarray(spacing))
        return [v for v in _rasterize_line(start, goal) if not skel[v]], True


def _points_mask(points: np.ndarray, shape) -> np.ndarray:
    m = np.zeros(shape, dtype=bool)
    pts = np.atleast_2d(points)
    m[pts[:, 0], pts[:, 1], pts[:, 2]] = True
    return m


def connect_all(
    labeled_skeleton: LabeledMask, mask: LabeledMask, params: AStarParams = AStarParams()
) -> LabeledMask:
    """Reconnect a fragmented labeled skeleton until its component count
    matches the mask foreground.

    Stage 1 joins fragments that share a label inside that label's mask
    region; stage 2 bridges anatomically adjacent labels whose skeleton parts
    ended up in different components; a final sweep joins any leftovers that
    live in the same mask component.  Added voxels inherit labels from the
    nearest labeled mask voxel.
    """
    skel = labeled_skeleton.data > 0
    labels = labeled_skeleton.data.copy()
    spacing = labeled_skeleton.volume.spacing
    mdata = mask.data
    dist = euclidean_distance_field(
        mask.volume.with_data((mdata > 0).astype(np.uint8))
    )
    added_fallback = []

    def add_voxels(voxels):
        for v in voxels:
            skel[v] = True

    # stage 1: within-label reconnection
    for code in sorted(int(c) for c in np.unique(labels) if c > 0):
        previous = None
        while True:
            comp, n = _components(skel & (labels == code))
            if n <= 1:
                break
            if previous is not None and n >= previous:
                raise RuntimeError(f"reconnection of label {code} made no progress")
            previous = n
            groups = [np.argwhere(comp == i) for i in range(1, n + 1)]
            best = None
            sp = np.asarray(spacing)
            for i in range(len(groups)):
                tree = cKDTree(groups[i] * sp)
                for j in range(i + 1, len(groups)):
                    d, _ = tree.query(groups[j] * sp)
                    dmin = float(d.min())
                    if best is None or dmin < best[0]:
                        best = (dmin, i, j)
            _, i, j = best
            new_voxels, used_fallback = _bridge(
                skel, groups[i], groups[j], mdata == code, dist, params, spacing
            )
            add_voxels(new_voxels)
            for v in new_voxels:
                labels[v] = code
            if used_fallback:
                added_fallback.extend(new_voxels)

    # stage 2: bridge adjacent labels left in different skeleton components,
    # provided the mask itself connects them
    mask_comp_all, _ = _components(mdata > 0)
    for pair in sorted(ADJACENT_SEGMENTS, key=sorted):
        l1, l2 = sorted(pair)
        va = skel & (labels == l1)
        vb = skel & (labels == l2)
        if not va.any() or not vb.any():
            continue
        if not set(np.unique(mask_comp_all[mdata == l1])) & set(
            np.unique(mask_comp_all[mdata == l2])
        ):
            continue
        comp, _ = _components(skel)
        if set(np.unique(comp[va])) & set(np.unique(comp[vb])):
            continue
        new_voxels, used_fallback = _bridge(
            skel,
            np.argwhere(va),
            np.argwhere(vb),
            (mdata == l1) | (mdata == l2),
            dist,
            params,
            spacing,
        )
        add_voxels(new_voxels)
        if used_fallback:
            added_fallback.extend(new_voxels)

    # final sweep: mask components must not contain split skeletons
    mask_comp = mask_comp_all
    while True:
        comp, n = _components(skel)
        pieces: dict[int, list[int]] = {}
        for c in range(1, n + 1):
            in_mask = mask_comp[comp == c]
            owner = int(np.bincount(in_mask[in_mask > 0]).argmax()) if (in_mask > 0).any() else 0
            pieces.setdefault(owner, []).append(c)
        split = {k: v for k, v in pieces.items() if k > 0 and len(v) > 1}
        if not split:
            break
        owner, comps = sorted(split.items())[0]
        a = np.argwhere(comp == comps[0])
        b = np.argwhere(comp == comps[1])
        new_voxels, used_fallback = _bridge(
            skel, a, b, mask_comp == owner, dist, params, spacing
        )
        add_voxels(new_voxels)
        if used_fallback:
            added_fallback.extend(new_voxels)

    # label the added voxels
    out_skel = Skeleton(labeled_skeleton.volume.with_data(skel.astype(np.uint8)))
    return transfer_labels(out_skel, mask)
