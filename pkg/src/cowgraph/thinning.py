"""Topology-preserving 3D thinning and scale-relative spur pruning.

A voxel is *simple* when removing it changes neither the foreground
(26-connectivity) nor the background (6-connectivity) topology of its
neighborhood, judged by the standard pair of topological numbers.  Thinning
removes simple points in ascending boundary-distance order with six
directional sub-iterations per sweep, never removing curve endpoints, which
yields a deterministic 1-voxel-wide centered skeleton.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .volume import DistanceField, Volume, euclidean_distance_field

# Fixed lexicographic order of the 26 neighbor offsets; bit i of a packed
# neighborhood code corresponds to _OFFSETS26[i].
_OFFSETS26: tuple[tuple[int, int, int], ...] = tuple(
    (dx, dy, dz)
    for dx in (-1, 0, 1)
    for dy in (-1, 0, 1)
    for dz in (-1, 0, 1)
    if (dx, dy, dz) != (0, 0, 0)
)

_ADJ26: list[list[int]] = []  # 26-adjacency between neighbor positions
_N18: list[int] = []  # positions within the 18-neighborhood
_FACES: list[int] = []  # positions 6-adjacent to the center
_ADJ6: list[list[int]] = []  # 6-adjacency between neighbor positions

for i, a in enumerate(_OFFSETS26):
    if sum(abs(c) for c in a) == 1:
        _FACES.append(i)
    if sum(abs(c) for c in a) <= 2:
        _N18.append(i)
    adj26, adj6 = [], []
    for j, b in enumerate(_OFFSETS26):
        if i == j:
            continue
        d = [abs(a[k] - b[k]) for k in range(3)]
        if max(d) <= 1:
            adj26.append(j)
            if sum(d) == 1:
                adj6.append(j)
    _ADJ26.append(adj26)
    _ADJ6.append(adj6)

_N18_SET = frozenset(_N18)

_DIRECTIONS = ((-1, 0, 0), (1, 0, 0), (0, -1, 0), (0, 1, 0), (0, 0, -1), (0, 0, 1))

_BIT_WEIGHTS = (np.uint32(1) << np.arange(26, dtype=np.uint32))


def _simple_from_code(code: int) -> bool:
    """Evaluate the simple-point criterion for a packed 26-bit neighborhood."""
    fg = [(code >> i) & 1 for i in range(26)]

    # Foreground: the fg neighbors must form exactly one 26-connected set
    # (every neighbor position touches the center, so one component means the
    # center is redundant for connectivity, zero means it is isolated).
    fg_positions = [i for i in range(26) if fg[i]]
    if not fg_positions:
        return False
    seen = {fg_positions[0]}
    stack = [fg_positions[0]]
    while stack:
        p = stack.pop()
        for q in _ADJ26[p]:
            if fg[q] and q not in seen:
                seen.add(q)
                stack.append(q)
    if len(seen) != len(fg_positions):
        return False

    # Background: exactly one 6-connected background component within the
    # 18-neighborhood may touch the center's faces.
    bg18 = [i for i in _N18 if not fg[i]]
    if not bg18:
        return False
    bg_set = set(bg18)
    visited: set[int] = set()
    face_components = 0
    for start in bg18:
        if start in visited:
            continue
        comp = {start}
        stack = [start]
        while stack:
            p = stack.pop()
            for q in _ADJ6[p]:
                if q in bg_set and q not in comp:
                    comp.add(q)
                    stack.append(q)
        visited |= comp
        if any(p in comp for p in _FACES):
            face_components += 1
    return face_components == 1


_SIMPLE_CACHE: dict[int, bool] = {}


def _simple_cached(code: int) -> bool:
    flag = _SIMPLE_CACHE.get(code)
    if flag is None:
        flag = _simple_from_code(code)
        _SIMPLE_CACHE[code] = flag
    return flag


def is_simple_point(neighborhood: np.ndarray) -> bool:
    """Whether the center voxel of a 3x3x3 foreground neighborhood is simple.

    The center must be foreground.  True means removal preserves both the
    number of 26-connected foreground components and the number of 6-connected
    background components locally.
    """
    nbhd = np.asarray(neighborhood)
    if nbhd.shape != (3, 3, 3):
        raise ValueError(f"expected a 3x3x3 neighborhood, got {nbhd.shape}")
    if not nbhd[1, 1, 1]:
        raise ValueError("center voxel must be foreground")
    code = 0
    for i, (dx, dy, dz) in enumerate(_OFFSETS26):
        if nbhd[1 + dx, 1 + dy, 1 + dz]:
            code |= 1 << i
    return _simple_cached(code)


@dataclass(frozen=True)
class Skeleton:
    """Binary 1-voxel-wide centerline volume."""

    volume: Volume

    @property
    def data(self) -> np.ndarray:
        return self.volume.data

    @property
    def source_spacing(self) -> tuple[float, float, float]:
        return self.volume.spacing

    def mask(self) -> np.ndarray:
        return self.volume.data > 0


def neighbor_count_26(fg: np.ndarray) -> np.ndarray:
    """Number of foreground 26-neighbors per voxel."""
    padded = np.pad(fg.astype(np.int8), 1)
    out = np.zeros(fg.shape, dtype=np.int8)
    n = fg.shape
    for dx, dy, dz in _OFFSETS26:
        out += padded[1 + dx : 1 + dx + n[0], 1 + dy : 1 + dy + n[1], 1 + dz : 1 + dz + n[2]]
    return out


def _pack_codes(flat_fg: np.ndarray, base: np.ndarray, flat_offsets: np.ndarray) -> np.ndarray:
    codes = np.zeros(base.shape[0], dtype=np.uint32)
    for i in range(26):
        codes |= flat_fg[base + flat_offsets[i]].astype(np.uint32) << np.uint32(i)
    return codes


def thin_mask(mask: Volume) -> Skeleton:
    """Thin a binary volume to a topology-equivalent 1-voxel-wide skeleton.

    Multiclass input is binarized at 0.5.  Voxels are peeled from the current
    boundary, one face direction at a time, in ascending distance-field order
    with lexicographic tie-breaking; endpoints (<= 1 foreground neighbor) are
    kept so curves retain their full extent.  The result is deterministic.
    """
    fg = mask.data > 0.5
    if not fg.any():
        return Skeleton(mask.with_data(np.zeros(mask.dims, dtype=np.uint8)))

    dist = euclidean_distance_field(mask.with_data(fg.astype(np.uint8))).data

    shape = tuple(s + 2 for s in fg.shape)
    fgp = np.zeros(shape, dtype=bool)
    fgp[1:-1, 1:-1, 1:-1] = fg
    distp = np.zeros(shape, dtype=np.float32)
    distp[1:-1, 1:-1, 1:-1] = dist

    sy, sz = shape[1], shape[2]
    flat_offsets = np.array([(dx * sy + dy) * sz + dz for dx, dy, dz in _OFFSETS26], dtype=np.int64)
    flat_off27 = np.concatenate([[0], flat_offsets])
    flat_fg = fgp.reshape(-1)
    flat_dirty = np.zeros_like(flat_fg)

    def run_sweep() -> bool:
        changed = False
        for dx, dy, dz in _DIRECTIONS:
            inner = fgp[1:-1, 1:-1, 1:-1]
            shifted = fgp[
                1 + dx : shape[0] - 1 + dx,
                1 + dy : shape[1] - 1 + dy,
                1 + dz : shape[2] - 1 + dz,
            ]
            border = inner & ~shifted
            xs, ys, zs = np.nonzero(border)
            if xs.size == 0:
                continue
            xs = xs + 1
            ys = ys + 1
            zs = zs + 1
            base = (xs * sy + ys) * sz + zs
            codes = _pack_codes(flat_fg, base, flat_offsets)
            counts = np.bitwise_count(codes)
            dvals = distp[xs, ys, zs]

            uniq, inverse = np.unique(codes, return_inverse=True)
            flags_u = np.fromiter((_simple_cached(int(c)) for c in uniq), bool, uniq.size)
            flags = flags_u[inverse]

            # Within a sub-iteration only an independent set is removed: a
            # candidate whose neighborhood was already touched waits for the
            # next pass.  This keeps the peel local and balanced; removing
            # every currently-simple voxel in sequence could legally collapse
            # a 1-voxel-thick plate toward one end.
            order = np.lexsort((zs, ys, xs, dvals))
            touched: list[np.int64] = []
            for k in order:
                if counts[k] < 2 or not flags[k]:
                    continue  # endpoints are never removed
                b = base[k]
                if flat_dirty[b + flat_off27].any():
                    continue
                flat_fg[b] = False
                flat_dirty[b] = True
                touched.append(b)
                changed = True
            if touched:
                flat_dirty[np.array(touched)] = False
        return changed

    while run_sweep():
        pass

    out = fgp[1:-1, 1:-1, 1:-1].astype(np.uint8)
    return Skeleton(mask.with_data(out))


def prune_spurs(skeleton: Skeleton, bulge_size: float, dist: DistanceField) -> Skeleton:
    """Delete terminal branches shorter than ``bulge_size`` times the boundary
    distance at their attachment junction.

    The rule mirrors the scale-independent bulge-size control: a protrusion
    counts as a real branch only when it extends further from the junction
    than the local vessel half-width allows.  Chains without any junction are
    never pruned.  Applied iteratively until stable.
    """
    if bulge_size <= 0:
        return skeleton
    fg = skeleton.mask().copy()
    spacing = np.asarray(skeleton.volume.spacing)
    dvals = dist.data

    offsets = np.array(_OFFSETS26)
    step_len = np.linalg.norm(offsets * spacing, axis=1)

    def neighbors(vox):
        x, y, z = vox
        out = []
        for i, (dx, dy, dz) in enumerate(_OFFSETS26):
            nx, ny, nz = x + dx, y + dy, z + dz
            if 0 <= nx < fg.shape[0] and 0 <= ny < fg.shape[1] and 0 <= nz < fg.shape[2]:
                if fg[nx, ny, nz]:
                    out.append(((nx, ny, nz), step_len[i]))
        return out

    def walk_from_tip(tip):
        """Follow the chain from a degree-1 voxel; returns (branch voxels,
        arc length to the junction, junction) or junction None for pure chains."""
        chain = [tip]
        length = 0.0
        prev = None
        current = tip
        while True:
            nbrs = [(v, s) for (v, s) in neighbors(current) if v != prev]
            if len(nbrs) != 1:
                return chain, length, None
            nxt, step = nbrs[0]
            length += step
            ndeg = len(neighbors(nxt))
            if ndeg >= 3:
                return chain, length, nxt
            if ndeg == 1:
                return chain, length, None  # pure chain: other tip reached
            chain.append(nxt)
            prev, current = current, nxt

    def local_block(vox):
        x, y, z = vox
        block = np.zeros((3, 3, 3), dtype=bool)
        x0, x1 = max(x - 1, 0), min(x + 2, fg.shape[0])
        y0, y1 = max(y - 1, 0), min(y + 2, fg.shape[1])
        z0, z1 = max(z - 1, 0), min(z + 2, fg.shape[2])
        block[x0 - x + 1 : x1 - x + 1, y0 - y + 1 : y1 - y + 1, z0 - z + 1 : z1 - z + 1] = fg[
            x0:x1, y0:y1, z0:z1
        ]
        return block

    changed = True
    while changed:
        changed = False
        deg = neighbor_count_26(fg)
        tips = np.argwhere(fg & (deg == 1))
        frontier: set[tuple[int, int, int]] = set()
        for tip in map(tuple, tips):
            if not fg[tip] or neighbor_count_26_at(fg, tip) != 1:
                continue
            chain, length, attachment = walk_from_tip(tip)
            if attachment is None:
                continue
            if length < bulge_size * float(dvals[attachment]):
                for vox in chain:
                    fg[vox] = False
                for vox in chain:
                    frontier.update(v for v, _ in neighbors(vox))
                changed = True
        # Deleting a branch can leave its attachment as a width-1 protrusion
        # on the parent chain; re-thin locally (simple, non-endpoint voxels
        # only) so the result stays a thinning fixed point.
        while frontier:
            next_frontier: set[tuple[int, int, int]] = set()
            for vox in sorted(frontier):
                if not fg[vox] or len(neighbors(vox)) < 2:
                    continue
                if is_simple_point(local_block(vox)):
                    fg[vox] = False
                    next_frontier.update(v for v, _ in neighbors(vox))
                    changed = True
            frontier = next_frontier

    return Skeleton(skeleton.volume.with_data(fg.astype(np.uint8)))


def neighbor_count_26_at(fg: np.ndarray, vox) -> int:
    x, y, z = vox
    x0, x1 = max(x - 1, 0), min(x + 2, fg.shape[0])
    y0, y1 = max(y - 1, 0), min(y + 2, fg.shape[1])
    z0, z1 = max(z - 1, 0), min(z + 2, fg.shape[2])
    return int(fg[x0:x1, y0:y1, z0:z1].sum()) - int(fg[x, y, z])
