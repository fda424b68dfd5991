"""Voxel volumes with physical geometry, plus mask-level grid operations.

A :class:`Volume` couples a 3D voxel array (indexed ``[x, y, z]``) with the
spacing/origin/orientation needed to place voxel centers in world millimetres:
``world = origin + R @ (spacing * index)``.  Masks, skeletons and distance
fields all ride on this type.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .labels import PERMITTED_CODES

SUPPORTED_DTYPES = (np.uint8, np.int16, np.uint16, np.float32)

# Full 3x3x3 connectivity for 26-connected component labelling.
STRUCT_26 = np.ones((3, 3, 3), dtype=bool)


class VolumeError(ValueError):
    """Raised when a volume violates its geometric or type invariants."""


def _f32(values) -> tuple[float, ...]:
    # Metadata is held at 32-bit precision so it survives the container
    # format round trip bit-exactly.
    return tuple(float(np.float32(v)) for v in values)


@dataclass(frozen=True)
class Volume:
    """Immutable 3D voxel volume with physical placement metadata."""

    data: np.ndarray
    spacing: tuple[float, float, float]
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)
    orientation: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3 or min(data.shape) < 1:
            raise VolumeError(f"expected a 3D array, got shape {data.shape}")
        if not any(np.issubdtype(data.dtype, d) for d in SUPPORTED_DTYPES):
            if data.dtype == bool:
                data = data.astype(np.uint8)
            else:
                raise VolumeError(f"unsupported element kind {data.dtype}")
        data = np.ascontiguousarray(data)
        if data.flags.writeable:
            data = data.copy()  # keep the caller's array untouched
        data.flags.writeable = False
        object.__setattr__(self, "data", data)

        spacing = _f32(self.spacing)
        if len(spacing) != 3 or any(s <= 0 for s in spacing):
            raise VolumeError(f"spacing must be three positive values, got {self.spacing}")
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", _f32(self.origin))

        rot = np.array(
            np.float32(np.asarray(self.orientation, dtype=np.float64)), dtype=np.float64
        )
        if rot.shape != (3, 3):
            raise VolumeError("orientation must be a 3x3 matrix")
        if not np.allclose(rot.T @ rot, np.eye(3), atol=1e-4):
            raise VolumeError("orientation must be orthonormal within 1e-4")
        rot.flags.writeable = False
        object.__setattr__(self, "orientation", rot)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape

    @property
    def element_kind(self) -> str:
        return str(self.data.dtype)

    def world_coords(self, indices: np.ndarray) -> np.ndarray:
        """Voxel indices (N, 3) to world coordinates in mm."""
        idx = np.atleast_2d(np.asarray(indices, dtype=np.float64))
        mm = idx * np.asarray(self.spacing)
        return np.asarray(self.origin) + mm @ self.orientation.T

    def voxel_indices(self, points: np.ndarray) -> np.ndarray:
        """World points (N, 3) to nearest voxel indices (not bounds-checked)."""
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        local = (pts - np.asarray(self.origin)) @ self.orientation
        return np.floor(local / np.asarray(self.spacing) + 0.5).astype(np.int64)

    def with_data(self, data: np.ndarray) -> "Volume":
        return Volume(data, self.spacing, self.origin, self.orientation)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Volume):
            return NotImplemented
        return (
            self.data.dtype == other.data.dtype
            and self.dims == other.dims
            and np.array_equal(self.data, other.data)
            and np.allclose(self.spacing, other.spacing, atol=1e-5)
            and np.allclose(self.origin, other.origin, atol=1e-4)
            and np.allclose(self.orientation, other.orientation, atol=1e-5)
        )

    def __hash__(self):  # frozen dataclass would otherwise try to hash arrays
        return id(self)


@dataclass(frozen=True)
class LabeledMask:
    """Multiclass mask restricted to the permitted CoW segment codes."""

    volume: Volume

    def __post_init__(self):
        if self.volume.data.dtype != np.uint8:
            raise VolumeError("labeled masks must be unsigned 8-bit")
        codes = set(np.unique(self.volume.data).tolist())
        bad = codes - PERMITTED_CODES
        if bad:
            raise VolumeError(f"mask contains unknown label codes {sorted(bad)}")

    @property
    def data(self) -> np.ndarray:
        return self.volume.data

    @property
    def spacing(self) -> tuple[float, float, float]:
        return self.volume.spacing

    def foreground(self) -> np.ndarray:
        return self.volume.data > 0


@dataclass(frozen=True)
class DistanceField:
    """Per-voxel distance (mm) from foreground voxel centers to background."""

    volume: Volume

    def __post_init__(self):
        if self.volume.data.dtype != np.float32:
            raise VolumeError("distance fields must be float32")

    @property
    def data(self) -> np.ndarray:
        return self.volume.data


def resample_nearest(
    mask: LabeledMask, target_spacing: tuple[float, float, float]
) -> LabeledMask:
    """Nearest-neighbor resampling of a labeled mask onto an isotropic grid.

    Input and output grids cover the same physical box (corner aligned); each
    output voxel takes the label of the input voxel containing its center, so
    no new labels can appear.  Exact integer upsampling replicates voxels into
    uniform blocks.
    """
    target = _f32(target_spacing)
    if any(t <= 0 for t in target):
        raise VolumeError(f"target spacing must be positive, got {target}")
    vol = mask.volume
    if target == vol.spacing:
        return mask

    src_dims = np.asarray(vol.dims)
    src_sp = np.asarray(vol.spacing)
    tgt_sp = np.asarray(target)
    out_dims = np.ceil(src_dims * src_sp / tgt_sp - 1e-9).astype(int)
    out_dims = np.maximum(out_dims, 1)

    # Output voxel center (j + 0.5) * t falls inside input cell floor(...).
    index_maps = []
    for ax in range(3):
        j = np.arange(out_dims[ax], dtype=np.float64)
        src = np.floor((j + 0.5) * tgt_sp[ax] / src_sp[ax]).astype(np.int64)
        index_maps.append(np.clip(src, 0, src_dims[ax] - 1))
    data = vol.data[np.ix_(*index_maps)]

    # Shift the origin so voxel 0's center sits half a cell in from the
    # shared box corner.
    shift = 0.5 * (tgt_sp - src_sp)
    origin = np.asarray(vol.origin) + vol.orientation @ shift
    out = Volume(np.ascontiguousarray(data), target, tuple(origin), vol.orientation)
    return LabeledMask(out)


def filter_small_components(
    mask: LabeledMask, rel_diag: float = 0.05, reference: str = "largest-component"
) -> LabeledMask:
    """Remove cut-off fragments by relative bounding-box diagonal.

    26-connected foreground components whose axis-aligned bounding-box
    diagonal (mm) falls below ``rel_diag`` times the reference diagonal are
    cleared to background.  The reference is the largest component's diagonal,
    or the whole volume's when ``reference="volume"``.
    """
    if not 0 <= rel_diag < 1:
        raise VolumeError(f"rel_diag must be in [0, 1), got {rel_diag}")
    vol = mask.volume
    fg = vol.data > 0
    if not fg.any():
        return mask
    labels, n = ndimage.label(fg, structure=STRUCT_26)
    if n <= 1:
        return mask

    spacing = np.asarray(vol.spacing)
    slices = ndimage.find_objects(labels)
    diagonals = np.empty(n)
    for i, slc in enumerate(slices):
        extent = np.array([s.stop - s.start for s in slc]) * spacing
        diagonals[i] = float(np.linalg.norm(extent))
    if reference == "volume":
        ref_diag = float(np.linalg.norm(np.asarray(vol.dims) * spacing))
    elif reference == "largest-component":
        ref_diag = diagonals.max()
    else:
        raise VolumeError(f"unknown reference mode {reference!r}")

    drop = np.flatnonzero(diagonals < rel_diag * ref_diag) + 1
    if drop.size == 0:
        return mask
    data = vol.data.copy()
    data[np.isin(labels, drop)] = 0
    return LabeledMask(vol.with_data(data))


def _nearest_background_sqdist(fg: np.ndarray, spacing) -> np.ndarray:
    """Squared distance (mm^2) from each voxel center to the nearest
    background voxel center; out-of-bounds counts as background."""
    padded = np.pad(fg, 1, constant_values=False)
    # Exact separable transform; feature indices give the nearest zero voxel.
    idx = ndimage.distance_transform_edt(
        padded, sampling=spacing, return_distances=False, return_indices=True
    )
    grids = np.indices(padded.shape)
    sq = np.zeros(padded.shape, dtype=np.float64)
    for ax in range(3):
        d = (grids[ax] - idx[ax]).astype(np.float64) * spacing[ax]
        sq += d * d
    return sq[1:-1, 1:-1, 1:-1]


def euclidean_distance_field(binary: Volume) -> DistanceField:
    """Exact Euclidean distance from foreground voxels to the background.

    Distances are voxel-center to voxel-center and spacing-scaled; volume
    borders behave as if background continued outside the grid.
    """
    fg = binary.data > 0
    sq = _nearest_background_sqdist(fg, binary.spacing)
    dist = np.sqrt(sq).astype(np.float32)
    dist[~fg] = 0.0
    return DistanceField(binary.with_data(dist))
