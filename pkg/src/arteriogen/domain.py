"""
Voxel masks, the synthetic kidney phantom and the morphology used to carve
the cortex shell out of a whole-organ mask.

All lengths are in micrometres. Grids are isotropic and indexed ``[x, y, z]``;
voxel ``i`` has its centre at ``origin + (i + 0.5) * spacing``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage


class DomainError(ValueError):
    """Raised when a mask or a parameter set cannot produce a usable domain."""


@dataclass
class VoxelMask:
    """Binary occupancy grid with isotropic physical spacing."""

    data: np.ndarray
    spacing: float
    origin: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=bool)
        self.origin = np.asarray(self.origin, dtype=float).reshape(3)
        if self.data.ndim != 3 or min(self.data.shape) < 1:
            raise DomainError(f"mask must be a non-empty 3-D array, got shape {self.data.shape}")
        if not np.isscalar(self.spacing) or not self.spacing > 0:
            raise DomainError(f"spacing must be a positive scalar, got {self.spacing!r}")
        self.spacing = float(self.spacing)

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(int(d) for d in self.data.shape)

    @property
    def voxel_volume(self) -> float:
        return self.spacing**3

    @property
    def volume(self) -> float:
        """Foreground volume in cubic micrometres."""
        return float(np.count_nonzero(self.data)) * self.voxel_volume

    def count(self) -> int:
        return int(np.count_nonzero(self.data))

    def index_to_world(self, index) -> np.ndarray:
        return self.origin + (np.asarray(index, dtype=float) + 0.5) * self.spacing

    def world_to_index(self, point) -> np.ndarray:
        """Index of the voxel containing ``point`` (may be out of bounds)."""
        return np.floor((np.asarray(point, dtype=float) - self.origin) / self.spacing).astype(np.int64)

    def in_bounds(self, index) -> np.ndarray:
        index = np.asarray(index)
        return np.all((index >= 0) & (index < np.array(self.dims)), axis=-1)

    def contains(self, points) -> np.ndarray:
        """Foreground lookup for world points, ``False`` outside the grid."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        idx = self.world_to_index(points)
        inside = self.in_bounds(idx)
        out = np.zeros(len(points), dtype=bool)
        ii = idx[inside]
        out[inside] = self.data[ii[:, 0], ii[:, 1], ii[:, 2]]
        return out

    def voxel_centers(self) -> np.ndarray:
        """World coordinates of all foreground voxel centres, ``(n, 3)``."""
        return self.index_to_world(np.argwhere(self.data))

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Axis-aligned world bounding box of the foreground voxels (outer faces)."""
        idx = np.argwhere(self.data)
        if len(idx) == 0:
            raise DomainError("empty mask has no bounds")
        lo = self.origin + idx.min(axis=0) * self.spacing
        hi = self.origin + (idx.max(axis=0) + 1) * self.spacing
        return lo, hi

    def like(self, data) -> "VoxelMask":
        return VoxelMask(data, self.spacing, self.origin.copy())


@dataclass
class CortexParams:
    """Shell thickness, hilum exclusion radius and root location for cortex extraction."""

    erosion_radius_R1: float = 2000.0
    exclusion_radius_R2: float = 5650.0
    root_position: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.root_position = np.asarray(self.root_position, dtype=float).reshape(3)
        if not self.erosion_radius_R1 > 0:
            raise DomainError("erosion_radius_R1 must be positive")
        if not self.exclusion_radius_R2 >= 0:
            raise DomainError("exclusion_radius_R2 must be non-negative")


@dataclass
class DistanceField:
    """Per-voxel Euclidean distance (um) to the nearest background voxel centre."""

    data: np.ndarray
    spacing: float
    origin: np.ndarray

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(int(d) for d in self.data.shape)

    def sample(self, points) -> np.ndarray:
        """Nearest-voxel lookup. Raises if any point falls outside the grid."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        idx = np.floor((points - self.origin) / self.spacing).astype(np.int64)
        ok = np.all((idx >= 0) & (idx < np.array(self.dims)), axis=1)
        if not ok.all():
            bad = points[~ok][0]
            raise DomainError(f"point {bad.tolist()} lies outside the distance field")
        return self.data[idx[:, 0], idx[:, 1], idx[:, 2]]


@dataclass
class PhantomShape:
    """
    Kidney-bean phantom: an ellipsoid with an ellipsoidal carve pushed into its
    +x face.

    Semi-axes are fractions of the grid half-extent per axis. ``carve_depth`` is
    how far (as a fraction of the main x semi-axis) the carve ellipsoid intrudes
    into the main one; 0 disables the carve and leaves a plain ellipsoid.
    ``wobble`` is the relative amplitude of a smooth, seed-dependent surface
    perturbation.
    """

    semi_axes: tuple[float, float, float] = (0.62, 0.92, 0.66)
    carve_semi_axes: tuple[float, float, float] = (0.35, 0.3, 0.3)
    carve_depth: float = 0.3
    wobble: float = 0.03

    def check(self):
        if min(self.semi_axes) <= 0 or min(self.carve_semi_axes) <= 0:
            raise DomainError("phantom semi-axes must be positive")
        if not 0 <= self.carve_depth < 1:
            raise DomainError("carve_depth must lie in [0, 1)")
        if not 0 <= self.wobble < 0.5:
            raise DomainError("wobble must lie in [0, 0.5)")


@dataclass
class Phantom:
    mask: VoxelMask
    root_position: np.ndarray


def generate_phantom(dims=(64, 64, 64), spacing: float = 100.0,
                     shape: PhantomShape | None = None, seed: int = 0) -> Phantom:
    """
    Build a synthetic whole-organ mask and its hilum root position.

    The main ellipsoid is centred in the grid. The root sits on the concave
    face, one voxel inside the organ, at the deepest point of the carve.
    """
    dims = tuple(int(d) for d in dims)
    if len(dims) != 3 or min(dims) < 32:
        raise DomainError(f"phantom dims must be three values >= 32, got {dims}")
    shape = shape or PhantomShape()
    shape.check()
    rng = np.random.default_rng(seed)

    half = np.array(dims, dtype=float) / 2.0
    axes = np.array(shape.semi_axes) * half
    caxes = np.array(shape.carve_semi_axes) * half
    # grid coordinates in voxel units, relative to the grid centre
    gx, gy, gz = np.meshgrid(*(np.arange(d) + 0.5 - h for d, h in zip(dims, half)), indexing="ij")

    rho = (gx / axes[0]) ** 2 + (gy / axes[1]) ** 2 + (gz / axes[2]) ** 2
    if shape.wobble > 0:
        # low-order angular perturbation of the level set
        freqs = rng.integers(1, 4, size=(3, 3))
        phases = rng.uniform(0, 2 * np.pi, size=3)
        norm = np.sqrt(gx**2 + gy**2 + gz**2) + 1e-12
        unit = np.stack([gx, gy, gz]) / norm
        bump = sum(np.cos(freqs[k] @ unit.reshape(3, -1) * np.pi + phases[k]) for k in range(3))
        rho = rho * (1.0 + shape.wobble * bump.reshape(dims) / 3.0)
    inside = rho <= 1.0

    depth = shape.carve_depth * axes[0]
    if depth > 0:
        cx = axes[0] + caxes[0] - depth
        carve = ((gx - cx) / caxes[0]) ** 2 + (gy / caxes[1]) ** 2 + (gz / caxes[2]) ** 2 <= 1.0
        inside &= ~carve

    if not inside.any():
        raise DomainError("phantom shape parameters produce an empty mask")
    labels, n = ndimage.label(inside)
    if n > 1:
        sizes = np.bincount(labels.ravel())[1:]
        inside = labels == (1 + int(np.argmax(sizes)))

    root_vox = np.array([axes[0] - depth - 1.0, 0.0, 0.0]) + half
    root_idx = np.floor(root_vox).astype(int)
    # walk inward along -x until the root lands on a foreground voxel
    while not inside[tuple(root_idx)] and root_idx[0] > 0:
        root_idx[0] -= 1
    root = (root_idx + 0.5) * spacing
    return Phantom(VoxelMask(inside, spacing), root)


def ball_offsets(radius_vox: float) -> np.ndarray:
    """Integer offsets whose centre lies within ``radius_vox`` of the origin."""
    r = int(np.floor(radius_vox + 1e-9))
    ax = np.arange(-r, r + 1)
    off = np.stack(np.meshgrid(ax, ax, ax, indexing="ij"), axis=-1).reshape(-1, 3)
    return off[(off**2).sum(axis=1) <= radius_vox**2 + 1e-9]


def _edt_vox(data: np.ndarray) -> np.ndarray:
    # distance in voxel units; the outside of the grid counts as background
    padded = np.pad(data, 1, constant_values=False)
    return ndimage.distance_transform_edt(padded)[1:-1, 1:-1, 1:-1]


def erode(mask: VoxelMask, radius: float) -> VoxelMask:
    """
    Binary erosion by a discrete ball of physical radius ``radius``.

    A voxel survives iff every voxel centre within ``radius`` of it is
    foreground; outside the grid counts as background.
    """
    if radius < 0:
        raise DomainError("erosion radius must be non-negative")
    rv = radius / mask.spacing
    if rv < 1.0:
        # the ball is just the centre voxel
        return mask.like(mask.data.copy())
    d = _edt_vox(mask.data)
    # nearest background squared distance is an integer
    d2 = np.rint(d * d)
    return mask.like(d2 > rv * rv + 1e-9)


def extract_cortex(whole: VoxelMask, params: CortexParams) -> VoxelMask:
    """Outer shell of thickness R1 minus a ball of radius R2 around the root (R2 = 0 keeps the whole shell)."""
    if whole.count() == 0:
        raise DomainError("whole-organ mask is empty")
    shell = whole.data & ~erode(whole, params.erosion_radius_R1).data
    idx = np.argwhere(shell)
    centers = whole.index_to_world(idx)
    far = np.sum((centers - params.root_position) ** 2, axis=1) > params.exclusion_radius_R2**2
    if params.exclusion_radius_R2 == 0:
        far[:] = True
    out = np.zeros_like(shell)
    keep = idx[far]
    out[keep[:, 0], keep[:, 1], keep[:, 2]] = True
    if not out.any():
        raise DomainError("cortex is empty: R1/R2 incompatible with the mask scale")
    return whole.like(out)


def distance_transform(mask: VoxelMask) -> DistanceField:
    """Exact Euclidean distance (um) from each voxel centre to the nearest background centre."""
    return DistanceField(_edt_vox(mask.data) * mask.spacing, mask.spacing, mask.origin.copy())


# --- mask / volume files --------------------------------------------------

def _write_header(fh, dims, spacing, origin):
    fh.write(f"dims {dims[0]} {dims[1]} {dims[2]}\n".encode())
    fh.write(f"spacing {spacing!r}\n".encode())
    fh.write(("origin " + " ".join(repr(float(o)) for o in origin) + "\n\n").encode())


def save_mask(mask: VoxelMask, path) -> None:
    with open(path, "wb") as fh:
        _write_header(fh, mask.dims, mask.spacing, mask.origin)
        fh.write(mask.data.astype(np.uint8).tobytes(order="F"))


def save_volume(volume: np.ndarray, spacing: float, origin, path) -> None:
    """Float32 volume in the mask container format."""
    with open(path, "wb") as fh:
        _write_header(fh, volume.shape, spacing, origin)
        fh.write(np.asarray(volume, dtype="<f4").tobytes(order="F"))


def _read_container(path):
    raw = Path(path).read_bytes()
    head, sep, payload = raw.partition(b"\n\n")
    if not sep:
        raise DomainError(f"{path}: missing blank line after header")
    meta = {}
    for line in head.decode().splitlines():
        key, *vals = line.split()
        meta[key] = vals
    try:
        dims = tuple(int(v) for v in meta["dims"])
        spacing = [float(v) for v in meta["spacing"]]
        origin = np.array([float(v) for v in meta["origin"]])
    except (KeyError, ValueError) as exc:
        raise DomainError(f"{path}: malformed header ({exc})") from None
    if len(dims) != 3 or len(origin) != 3:
        raise DomainError(f"{path}: dims and origin need three values")
    if len(spacing) != 1:
        raise DomainError(f"{path}: anisotropic spacing is not supported")
    return dims, spacing[0], origin, payload


def load_mask(path) -> VoxelMask:
    dims, spacing, origin, payload = _read_container(path)
    n = int(np.prod(dims))
    if len(payload) != n:
        raise DomainError(f"{path}: expected {n} payload bytes, found {len(payload)}")
    data = np.frombuffer(payload, dtype=np.uint8).reshape(dims, order="F")
    if data.max(initial=0) > 1:
        raise DomainError(f"{path}: mask payload must be 0/1 bytes")
    return VoxelMask(data.astype(bool), spacing, origin)


def load_volume(path) -> tuple[np.ndarray, float, np.ndarray]:
    dims, spacing, origin, payload = _read_container(path)
    n = int(np.prod(dims))
    if len(payload) != 4 * n:
        raise DomainError(f"{path}: expected {4 * n} float32 payload bytes, found {len(payload)}")
    vol = np.frombuffer(payload, dtype="<f4").reshape(dims, order="F").copy()
    return vol, spacing, origin
