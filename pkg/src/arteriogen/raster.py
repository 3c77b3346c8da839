"""
Tube-function rasterization of vessel trees and noisy image synthesis.

A segment is a tube whose centerline runs linearly from ``s0`` to ``s1`` and
whose radius is interpolated linearly between the endpoint radii. The tube
value at ``x`` is ``min_tau |x - c(tau)|^2 - r(tau)^2`` over ``tau in [0, L]``;
it is negative inside the tube.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .domain import VoxelMask
from .tree import VesselTree


@dataclass
class TubeSegment:
    s0: np.ndarray
    s1: np.ndarray
    r0: float
    r1: float

    def __post_init__(self):
        self.s0 = np.asarray(self.s0, dtype=float)
        self.s1 = np.asarray(self.s1, dtype=float)
        if not (self.r0 > 0 and self.r1 > 0):
            raise ValueError("tube radii must be positive")
        if not self.length > 0:
            raise ValueError("tube segment has zero length")

    @property
    def length(self) -> float:
        return float(np.linalg.norm(self.s1 - self.s0))

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        m = max(self.r0, self.r1)
        return np.minimum(self.s0, self.s1) - m, np.maximum(self.s0, self.s1) + m


def _tube_values(seg: TubeSegment, pts: np.ndarray) -> np.ndarray:
    """Vectorised tube value for an ``(n, 3)`` array of points."""
    L = seg.length
    u = (seg.s1 - seg.s0) / L
    g = (seg.r1 - seg.r0) / L  # radius slope per unit tau
    d = pts - seg.s0
    du = d @ u
    dd = np.einsum("ij,ij->i", d, d)

    def f(tau):
        r = seg.r0 + g * tau
        return dd - 2.0 * tau * du + tau * tau - r * r

    a = 1.0 - g * g
    if a > 0:
        # f is a convex quadratic in tau; its clamped stationary point is the minimiser
        tau = np.clip((du + seg.r0 * g) / a, 0.0, L)
        return f(tau)
    # concave or linear in tau: the minimum sits at an end of the segment
    return np.minimum(f(np.zeros_like(du)), f(np.full_like(du, L)))


def tube_value(segment: TubeSegment, point) -> float | np.ndarray:
    """Signed tube value (um^2) at one point or an ``(n, 3)`` array of points."""
    p = np.asarray(point, dtype=float)
    vals = _tube_values(segment, p.reshape(-1, 3))
    return float(vals[0]) if p.ndim == 1 else vals


def tree_segments(tree: VesselTree) -> list[TubeSegment]:
    """One constant-radius tube per edge; zero-length edges are skipped."""
    segs = []
    for e in tree.edge_ids():
        a, b = tree.edges[e]
        if tree.length(e) > 0:
            r = tree.radius[e]
            segs.append(TubeSegment(tree.pos[a], tree.pos[b], r, r))
    return segs


def _grid_like(dims, spacing, origin) -> VoxelMask:
    return VoxelMask(np.zeros(tuple(int(d) for d in dims), dtype=bool), float(spacing),
                     np.asarray(origin, dtype=float))


def _axis_centers(mask: VoxelMask):
    return [mask.origin[i] + (np.arange(mask.dims[i]) + 0.5) * mask.spacing for i in range(3)]


def rasterize(segments, dims, spacing: float, origin=(0.0, 0.0, 0.0),
              accelerate: bool = True) -> VoxelMask:
    """
    Label every voxel whose centre has a negative tube value for some segment.

    With ``accelerate`` each segment is only evaluated on voxels whose centres
    fall in its radius-padded bounding box; voxels outside that box cannot be
    inside the tube, so the labels match the exhaustive evaluation exactly.
    ``segments`` may be a list of :class:`TubeSegment` or a :class:`VesselTree`.
    """
    if isinstance(segments, VesselTree):
        segments = tree_segments(segments)
    out = _grid_like(dims, spacing, origin)
    ax = _axis_centers(out)
    for seg in segments:
        if accelerate:
            lo, hi = seg.bounding_box()
            sl = []
            for i in range(3):
                a = int(np.searchsorted(ax[i], lo[i], side="left"))
                b = int(np.searchsorted(ax[i], hi[i], side="right"))
                sl.append(slice(a, b))
            if any(s.start >= s.stop for s in sl):
                continue
        else:
            sl = [slice(0, d) for d in out.dims]
        g = np.meshgrid(ax[0][sl[0]], ax[1][sl[1]], ax[2][sl[2]], indexing="ij")
        pts = np.stack([c.ravel() for c in g], axis=1)
        inside = (_tube_values(seg, pts) < 0).reshape(g[0].shape)
        out.data[tuple(sl)] |= inside
    return out


def add_noise(label: VoxelMask | np.ndarray, gaussian_sigma: float = 0.0, saltpepper_p: float = 0.0,
              seed=0) -> np.ndarray:
    """
    Float image from a label map: Gaussian noise on every voxel, then a fraction
    ``saltpepper_p`` of voxels set to 0 or 1 with equal odds, clamped to [0, 1].
    """
    if gaussian_sigma < 0:
        raise ValueError("gaussian_sigma must be >= 0")
    if not 0.0 <= saltpepper_p <= 1.0:
        raise ValueError("saltpepper_p must lie in [0, 1]")
    data = label.data if isinstance(label, VoxelMask) else np.asarray(label)
    rng = np.random.default_rng(seed)
    img = data.astype(np.float64)
    if gaussian_sigma > 0:
        img += rng.normal(0.0, gaussian_sigma, size=img.shape)
    if saltpepper_p > 0:
        hit = rng.random(img.shape) < saltpepper_p
        img[hit] = (rng.random(int(hit.sum())) < 0.5).astype(np.float64)
    return np.clip(img, 0.0, 1.0)


def max_intensity_projection(volume, axis: int) -> np.ndarray:
    if axis not in (0, 1, 2):
        raise ValueError("axis must be 0, 1 or 2")
    v = volume.data if isinstance(volume, VoxelMask) else np.asarray(volume)
    return v.max(axis=axis)


def write_pgm(image: np.ndarray, path, maxval: int = 255) -> None:
    """ASCII (P2) graymap; values are scaled from [0, 1] to ``[0, maxval]``."""
    img = np.asarray(image, dtype=float)
    if img.ndim != 2:
        raise ValueError("PGM needs a 2-D image")
    q = np.rint(np.clip(img, 0.0, 1.0) * maxval).astype(int)
    h, w = q.shape
    with open(path, "w") as fh:
        fh.write(f"P2\n{w} {h}\n{maxval}\n")
        for row in q:
            fh.write(" ".join(map(str, row)) + "\n")


def read_pgm(path) -> np.ndarray:
    toks = []
    with open(path) as fh:
        for line in fh:
            toks.extend(line.split("#", 1)[0].split())
    if toks[0] != "P2":
        raise ValueError(f"{path}: not an ASCII PGM")
    w, h, maxval = int(toks[1]), int(toks[2]), int(toks[3])
    return np.array(toks[4:4 + w * h], dtype=int).reshape(h, w) / maxval
