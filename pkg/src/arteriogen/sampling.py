"""
Terminal (afferent arteriole) placement: Bridson dart throwing over the
cortex bounding box followed by cortex filtering, and Gaussian terminal radii.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .domain import DomainError, VoxelMask

log = logging.getLogger(__name__)


@dataclass
class SamplingConfig:
    n_terminals: int = 1000
    r_min: float | None = None  # None means derive from cortex volume
    r_min_scale: float = 1.0
    r0_mean: float = 10.08
    r0_std: float = 0.14
    candidates_per_point: int = 30
    seed: int = 0

    def __post_init__(self):
        if self.n_terminals < 1:
            raise ValueError("n_terminals must be >= 1")
        if not self.r0_mean > 0 or self.r0_std < 0:
            raise ValueError("terminal radius distribution needs mean > 0 and std >= 0")
        if self.r_min is not None and not self.r_min > 0:
            raise ValueError("explicit r_min must be positive")


@dataclass
class TerminalSet:
    positions: np.ndarray
    radii: np.ndarray

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        self.radii = np.asarray(self.radii, dtype=float).reshape(-1)
        if len(self.positions) != len(self.radii):
            raise ValueError("positions and radii differ in length")
        if np.any(self.radii <= 0):
            raise ValueError("terminal radii must be positive")

    def __len__(self):
        return len(self.radii)


@dataclass
class SampleResult:
    positions: np.ndarray
    r_min: float
    n_target: int
    # False when fewer than half of the requested points could be placed
    ok: bool = True


def min_distance_for_count(cortex: VoxelMask | float, n: int, k: float = 1.0) -> float:
    """``k * (V / n) ** (1/3)``; ``cortex`` may be a mask or a volume in um^3."""
    if n < 1:
        raise ValueError("n must be >= 1")
    volume = cortex.volume if isinstance(cortex, VoxelMask) else float(cortex)
    if not volume > 0:
        raise DomainError("cortex is empty")
    return k * np.cbrt(volume / n)


def _neighbour_offsets() -> np.ndarray:
    """Cell offsets that can hold a point closer than r_min (cell edge r_min / sqrt 3)."""
    ax = np.arange(-2, 3)
    off = np.stack(np.meshgrid(ax, ax, ax, indexing="ij"), -1).reshape(-1, 3)
    # smallest possible squared gap between the two cells, in cell units
    gap = np.sum(np.maximum(np.abs(off) - 1, 0) ** 2, axis=1)
    return off[gap < 3]


def bridson(lo, hi, r_min: float, rng: np.random.Generator, k: int = 30) -> np.ndarray:
    """
    Bridson's dart throwing in the box ``[lo, hi)``.

    Background grid cells have edge ``r_min / sqrt(3)`` so each holds at most one
    sample. Every active sample spawns up to ``k`` candidates uniformly in the
    spherical shell ``[r_min, 2 r_min]``; the first admissible one is accepted.
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    cell = r_min / np.sqrt(3.0)
    shape = np.maximum(np.ceil((hi - lo) / cell).astype(int), 1)
    pad = 2
    pshape = shape + 2 * pad
    grid = np.full(int(np.prod(pshape)), -1, dtype=np.int64)  # flat, C order
    strides = np.array([pshape[1] * pshape[2], pshape[2], 1])
    nb = _neighbour_offsets() @ strides
    r2 = r_min * r_min
    batch = 256

    def draws():
        while True:
            d = rng.normal(size=(batch, k, 3))
            d /= np.linalg.norm(d, axis=2, keepdims=True)
            # uniform in the spherical shell by volume
            rad = np.cbrt(rng.uniform(1.0, 8.0, size=(batch, k))) * r_min
            pick = rng.random(batch)
            for b in range(batch):
                yield pick[b], d[b] * rad[b][:, None]

    def flat_cell(p):
        c = np.clip(np.floor((p - lo) / cell).astype(np.int64), 0, shape - 1)
        return (c + pad) @ strides

    stream = draws()
    pts = np.empty((1024, 3))
    pts[0] = lo + rng.random(3) * (hi - lo)
    grid[flat_cell(pts[0])] = 0
    n = 1
    active = [0]

    while active:
        u, offs = next(stream)
        j = min(int(u * len(active)), len(active) - 1)
        cand = pts[active[j]] + offs
        ok = np.all((cand >= lo) & (cand < hi), axis=1)
        if ok.any():
            ids = grid[flat_cell(cand)[:, None] + nb]
            rows, cols = np.nonzero(ids >= 0)
            d2 = np.sum((pts[ids[rows, cols]] - cand[rows]) ** 2, axis=1)
            ok[rows[d2 < r2]] = False
        if not ok.any():
            active[j] = active[-1]
            active.pop()
            continue
        p = cand[int(np.argmax(ok))]
        if n == len(pts):
            pts = np.concatenate([pts, np.empty_like(pts)])
        pts[n] = p
        grid[flat_cell(p)] = n
        active.append(n)
        n += 1
    return pts[:n].copy()


def poisson_disk_sample(cortex: VoxelMask, r_min: float, n_target: int, seed=0,
                        k: int = 30) -> SampleResult:
    """
    Blue-noise terminal positions inside ``cortex`` with pairwise distance >= r_min.

    Darts are thrown over the whole bounding box of the cortex and the samples
    outside cortex voxels are discarded afterwards. If more than ``n_target``
    remain, a uniformly random subset is kept.
    """
    if cortex.count() == 0:
        raise DomainError("cannot sample an empty cortex")
    if not r_min > 0:
        raise ValueError("r_min must be positive")
    rng = np.random.default_rng(seed)
    lo, hi = cortex.bounds()
    pts = bridson(lo, hi, r_min, rng, k=k)
    pts = pts[cortex.contains(pts)]
    if len(pts) > n_target:
        keep = np.sort(rng.choice(len(pts), size=n_target, replace=False))
        pts = pts[keep]
    ok = len(pts) >= 0.5 * n_target
    if not ok:
        log.warning("poisson disk sampling placed %d of %d requested points", len(pts), n_target)
    return SampleResult(pts, float(r_min), int(n_target), ok)


def sample_terminal_radii(n: int, mean: float = 10.08, std: float = 0.14, seed=0) -> np.ndarray:
    """Gaussian radii; non-positive draws are redrawn, never clamped."""
    if not mean > 0:
        raise ValueError("mean radius must be positive")
    rng = np.random.default_rng(seed)
    r = rng.normal(mean, std, size=n) if std > 0 else np.full(n, float(mean))
    bad = r <= 0
    while bad.any():
        r[bad] = rng.normal(mean, std, size=int(bad.sum()))
        bad = r <= 0
    return r


def sample_terminals(cortex: VoxelMask, config: SamplingConfig) -> tuple[TerminalSet, SampleResult]:
    """Positions and radii for one terminal set, seeded from ``config.seed``."""
    r_min = config.r_min
    if r_min is None:
        r_min = min_distance_for_count(cortex, config.n_terminals, config.r_min_scale)
    pos_seed, rad_seed = np.random.SeedSequence(config.seed).spawn(2)
    res = poisson_disk_sample(cortex, r_min, config.n_terminals, seed=pos_seed,
                              k=config.candidates_per_point)
    radii = sample_terminal_radii(len(res.positions), config.r0_mean, config.r0_std, seed=rad_seed)
    return TerminalSet(res.positions, radii), res


def save_terminals(terminals: TerminalSet, path) -> None:
    with open(path, "w") as fh:
        fh.write("x,y,z,radius\n")
        for p, r in zip(terminals.positions, terminals.radii):
            fh.write(",".join(repr(float(v)) for v in (*p, r)) + "\n")


def load_terminals(path) -> TerminalSet:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2, dtype=float)
    if data.size == 0:
        return TerminalSet(np.empty((0, 3)), np.empty(0))
    if data.shape[1] != 4:
        raise ValueError(f"{path}: expected columns x,y,z,radius")
    return TerminalSet(data[:, :3], data[:, 3])
