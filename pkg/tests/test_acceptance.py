"""
Acceptance criteria at desk scale. Each test carries a ``criterion`` mark; the
run summary prints one PASS/FAIL line per criterion.
"""

import itertools
import math
import time

import numpy as np
import pytest
from scipy.spatial import cKDTree

from arteriogen import analysis, centerline, cli, domain, gco, pipeline as pl, raster, sampling
from arteriogen.tree import (MMHG, HemoConfig, VesselTree, compute_pressures, propagate_flows,
                             propagate_radii_murray)

from conftest import propagated, random_tree

Q_T = 3.89e6
SPHERE = domain.PhantomShape(semi_axes=(0.9, 0.9, 0.9), carve_depth=0.0, wobble=0.0)


def star(n_children, r=10.08):
    t = VesselTree()
    t.root = t.add_node((0.0, 0.0, 0.0))
    hub = t.add_node((0.0, 0.0, -10.0))
    t.add_edge(t.root, hub)
    for i in range(n_children):
        t.add_edge(hub, t.add_node((float(i), 1.0, -20.0), terminal=True), r)
    return t


@pytest.fixture(scope="module")
def shell():
    ph = domain.generate_phantom((96, 96, 96), 100.0, SPHERE, seed=1)
    cortex = domain.extract_cortex(ph.mask, domain.CortexParams(1500.0, 2500.0, ph.root_position))
    g, root = centerline.synthetic_centerline(ph.mask, ph.root_position, generations=3, seed=2)
    return ph, cortex, centerline.preprocess(g, root, max_depth=1e9)


def build(shell, n, iterations):
    _, cortex, pre = shell
    terms, res = sampling.sample_terminals(cortex, sampling.SamplingConfig(n_terminals=n, r_min_scale=0.8, seed=3))
    assert res.ok
    hemo = HemoConfig(inlet_flow_Q0=Q_T * n)
    t0 = time.perf_counter()
    tree, trace = gco.run(pre, terms, gco.GcoConfig(max_iterations=iterations), hemo)
    return tree, trace, hemo, time.perf_counter() - t0


# -- 1. Murray root identity -------------------------------------------------------------

@pytest.mark.criterion(1, "Murray root identity, 30000 x 10.08 um -> 313.2 um")
def test_c1_murray_root_identity(record_property):
    rng = np.random.default_rng(1)
    for _ in range(20):
        t = propagated(random_tree(int(rng.integers(2, 400)), rng))
        leaf = math.fsum(t.radius[e] ** 3 for e in t.leaf_edges())
        root = math.fsum(t.radius[e] ** 3 for e in t.out_edges[t.root])
        assert root ** (1 / 3) == pytest.approx(leaf ** (1 / 3), rel=1e-9)
    t = star(30000)
    t0 = time.perf_counter()
    propagate_radii_murray(t)
    dt = time.perf_counter() - t0
    r = t.radius[t.out_edges[t.root][0]]
    record_property("root_um", round(r, 3))
    record_property("seconds", round(dt, 3))
    assert r == pytest.approx(313.2, abs=0.1)
    assert dt < 1.0


# -- 2. Flow conservation -------------------------------------------------------------------

@pytest.mark.criterion(2, "Kirchhoff flow conservation on 30K terminals")
def test_c2_flow_conservation(record_property):
    rng = np.random.default_rng(2)
    t = VesselTree()
    t.root = t.add_node((0.0, 0.0, 0.0))
    frontier = [t.root]
    # random binary-ish tree grown until 30000 leaves
    while len(frontier) < 30000:
        n = frontier.pop(int(rng.integers(len(frontier))))
        for _ in range(2 if t.out_edges[n] or n != t.root else 1):
            c = t.add_node(rng.uniform(-1e4, 1e4, 3))
            t.add_edge(n, c)
            frontier.append(c)
    for leaf in t.leaves():
        t.terminal.add(leaf)
        t.radius[t.in_edge[leaf]] = float(rng.normal(10.08, 0.14))
    q0 = 30000 * Q_T
    t0 = time.perf_counter()
    propagate_radii_murray(t)
    propagate_flows(t, HemoConfig(inlet_flow_Q0=q0))
    worst = 0.0
    for n in t.pos:
        if n == t.root or not t.out_edges[n]:
            continue
        qin = t.flow[t.in_edge[n]]
        qout = math.fsum(t.flow[e] for e in t.out_edges[n])
        worst = max(worst, abs(qin - qout) / qin)
    dt = time.perf_counter() - t0
    record_property("terminals", len(t.terminal))
    record_property("max_rel_err", f"{worst:.1e}")
    record_property("seconds", round(dt, 2))
    assert len(t.terminal) == 30000
    assert worst <= 1e-9
    assert t.flow[t.out_edges[t.root][0]] == pytest.approx(q0, rel=1e-9)
    assert dt < 5.0


# -- 3. Gradient correctness --------------------------------------------------------------

@pytest.mark.criterion(3, "analytic gradient vs central differences, 1000 configurations")
def test_c3_gradient(record_property):
    rng = np.random.default_rng(3)
    cfg = gco.GcoConfig()
    worst = 0.0
    t0 = time.perf_counter()
    for _ in range(1000):
        t = VesselTree()
        t.root = t.add_node(rng.uniform(-1000, 1000, 3))
        v = t.add_node(rng.uniform(-1000, 1000, 3))
        t.add_edge(t.root, v, rng.uniform(10, 60), rng.uniform(1e6, 1e9))
        for _ in range(int(rng.integers(2, 5))):
            t.add_edge(v, t.add_node(rng.uniform(-1000, 1000, 3)), rng.uniform(5, 40), rng.uniform(1e6, 1e9))
        g = gco.local_cost_gradient(t, v, cfg)
        x0, h, fd = t.pos[v].copy(), 1e-3, np.zeros(3)
        for i in range(3):
            t.pos[v] = x0 + h * np.eye(3)[i]
            fp = gco.local_cost(t, v, cfg)
            t.pos[v] = x0 - h * np.eye(3)[i]
            fd[i] = (fp - gco.local_cost(t, v, cfg)) / (2 * h)
        t.pos[v] = x0
        worst = max(worst, float(np.linalg.norm(g - fd) / np.linalg.norm(g)))
    dt = time.perf_counter() - t0
    record_property("max_rel_err", f"{worst:.1e}")
    assert worst < 1e-5
    assert dt < 10.0


# -- 4. Splitting oracle ----------------------------------------------------------------------

def exhaustive_split(vpos, cpos, ccoef, cr3, cq, cfg, steps=300):
    """Best child-subset split by plain Weiszfeld over every subset of size 2..n-1."""
    n = len(cpos)
    full = float(np.sum(ccoef * np.linalg.norm(cpos - vpos, axis=1)))
    best = full
    for m in range(2, n):
        for sub in itertools.combinations(range(n), m):
            sub = list(sub)
            k_new = gco.edge_coefficient(float(np.cbrt(cr3[sub].sum())), float(cq[sub].sum()), cfg)
            pts = np.vstack([vpos, cpos[sub]])
            w = np.concatenate([[k_new], ccoef[sub]])
            x = pts.mean(axis=0)
            for _ in range(steps):
                d = np.maximum(np.linalg.norm(pts - x, axis=1), 1e-12)
                x = (w / d) @ pts / np.sum(w / d)
            split = float(w @ np.linalg.norm(pts - x, axis=1))
            rest = full - float(np.sum(ccoef[sub] * np.linalg.norm(cpos[sub] - vpos, axis=1)))
            best = min(best, rest + split)
    return full, best


@pytest.mark.criterion(4, "greedy split vs exhaustive subsets on 500 stars")
def test_c4_split_oracle(record_property):
    rng = np.random.default_rng(4)
    cfg = gco.GcoConfig()
    within, t0 = 0, time.perf_counter()
    for _ in range(500):
        n = int(rng.integers(3, 6))
        t = VesselTree()
        t.root = t.add_node((0.0, 0.0, 1000.0), prebuilt=True)
        v = t.add_node((0.0, 0.0, 0.0))
        t.add_edge(t.root, v)
        for p in rng.uniform(-1000, 1000, (n, 3)) - [0, 0, 1100]:
            t.add_edge(v, t.add_node(p, terminal=True), float(rng.normal(10.08, 0.14)))
        hemo = HemoConfig(inlet_flow_Q0=n * Q_T)
        gco.propagate(t, hemo)
        _, cpos, ccoef, cr3, cq = gco._child_arrays(t, v, cfg)
        full, best = exhaustive_split(t.pos[v], cpos, ccoef, cr3, cq, cfg)
        before = gco.global_cost(t, cfg)
        gco.split_node(t, v, cfg, hemo)
        gco.propagate(t, hemo)
        greedy = full + (gco.global_cost(t, cfg) - before) / 2.0
        assert greedy <= full * (1 + 1e-12)
        within += greedy <= 1.05 * best
    dt = time.perf_counter() - t0
    record_property("within_5pct", f"{within}/500")
    record_property("seconds", round(dt, 1))
    assert within >= 475
    assert dt < 60.0


# -- 5. Desk-scale run ------------------------------------------------------------------------

@pytest.mark.slow
@pytest.mark.criterion(5, "desk-scale run: 96^3 shell, 1000 terminals, 4 iterations")
def test_c5_desk_scale_run(shell, record_property):
    tree, trace, hemo, dt = build(shell, 1000, 4)
    recs = trace.records
    first, last = recs[0].cost, recs[-1].cost
    drop = (first - last) / first
    spikes = sum(1 for a, b in zip(recs, recs[1:]) if b.phase == "prune" and b.cost > a.cost)
    relax_up = [i for i, (a, b) in enumerate(zip(recs, recs[1:]), 1) if b.phase == "relax" and b.cost > a.cost]
    record_property("seconds", round(dt, 1))
    record_property("cost_drop", f"{100 * drop:.1f}%")
    record_property("prune_spikes", spikes)
    assert dt < 600
    assert drop >= 0.20
    assert relax_up == []
    assert spikes >= 1


# -- 6 and 7. Morphometry and pressure at 2000 terminals -----------------------------------------

@pytest.fixture(scope="module")
def tree2000(shell):
    return build(shell, 2000, 3)


@pytest.mark.slow
@pytest.mark.criterion(6, "morphometric trends at 2000 terminals")
def test_c6_morphometry(tree2000, record_property):
    tree, _, _, _ = tree2000
    rep = analysis.morphometry(tree)
    radii = [s.radius_mean for s in rep.per_order]
    top = rep.per_order[-1].order
    record_property("orders", top + 1)
    record_property("r2", round(rep.fit[2], 4))
    record_property("aa_parents", sorted(rep.aa_parent_hist))
    assert all(b > a for a, b in zip(radii, radii[1:]))
    assert rep.fit[2] >= 0.95
    assert {1, 2, 3} <= set(rep.aa_parent_hist)
    assert top not in rep.aa_parent_hist


@pytest.mark.slow
@pytest.mark.criterion(7, "pressure decreasing along paths, outlets in (0, 100) mmHg")
def test_c7_pressure(tree2000, record_property):
    tree, _, hemo, _ = tree2000
    p = compute_pressures(tree, hemo)
    assert all(p[a] > p[b] for a, b in tree.edges.values())
    rep = analysis.hemodynamics(tree, hemo)
    record_property("min_mmHg", round(rep.pressure_min_mmhg, 2))
    record_property("aa_mean_mmHg", round(rep.aa_pressure_mean_mmhg, 2))
    assert all(0.0 < v < 100.0 for v in rep.aa_pressures_mmhg)
    assert hemo.inlet_pressure_p0 / MMHG == pytest.approx(100.0)


# -- 8. Poisson sampling ---------------------------------------------------------------------

def exact_min_distance(pts, r, chunk=1024):
    """All pairs: a Gram-matrix screen, then exact recomputation of every pair near ``r``."""
    sq = np.einsum("ij,ij->i", pts, pts)
    best = np.inf
    for i in range(0, len(pts), chunk):
        a = pts[i:i + chunk]
        d2 = sq[i:i + chunk, None] + sq[None, :] - 2.0 * a @ pts.T
        rows = np.arange(len(a))
        d2[rows, rows + i] = np.inf
        near_r, near_c = np.nonzero(d2 < (1.01 * r) ** 2)
        if len(near_r):
            exact = np.sqrt(np.sum((a[near_r] - pts[near_c]) ** 2, axis=1))
            best = min(best, float(exact.min()))
    return best


@pytest.mark.slow
@pytest.mark.criterion(8, "Poisson sampling of 20000 terminals: spacing, coverage, determinism")
def test_c8_poisson(shell, record_property):
    _, cortex, _ = shell
    r = sampling.min_distance_for_count(cortex, 20000, 0.8)
    t0 = time.perf_counter()
    res = sampling.poisson_disk_sample(cortex, r, 20000, seed=11)
    dt = time.perf_counter() - t0
    pts = res.positions
    record_property("seconds", round(dt, 1))
    assert len(pts) == 20000
    dmin = exact_min_distance(pts, r)
    assert dmin >= r
    gap, _ = cKDTree(pts).query(cortex.voxel_centers())
    record_property("coverage_over_rmin", round(float(gap.max() / r), 3))
    assert gap.max() <= 2 * r
    assert np.array_equal(pts, sampling.poisson_disk_sample(cortex, r, 20000, seed=11).positions)
    assert dt < 30.0


# -- 9. Centerline preprocessing -------------------------------------------------------------

def brute_best_spanning(pos, edges):
    n, best = len(pos), -math.inf
    for sub in itertools.combinations(range(len(edges)), n - 1):
        parent = list(range(n))

        def find(x):
            while parent[x] != x:
                x = parent[x]
            return x
        for i in sub:
            ra, rb = find(edges[i][0]), find(edges[i][1])
            if ra == rb:
                break
            parent[ra] = rb
        else:
            best = max(best, math.fsum(edges[i][2] for i in sub))
    return best


@pytest.mark.criterion(9, "MST vs exhaustive spanning trees; pruning idempotent")
def test_c9_centerline(record_property):
    rng = np.random.default_rng(9)
    checked = 0
    for _ in range(25):
        n = int(rng.integers(4, 13))
        pos = {i: rng.uniform(0, 100, 3) for i in range(n)}
        edges = [(int(rng.integers(i)), i, float(rng.uniform(1, 10))) for i in range(1, n)]
        pairs = {frozenset(e[:2]) for e in edges}
        for a, b in itertools.combinations(range(n), 2):
            if len(edges) >= n + 4:
                break
            if frozenset((a, b)) not in pairs and rng.random() < 0.3:
                edges.append((a, b, float(rng.uniform(1, 10))))
        g = centerline.CenterlineGraph(pos, edges)
        mst = centerline.minimum_spanning_tree(g)
        assert math.fsum(e[2] for e in mst.edges) == pytest.approx(brute_best_spanning(pos, edges), rel=1e-12)
        checked += 1
    for seed in range(20):
        t = random_tree(80, np.random.default_rng(seed))
        for k in (1, 2, 4):
            once = centerline.degree_prune(t, k)
            assert centerline.degree_prune(once, k).edges == once.edges
        for d in (0.0, 500.0, 2000.0, math.inf):
            once = centerline.depth_prune(t, d)
            assert centerline.depth_prune(once, d).edges == once.edges
    record_property("graphs", checked)


# -- 10. Rasterization -----------------------------------------------------------------------

@pytest.mark.criterion(10, "rasterization: accelerated == exhaustive, analytic cylinder, on-axis -r^2")
def test_c10_raster():
    rng = np.random.default_rng(10)
    segs = []
    for _ in range(10):
        s0 = rng.uniform(0, 4800, 3)
        segs.append(raster.TubeSegment(s0, s0 + rng.normal(0, 700, 3), *rng.uniform(30, 300, 2)))
    fast = raster.rasterize(segs, (48, 48, 48), 100.0)
    slow = raster.rasterize(segs, (48, 48, 48), 100.0, accelerate=False)
    assert fast.count() > 0 and np.array_equal(fast.data, slow.data)

    spacing, r = 10.0, 50.0
    a, b = np.array([101.0, 97.0, -100.0]), np.array([101.0, 97.0, 500.0])
    lab = raster.rasterize([raster.TubeSegment(a, b, r, r)], (20, 20, 30), spacing)
    c = (np.arange(20) + 0.5) * spacing
    X, Y = np.meshgrid(c, c, indexing="ij")
    disc = np.hypot(X - 101.0, Y - 97.0) < r
    assert np.array_equal(lab.data, np.repeat(disc[:, :, None], 30, axis=2))

    seg = raster.TubeSegment((0, 0, 0), (0, 0, 100), 7.5, 7.5)
    assert raster.tube_value(seg, (0.0, 0.0, 50.0)) == -7.5**2


# -- 11. End-to-end determinism ----------------------------------------------------------------

PIPE = """\
seed = 21
n_terminals = 200
dims = 64 64 64
spacing = 100
erosion_radius_R1 = 1200
exclusion_radius_R2 = 1500
r_min_scale = 0.8
max_depth = 1e9
max_iterations = 3
inlet_flow_Q0 = 0.0466
rasterize = true
noise_sigma = 0.1
noise_saltpepper = 0.01
"""


@pytest.mark.slow
@pytest.mark.criterion(11, "pipeline reruns bit-identical, also with parallel relaxation")
def test_c11_determinism(tmp_path, record_property):
    hashes = []
    for name, extra in (("a", ""), ("b", ""), ("c", "workers = 3\n")):
        p = tmp_path / f"{name}.cfg"
        p.write_text(f"out_dir = {tmp_path / name}\n" + PIPE + extra)
        assert cli.main(["pipeline", "--config", str(p)]) == 0
        hashes.append(pl.artifact_hashes(tmp_path / name))
    record_property("artifacts", len(hashes[0]))
    assert len(hashes[0]) >= 15
    assert hashes[0] == hashes[1] == hashes[2]
