"""
Turn a raw skeleton graph of the large arteries into a prebuilt vessel tree.

The raw graph is undirected, may contain loops, chains of degree-2 samples and
detached fragments. Preprocessing runs in a fixed order::

    MST -> orient -> collapse chains -> degree prune -> depth prune
        -> largest component -> collapse chains
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.cluster.hierarchy import DisjointSet

from .domain import DistanceField, VoxelMask
from .tree import VesselTree


class CenterlineError(ValueError):
    pass


@dataclass
class CenterlineGraph:
    """Undirected graph; ``edges`` rows are ``(a, b, radius)`` with ``nan`` for unknown radius."""

    pos: dict[int, np.ndarray] = field(default_factory=dict)
    edges: list[tuple[int, int, float]] = field(default_factory=list)

    def __post_init__(self):
        self.pos = {int(k): np.asarray(v, dtype=float).reshape(3) for k, v in self.pos.items()}
        clean = []
        for a, b, *r in self.edges:
            a, b = int(a), int(b)
            if a == b:
                raise CenterlineError(f"self-loop on node {a}")
            if a not in self.pos or b not in self.pos:
                raise CenterlineError(f"edge ({a}, {b}) references a missing node")
            clean.append((a, b, float(r[0]) if r else math.nan))
        self.edges = clean
        for k, v in self.pos.items():
            if not np.all(np.isfinite(v)):
                raise CenterlineError(f"node {k} has a non-finite position")

    def components(self) -> list[list[int]]:
        ds = DisjointSet(sorted(self.pos))
        for a, b, _ in self.edges:
            ds.merge(a, b)
        comps = [sorted(s) for s in ds.subsets()]
        return sorted(comps, key=lambda c: c[0])

    def subgraph(self, nodes) -> "CenterlineGraph":
        keep = set(nodes)
        return CenterlineGraph({n: self.pos[n] for n in sorted(keep)},
                               [e for e in self.edges if e[0] in keep and e[1] in keep])


def assign_edge_radii(graph: CenterlineGraph, field: DistanceField) -> CenterlineGraph:
    """Edge radius = mean distance-field value at the two endpoints."""
    edges = []
    for a, b, _ in graph.edges:
        ra, rb = field.sample(np.stack([graph.pos[a], graph.pos[b]]))
        edges.append((a, b, 0.5 * (float(ra) + float(rb))))
    return CenterlineGraph(dict(graph.pos), edges)


def minimum_spanning_tree(graph: CenterlineGraph) -> CenterlineGraph:
    """
    Kruskal spanning forest with edge weight ``-radius``: thick edges are kept
    first, so the thinnest edge of every loop is dropped. Ties keep the edge
    listed first.
    """
    if any(math.isnan(r) for _, _, r in graph.edges):
        raise CenterlineError("every edge needs a radius before the spanning tree step")
    order = sorted(range(len(graph.edges)), key=lambda i: (-graph.edges[i][2], i))
    ds = DisjointSet(sorted(graph.pos))
    kept = []
    for i in order:
        a, b, _ = graph.edges[i]
        if ds.merge(a, b):
            kept.append(i)
    return CenterlineGraph(dict(graph.pos), [graph.edges[i] for i in sorted(kept)])


def orient_from_root(graph: CenterlineGraph, root_id: int) -> VesselTree:
    """
    Direct every edge of the root's component away from the root.

    Nodes outside the root's component are dropped. Raises on cycles.
    """
    if root_id not in graph.pos:
        raise CenterlineError(f"root {root_id} is not in the graph")
    adj: dict[int, list[tuple[int, float]]] = {n: [] for n in graph.pos}
    for a, b, r in graph.edges:
        adj[a].append((b, r))
        adj[b].append((a, r))
    tree = VesselTree()
    tree.root = tree.add_node(graph.pos[root_id], node_id=root_id)
    stack = [(root_id, None)]
    while stack:
        n, parent = stack.pop()
        for m, r in sorted(adj[n], reverse=True):
            if m == parent:
                parent = None  # consume one parent link; a duplicate edge would be a cycle
                continue
            if m in tree.pos:
                raise CenterlineError(f"graph has a cycle through nodes {n} and {m}")
            tree.add_node(graph.pos[m], node_id=m)
            tree.add_edge(n, m, r)
            stack.append((m, n))
    return tree


def remove_intermediate_nodes(tree: VesselTree) -> VesselTree:
    """
    Collapse every chain of single-child nodes into one straight edge.

    The replacement radius is the length-weighted mean of the chain radii.
    Prebuilt and terminal nodes are ordinary nodes here.
    """
    t = tree.copy()

    def interior(n):
        return n != t.root and n in t.in_edge and len(t.out_edges[n]) == 1

    for start in t.preorder():
        if start not in t.pos or interior(start):
            continue
        for eid in list(t.out_edges[start]):
            chain = [eid]
            node = t.edges[eid][1]
            while interior(node):
                nxt = t.out_edges[node][0]
                chain.append(nxt)
                node = t.edges[nxt][1]
            if len(chain) == 1:
                continue
            lens = [t.length(e) for e in chain]
            total = math.fsum(lens)
            if total > 0:
                r = math.fsum(t.radius[e] * l for e, l in zip(chain, lens)) / total
            else:
                r = math.fsum(t.radius[e] for e in chain) / len(chain)
            q = t.flow[chain[0]]
            middle = [t.edges[e][1] for e in chain[:-1]]
            for e in chain:
                t.remove_edge(e)
            for m in middle:
                t.remove_node(m)
            t.add_edge(start, node, r, q)
    return t


def downstream_lengths(tree: VesselTree) -> dict[int, float]:
    """Longest path length from each node down to a leaf of its subtree."""
    down: dict[int, float] = {}
    for n in reversed(tree.preorder()):
        best = 0.0
        for e in tree.out_edges[n]:
            best = max(best, tree.length(e) + down[tree.edges[e][1]])
        down[n] = best
    return down


def _drop_subtree(t: VesselTree, top: int) -> None:
    nodes = t.preorder(top)
    for n in reversed(nodes):
        e = t.in_edge.get(n)
        if e is not None:
            t.remove_edge(e)
        t.remove_node(n)


def degree_prune(tree: VesselTree, max_children: int = 4) -> VesselTree:
    """Keep at most ``max_children`` children per node, those leading to the longest paths."""
    if max_children < 1:
        raise CenterlineError("max_children must be >= 1")
    t = tree.copy()
    down = downstream_lengths(t)
    for n in t.preorder():
        if n not in t.pos or len(t.out_edges[n]) <= max_children:
            continue
        ranked = sorted(t.out_edges[n],
                        key=lambda e: (-(t.length(e) + down[t.edges[e][1]]), t.edges[e][1]))
        for e in ranked[max_children:]:
            _drop_subtree(t, t.edges[e][1])
    return t


def path_lengths(tree: VesselTree) -> dict[int, float]:
    """Cumulative path length from the root to every node."""
    dist = {tree.root: 0.0}
    for n in tree.preorder():
        for e in tree.out_edges[n]:
            dist[tree.edges[e][1]] = dist[n] + tree.length(e)
    return dist


def depth_prune(tree: VesselTree, max_distance: float) -> VesselTree:
    """Remove every node whose path length from the root exceeds ``max_distance``."""
    t = tree.copy()
    dist = path_lengths(t)
    for n in t.preorder():
        if n in t.pos and dist[n] > max_distance:
            _drop_subtree(t, n)
    return t


def largest_component(graph):
    """
    Keep the connected component with the most nodes (ties: smallest node id).

    Accepts a ``CenterlineGraph`` or a ``VesselTree``; a tree keeps its root, so
    the winning component must contain it.
    """
    if isinstance(graph, VesselTree):
        g = CenterlineGraph(graph.pos, [(a, b, graph.radius[e]) for e, (a, b) in graph.edges.items()])
        comps = g.components()
        best = max(comps, key=lambda c: (len(c), -c[0]))
        if graph.root not in best:
            raise CenterlineError("largest component does not contain the root")
        t = graph.copy()
        for n in sorted(set(t.pos) - set(best)):
            for e in list(t.out_edges[n]):
                t.remove_edge(e)
        for n in sorted(set(t.pos) - set(best)):
            e = t.in_edge.get(n)
            if e is not None:
                t.remove_edge(e)
            t.remove_node(n)
        return t
    if not graph.pos:
        raise CenterlineError("empty graph has no components")
    comps = graph.components()
    best = max(comps, key=lambda c: (len(c), -c[0]))
    return graph.subgraph(best)


def preprocess(graph: CenterlineGraph, root_id: int, max_depth: float, max_children: int = 4,
               field: DistanceField | None = None) -> VesselTree:
    """Full preprocessing chain; the returned nodes are all flagged prebuilt."""
    if field is not None:
        graph = assign_edge_radii(graph, field)
    t = orient_from_root(minimum_spanning_tree(graph), root_id)
    t = remove_intermediate_nodes(t)
    t = degree_prune(t, max_children)
    t = depth_prune(t, max_depth)
    t = largest_component(t)
    t = remove_intermediate_nodes(t)
    t.prebuilt = set(t.pos)
    t.terminal = set()
    return t


# -- synthetic skeletons -------------------------------------------------------

def synthetic_centerline(whole: VoxelMask, root, generations: int = 3, root_radius: float = 300.0,
                         step: float | None = None, n_loops: int = 3, fragment: bool = True,
                         seed=0) -> tuple[CenterlineGraph, int]:
    """
    A skeleton-like graph of large arteries inside ``whole``, grown from ``root``.

    Branches recursively halve the organ territory along its principal axis and
    are sampled as jittered polylines, so the graph has degree-2 chains. A few
    thin shortcut edges create loops and an optional detached fragment mimics
    skeletonization debris. Returns the graph and the root node id (0).
    """
    rng = np.random.default_rng(seed)
    pts = whole.voxel_centers()
    if len(pts) > 20000:
        pts = pts[rng.choice(len(pts), 20000, replace=False)]
    step = step or 3.0 * whole.spacing
    root = np.asarray(root, dtype=float)
    pos: dict[int, np.ndarray] = {0: root.copy()}
    edges: list[tuple[int, int, float]] = []
    branch_of: dict[int, int] = {0: -1}
    counter = [0]

    def polyline(a_id, b, radius, branch):
        a = pos[a_id]
        d = b - a
        L = float(np.linalg.norm(d))
        k = max(1, int(round(L / step)))
        prev = a_id
        for s in range(1, k + 1):
            p = a + d * (s / k)
            if s < k:
                p = p + rng.normal(scale=0.15 * step, size=3)
            counter[0] += 1
            pos[counter[0]] = p
            branch_of[counter[0]] = branch
            edges.append((prev, counter[0], radius * float(rng.uniform(0.9, 1.1))))
            prev = counter[0]
        return prev

    def grow(start_id, territory, gen, radius, branch):
        centre = territory.mean(axis=0)
        target = territory[np.argmin(np.sum((territory - centre) ** 2, axis=1))]
        frac = 0.5 if gen == 0 else 0.6
        end = pos[start_id] + frac * (target - pos[start_id])
        end_id = polyline(start_id, end, radius, branch)
        if gen >= generations or len(territory) < 8:
            return
        cov = np.cov((territory - centre).T)
        axis = np.linalg.eigh(cov)[1][:, -1]
        proj = (territory - centre) @ axis
        cut = np.median(proj)
        child_r = radius * 2.0 ** (-1.0 / 3.0)
        for i, half in enumerate((territory[proj <= cut], territory[proj > cut])):
            if len(half):
                grow(end_id, half, gen + 1, child_r, 2 * branch + 1 + i)

    grow(0, pts, 0, root_radius, 0)

    ids = np.array(sorted(pos))
    P = np.array([pos[i] for i in ids])
    br = np.array([branch_of[i] for i in ids])
    thin = 0.2 * root_radius * 2.0 ** (-generations / 3.0)
    added = 0
    for i in rng.permutation(len(ids)):
        if added >= n_loops:
            break
        d = np.linalg.norm(P - P[i], axis=1)
        cand = np.where((d < 2.5 * step) & (br != br[i]) & (d > 0))[0]
        if len(cand):
            j = int(cand[np.argmin(d[cand])])
            a, b = int(ids[i]), int(ids[j])
            if not any({a, b} == {e[0], e[1]} for e in edges):
                edges.append((a, b, thin))
                added += 1
    if fragment:
        base = pts[rng.integers(len(pts))]
        for s in range(4):
            counter[0] += 1
            pos[counter[0]] = base + s * 0.5 * step * np.array([1.0, 0.0, 0.0])
            if s:
                edges.append((counter[0] - 1, counter[0], thin))
    return CenterlineGraph(pos, edges), 0


# -- files -----------------------------------------------------------------------

def save_centerline(graph: CenterlineGraph, nodes_path, edges_path) -> None:
    with open(nodes_path, "w") as fh:
        fh.write("id,x,y,z\n")
        for n in sorted(graph.pos):
            fh.write(f"{n}," + ",".join(repr(float(v)) for v in graph.pos[n]) + "\n")
    with open(edges_path, "w") as fh:
        fh.write("id_a,id_b,radius\n")
        for a, b, r in graph.edges:
            fh.write(f"{a},{b},{'' if math.isnan(r) else repr(float(r))}\n")


def load_centerline(nodes_path, edges_path) -> CenterlineGraph:
    """
    Read ``nodes.csv`` (``id,x,y,z[,radius]``) and ``edges.csv`` (``id_a,id_b[,radius]``).

    When edges carry no radius but nodes do, the edge radius is the mean of its
    node radii.
    """
    pos, node_r = {}, {}
    lines = Path(nodes_path).read_text().splitlines()
    head = [h.strip() for h in lines[0].split(",")]
    if head[:4] != ["id", "x", "y", "z"]:
        raise CenterlineError(f"{nodes_path}: header must start with id,x,y,z")
    for line in lines[1:]:
        if not line.strip():
            continue
        cols = line.split(",")
        pos[int(cols[0])] = np.array([float(c) for c in cols[1:4]])
        if len(cols) > 4 and cols[4].strip():
            node_r[int(cols[0])] = float(cols[4])
    edges = []
    lines = Path(edges_path).read_text().splitlines()
    head = [h.strip() for h in lines[0].split(",")]
    if head[:2] != ["id_a", "id_b"]:
        raise CenterlineError(f"{edges_path}: header must start with id_a,id_b")
    for line in lines[1:]:
        if not line.strip():
            continue
        cols = line.split(",")
        a, b = int(cols[0]), int(cols[1])
        if len(cols) > 2 and cols[2].strip():
            r = float(cols[2])
        elif a in node_r and b in node_r:
            r = 0.5 * (node_r[a] + node_r[b])
        else:
            r = math.nan
        edges.append((a, b, r))
    return CenterlineGraph(pos, edges)

