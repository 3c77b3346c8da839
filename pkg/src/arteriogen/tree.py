"""
Rooted vessel tree with Murray radii, Kirchhoff flows, Strahler orders and
Poiseuille pressures.

Internal units are um, N and s: flow in um^3/s, pressure in N/um^2 and
viscosity in N s/um^2. Conversion constants for the clinical units used at
the file interfaces live here too.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np

# 1 mmHg = 133.322387415 Pa and 1 Pa = 1 N/m^2 = 1e-12 N/um^2
MMHG = 133.322387415e-12
# 1 ml = 1e12 um^3
ML_PER_MIN = 1e12 / 60.0
PA_S = 1e-12


class TreeError(ValueError):
    pass


@dataclass
class HemoConfig:
    """Blood viscosity, inlet flow and inlet pressure in internal units."""

    viscosity_mu: float = 3.6e-3 * PA_S
    inlet_flow_Q0: float = 7.0 * ML_PER_MIN
    inlet_pressure_p0: float = 100.0 * MMHG

    def __post_init__(self):
        for name in ("viscosity_mu", "inlet_flow_Q0", "inlet_pressure_p0"):
            if not getattr(self, name) > 0:
                raise TreeError(f"{name} must be positive")

    @classmethod
    def physiological(cls, viscosity_pa_s=3.6e-3, q0_ml_min=7.0, p0_mmhg=100.0) -> "HemoConfig":
        return cls(viscosity_pa_s * PA_S, q0_ml_min * ML_PER_MIN, p0_mmhg * MMHG)


class VesselTree:
    """
    Directed tree of straight cylindrical vessels.

    Nodes carry positions; edges carry radius and flow. Edge length is always
    derived from the endpoint positions. Nodes flagged ``prebuilt`` belong to
    the image-derived large-artery tree and are never moved or deleted by the
    optimizer. Ids are integers handed out in increasing order; all iteration
    is in ascending id order.
    """

    def __init__(self):
        self.pos: dict[int, np.ndarray] = {}
        self.edges: dict[int, tuple[int, int]] = {}
        self.radius: dict[int, float] = {}
        self.flow: dict[int, float] = {}
        self.in_edge: dict[int, int] = {}
        self.out_edges: dict[int, list[int]] = {}
        self.terminal: set[int] = set()
        self.prebuilt: set[int] = set()
        self.root: int | None = None
        self._next_node = 0
        self._next_edge = 0

    # -- construction -------------------------------------------------------

    def add_node(self, position, terminal=False, prebuilt=False, node_id=None) -> int:
        if node_id is None:
            node_id = self._next_node
        elif node_id in self.pos:
            raise TreeError(f"duplicate node id {node_id}")
        self._next_node = max(self._next_node, node_id + 1)
        self.pos[node_id] = np.array(position, dtype=float).reshape(3)
        self.out_edges[node_id] = []
        if terminal:
            self.terminal.add(node_id)
        if prebuilt:
            self.prebuilt.add(node_id)
        return node_id

    def add_edge(self, parent: int, child: int, radius=math.nan, flow=0.0, edge_id=None) -> int:
        if parent not in self.pos or child not in self.pos:
            raise TreeError(f"edge ({parent}, {child}) references a missing node")
        if edge_id is None:
            edge_id = self._next_edge
        elif edge_id in self.edges:
            raise TreeError(f"duplicate edge id {edge_id}")
        self._next_edge = max(self._next_edge, edge_id + 1)
        self.edges[edge_id] = (parent, child)
        self.radius[edge_id] = float(radius)
        self.flow[edge_id] = float(flow)
        self.in_edge[child] = edge_id
        lst = self.out_edges[parent]
        lst.append(edge_id)
        if len(lst) > 1 and lst[-2] > edge_id:
            lst.sort()
        return edge_id

    def remove_edge(self, eid: int) -> None:
        parent, child = self.edges.pop(eid)
        del self.radius[eid], self.flow[eid]
        if self.in_edge.get(child) == eid:
            del self.in_edge[child]
        self.out_edges[parent].remove(eid)

    def remove_node(self, nid: int) -> None:
        if self.out_edges[nid] or nid in self.in_edge:
            raise TreeError(f"node {nid} still has edges")
        del self.pos[nid], self.out_edges[nid]
        self.terminal.discard(nid)
        self.prebuilt.discard(nid)

    def copy(self) -> "VesselTree":
        t = VesselTree()
        t.pos = {k: v.copy() for k, v in self.pos.items()}
        t.edges = dict(self.edges)
        t.radius = dict(self.radius)
        t.flow = dict(self.flow)
        t.in_edge = dict(self.in_edge)
        t.out_edges = {k: list(v) for k, v in self.out_edges.items()}
        t.terminal = set(self.terminal)
        t.prebuilt = set(self.prebuilt)
        t.root = self.root
        t._next_node = self._next_node
        t._next_edge = self._next_edge
        return t

    # -- queries ------------------------------------------------------------

    @property
    def n_nodes(self) -> int:
        return len(self.pos)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def nodes(self) -> list[int]:
        return sorted(self.pos)

    def edge_ids(self) -> list[int]:
        return sorted(self.edges)

    def parent(self, nid: int) -> int | None:
        eid = self.in_edge.get(nid)
        return None if eid is None else self.edges[eid][0]

    def children(self, nid: int) -> list[int]:
        return [self.edges[e][1] for e in self.out_edges[nid]]

    def length(self, eid: int) -> float:
        a, b = self.edges[eid]
        d = self.pos[a] - self.pos[b]
        return math.sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2])

    def leaves(self) -> list[int]:
        return [n for n in sorted(self.pos) if not self.out_edges[n] and n != self.root]

    def leaf_edges(self) -> list[int]:
        return [e for e in sorted(self.edges) if not self.out_edges[self.edges[e][1]]]

    def preorder(self, start: int | None = None) -> list[int]:
        """Nodes reachable from ``start`` (default root), parents before children."""
        start = self.root if start is None else start
        out, stack = [], [start]
        while stack:
            n = stack.pop()
            out.append(n)
            stack.extend(self.edges[e][1] for e in reversed(self.out_edges[n]))
        return out

    def postorder_edges(self) -> list[int]:
        """Edges reachable from the root, children before parents."""
        order = []
        for n in reversed(self.preorder()):
            e = self.in_edge.get(n)
            if e is not None:
                order.append(e)
        return order

    def positions_array(self) -> tuple[list[int], np.ndarray]:
        ids = sorted(self.pos)
        return ids, np.array([self.pos[i] for i in ids]).reshape(-1, 3)

    def edge_arrays(self):
        """``(edge ids, lengths, radii, flows)`` as arrays in ascending edge id."""
        eids = sorted(self.edges)
        if not eids:
            z = np.zeros(0)
            return eids, z, z.copy(), z.copy()
        par = np.array([self.pos[self.edges[e][0]] for e in eids])
        chi = np.array([self.pos[self.edges[e][1]] for e in eids])
        lengths = np.sqrt(np.sum((par - chi) ** 2, axis=1))
        radii = np.array([self.radius[e] for e in eids])
        flows = np.array([self.flow[e] for e in eids])
        return eids, lengths, radii, flows

    def relabeled(self) -> tuple["VesselTree", dict[int, int]]:
        """Copy with node ids ``0..n-1`` and edge ids ``0..m-1`` (order preserved)."""
        nmap = {old: new for new, old in enumerate(sorted(self.pos))}
        t = VesselTree()
        for old in sorted(self.pos):
            t.add_node(self.pos[old], old in self.terminal, old in self.prebuilt, node_id=nmap[old])
        for new, old in enumerate(sorted(self.edges)):
            a, b = self.edges[old]
            t.add_edge(nmap[a], nmap[b], self.radius[old], self.flow[old], edge_id=new)
        t.root = None if self.root is None else nmap[self.root]
        return t, nmap


# -- propagation -------------------------------------------------------------

def propagate_radii_murray(tree: VesselTree, terminal_radii: dict[int, float] | None = None) -> VesselTree:
    """
    Set every non-leaf edge radius to the cube root of the sum of its
    children's cubed radii, leaves first. Leaf radii come from
    ``terminal_radii`` (keyed by leaf node) or are kept from the tree.
    """
    terminal_radii = terminal_radii or {}
    for eid in tree.postorder_edges():
        child = tree.edges[eid][1]
        outs = tree.out_edges[child]
        if outs:
            tree.radius[eid] = math.fsum(tree.radius[c] ** 3 for c in outs) ** (1.0 / 3.0)
        else:
            r = terminal_radii.get(child, tree.radius[eid])
            if not r > 0:
                raise TreeError(f"terminal edge {eid} (node {child}) has no radius")
            tree.radius[eid] = float(r)
    return tree


def propagate_flows(tree: VesselTree, config: HemoConfig) -> VesselTree:
    """Equal flow ``Q0 / N`` on the N leaf edges, summed upward (Kirchhoff)."""
    leaves = tree.leaf_edges()
    if not leaves:
        return tree
    qt = config.inlet_flow_Q0 / len(leaves)
    for eid in tree.postorder_edges():
        outs = tree.out_edges[tree.edges[eid][1]]
        tree.flow[eid] = math.fsum(tree.flow[c] for c in outs) if outs else qt
    return tree


def strahler_orders(tree: VesselTree) -> dict[int, int]:
    """
    Strahler order per edge: leaf edges are 0; a parent takes the largest
    child order, plus one when two or more children share that maximum.
    """
    order: dict[int, int] = {}
    for eid in tree.postorder_edges():
        outs = tree.out_edges[tree.edges[eid][1]]
        if not outs:
            order[eid] = 0
            continue
        cs = [order[c] for c in outs]
        m = max(cs)
        order[eid] = m + 1 if cs.count(m) >= 2 else m
    return order


def pressure_drop(length, radius, flow, mu):
    """Hagen-Poiseuille drop ``8 mu l Q / (pi r^4)``."""
    return 8.0 * mu * length * flow / (math.pi * radius**4)


def compute_pressures(tree: VesselTree, config: HemoConfig) -> dict[int, float]:
    """Node pressures (N/um^2) by breadth-first descent from ``p0`` at the root."""
    p = {tree.root: config.inlet_pressure_p0}
    queue = deque([tree.root])
    while queue:
        n = queue.popleft()
        for eid in tree.out_edges[n]:
            r = tree.radius[eid]
            if not r > 0:
                raise TreeError(f"edge {eid} has non-positive radius {r}")
            child = tree.edges[eid][1]
            p[child] = p[n] - pressure_drop(tree.length(eid), r, tree.flow[eid], config.viscosity_mu)
            queue.append(child)
    return p


# -- validation ----------------------------------------------------------------

@dataclass(frozen=True)
class Violation:
    kind: str
    ident: int | None
    detail: str


def validate(tree: VesselTree, murray=True, flows=True, rtol=1e-9) -> list[Violation]:
    """Check the tree invariants; an empty list means the tree is valid."""
    out: list[Violation] = []
    if tree.root is None or tree.root not in tree.pos:
        return [Violation("root", tree.root, "root missing")]
    n_in: dict[int, list[int]] = {}
    for eid in sorted(tree.edges):
        a, b = tree.edges[eid]
        if a == b:
            out.append(Violation("self_loop", eid, f"edge {eid} loops on node {a}"))
        n_in.setdefault(b, []).append(eid)
    for node, eids in sorted(n_in.items()):
        if len(eids) > 1:
            out.append(Violation("multiple_parents", node, f"node {node} has parent edges {eids}"))
    if tree.root in n_in:
        out.append(Violation("root_has_parent", tree.root, f"root {tree.root} has an incoming edge"))

    # reachability over all stored edges
    adj: dict[int, list[int]] = {}
    for eid, (a, b) in tree.edges.items():
        adj.setdefault(a, []).append(b)
    seen = {tree.root}
    stack = [tree.root]
    while stack:
        for c in adj.get(stack.pop(), ()):
            if c not in seen:
                seen.add(c)
                stack.append(c)
    for n in sorted(set(tree.pos) - seen):
        out.append(Violation("unreachable", n, f"node {n} not reachable from root"))
    # cycles: Kahn's algorithm on the directed graph
    indeg = {n: 0 for n in tree.pos}
    for a, b in tree.edges.values():
        indeg[b] += 1
    queue = [n for n, d in indeg.items() if d == 0]
    done = 0
    while queue:
        n = queue.pop()
        done += 1
        for c in adj.get(n, ()):
            indeg[c] -= 1
            if indeg[c] == 0:
                queue.append(c)
    if done < len(tree.pos):
        cyc = sorted(n for n, d in indeg.items() if d > 0)
        out.append(Violation("cycle", cyc[0], f"cycle through nodes {cyc[:10]}"))

    for eid in sorted(tree.edges):
        r = tree.radius[eid]
        if not r > 0:
            out.append(Violation("radius", eid, f"edge {eid} has radius {r}"))
        if flows and not tree.flow[eid] > 0:
            out.append(Violation("flow", eid, f"edge {eid} has flow {tree.flow[eid]}"))
    for n in sorted(tree.terminal):
        if tree.out_edges.get(n):
            out.append(Violation("terminal_not_leaf", n, f"terminal {n} has children"))
    if any(v.kind in ("cycle", "multiple_parents", "root_has_parent") for v in out):
        return out

    for eid in sorted(tree.edges):
        outs = tree.out_edges[tree.edges[eid][1]]
        if not outs:
            continue
        if murray:
            rp3 = tree.radius[eid] ** 3
            rc3 = math.fsum(tree.radius[c] ** 3 for c in outs)
            if abs(rp3 - rc3) > rtol * abs(rp3):
                out.append(Violation("murray", eid, f"edge {eid}: r^3={rp3:.6g} vs children {rc3:.6g}"))
        if flows:
            qp = tree.flow[eid]
            qc = math.fsum(tree.flow[c] for c in outs)
            if abs(qp - qc) > rtol * abs(qp):
                out.append(Violation("kirchhoff", eid, f"edge {eid}: Q={qp:.6g} vs children {qc:.6g}"))
    return out


# -- files -----------------------------------------------------------------------

def _paths(prefix) -> tuple[Path, Path]:
    prefix = str(prefix)
    return Path(prefix + "nodes.csv"), Path(prefix + "edges.csv")


def save_tree(tree: VesselTree, prefix, orders: dict[int, int] | None = None) -> tuple[Path, Path]:
    """
    Write ``<prefix>nodes.csv`` and ``<prefix>edges.csv`` with dense ids.

    Floats are written with ``repr`` so a reload is lossless.
    """
    orders = strahler_orders(tree) if orders is None else orders
    t, nmap = tree.relabeled()
    npath, epath = _paths(prefix)
    npath.parent.mkdir(parents=True, exist_ok=True)
    with open(npath, "w") as fh:
        fh.write("id,x,y,z,is_terminal\n")
        for n in t.nodes():
            x, y, z = (float(v) for v in t.pos[n])
            fh.write(f"{n},{x!r},{y!r},{z!r},{int(n in t.terminal)}\n")
    old_eids = sorted(tree.edges)
    with open(epath, "w") as fh:
        fh.write("id,parent_node,child_node,radius,flow,strahler\n")
        for new, old in enumerate(old_eids):
            a, b = t.edges[new]
            fh.write(f"{new},{a},{b},{float(t.radius[new])!r},{float(t.flow[new])!r},{orders.get(old, -1)}\n")
    return npath, epath


def load_tree(prefix, prebuilt=False) -> VesselTree:
    """Read a tree file pair. With ``prebuilt=True`` every node is marked prebuilt."""
    npath, epath = _paths(prefix)
    t = VesselTree()
    with open(npath) as fh:
        if fh.readline().strip() != "id,x,y,z,is_terminal":
            raise TreeError(f"{npath}: unexpected header")
        for line in fh:
            if not line.strip():
                continue
            i, x, y, z, term = line.strip().split(",")
            t.add_node((float(x), float(y), float(z)), terminal=bool(int(term)),
                       prebuilt=prebuilt, node_id=int(i))
    with open(epath) as fh:
        if fh.readline().strip() != "id,parent_node,child_node,radius,flow,strahler":
            raise TreeError(f"{epath}: unexpected header")
        for line in fh:
            if not line.strip():
                continue
            i, a, b, r, q, _ = line.strip().split(",")
            t.add_edge(int(a), int(b), float(r), float(q), edge_id=int(i))
    roots = [n for n in t.nodes() if n not in t.in_edge]
    if len(roots) != 1:
        raise TreeError(f"{npath}: expected exactly one root, found {len(roots)}")
    t.root = roots[0]
    return t


def write_vtk(tree: VesselTree, path, pressures: dict[int, float] | None = None) -> None:
    """Legacy ASCII polydata: one line cell per vessel with radius/flow/pressure scalars."""
    t, nmap = tree.relabeled()
    old_eids = sorted(tree.edges)
    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 3.0\nvessel tree\nASCII\nDATASET POLYDATA\n")
        fh.write(f"POINTS {t.n_nodes} double\n")
        for n in t.nodes():
            fh.write(" ".join(repr(float(v)) for v in t.pos[n]) + "\n")
        fh.write(f"LINES {t.n_edges} {3 * t.n_edges}\n")
        for e in t.edge_ids():
            a, b = t.edges[e]
            fh.write(f"2 {a} {b}\n")
        fh.write(f"CELL_DATA {t.n_edges}\n")
        for name, src in (("radius", t.radius), ("flow", t.flow)):
            fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
            for e in t.edge_ids():
                fh.write(f"{float(src[e])!r}\n")
        if pressures is not None:
            fh.write("SCALARS pressure_mmHg double 1\nLOOKUP_TABLE default\n")
            for old in old_eids:
                child = tree.edges[old][1]
                fh.write(f"{pressures[child] / MMHG!r}\n")
            inv = {new: old for old, new in nmap.items()}
            fh.write(f"POINT_DATA {t.n_nodes}\nSCALARS pressure_mmHg double 1\nLOOKUP_TABLE default\n")
            for n in t.nodes():
                fh.write(f"{pressures[inv[n]] / MMHG!r}\n")
