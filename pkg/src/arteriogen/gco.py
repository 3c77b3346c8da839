"""
Global Constructive Optimization of a vessel tree seeded with a prebuilt
large-artery tree.

Every edge costs ``k_e * l_e`` with the per-length coefficient

    k_e = w_c * pi * r^2  +  w_p * Q^2 * 8 mu / (pi r^4)

(material volume plus viscous power dissipation). The local cost of a node is
the sum over its incident edges and the global cost the sum of local costs, so
each edge is counted once per endpoint. Radii follow Murray's law and flows
Kirchhoff's rule; only the positions of generated branching nodes are
optimized.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .sampling import TerminalSet
from .tree import (HemoConfig, PA_S, TreeError, VesselTree, propagate_flows,
                   propagate_radii_murray, strahler_orders)

log = logging.getLogger(__name__)


class GcoError(RuntimeError):
    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


@dataclass
class GcoConfig:
    w_c: float = 5e-8  # N / (um^2 s)
    w_p: float = 1.0
    viscosity_mu: float = 3.6e-3 * PA_S
    merge_ratio_threshold: float = 0.2
    merge_abs_epsilon: float = 1.0  # um
    prune_order_schedule: tuple[int, ...] = (2, 2, 1, 1, 1)
    max_iterations: int = 5
    # stop when |grad| <= relax_tolerance * sum of incident edge coefficients
    relax_tolerance: float = 1e-6
    relax_max_steps: int = 100
    min_edge_epsilon: float = 1e-2  # um
    inner_max_steps: int = 30
    convergence_tol: float = 1e-4
    split_weiszfeld_steps: int = 40
    attach_to_all_nodes: bool = False
    workers: int = 1
    seed: int = 0  # the optimizer is deterministic; kept for provenance

    def __post_init__(self):
        self.prune_order_schedule = tuple(int(v) for v in self.prune_order_schedule)
        if self.w_c < 0 or self.w_p < 0 or (self.w_c == 0 and self.w_p == 0):
            raise ValueError("w_c and w_p must be non-negative and not both zero")
        if not self.viscosity_mu > 0:
            raise ValueError("viscosity_mu must be positive")
        for name in ("merge_ratio_threshold", "merge_abs_epsilon", "relax_tolerance",
                     "min_edge_epsilon", "convergence_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if len(self.prune_order_schedule) < 1:
            raise ValueError("prune_order_schedule needs at least one entry")
        if self.max_iterations < 0 or self.relax_max_steps < 1 or self.inner_max_steps < 1:
            raise ValueError("iteration counts must be non-negative (step caps >= 1)")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")


@dataclass
class SubtreeAssignment:
    """Terminal node id -> prebuilt node it was attached to at initialization."""

    parent_of: dict[int, int] = field(default_factory=dict)


@dataclass
class TraceRecord:
    iteration: int
    phase: str
    cost: float
    nodes: int
    edges: int


@dataclass
class ConvergenceTrace:
    records: list[TraceRecord] = field(default_factory=list)

    def add(self, iteration, phase, tree, config):
        self.records.append(TraceRecord(iteration, phase, global_cost(tree, config),
                                        tree.n_nodes, tree.n_edges))

    def costs(self, phase=None) -> list[float]:
        return [r.cost for r in self.records if phase is None or r.phase == phase]

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("iteration,phase,cost,nodes,edges\n")
            for r in self.records:
                fh.write(f"{r.iteration},{r.phase},{r.cost!r},{r.nodes},{r.edges}\n")


@dataclass
class RelaxDiagnostics:
    line_search_failures: list[int] = field(default_factory=list)
    skipped_coincident: list[int] = field(default_factory=list)


# -- cost model -------------------------------------------------------------------

def edge_coefficient(radius, flow, config: GcoConfig):
    """Cost per unit length of a vessel (N/s)."""
    r2 = radius * radius
    return config.w_c * math.pi * r2 + config.w_p * flow * flow * 8.0 * config.viscosity_mu / (math.pi * r2 * r2)


def _edge_coefficients(radii, flows, config):
    r2 = radii * radii
    return config.w_c * np.pi * r2 + config.w_p * flows * flows * 8.0 * config.viscosity_mu / (np.pi * r2 * r2)


def _incident(tree: VesselTree, v: int) -> list[int]:
    e = tree.in_edge.get(v)
    return ([e] if e is not None else []) + list(tree.out_edges[v])


def _neighbour(tree, v, eid):
    a, b = tree.edges[eid]
    return b if a == v else a


def _anchors(tree, v, config):
    """Neighbour positions and edge coefficients around ``v``."""
    eids = _incident(tree, v)
    for e in eids:
        if not tree.radius[e] > 0:
            raise TreeError(f"edge {e} has non-positive radius")
    pts = np.array([tree.pos[_neighbour(tree, v, e)] for e in eids]).reshape(-1, 3)
    k = np.array([edge_coefficient(tree.radius[e], tree.flow[e], config) for e in eids])
    return pts, k


def local_cost(tree: VesselTree, v: int, config: GcoConfig) -> float:
    """Cost of all edges incident to ``v`` at the current positions (N um/s)."""
    pts, k = _anchors(tree, v, config)
    if len(k) == 0:
        raise TreeError(f"node {v} has no incident edge")
    return float(k @ np.sqrt(np.sum((pts - tree.pos[v]) ** 2, axis=1)))


def local_cost_gradient(tree: VesselTree, v: int, config: GcoConfig) -> np.ndarray:
    """Analytic gradient of ``local_cost`` with respect to the position of ``v``."""
    pts, k = _anchors(tree, v, config)
    diff = tree.pos[v] - pts
    d = np.sqrt(np.sum(diff**2, axis=1))
    if np.any(d <= config.min_edge_epsilon):
        raise GcoError(f"node {v} coincides with a neighbour; merge before relaxing")
    return (k / d) @ diff


def global_cost(tree: VesselTree, config: GcoConfig) -> float:
    """Sum of local costs over all nodes, i.e. twice the summed edge cost."""
    _, lengths, radii, flows = tree.edge_arrays()
    if len(lengths) == 0:
        return 0.0
    return 2.0 * math.fsum(_edge_coefficients(radii, flows, config) * lengths)


def propagate(tree: VesselTree, hemo: HemoConfig) -> VesselTree:
    propagate_radii_murray(tree)
    propagate_flows(tree, hemo)
    return tree


# -- relaxation ---------------------------------------------------------------------

def _weber_value(x, pts, k):
    return float(k @ np.sqrt(np.sum((pts - x) ** 2, axis=1)))


def minimize_point(x0, pts, k, tol=1e-6, max_steps=100, eps=1e-2):
    """
    BFGS minimization of ``sum_i k_i |x - p_i|`` over ``x``.

    Uses a backtracking Armijo line search. Trial points closer than ``eps`` to
    an anchor are rejected, so the result never coincides with a neighbour.
    Returns ``(x, value, ok)``; ``ok`` is False when the line search failed
    before the gradient criterion was met.
    """
    x = np.array(x0, dtype=float)
    ksum = float(k.sum())
    diff = x - pts
    d = np.sqrt(np.sum(diff**2, axis=1))
    if np.any(d <= eps):
        j = int(np.argmin(d))
        mask = np.arange(len(k)) != j
        dm = d[mask]
        g_rest = (k[mask] / np.maximum(dm, 1e-300)) @ diff[mask] if mask.any() else np.zeros(3)
        gn = float(np.linalg.norm(g_rest))
        if gn <= k[j]:
            # optimality condition at the anchor holds: stay put
            return x, _weber_value(x, pts, k), True
        x = pts[j] - g_rest / gn * (10.0 * eps)
        diff = x - pts
        d = np.sqrt(np.sum(diff**2, axis=1))
        if np.any(d <= eps):
            return np.array(x0, dtype=float), _weber_value(np.asarray(x0, float), pts, k), False
    f = float(k @ d)
    g = (k / d) @ diff
    H = np.eye(3) / float(np.sum(k / d))
    for _ in range(max_steps):
        if math.sqrt(g @ g) <= tol * ksum:
            return x, f, True
        p = -H @ g
        slope = float(g @ p)
        if slope >= 0:
            H = np.eye(3) / float(np.sum(k / d))
            p = -H @ g
            slope = float(g @ p)
        alpha = 1.0
        for _ls in range(40):
            xn = x + alpha * p
            dn_vec = xn - pts
            dn = np.sqrt(np.sum(dn_vec**2, axis=1))
            if np.all(dn > eps):
                fn = float(k @ dn)
                if fn <= f + 1e-4 * alpha * slope:
                    break
            alpha *= 0.5
        else:
            return x, f, False
        gn_vec = (k / dn) @ dn_vec
        s = xn - x
        y = gn_vec - g
        sy = float(s @ y)
        if sy > 1e-12 * math.sqrt(float(s @ s) * float(y @ y)):
            rho = 1.0 / sy
            Hy = H @ y
            H = H + ((sy + y @ Hy) * rho * rho) * np.outer(s, s) - rho * (np.outer(Hy, s) + np.outer(s, Hy))
        if fn >= f and math.sqrt(float(s @ s)) < 1e-12 * (1.0 + math.sqrt(float(x @ x))):
            return xn, fn, True
        x, f, g, d = xn, fn, gn_vec, dn
    return x, f, True


def relax_eligible(tree: VesselTree, v: int) -> bool:
    return v != tree.root and v not in tree.terminal and v not in tree.prebuilt


def relax_node(tree: VesselTree, v: int, config: GcoConfig, diagnostics: RelaxDiagnostics | None = None) -> np.ndarray:
    """Move generated node ``v`` to a local minimizer of its local cost; returns the new position."""
    if not relax_eligible(tree, v):
        raise GcoError(f"node {v} is not a generated branching node")
    pts, k = _anchors(tree, v, config)
    x0 = tree.pos[v]
    f0 = _weber_value(x0, pts, k)
    x, f, ok = minimize_point(x0, pts, k, config.relax_tolerance, config.relax_max_steps,
                              config.min_edge_epsilon)
    if not ok and diagnostics is not None:
        diagnostics.line_search_failures.append(v)
    if f <= f0:
        tree.pos[v] = x
    return tree.pos[v]


def _subtree_owner(tree: VesselTree) -> dict[int, int]:
    """Nearest prebuilt ancestor (or self) for every node."""
    owner = {}
    for n in tree.preorder():
        if n in tree.prebuilt or n == tree.root:
            owner[n] = n
        else:
            owner[n] = owner[tree.parent(n)]
    return owner


def relax_pass(tree: VesselTree, config: GcoConfig, diagnostics: RelaxDiagnostics | None = None) -> VesselTree:
    """
    Relax every generated branching node once, in ascending id order.

    Nodes are grouped by their prebuilt attachment: groups share only fixed
    nodes, so with ``workers > 1`` they run concurrently and still give the
    sequential result bit for bit.
    """
    diagnostics = diagnostics if diagnostics is not None else RelaxDiagnostics()
    owner = _subtree_owner(tree)
    groups: dict[int, list[int]] = {}
    for v in sorted(tree.pos):
        if relax_eligible(tree, v):
            groups.setdefault(owner[v], []).append(v)

    def run(nodes):
        diag = RelaxDiagnostics()
        for v in nodes:
            relax_node(tree, v, config, diag)
        return diag

    keys = sorted(groups)
    if config.workers > 1 and len(keys) > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(run, [groups[g] for g in keys]))
    else:
        results = [run(groups[g]) for g in keys]
    for d in results:
        diagnostics.line_search_failures.extend(d.line_search_failures)
    diagnostics.line_search_failures.sort()
    return tree


# -- merging --------------------------------------------------------------------------

def _reparent_children(tree: VesselTree, src: int, dst: int) -> None:
    for e in list(tree.out_edges[src]):
        child = tree.edges[e][1]
        r, q = tree.radius[e], tree.flow[e]
        tree.remove_edge(e)
        tree.add_edge(dst, child, r, q)


def _remove_generated(tree: VesselTree, v: int) -> None:
    """Delete generated node ``v``, handing its children to its parent."""
    p = tree.parent(v)
    _reparent_children(tree, v, p)
    tree.remove_edge(tree.in_edge[v])
    tree.remove_node(v)


def cleanup(tree: VesselTree) -> int:
    """Remove childless and single-child generated nodes. Returns the number removed."""
    removed = 0
    changed = True
    while changed:
        changed = False
        for v in sorted(tree.pos):
            if v not in tree.pos or not relax_eligible(tree, v):
                continue
            if len(tree.out_edges[v]) <= 1:
                _remove_generated(tree, v)
                removed += 1
                changed = True
    return removed


def merge_pass(tree: VesselTree, config: GcoConfig, hemo: HemoConfig) -> VesselTree:
    """
    Contract the shortest incident edge of nodes where it is much shorter than
    the second shortest (ratio below ``merge_ratio_threshold``) or shorter than
    ``merge_abs_epsilon``. The generated endpoint is absorbed; prebuilt and
    terminal nodes are never removed.
    """
    changed = cleanup(tree) > 0
    for v in sorted(tree.pos):
        if v not in tree.pos:
            continue
        eids = _incident(tree, v)
        if len(eids) < 2:
            continue
        lens = sorted((tree.length(e), e) for e in eids)
        (l1, e1), (l2, _) = lens[0], lens[1]
        if not (l1 < config.merge_abs_epsilon or (l2 > 0 and l1 / l2 < config.merge_ratio_threshold)):
            continue
        parent, child = tree.edges[e1]
        if child == v:
            victim = v if relax_eligible(tree, v) else None
        else:
            victim = child if relax_eligible(tree, child) else None
        if victim is None:
            continue
        _remove_generated(tree, victim)
        changed = True
    if changed:
        cleanup(tree)
        propagate(tree, hemo)
    return tree


# -- splitting ---------------------------------------------------------------------------

def _weiszfeld(anchors, weights, x0, steps):
    """Batched Weiszfeld iterations for weighted Fermat-Weber points; arrays (B, m, 3), (B, m), (B, 3)."""
    x = x0.copy()
    for _ in range(steps):
        d = np.sqrt(np.sum((anchors - x[:, None, :]) ** 2, axis=2))
        w = weights / np.maximum(d, 1e-9)
        x = np.einsum("bm,bmk->bk", w, anchors) / w.sum(axis=1)[:, None]
    d = np.sqrt(np.sum((anchors - x[:, None, :]) ** 2, axis=2))
    return x, np.sum(weights * d, axis=1)


def _split_candidates(vpos, cpos, ccoef, cr3, cq, subsets, config, x0=None):
    """
    Cost change of moving each child subset behind a new node; returns
    ``(delta, positions)`` for a list of equally sized index subsets.
    """
    S = np.array(subsets)
    B, m = S.shape
    r_new = np.cbrt(cr3[S].sum(axis=1))
    q_new = cq[S].sum(axis=1)
    k_new = _edge_coefficients(r_new, q_new, config)
    anchors = np.concatenate([np.broadcast_to(vpos, (B, 1, 3)), cpos[S]], axis=1)
    weights = np.concatenate([k_new[:, None], ccoef[S]], axis=1)
    if x0 is None:
        x0 = anchors.mean(axis=1)
    x, cost = _weiszfeld(anchors, weights, x0, config.split_weiszfeld_steps)
    base = np.sum(ccoef[S] * np.sqrt(np.sum((cpos[S] - vpos) ** 2, axis=2)), axis=1)
    return cost - base, x


def greedy_split_subset(vpos, cpos, ccoef, cr3, cq, config, max_size=None):
    """
    Greedy child-subset search: best pair first, then keep adding the child
    that lowers the cost most. Returns ``(subset, delta, position)``.
    """
    n = len(cpos)
    max_size = n - 1 if max_size is None else max_size
    pairs = list(combinations(range(n), 2))
    delta, xs = _split_candidates(vpos, cpos, ccoef, cr3, cq, pairs, config)
    best = int(np.argmin(delta))
    subset, best_delta, x = list(pairs[best]), float(delta[best]), xs[best]
    while len(subset) < max_size:
        rest = [c for c in range(n) if c not in subset]
        cands = [subset + [c] for c in rest]
        d, xs = _split_candidates(vpos, cpos, ccoef, cr3, cq, cands, config,
                                  x0=np.broadcast_to(x, (len(cands), 3)).copy())
        j = int(np.argmin(d))
        if d[j] >= best_delta:
            break
        subset, best_delta, x = cands[j], float(d[j]), xs[j]
    return sorted(subset), best_delta, x


def _child_arrays(tree, v, config):
    eids = list(tree.out_edges[v])
    cpos = np.array([tree.pos[tree.edges[e][1]] for e in eids])
    radii = np.array([tree.radius[e] for e in eids])
    flows = np.array([tree.flow[e] for e in eids])
    return eids, cpos, _edge_coefficients(radii, flows, config), radii**3, flows


def split_node(tree: VesselTree, v: int, config: GcoConfig, hemo: HemoConfig) -> int | None:
    """
    Try to move a subset of the children of ``v`` behind a new node.

    The subset comes from the greedy search; the new node starts at the
    candidate point, is relaxed with BFGS, and is kept only if the resulting
    cost beats the unsplit configuration. Returns the new node id or None.
    """
    if len(tree.out_edges[v]) < 3:
        return None
    eids, cpos, ccoef, cr3, cq = _child_arrays(tree, v, config)
    vpos = tree.pos[v]
    subset, delta, x = greedy_split_subset(vpos, cpos, ccoef, cr3, cq, config)
    scale = float(np.sum(ccoef * np.sqrt(np.sum((cpos - vpos) ** 2, axis=1))))
    if not delta < -1e-12 * scale:
        return None
    r_new = float(np.cbrt(cr3[subset].sum()))
    q_new = float(cq[subset].sum())
    k_new = edge_coefficient(r_new, q_new, config)
    pts = np.vstack([vpos, cpos[subset]])
    k = np.concatenate([[k_new], ccoef[subset]])
    xr, f, _ = minimize_point(x, pts, k, config.relax_tolerance, config.relax_max_steps,
                              config.min_edge_epsilon)
    base = float(np.sum(ccoef[subset] * np.sqrt(np.sum((cpos[subset] - vpos) ** 2, axis=1))))
    if _weber_value(x, pts, k) < f:
        xr, f = x, _weber_value(x, pts, k)
    d = np.sqrt(np.sum((pts - xr) ** 2, axis=1))
    if d.min() <= config.min_edge_epsilon:
        # optimum on an endpoint: branch just beside it, down the slope of the other edges
        j = int(np.argmin(d))
        rest = np.arange(len(k)) != j
        diff = pts[j] - pts[rest]
        g_rest = (k[rest] / np.sqrt(np.sum(diff**2, axis=1))) @ diff
        gn = float(np.linalg.norm(g_rest))
        if gn == 0:
            return None
        xr = pts[j] - g_rest / gn * (10.0 * config.min_edge_epsilon)
        f = _weber_value(xr, pts, k)
        if np.min(np.sqrt(np.sum((pts - xr) ** 2, axis=1))) <= config.min_edge_epsilon:
            return None
    if not f - base < -1e-12 * scale:
        return None
    new = tree.add_node(xr)
    tree.add_edge(v, new, r_new, q_new)
    for i in subset:
        e = eids[i]
        child = tree.edges[e][1]
        r, q = tree.radius[e], tree.flow[e]
        tree.remove_edge(e)
        tree.add_edge(new, child, r, q)
    return new


def split_pass(tree: VesselTree, config: GcoConfig, hemo: HemoConfig) -> VesselTree:
    """One split attempt at every node with three or more children (ascending id)."""
    changed = False
    for v in sorted(tree.pos):
        if v in tree.pos and len(tree.out_edges[v]) >= 3:
            if split_node(tree, v, config, hemo) is not None:
                changed = True
    if changed:
        propagate(tree, hemo)
    return tree


# -- initialization and pruning ---------------------------------------------------------

def _ending_nodes(tree: VesselTree, all_nodes: bool) -> list[int]:
    if all_nodes:
        return sorted(tree.pos)
    return [n for n in sorted(tree.pos) if not tree.out_edges[n]]


def initialize(prebuilt: VesselTree, terminals: TerminalSet, config: GcoConfig | None = None,
               hemo: HemoConfig | None = None) -> tuple[VesselTree, SubtreeAssignment]:
    """
    Attach every terminal to its nearest prebuilt ending node (lowest id on
    ties), drop prebuilt branches that received no terminal, then propagate
    Murray radii and flows.
    """
    config = config or GcoConfig()
    hemo = hemo or HemoConfig()
    if prebuilt.root is None or prebuilt.n_nodes == 0:
        raise GcoError("prebuilt tree is empty")
    if len(terminals) == 0:
        raise GcoError("no terminals to connect")
    tree = prebuilt.copy()
    tree.prebuilt = set(tree.pos)
    tree.terminal = set()
    ends = _ending_nodes(tree, config.attach_to_all_nodes)
    if not ends:
        raise GcoError("prebuilt tree has no ending nodes")
    epos = np.array([tree.pos[n] for n in ends])
    assignment = SubtreeAssignment()
    for p, r in zip(terminals.positions, terminals.radii):
        d2 = np.sum((epos - p) ** 2, axis=1)
        host = ends[int(np.argmin(d2))]
        t = tree.add_node(p, terminal=True)
        tree.add_edge(host, t, r, 0.0)
        assignment.parent_of[t] = host
    # prebuilt leaves with no terminal carry no flow
    changed = True
    while changed:
        changed = False
        for n in sorted(tree.pos):
            if n in tree.prebuilt and n != tree.root and not tree.out_edges[n]:
                tree.remove_edge(tree.in_edge[n])
                tree.remove_node(n)
                changed = True
    propagate(tree, hemo)
    return tree, assignment


def prune_and_reconnect(tree: VesselTree, assignment: SubtreeAssignment, order_threshold: int,
                        config: GcoConfig, hemo: HemoConfig) -> VesselTree:
    """
    Remove generated edges of Strahler order below ``order_threshold`` and
    reattach the orphaned terminals to the nearest surviving node of the
    subtree they were assigned to at initialization.
    """
    if order_threshold <= 0:
        return tree
    orders = strahler_orders(tree)
    radius_of = {t: tree.radius[tree.in_edge[t]] for t in tree.terminal}
    doomed = [e for e in sorted(tree.edges)
              if orders.get(e, 0) < order_threshold and tree.edges[e][1] not in tree.prebuilt]
    for e in doomed:
        tree.remove_edge(e)
    alive = set(tree.preorder())
    orphans = sorted(t for t in tree.terminal if t not in alive)
    for n in sorted(tree.pos):
        if n not in alive and n not in tree.terminal:
            for e in list(tree.out_edges[n]):
                tree.remove_edge(e)
            if n in tree.in_edge:
                tree.remove_edge(tree.in_edge[n])
            tree.remove_node(n)
    for t in orphans:
        if t in tree.in_edge:
            tree.remove_edge(tree.in_edge[t])

    owner = _subtree_owner(tree)
    by_owner: dict[int, list[int]] = {}
    for n in sorted(owner):
        if n not in tree.terminal:
            by_owner.setdefault(owner[n], []).append(n)
    for t in orphans:
        host = assignment.parent_of[t]
        cands = by_owner.get(host, [host])
        cp = np.array([tree.pos[c] for c in cands])
        best = cands[int(np.argmin(np.sum((cp - tree.pos[t]) ** 2, axis=1)))]
        tree.add_edge(best, t, radius_of[t], 0.0)
    cleanup(tree)
    propagate(tree, hemo)
    return tree


# -- driver ----------------------------------------------------------------------------------

def optimize_inner(tree, config, hemo, trace, iteration, diagnostics=None):
    """Repeat relax/merge/split until the relative improvement drops below the tolerance."""
    prev = global_cost(tree, config)
    for _ in range(config.inner_max_steps):
        relax_pass(tree, config, diagnostics)
        trace.add(iteration, "relax", tree, config)
        merge_pass(tree, config, hemo)
        trace.add(iteration, "merge", tree, config)
        split_pass(tree, config, hemo)
        trace.add(iteration, "split", tree, config)
        cost = trace.records[-1].cost
        if prev <= 0 or (prev - cost) / prev < config.convergence_tol:
            break
        prev = cost
    return tree


def run(prebuilt: VesselTree, terminals: TerminalSet, config: GcoConfig | None = None,
        hemo: HemoConfig | None = None) -> tuple[VesselTree, ConvergenceTrace]:
    """
    Initialize once, then per iteration optimize to convergence and prune with
    the scheduled Strahler threshold. After the last prune a final optimization
    round runs without pruning.

    On failure a ``GcoError`` carrying the partial trace is raised.
    """
    config = config or GcoConfig()
    hemo = hemo or HemoConfig()
    trace = ConvergenceTrace()
    try:
        tree, assignment = initialize(prebuilt, terminals, config, hemo)
        trace.add(0, "init", tree, config)
        if config.max_iterations == 0:
            return tree, trace
        last = None
        for it in range(config.max_iterations):
            optimize_inner(tree, config, hemo, trace, it)
            thr = config.prune_order_schedule[min(it, len(config.prune_order_schedule) - 1)]
            prune_and_reconnect(tree, assignment, thr, config, hemo)
            trace.add(it, "prune", tree, config)
            cost = trace.records[-1].cost
            log.info("iteration %d: pruned at order %d, cost %.6g, %d nodes", it, thr, cost, tree.n_nodes)
            if last is not None and abs(cost - last) < config.convergence_tol * last:
                break
            last = cost
        optimize_inner(tree, config, hemo, trace, config.max_iterations)
        return tree, trace
    except GcoError as exc:
        exc.trace = trace
        raise
    except (TreeError, ValueError) as exc:
        raise GcoError(str(exc), trace) from exc
