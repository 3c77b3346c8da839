import numpy as np
import pytest

from arteriogen.tree import HemoConfig, VesselTree, propagate_flows, propagate_radii_murray


def binary_tree(depth, radius=10.0, spacing=100.0):
    """Perfect binary tree with a root stem; ``2**depth`` leaves, all of ``radius``."""
    t = VesselTree()
    t.root = t.add_node((0.0, 0.0, 0.0))
    top = t.add_node((0.0, 0.0, -spacing))
    t.add_edge(t.root, top)
    level = [top]
    for d in range(depth):
        nxt = []
        for i, n in enumerate(level):
            for s in (-1, 1):
                p = t.pos[n] + np.array([s * spacing * 2.0 ** (depth - d), 0.0, -spacing])
                c = t.add_node(p, terminal=(d == depth - 1))
                t.add_edge(n, c)
                nxt.append(c)
        level = nxt
    for e in t.leaf_edges():
        t.radius[e] = radius
    return t


def random_tree(n_nodes, rng, radius_range=(5.0, 15.0), extent=1000.0):
    """Random recursive tree; each new node picks a uniformly random parent."""
    t = VesselTree()
    t.root = t.add_node(rng.uniform(-extent, extent, 3))
    for i in range(1, n_nodes):
        parent = int(rng.integers(i))
        c = t.add_node(rng.uniform(-extent, extent, 3))
        t.add_edge(parent, c)
    for leaf in t.leaves():
        t.terminal.add(leaf)
        t.radius[t.in_edge[leaf]] = float(rng.uniform(*radius_range))
    return t


def propagated(t, q0=1e8):
    hemo = HemoConfig(inlet_flow_Q0=q0)
    propagate_radii_murray(t)
    propagate_flows(t, hemo)
    return t


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def prebuilt_fan(n_leaves, length=2000.0, radius=60.0):
    """Prebuilt root with a short trunk fanning out to ``n_leaves`` ending nodes in the xy-plane."""
    t = VesselTree()
    t.root = t.add_node((0.0, 0.0, 0.0), prebuilt=True)
    hub = t.add_node((0.0, 0.0, -length / 2), prebuilt=True)
    t.add_edge(t.root, hub, radius)
    for i in range(n_leaves):
        a = 2 * np.pi * i / n_leaves
        c = t.add_node((length * np.cos(a), length * np.sin(a), -length / 2), prebuilt=True)
        t.add_edge(hub, c, radius)
    return t


def terminals_around(rng, n, extent=3000.0):
    from arteriogen.sampling import TerminalSet
    pos = rng.uniform(-extent, extent, (n, 3))
    pos[:, 2] = rng.uniform(-2 * extent, -extent / 4, n)
    return TerminalSet(pos, np.full(n, 10.08))


# -- acceptance summary --------------------------------------------------------------

_CRITERIA: dict[int, list] = {}


def pytest_runtest_makereport(item, call):
    mark = item.get_closest_marker("criterion")
    if mark is None or call.when not in ("setup", "call"):
        return
    number, title = mark.args
    entry = _CRITERIA.setdefault(number, [title, True, []])
    if call.excinfo is not None:
        entry[1] = False
    if call.when == "call":
        entry[2].extend(f"{k}={v}" for k, v in item.user_properties)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(_CRITERIA):
        title, ok, notes = _CRITERIA[number]
        extra = f"  ({', '.join(notes)})" if notes else ""
        terminalreporter.write_line(f"C{number:<2} {'PASS' if ok else 'FAIL'}  {title}{extra}")
