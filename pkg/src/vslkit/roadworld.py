"""Roadworld environment: value-based route choice on a directed road graph.

Directed road segments are the states; the actions at a segment pick one
of the outgoing segments of its head intersection. Each segment carries
three positive costs (fuel, comfort, time) equal to a per-road-type weight
times the segment length; the three value rewards are the negated,
normalized costs of the segment being traversed. One destination segment
per built process is absorbing with zero reward.

Graph file format (UTF-8, one record per line, '#' starts a comment):

    NODE <id>
    EDGE <id> <from_node> <to_node> <road_type> <length_m>
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .mvdp import FeatureMap, Mvdp, MvdpError, ValueSet
from .seeding import generator

VALUES = ValueSet(("su", "co", "ef"))

ROAD_TYPES = (
    "Residential",
    "Primary",
    "Unclassified",
    "Tertiary",
    "LivingStreet",
    "Secondary",
)

# Per-type (fuel, comfort, time) weights, multiplied by segment length.
DEFAULT_COST_WEIGHTS = {
    "Residential": (20.0, 1.0, 66.67),
    "Primary": (12.0, 30.0, 14.29),
    "Unclassified": (20.0, 1.0, 25.0),
    "Tertiary": (7.0, 8.0, 50.0),
    "LivingStreet": (25.0, 1.0, 66.67),
    "Secondary": (9.0, 15.0, 50.0),
}

# Road-type mix used by the synthetic generator.
TYPE_DISTRIBUTION = (
    ("Residential", 0.30),
    ("Primary", 0.10),
    ("Unclassified", 0.15),
    ("Tertiary", 0.20),
    ("LivingStreet", 0.10),
    ("Secondary", 0.15),
)


class GraphError(ValueError):
    pass


@dataclass(frozen=True)
class RoadEdge:
    edge_id: int
    from_node: str
    to_node: str
    road_type: str
    length_m: float


@dataclass(frozen=True)
class RoadGraph:
    nodes: tuple[str, ...]
    edges: tuple[RoadEdge, ...]

    def __post_init__(self):
        known = set(self.nodes)
        seen_ids = set()
        for e in self.edges:
            if e.from_node not in known or e.to_node not in known:
                raise GraphError(f"edge {e.edge_id} references unknown node")
            if e.road_type not in ROAD_TYPES:
                raise GraphError(f"edge {e.edge_id} has unknown road type {e.road_type!r}")
            if e.length_m <= 0:
                raise GraphError(f"edge {e.edge_id} has non-positive length")
            if e.edge_id in seen_ids:
                raise GraphError(f"duplicate edge id {e.edge_id}")
            seen_ids.add(e.edge_id)

    def sorted_edges(self) -> list[RoadEdge]:
        return sorted(self.edges, key=lambda e: e.edge_id)

    def outgoing(self) -> dict[str, list[RoadEdge]]:
        out: dict[str, list[RoadEdge]] = {n: [] for n in self.nodes}
        for e in self.sorted_edges():
            out[e.from_node].append(e)
        return out


@dataclass(frozen=True)
class RoadCostTable:
    weights: dict[str, tuple[float, float, float]]

    def __post_init__(self):
        for rt, w in self.weights.items():
            if rt not in ROAD_TYPES:
                raise GraphError(f"unknown road type {rt!r} in cost table")
            if any(x <= 0 for x in w):
                raise GraphError(f"cost weights for {rt} must be positive")
        missing = set(ROAD_TYPES) - set(self.weights)
        if missing:
            raise GraphError(f"cost table missing road types: {sorted(missing)}")

    @classmethod
    def default(cls) -> "RoadCostTable":
        return cls(dict(DEFAULT_COST_WEIGHTS))


def edge_raw_costs(
    graph: RoadGraph, table: RoadCostTable, edge: RoadEdge
) -> tuple[float, float, float]:
    """(fuel, comfort, time) = per-type weights times segment length."""
    if edge not in graph.edges:
        raise GraphError(f"edge {edge.edge_id} not in graph")
    w = table.weights[edge.road_type]
    return (w[0] * edge.length_m, w[1] * edge.length_m, w[2] * edge.length_m)


def normalize_costs(
    graph: RoadGraph, table: RoadCostTable, horizon: int = 50
) -> np.ndarray:
    """Per-edge normalized cost features, ordered by edge id: shape (E, 3).

    Each raw cost is divided by horizon * (max per-edge raw cost), an upper
    bound on the cost of any path of at most `horizon` segments, so all
    three features live on comparable scales. Negate for rewards.
    """
    edges = graph.sorted_edges()
    if not edges:
        raise GraphError("graph has no edges")
    raw = np.array([edge_raw_costs(graph, table, e) for e in edges])
    peak = raw.max(axis=0)
    if np.any(peak <= 0):
        raise GraphError("a feature has zero maximum cost; cannot normalize")
    return raw / (horizon * peak)


def rw_build_mvdp(
    graph: RoadGraph,
    table: RoadCostTable,
    destination_edge: int,
    horizon: int = 50,
) -> Mvdp:
    """Process with edge-states and successor-edge actions.

    Action k at edge e moves to the k-th outgoing edge of e's head node
    (ordered by edge id); slots past the out-degree are invalid. The
    destination edge keeps a single zero-reward self-loop. Rewards are the
    negated normalized costs of the edge being left (the current state).
    """
    edges = graph.sorted_edges()
    n = len(edges)
    index_of = {e.edge_id: i for i, e in enumerate(edges)}
    if destination_edge not in index_of:
        raise GraphError(f"destination edge {destination_edge} not in graph")
    dest = index_of[destination_edge]

    outgoing = graph.outgoing()
    succ_lists = []
    for i, e in enumerate(edges):
        if i == dest:
            succ_lists.append([dest])
            continue
        succ = [index_of[o.edge_id] for o in outgoing[e.to_node]]
        if not succ:
            raise GraphError(
                f"edge {e.edge_id} ends at node {e.to_node!r} with no outgoing edges"
            )
        succ_lists.append(succ)

    n_actions = max(len(s) for s in succ_lists)
    valid = np.zeros((n, n_actions), dtype=bool)
    rows, cols = [], []
    for i, succ in enumerate(succ_lists):
        for k, j in enumerate(succ):
            valid[i, k] = True
            rows.append(i * n_actions + k)
            cols.append(j)
    # keep invalid rows well-formed with a self-loop; planning masks them out
    for i in range(n):
        for k in range(n_actions):
            if not valid[i, k]:
                rows.append(i * n_actions + k)
                cols.append(i)
    transition = sp.csr_matrix(
        (np.ones(len(rows)), (rows, cols)), shape=(n * n_actions, n)
    )

    feats = -normalize_costs(graph, table, horizon)
    feats[dest] = 0.0
    feat_table = np.repeat(feats[:, None, :], n_actions, axis=1)
    rewards = np.repeat(feats.T[:, :, None], n_actions, axis=2)

    start = np.ones(n)
    start[dest] = 0.0
    return Mvdp(
        n,
        n_actions,
        transition,
        values=VALUES,
        rewards=rewards,
        features=FeatureMap.from_table(feat_table),
        horizon=horizon,
        initial_dist=start / start.sum(),
        valid_actions=valid,
        terminal_states=(dest,),
    )


# ---------------------------------------------------------------------------
# Graph file I/O
# ---------------------------------------------------------------------------


def load_graph(path) -> RoadGraph:
    nodes: list[str] = []
    edges: list[RoadEdge] = []
    seen_nodes: set[str] = set()
    seen_edges: set[int] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if parts[0] == "NODE" and len(parts) == 2:
                if parts[1] in seen_nodes:
                    raise GraphError(f"line {lineno}: duplicate node id {parts[1]!r}")
                seen_nodes.add(parts[1])
                nodes.append(parts[1])
            elif parts[0] == "EDGE" and len(parts) == 6:
                try:
                    eid = int(parts[1])
                    length = float(parts[5])
                except ValueError as exc:
                    raise GraphError(f"line {lineno}: {exc}") from exc
                if parts[4] not in ROAD_TYPES:
                    raise GraphError(
                        f"line {lineno}: unknown road type {parts[4]!r}"
                    )
                if eid in seen_edges:
                    raise GraphError(f"line {lineno}: duplicate edge id {eid}")
                seen_edges.add(eid)
                edges.append(RoadEdge(eid, parts[2], parts[3], parts[4], length))
            else:
                raise GraphError(f"line {lineno}: cannot parse {raw.rstrip()!r}")
    return RoadGraph(tuple(nodes), tuple(edges))


def save_graph(graph: RoadGraph, path) -> None:
    """Canonical form: nodes in declaration order, edges sorted by id."""
    lines = [f"NODE {n}" for n in graph.nodes]
    lines += [
        f"EDGE {e.edge_id} {e.from_node} {e.to_node} {e.road_type} {e.length_m!r}"
        for e in graph.sorted_edges()
    ]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def generate_synthetic_network(n_nodes: int = 357, seed: int = 0) -> RoadGraph:
    """Strongly connected grid-with-chords road network.

    Nodes sit on a near-square grid. A boustrophedon cycle through all
    nodes guarantees strong connectivity; roughly one extra chord per node
    (to a grid neighbour or diagonal) adds route diversity, for about
    2 * n_nodes directed edges. Types follow TYPE_DISTRIBUTION and lengths
    are uniform in [50, 500] meters.
    """
    if n_nodes < 2:
        raise GraphError("need at least two nodes")
    rng = generator(seed, "roadnet")
    cols = int(np.ceil(np.sqrt(n_nodes)))
    nodes = [f"n{i}" for i in range(n_nodes)]

    def rc(i: int) -> tuple[int, int]:
        return divmod(i, cols)

    def at(r: int, c: int) -> int | None:
        i = r * cols + c
        if 0 <= c < cols and 0 <= r and i < n_nodes:
            return i
        return None

    type_names = [t for t, _ in TYPE_DISTRIBUTION]
    type_probs = np.array([p for _, p in TYPE_DISTRIBUTION])

    edges: list[RoadEdge] = []
    used: set[tuple[int, int]] = set()

    def add_edge(a: int, b: int) -> None:
        edges.append(
            RoadEdge(
                edge_id=len(edges),
                from_node=nodes[a],
                to_node=nodes[b],
                road_type=type_names[int(rng.choice(len(type_names), p=type_probs))],
                length_m=float(np.round(rng.uniform(50.0, 500.0), 3)),
            )
        )
        used.add((a, b))

    # boustrophedon cycle: left-to-right on even rows, back on odd rows
    order = []
    for r in range((n_nodes + cols - 1) // cols):
        row = [at(r, c) for c in range(cols)]
        row = [i for i in row if i is not None]
        order.extend(row if r % 2 == 0 else row[::-1])
    for a, b in zip(order, order[1:] + order[:1]):
        add_edge(a, b)

    # chords between grid neighbours (including diagonals)
    target_extra = n_nodes
    offsets = [(0, 1), (1, 0), (1, 1), (1, -1), (0, -1), (-1, 0), (-1, -1), (-1, 1)]
    attempts = 0
    while target_extra > 0 and attempts < 50 * n_nodes:
        attempts += 1
        a = int(rng.integers(n_nodes))
        r, c = rc(a)
        dr, dc = offsets[int(rng.integers(len(offsets)))]
        b = at(r + dr, c + dc)
        if b is None or b == a or (a, b) in used:
            continue
        add_edge(a, b)
        target_extra -= 1

    return RoadGraph(tuple(nodes), tuple(edges))


def rw_dump_features(graph: RoadGraph, table: RoadCostTable, horizon: int, path) -> None:
    """CSV of raw and normalized per-edge costs, ordered by edge id."""
    edges = graph.sorted_edges()
    norm = normalize_costs(graph, table, horizon)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["edge_id", "fuel", "comfort", "time", "fuel_n", "comfort_n", "time_n"]
        )
        for e, n in zip(edges, norm):
            raw = edge_raw_costs(graph, table, e)
            writer.writerow(
                [e.edge_id] + [repr(x) for x in raw] + [repr(float(x)) for x in n]
            )
