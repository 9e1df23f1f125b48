"""Connectivity graphs, the aggregation tree, and key provisioning.

The base station is always node 0.  Trees are built breadth-first from the
station with smallest-id tie-breaking so every run over the same graph yields
the same tree.  Provisioning hands each sensor two long-term keys shared with
the station, one channel key per tree edge, a random initial reading (the
seed-chain origin), and a private sense key for synthetic per-round readings.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from . import crypto
from .errors import DisconnectedGraph

BS_ID = 0

# === Tree ===================================================================


@dataclass(frozen=True)
class Tree:
    parent: dict[int, int]
    children: dict[int, tuple[int, ...]]
    depth: dict[int, int]
    root: int = BS_ID

    @property
    def sensor_ids(self) -> tuple[int, ...]:
        return tuple(sorted(v for v in self.depth if v != self.root))

    @property
    def n_sensors(self) -> int:
        return len(self.depth) - 1

    @property
    def height(self) -> int:
        return max(self.depth.values())

    def edges(self) -> list[tuple[int, int]]:
        return [(p, c) for c, p in sorted(self.parent.items())]

    def subtree(self, node: int) -> set[int]:
        out = {node}
        stack = [node]
        while stack:
            for c in self.children.get(stack.pop(), ()):
                out.add(c)
                stack.append(c)
        return out


def adjacency_from_edges(edges: Iterable[tuple[int, int]]) -> dict[int, set[int]]:
    adj: dict[int, set[int]] = {}
    for a, b in edges:
        adj.setdefault(a, set()).add(b)
        adj.setdefault(b, set()).add(a)
    return adj


def build_tree(adjacency: Mapping[int, Iterable[int]], root: int = BS_ID) -> Tree:
    """Breadth-first spanning tree; same-depth parent candidates lose to the
    smallest node id.  Raises DisconnectedGraph if any node is unreachable."""
    if root not in adjacency:
        raise DisconnectedGraph(f"root {root} not present in graph")
    parent: dict[int, int] = {}
    depth: dict[int, int] = {root: 0}
    children: dict[int, list[int]] = {root: []}
    level = [root]
    while level:
        next_level: set[int] = set()
        # Scanning each level in ascending id order makes the first (and thus
        # recorded) parent of any newly discovered node the smallest-id one.
        for u in sorted(level):
            for v in sorted(adjacency.get(u, ())):
                if v not in depth:
                    depth[v] = depth[u] + 1
                    parent[v] = u
                    children[u].append(v)
                    children[v] = []
                    next_level.add(v)
        level = list(next_level)
    missing = set(adjacency) - set(depth)
    if missing:
        raise DisconnectedGraph(f"unreachable nodes: {sorted(missing)[:8]}")
    return Tree(
        parent=parent,
        children={u: tuple(sorted(c)) for u, c in children.items()},
        depth=depth,
        root=root,
    )


# === Synthetic graph families ==============================================


def random_recursive_tree(n: int, rng: random.Random) -> dict[int, set[int]]:
    """n sensors, each attaching to a uniformly random earlier node.

    The expected depth of such a tree is Theta(ln n), which is the averaging
    assumption behind the attestation cost analysis.
    """
    if n < 1:
        raise ValueError("need at least one sensor")
    edges = [(rng.randrange(0, i), i) for i in range(1, n + 1)]
    return adjacency_from_edges(edges)


def random_geometric_graph(
    n: int, rng: random.Random, radius: float | None = None
) -> dict[int, set[int]]:
    """n sensors plus the station scattered in the unit square, linked within
    a radius.  Components are stitched together by their closest cross pairs
    so the result is always connected."""
    if n < 1:
        raise ValueError("need at least one sensor")
    count = n + 1
    if radius is None:
        radius = 1.4 * math.sqrt(math.log(count + 1) / count)
    pts = {i: (rng.random(), rng.random()) for i in range(count)}
    adj: dict[int, set[int]] = {i: set() for i in range(count)}
    ids = sorted(pts)
    for i in ids:
        for j in ids:
            if j <= i:
                continue
            if math.dist(pts[i], pts[j]) <= radius:
                adj[i].add(j)
                adj[j].add(i)

    def component(start: int) -> set[int]:
        seen = {start}
        stack = [start]
        while stack:
            for v in adj[stack.pop()]:
                if v not in seen:
                    seen.add(v)
                    stack.append(v)
        return seen

    main = component(0)
    while len(main) < count:
        rest = set(ids) - main
        a, b = min(
            ((i, j) for i in sorted(main) for j in sorted(rest)),
            key=lambda e: (math.dist(pts[e[0]], pts[e[1]]), e),
        )
        adj[a].add(b)
        adj[b].add(a)
        main |= component(b)
    return adj


def path_graph(n: int) -> dict[int, set[int]]:
    """Station at one end of a chain of n sensors; the worst case tree."""
    return adjacency_from_edges([(i, i + 1) for i in range(n)])


def star_graph(n: int) -> dict[int, set[int]]:
    return adjacency_from_edges([(BS_ID, i) for i in range(1, n + 1)])


# === Topology files =========================================================


def parse_topology(text: str, source: str = "<topology>") -> tuple[int, list[tuple[int, int]]]:
    """Line-oriented format: `nodes <n>` header, then `edge <a> <b>` lines."""
    n: int | None = None
    edges: list[tuple[int, int]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        fields = line.split()
        if fields[0] == "nodes" and len(fields) == 2:
            if n is not None:
                raise ValueError(f"{source}:{lineno}: duplicate nodes header")
            n = int(fields[1])
            if n < 1:
                raise ValueError(f"{source}:{lineno}: node count must be positive")
        elif fields[0] == "edge" and len(fields) == 3:
            if n is None:
                raise ValueError(f"{source}:{lineno}: edge before nodes header")
            a, b = int(fields[1]), int(fields[2])
            if not (0 <= a <= n and 0 <= b <= n) or a == b:
                raise ValueError(f"{source}:{lineno}: edge {a} {b} out of range for {n} sensors")
            edges.append((a, b))
        else:
            raise ValueError(f"{source}:{lineno}: unrecognized line {raw.strip()!r}")
    if n is None:
        raise ValueError(f"{source}: missing nodes header")
    return n, edges


def load_topology(path: str) -> tuple[int, list[tuple[int, int]]]:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_topology(fh.read(), source=path)


def format_topology(n: int, edges: Iterable[tuple[int, int]]) -> str:
    lines = [f"nodes {n}"] + [f"edge {a} {b}" for a, b in edges]
    return "\n".join(lines) + "\n"


# === Provisioning ===========================================================


@dataclass
class Provisioning:
    """Key material and origins, keyed by sensor id (edge keys by child id)."""

    node_keys: dict[int, tuple[bytes, bytes]] = field(default_factory=dict)
    edge_keys: dict[int, bytes] = field(default_factory=dict)
    origins: dict[int, int] = field(default_factory=dict)
    sense_keys: dict[int, bytes] = field(default_factory=dict)


def provision(tree: Tree, rng_seed: int, codec: crypto.FixedPointCodec) -> Provisioning:
    """Deterministically derive all secrets for a tree from one seed."""
    rng = random.Random(rng_seed)
    prov = Provisioning()
    for node in tree.sensor_ids:
        prov.node_keys[node] = (crypto.new_key(rng), crypto.new_key(rng))
        prov.edge_keys[node] = crypto.new_key(rng)
        prov.origins[node] = rng.randint(0, codec.max_raw)
        prov.sense_keys[node] = crypto.new_key(rng)
    return prov
