"""Network graph construction, hop counts, and link-path incidence.

The network is an undirected connected graph of routers.  A subset of
nodes are access routers (ARs, where mobile users attach) and a subset
are edge clouds (ECs, which can host cached content).  The two subsets
may overlap.  All downstream matrices index ARs, ECs and links by the
fixed orderings stored on the Topology, so those orderings are part of
the data contract.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field

import numpy as np

TOPOLOGY_FORMAT_VERSION = 1


class TopologyError(ValueError):
    """Raised for invalid topology configurations or malformed files."""


@dataclass(frozen=True)
class TopologyConfig:
    """Parameters for the tree-with-mesh-links generator.

    branching may be a single factor (uniform tree, must be >= 2) or a
    per-level sequence of factors (each >= 1, allowing skinny levels).
    mesh_links adds up to that many extra links between sibling nodes,
    drawn from the seeded RNG.  ec_rule selects edge clouds:

    - "internal": every non-leaf node hosts content
    - "all":      every node hosts content
    - "leaves":   the leaves host content (ECs == ARs)
    - "random":   ec_count nodes drawn uniformly without replacement
    """

    branching: int | tuple[int, ...] = 2
    depth: int = 3
    mesh_links: int = 0
    ec_rule: str = "internal"
    ec_count: int | None = None
    datacenter_hops: int = 12
    seed: int = 0


@dataclass(frozen=True)
class Topology:
    """Immutable network graph with canonical AR/EC/link orderings."""

    nodes: tuple[int, ...]
    links: tuple[tuple[int, int], ...]
    access_routers: tuple[int, ...]
    edge_clouds: tuple[int, ...]
    datacenter_hops: int

    adjacency: dict[int, tuple[int, ...]] = field(init=False, repr=False, compare=False)
    link_index: dict[tuple[int, int], int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.access_routers:
            raise TopologyError("topology has no access routers")
        if not self.edge_clouds:
            raise TopologyError("topology has no edge clouds")
        node_set = set(self.nodes)
        adj: dict[int, list[int]] = {n: [] for n in self.nodes}
        index: dict[tuple[int, int], int] = {}
        for idx, (u, v) in enumerate(self.links):
            if u == v or u not in node_set or v not in node_set:
                raise TopologyError(f"invalid link ({u}, {v})")
            adj[u].append(v)
            adj[v].append(u)
            index[(u, v)] = idx
            index[(v, u)] = idx
        # Sorted neighbour lists make every traversal deterministic.
        object.__setattr__(
            self, "adjacency", {n: tuple(sorted(adj[n])) for n in self.nodes}
        )
        object.__setattr__(self, "link_index", index)
        if not self._connected():
            raise TopologyError("topology graph is not connected")

    def _connected(self) -> bool:
        seen = {self.nodes[0]}
        queue = deque(seen)
        while queue:
            for nb in self.adjacency[queue.popleft()]:
                if nb not in seen:
                    seen.add(nb)
                    queue.append(nb)
        return len(seen) == len(self.nodes)

    @property
    def num_access_routers(self) -> int:
        return len(self.access_routers)

    @property
    def num_edge_clouds(self) -> int:
        return len(self.edge_clouds)

    @property
    def num_links(self) -> int:
        return len(self.links)

    def bfs_distances(self, source: int) -> dict[int, int]:
        """Hop count from source to every node."""
        dist = {source: 0}
        queue = deque([source])
        while queue:
            node = queue.popleft()
            for nb in self.adjacency[node]:
                if nb not in dist:
                    dist[nb] = dist[node] + 1
                    queue.append(nb)
        return dist


@dataclass(frozen=True)
class HopMatrix:
    """entries[a, e] = shortest-path hop count from AR a to EC e."""

    entries: np.ndarray

    def __post_init__(self):
        if (self.entries < 0).any():
            raise TopologyError("hop counts must be non-negative")


@dataclass(frozen=True)
class IncidenceTensor:
    """Binary tensor of shape (|L|, |A|, |E|) marking canonical paths.

    entries[l, a, e] == 1 exactly when link l lies on the stored
    canonical shortest path from AR a to EC e.  path_store[(a, e)] is
    that path as an ordered list of link indices.
    """

    entries: np.ndarray
    path_store: dict[tuple[int, int], tuple[int, ...]]


def _normalize_branching(branching) -> tuple[int, ...] | None:
    if isinstance(branching, int):
        if branching < 2:
            raise TopologyError("uniform branching factor must be >= 2")
        return None  # uniform, expanded per depth by the caller
    factors = tuple(int(b) for b in branching)
    if not factors or any(b < 1 for b in factors):
        raise TopologyError("per-level branching factors must be >= 1")
    return factors


def build_topology(config: TopologyConfig) -> Topology:
    """Generate a tree-shaped router network with optional mesh links.

    The root router sits at the top, access routers are the leaves, and
    edge clouds are chosen by config.ec_rule.  Node ids are assigned in
    breadth-first order, links are sorted (min, max) pairs, so the same
    config and seed always yield the same Topology.
    """
    if config.depth < 1:
        raise TopologyError("depth must be >= 1")
    per_level = _normalize_branching(config.branching)
    if per_level is None:
        per_level = (config.branching,) * config.depth
    elif len(per_level) != config.depth:
        raise TopologyError(
            f"branching sequence length {len(per_level)} != depth {config.depth}"
        )

    rng = np.random.default_rng(config.seed)

    links: set[tuple[int, int]] = set()
    levels: list[list[int]] = [[0]]
    next_id = 1
    for factor in per_level:
        level = []
        for parent in levels[-1]:
            for _ in range(factor):
                links.add((parent, next_id))
                level.append(next_id)
                next_id += 1
        levels.append(level)

    # Extra mesh links connect random sibling pairs (same parent).
    if config.mesh_links > 0:
        sibling_pairs = []
        for level in levels[1:]:
            by_parent: dict[int, list[int]] = {}
            for node in level:
                parent = min(u for u, v in links if v == node)
                by_parent.setdefault(parent, []).append(node)
            for group in by_parent.values():
                for i in range(len(group)):
                    for j in range(i + 1, len(group)):
                        pair = (group[i], group[j])
                        if pair not in links:
                            sibling_pairs.append(pair)
        take = min(config.mesh_links, len(sibling_pairs))
        if take:
            chosen = rng.choice(len(sibling_pairs), size=take, replace=False)
            for idx in sorted(chosen):
                links.add(sibling_pairs[idx])

    nodes = tuple(range(next_id))
    access_routers = tuple(levels[-1])

    if config.ec_rule == "internal":
        edge_clouds = tuple(n for n in nodes if n not in set(access_routers))
    elif config.ec_rule == "all":
        edge_clouds = nodes
    elif config.ec_rule == "leaves":
        edge_clouds = access_routers
    elif config.ec_rule == "random":
        if config.ec_count is None or config.ec_count < 1:
            raise TopologyError("ec_rule='random' requires ec_count >= 1")
        if config.ec_count > len(nodes):
            raise TopologyError("ec_count exceeds node count")
        chosen = rng.choice(len(nodes), size=config.ec_count, replace=False)
        edge_clouds = tuple(sorted(int(i) for i in chosen))
    else:
        raise TopologyError(f"unknown ec_rule {config.ec_rule!r}")

    return Topology(
        nodes=nodes,
        links=tuple(sorted(links)),
        access_routers=access_routers,
        edge_clouds=edge_clouds,
        datacenter_hops=config.datacenter_hops,
    )


def hop_matrix(t: Topology) -> HopMatrix:
    """BFS shortest-path hop counts from every AR to every EC."""
    entries = np.zeros((t.num_access_routers, t.num_edge_clouds), dtype=np.int64)
    for i, a in enumerate(t.access_routers):
        dist = t.bfs_distances(a)
        for j, e in enumerate(t.edge_clouds):
            entries[i, j] = dist[e]
    return HopMatrix(entries=entries)


def _canonical_shortest_path(t: Topology, source: int, target: int) -> list[int]:
    """Lexicographically smallest node sequence among shortest paths.

    Walk from source towards target, always to the smallest-id neighbour
    that stays on a shortest path (checked against BFS distances from
    the target).  All shortest paths have equal length, so the greedy
    walk is the lexicographic minimum.
    """
    if source == target:
        return [source]
    dist_to_target = t.bfs_distances(target)
    path = [source]
    node = source
    while node != target:
        node = min(
            nb for nb in t.adjacency[node]
            if dist_to_target[nb] == dist_to_target[node] - 1
        )
        path.append(node)
    return path


def incidence_tensor(t: Topology, h: HopMatrix) -> IncidenceTensor:
    """Mark which links belong to each canonical AR-to-EC shortest path."""
    entries = np.zeros(
        (t.num_links, t.num_access_routers, t.num_edge_clouds), dtype=np.int8
    )
    path_store: dict[tuple[int, int], tuple[int, ...]] = {}
    for i, a in enumerate(t.access_routers):
        for j, e in enumerate(t.edge_clouds):
            nodes = _canonical_shortest_path(t, a, e)
            link_ids = tuple(
                t.link_index[(nodes[s], nodes[s + 1])] for s in range(len(nodes) - 1)
            )
            if len(link_ids) != h.entries[i, j]:
                raise TopologyError(
                    f"path length mismatch for AR {a} -> EC {e}"
                )
            path_store[(i, j)] = link_ids
            for l in link_ids:
                entries[l, i, j] = 1
    return IncidenceTensor(entries=entries, path_store=path_store)


def save_topology(t: Topology, path) -> None:
    """Write the versioned structured-text (JSON) topology file."""
    payload = {
        "format": "edgecache-topology",
        "version": TOPOLOGY_FORMAT_VERSION,
        "nodes": list(t.nodes),
        "links": [list(l) for l in t.links],
        "access_routers": list(t.access_routers),
        "edge_clouds": list(t.edge_clouds),
        "datacenter_hops": t.datacenter_hops,
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def load_topology(path) -> Topology:
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("format") != "edgecache-topology":
        raise TopologyError(f"{path}: not a topology file")
    if payload.get("version") != TOPOLOGY_FORMAT_VERSION:
        raise TopologyError(f"{path}: unsupported version {payload.get('version')}")
    return Topology(
        nodes=tuple(payload["nodes"]),
        links=tuple(tuple(l) for l in payload["links"]),
        access_routers=tuple(payload["access_routers"]),
        edge_clouds=tuple(payload["edge_clouds"]),
        datacenter_hops=int(payload["datacenter_hops"]),
    )
