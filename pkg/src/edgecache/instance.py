"""Caching problem instances and randomized instance generation.

An Instance bundles one optimization problem: the topology, the flows
(one per mobile user), their mobility distributions over ARs, content
sizes and bandwidth demands, EC storage capacities, link capacities and
the two cost weights.  Default sampling ranges follow the reference
network parameter table: content 10-50 MB, EC space 100-500 MB,
bandwidth 1-10 Mbps, link capacity 50-100 Mbps.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .topology import Topology, TOPOLOGY_FORMAT_VERSION

INSTANCE_FORMAT_VERSION = 1

_TOL = 1e-9


class InstanceError(ValueError):
    """Raised for invalid instance data or malformed instance files."""


@dataclass(frozen=True)
class ParameterRanges:
    """Sampling intervals for instance generation (inclusive bounds).

    ar_crowding shapes how strongly flows share access routers: each
    instance draws a Dirichlet popularity profile over the ARs with this
    concentration, and flow supports are sampled proportionally.  Small
    values produce the crowded-AR patterns typical of real mobility;
    None gives uniform, independent supports.
    """

    content_size: tuple[float, float] = (10.0, 50.0)      # s_k, MB
    ec_space: tuple[float, float] = (100.0, 500.0)        # w_e, MB
    bandwidth: tuple[float, float] = (1.0, 10.0)          # b_k, Mbps
    link_capacity: tuple[float, float] = (50.0, 100.0)    # c_l, Mbps
    alpha: tuple[float, float] = (0.0, 1.0)
    beta: tuple[float, float] = (0.0, 1.0)
    mobility_support: tuple[int, int] = (2, 4)            # ARs per flow
    presence: tuple[float, float] = (0.8, 1.0)            # total moving mass
    ar_crowding: float | None = None

    def validate(self) -> None:
        for name in ("content_size", "ec_space", "bandwidth", "link_capacity"):
            lo, hi = getattr(self, name)
            if not (0 < lo <= hi):
                raise InstanceError(f"range {name} must satisfy 0 < lo <= hi")
        for name in ("alpha", "beta"):
            lo, hi = getattr(self, name)
            if not (0 <= lo <= hi <= 1):
                raise InstanceError(f"range {name} must lie within [0, 1]")
        lo, hi = self.presence
        if not (0 < lo <= hi <= 1):
            raise InstanceError("presence range must lie within (0, 1]")
        lo, hi = self.mobility_support
        if not (1 <= lo <= hi):
            raise InstanceError("mobility_support must satisfy 1 <= lo <= hi")
        if self.ar_crowding is not None and self.ar_crowding <= 0:
            raise InstanceError("ar_crowding must be positive when set")


@dataclass(frozen=True)
class Instance:
    """One caching placement problem over a fixed topology."""

    topology: Topology
    mobility: np.ndarray       # (K, A) probabilities p_ka
    content_size: np.ndarray   # (K,) s_k
    bandwidth: np.ndarray      # (K,) b_k
    ec_space: np.ndarray       # (E,) w_e
    link_capacity: np.ndarray  # (L,) c_l
    alpha: float
    beta: float

    def __post_init__(self):
        K, A = self.mobility.shape
        if K == 0:
            raise InstanceError("instance must have at least one flow")
        if A != self.topology.num_access_routers:
            raise InstanceError("mobility column count != number of ARs")
        if self.content_size.shape != (K,) or self.bandwidth.shape != (K,):
            raise InstanceError("per-flow arrays must have shape (K,)")
        if self.ec_space.shape != (self.topology.num_edge_clouds,):
            raise InstanceError("ec_space must have one entry per EC")
        if self.link_capacity.shape != (self.topology.num_links,):
            raise InstanceError("link_capacity must have one entry per link")
        if (self.mobility < -_TOL).any() or (self.mobility > 1 + _TOL).any():
            raise InstanceError("mobility entries must lie in [0, 1]")
        if (self.mobility.sum(axis=1) > 1 + _TOL).any():
            raise InstanceError("mobility rows must sum to at most 1")
        for name, arr in (
            ("content_size", self.content_size),
            ("bandwidth", self.bandwidth),
            ("ec_space", self.ec_space),
            ("link_capacity", self.link_capacity),
        ):
            if (arr <= 0).any():
                raise InstanceError(f"{name} entries must be positive")
        if not (0 <= self.alpha <= 1 and 0 <= self.beta <= 1):
            raise InstanceError("alpha and beta must lie in [0, 1]")

    @property
    def num_flows(self) -> int:
        return self.mobility.shape[0]


@dataclass(frozen=True)
class UtilizationRatios:
    """q[k, e] = s_k / w_e and r[k, l] = b_k / c_l."""

    q: np.ndarray
    r: np.ndarray


def generate_instance(
    t: Topology,
    num_flows: int,
    ranges: ParameterRanges = ParameterRanges(),
    seed: int = 0,
) -> Instance:
    """Draw a random instance; deterministic for a fixed seed.

    Each flow's mobility is concentrated on a small random subset of
    ARs (weights from a flat Dirichlet), then scaled by a random total
    presence factor so rows may sum below 1: the residual mass is the
    chance the user leaves the region, which the miss cost absorbs.
    """
    if num_flows < 1:
        raise InstanceError("num_flows must be >= 1")
    ranges.validate()
    rng = np.random.default_rng(seed)

    A = t.num_access_routers
    lo, hi = ranges.mobility_support
    hi = min(hi, A)
    lo = min(lo, hi)
    if ranges.ar_crowding is not None:
        popularity = rng.dirichlet(np.full(A, ranges.ar_crowding))
        popularity = popularity + 1e-9
    else:
        popularity = np.full(A, 1.0 / A)
    mobility = np.zeros((num_flows, A))
    for k in range(num_flows):
        support = int(rng.integers(lo, hi + 1))
        ars = rng.choice(A, size=support, replace=False, p=popularity / popularity.sum())
        weights = rng.dirichlet(np.ones(support))
        presence = rng.uniform(*ranges.presence)
        mobility[k, ars] = weights * presence

    def draw(interval, size):
        return rng.uniform(interval[0], interval[1], size=size)

    return Instance(
        topology=t,
        mobility=mobility,
        content_size=draw(ranges.content_size, num_flows),
        bandwidth=draw(ranges.bandwidth, num_flows),
        ec_space=draw(ranges.ec_space, t.num_edge_clouds),
        link_capacity=draw(ranges.link_capacity, t.num_links),
        alpha=float(rng.uniform(*ranges.alpha)),
        beta=float(rng.uniform(*ranges.beta)),
    )


def subset_flows(i: Instance, indices) -> Instance:
    """Instance restricted to the given flows (capacities unchanged)."""
    idx = np.asarray(indices, dtype=int)
    return Instance(
        topology=i.topology,
        mobility=i.mobility[idx],
        content_size=i.content_size[idx],
        bandwidth=i.bandwidth[idx],
        ec_space=i.ec_space,
        link_capacity=i.link_capacity,
        alpha=i.alpha,
        beta=i.beta,
    )


def ratios(i: Instance) -> UtilizationRatios:
    """Elementwise demand-to-capacity ratios."""
    q = i.content_size[:, None] / i.ec_space[None, :]
    r = i.bandwidth[:, None] / i.link_capacity[None, :]
    return UtilizationRatios(q=q, r=r)


def save_instance(i: Instance, path) -> None:
    """Write the versioned structured-text (JSON) instance file.

    The topology is inlined so instance files are self-contained.
    """
    payload = {
        "format": "edgecache-instance",
        "version": INSTANCE_FORMAT_VERSION,
        "topology": {
            "format": "edgecache-topology",
            "version": TOPOLOGY_FORMAT_VERSION,
            "nodes": list(i.topology.nodes),
            "links": [list(l) for l in i.topology.links],
            "access_routers": list(i.topology.access_routers),
            "edge_clouds": list(i.topology.edge_clouds),
            "datacenter_hops": i.topology.datacenter_hops,
        },
        "mobility": i.mobility.tolist(),
        "content_size": i.content_size.tolist(),
        "bandwidth": i.bandwidth.tolist(),
        "ec_space": i.ec_space.tolist(),
        "link_capacity": i.link_capacity.tolist(),
        "alpha": i.alpha,
        "beta": i.beta,
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)
        fh.write("\n")


def load_instance(path) -> Instance:
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("format") != "edgecache-instance":
        raise InstanceError(f"{path}: not an instance file")
    if payload.get("version") != INSTANCE_FORMAT_VERSION:
        raise InstanceError(f"{path}: unsupported version {payload.get('version')}")
    topo = payload["topology"]
    topology = Topology(
        nodes=tuple(topo["nodes"]),
        links=tuple(tuple(l) for l in topo["links"]),
        access_routers=tuple(topo["access_routers"]),
        edge_clouds=tuple(topo["edge_clouds"]),
        datacenter_hops=int(topo["datacenter_hops"]),
    )
    return Instance(
        topology=topology,
        mobility=np.asarray(payload["mobility"], dtype=float),
        content_size=np.asarray(payload["content_size"], dtype=float),
        bandwidth=np.asarray(payload["bandwidth"], dtype=float),
        ec_space=np.asarray(payload["ec_space"], dtype=float),
        link_capacity=np.asarray(payload["link_capacity"], dtype=float),
        alpha=float(payload["alpha"]),
        beta=float(payload["beta"]),
    )
