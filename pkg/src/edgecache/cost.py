"""Cost functions, routing derivation, and constraint checking.

A placement is the binary matrix x (flow -> EC).  Routing variables are
derived from it: z picks, for every AR a flow may appear at, the cached
EC it retrieves from (or nothing, which counts as a miss), and y marks
the links on the retrieval paths.  Total cost combines storage pressure
at the ECs with expected transmission hops:

    TC = alpha * C_cache + beta * (C_hit + C_miss)

where C_cache sums 1 / (1 - U_e) per cached item (U_e the EC's space
utilization), C_hit weights path hops by mobility, and every unit of
unserved mobility mass pays the datacenter round trip.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .instance import Instance, ratios
from .topology import HopMatrix, IncidenceTensor, Topology, hop_matrix, incidence_tensor

DEFAULT_GAMMA = 20.0

# Capacity-violating ECs price storage at the utilization-0.99 level;
# the hinge penalty carries the actual violation magnitude.
_CLAMPED_SUMMAND = 1.0 / (1.0 - 0.99)

_TOL = 1e-9


class CachingCostUndefinedError(ValueError):
    """An EC is filled to or beyond capacity, making 1/(1-U) meaningless."""


@dataclass(frozen=True)
class Assignment:
    """Decision variables: x (K,E) placement, z (K,A,E) retrieval, y (K,L) links."""

    x: np.ndarray
    z: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        K, E = self.x.shape
        if self.z.shape[0] != K or self.z.shape[2] != E:
            raise ValueError("z shape inconsistent with x")
        if self.y.shape[0] != K:
            raise ValueError("y shape inconsistent with x")
        for name, arr in (("x", self.x), ("z", self.z), ("y", self.y)):
            if not np.isin(arr, (0, 1)).all():
                raise ValueError(f"{name} must be binary")
        if (self.x.sum(axis=1) > 1).any():
            raise ValueError("a flow is placed at more than one EC")
        if (self.z.sum(axis=2) > 1).any():
            raise ValueError("a (flow, AR) pair retrieves from more than one EC")
        if (self.z > self.x[:, None, :]).any():
            raise ValueError("retrieval from an EC that does not cache the flow")

    @property
    def num_flows(self) -> int:
        return self.x.shape[0]


@dataclass(frozen=True)
class CostBreakdown:
    caching: float
    transmission: float
    hit: float
    miss: float
    total: float
    penalty: float
    penalized_total: float
    feasible: bool
    per_ec_utilization: np.ndarray


@dataclass(frozen=True)
class FeasibilityReport:
    """Per-constraint-family verdicts; overall feasibility is their conjunction."""

    single_placement: bool        # at most one EC per flow
    ec_capacity: bool             # cached bytes fit in every EC
    unique_retrieval: bool        # at most one retrieval EC per (flow, AR)
    retrieval_requires_cache: bool  # retrieval only from a caching EC
    link_capacity: bool           # bandwidth fits on every link
    link_path_consistency: bool   # y marks exactly the links on used paths

    @property
    def feasible(self) -> bool:
        return (
            self.single_placement
            and self.ec_capacity
            and self.unique_retrieval
            and self.retrieval_requires_cache
            and self.link_capacity
            and self.link_path_consistency
        )


@lru_cache(maxsize=32)
def network_tables(t: Topology) -> tuple[HopMatrix, IncidenceTensor]:
    """Hop matrix and incidence tensor, cached per topology."""
    h = hop_matrix(t)
    return h, incidence_tensor(t, h)


def utilization(i: Instance, x: np.ndarray) -> np.ndarray:
    """Space utilization U_e = sum_k q_ke * x_ke per EC."""
    q = ratios(i).q
    return (q * x).sum(axis=0)


def caching_cost(i: Instance, x: np.ndarray) -> float:
    """Storage cost: each item at EC e costs 1 / (1 - U_e)."""
    u = utilization(i, x)
    counts = x.sum(axis=0)
    if (u >= 1.0).any():
        bad = int(np.argmax(u >= 1.0))
        raise CachingCostUndefinedError(
            f"EC index {bad} at utilization {u[bad]:.6f} >= 1; caching cost undefined"
        )
    hosting = counts > 0
    return float((counts[hosting] / (1.0 - u[hosting])).sum())


def caching_cost_via_linearization(i: Instance, x: np.ndarray) -> float:
    """Same cost through the auxiliary t_e and chi_ke = t_e * x_ke variables."""
    u = utilization(i, x)
    if (u >= 1.0).any():
        raise CachingCostUndefinedError("utilization at or above 1")
    t = 1.0 / (1.0 - u)
    chi = t[None, :] * x
    return float(chi.sum())


def derive_routing(i: Instance, x: np.ndarray) -> Assignment:
    """Resolve z and y from a placement.

    For every AR a flow may appear at, retrieve from the cached EC with
    the fewest hops, but only when that beats the datacenter fallback
    (hops < N_T); otherwise the mass is left to miss.  y marks links on
    the chosen canonical paths.  Link capacities are deliberately
    ignored here; overloads surface in the penalty term.
    """
    hops, inc = network_tables(i.topology)
    K, A = i.mobility.shape
    E = i.topology.num_edge_clouds
    L = i.topology.num_links
    n_t = i.topology.datacenter_hops

    x = np.asarray(x, dtype=np.int8)
    z = np.zeros((K, A, E), dtype=np.int8)
    for k in range(K):
        cached = np.flatnonzero(x[k])
        if cached.size == 0:
            continue
        for a in np.flatnonzero(i.mobility[k] > 0):
            e_best = cached[np.argmin(hops.entries[a, cached])]
            if hops.entries[a, e_best] < n_t:
                z[k, a, e_best] = 1

    b_flat = inc.entries.reshape(L, A * E)
    y = (b_flat @ z.reshape(K, A * E).T > 0).T.astype(np.int8)
    return Assignment(x=x, z=z, y=y)


def transmission_cost(i: Instance, asg: Assignment) -> tuple[float, float, float]:
    """Return (C_transmission, C_hit, C_miss).

    Hits pay mobility-weighted path hops; each flow's unserved mass,
    including the whole flow when nothing is cached, pays N_T hops.
    """
    hops, _ = network_tables(i.topology)
    n_t = i.topology.datacenter_hops
    served = (i.mobility[:, :, None] * asg.z)  # (K, A, E)
    hit = float((served * hops.entries[None, :, :]).sum())
    miss = float(((1.0 - served.sum(axis=(1, 2))) * n_t).sum())
    return hit + miss, hit, miss


def _hinge_terms(i: Instance, asg: Assignment) -> tuple[float, float]:
    """Per-resource capacity overshoot: (EC hinge, link hinge)."""
    rat = ratios(i)
    u = (rat.q * asg.x).sum(axis=0)
    load = (rat.r * asg.y).sum(axis=0)
    return float(np.maximum(0.0, u - 1.0).sum()), float(np.maximum(0.0, load - 1.0).sum())


def _clamped_caching(i: Instance, x: np.ndarray) -> float:
    """Caching cost that stays finite for capacity-violating placements."""
    u = utilization(i, x)
    counts = x.sum(axis=0)
    hosting = counts > 0
    summand = np.where(
        u[hosting] < 1.0,
        counts[hosting] / (1.0 - np.minimum(u[hosting], 1.0 - 1e-12)),
        counts[hosting] * _CLAMPED_SUMMAND,
    )
    return float(summand.sum())


def cost_breakdown(
    i: Instance, asg: Assignment, gamma: float = DEFAULT_GAMMA
) -> CostBreakdown:
    """Full cost accounting; total everywhere, even for invalid placements."""
    u = utilization(i, asg.x)
    cc = _clamped_caching(i, asg.x)
    ct, ch, cm = transmission_cost(i, asg)
    tc = i.alpha * cc + i.beta * ct
    ec_hinge, link_hinge = _hinge_terms(i, asg)
    penalty = gamma * (ec_hinge + link_hinge)
    report = check_feasibility(i, asg)
    return CostBreakdown(
        caching=cc,
        transmission=ct,
        hit=ch,
        miss=cm,
        total=tc,
        penalty=penalty,
        penalized_total=tc + penalty,
        feasible=report.feasible,
        per_ec_utilization=u,
    )


def total_cost(
    i: Instance, asg: Assignment, gamma: float = DEFAULT_GAMMA
) -> CostBreakdown:
    """Cost accounting for placements within EC capacity.

    Raises CachingCostUndefinedError when any EC is at or beyond
    capacity; callers handling such placements use penalized_cost.
    """
    u = utilization(i, asg.x)
    if (u >= 1.0).any():
        bad = int(np.argmax(u >= 1.0))
        raise CachingCostUndefinedError(
            f"EC index {bad} at utilization {u[bad]:.6f} >= 1; use the penalized path"
        )
    return cost_breakdown(i, asg, gamma=gamma)


def penalized_cost(
    i: Instance,
    asg: Assignment,
    gamma: float = DEFAULT_GAMMA,
    aggregate_hinge: bool = False,
) -> float:
    """Penalized total TC_N: finite for every assignment.

    The default hinge penalizes each overfull EC and each overloaded
    link by its own overshoot, so it vanishes exactly on feasible
    assignments.  aggregate_hinge=True instead applies the historical
    aggregate form gamma * max(0, (sum_e U_e - 1) + (sum_l load_l - 1)),
    which is positive even for some feasible multi-EC placements; it is
    kept for comparison only.
    """
    if not aggregate_hinge:
        return cost_breakdown(i, asg, gamma=gamma).penalized_total
    rat = ratios(i)
    u_total = float((rat.q * asg.x).sum())
    load_total = float((rat.r * asg.y).sum())
    tc = i.alpha * _clamped_caching(i, asg.x) + i.beta * transmission_cost(i, asg)[0]
    return tc + gamma * max(0.0, (u_total - 1.0) + (load_total - 1.0))


def check_feasibility(i: Instance, asg: Assignment) -> FeasibilityReport:
    """Evaluate every constraint family independently."""
    _, inc = network_tables(i.topology)
    K = asg.num_flows
    L = i.topology.num_links
    A = i.topology.num_access_routers
    E = i.topology.num_edge_clouds

    cached_bytes = (i.content_size[:, None] * asg.x).sum(axis=0)
    link_bytes = (i.bandwidth[:, None] * asg.y).sum(axis=0)
    b_flat = inc.entries.reshape(L, A * E)
    path_hits = (b_flat @ asg.z.reshape(K, A * E).T).T  # (K, L)
    y_exact = (path_hits > 0).astype(np.int8)

    return FeasibilityReport(
        single_placement=bool((asg.x.sum(axis=1) <= 1).all()),
        ec_capacity=bool((cached_bytes <= i.ec_space * (1 + _TOL)).all()),
        unique_retrieval=bool((asg.z.sum(axis=2) <= 1).all()),
        retrieval_requires_cache=bool((asg.z <= asg.x[:, None, :]).all()),
        link_capacity=bool((link_bytes <= i.link_capacity * (1 + _TOL)).all()),
        link_path_consistency=bool((asg.y == y_exact).all()),
    )


BREAKDOWN_CSV_HEADER = "method,TC,C_C,C_H,C_M,penalty,feasible"


def breakdown_csv_row(method: str, bd: CostBreakdown) -> str:
    """One fixed-order CSV row per instance/method pair."""
    return (
        f"{method},{bd.total:.12g},{bd.caching:.12g},{bd.hit:.12g},"
        f"{bd.miss:.12g},{bd.penalty:.12g},{int(bd.feasible)}"
    )


def save_assignment(asg: Assignment, path) -> None:
    import json

    payload = {
        "format": "edgecache-assignment",
        "version": 1,
        "x": asg.x.tolist(),
        "z": asg.z.tolist(),
        "y": asg.y.tolist(),
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)
        fh.write("\n")


def load_assignment(path) -> Assignment:
    import json

    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("format") != "edgecache-assignment":
        raise ValueError(f"{path}: not an assignment file")
    return Assignment(
        x=np.asarray(payload["x"], dtype=np.int8),
        z=np.asarray(payload["z"], dtype=np.int8),
        y=np.asarray(payload["y"], dtype=np.int8),
    )


def empty_assignment(i: Instance) -> Assignment:
    """The always-feasible fallback: nothing cached, everything misses."""
    K = i.num_flows
    A = i.topology.num_access_routers
    E = i.topology.num_edge_clouds
    L = i.topology.num_links
    return Assignment(
        x=np.zeros((K, E), dtype=np.int8),
        z=np.zeros((K, A, E), dtype=np.int8),
        y=np.zeros((K, L), dtype=np.int8),
    )


def assignment_from_classes(i: Instance, classes: np.ndarray) -> Assignment:
    """Build an Assignment from per-flow class labels (E means uncached)."""
    E = i.topology.num_edge_clouds
    x = np.zeros((i.num_flows, E), dtype=np.int8)
    for k, c in enumerate(classes):
        if c < E:
            x[k, c] = 1
    return derive_routing(i, x)
