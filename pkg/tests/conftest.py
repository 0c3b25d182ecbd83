import numpy as np
import pytest

from edgecache.instance import Instance
from edgecache.topology import Topology, TopologyConfig, build_topology


def manual_instance(
    t: Topology,
    mobility,
    content_size,
    bandwidth=None,
    ec_space=None,
    link_capacity=None,
    alpha=0.5,
    beta=0.5,
) -> Instance:
    """Hand-built instance with generous capacity defaults."""
    mobility = np.asarray(mobility, dtype=float)
    K = mobility.shape[0]
    return Instance(
        topology=t,
        mobility=mobility,
        content_size=np.asarray(content_size, dtype=float),
        bandwidth=np.asarray(bandwidth if bandwidth is not None else [1.0] * K, dtype=float),
        ec_space=np.asarray(
            ec_space if ec_space is not None else [1000.0] * t.num_edge_clouds, dtype=float
        ),
        link_capacity=np.asarray(
            link_capacity if link_capacity is not None else [1000.0] * t.num_links,
            dtype=float,
        ),
        alpha=alpha,
        beta=beta,
    )


@pytest.fixture(scope="session")
def tree_topology():
    return build_topology(TopologyConfig(branching=2, depth=3))


@pytest.fixture(scope="session")
def path_topology():
    # 0 - 1 - 2 - 3 - 4; the AR sits at one end.
    return Topology(
        nodes=(0, 1, 2, 3, 4),
        links=((0, 1), (1, 2), (2, 3), (3, 4)),
        access_routers=(4,),
        edge_clouds=(1, 3),
        datacenter_hops=12,
    )


@pytest.fixture(scope="session")
def colocated_topology():
    # The single AR can host content itself.
    return Topology(
        nodes=(0, 1),
        links=((0, 1),),
        access_routers=(1,),
        edge_clouds=(0, 1),
        datacenter_hops=12,
    )
