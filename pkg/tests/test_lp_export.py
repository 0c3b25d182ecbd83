import numpy as np
import pytest
from scipy.optimize import Bounds, LinearConstraint, milp

from edgecache.instance import ParameterRanges, generate_instance
from edgecache.lpfile import (
    constraint_census,
    export_milp,
    lp_to_arrays,
    parse_lp,
    variable_census,
)
from edgecache.solver import solve_exact
from edgecache.topology import Topology, TopologyConfig, build_topology

from conftest import manual_instance


@pytest.fixture(scope="module")
def tiny_topology():
    return Topology(
        nodes=(0, 1, 2),
        links=((0, 1), (0, 2)),
        access_routers=(1, 2),
        edge_clouds=(0,),
        datacenter_hops=12,
    )


def solve_lp_with_highs(text: str) -> float:
    model = parse_lp(text)
    c, const, a_ub, b_ub, a_eq, b_eq, names, integrality = lp_to_arrays(model)
    constraints = [
        LinearConstraint(a_ub, -np.inf, b_ub),
        LinearConstraint(a_eq, b_eq, b_eq),
    ]
    upper = np.where(integrality == 1, 1.0, np.inf)
    res = milp(
        c=c, constraints=constraints, integrality=integrality, bounds=Bounds(0, upper)
    )
    assert res.success, res.message
    return float(res.fun) + const


def test_single_flow_constraint_hand_count(tiny_topology):
    # K=1, A=2, E=1, L=2: one placement row, one EC-capacity row, two
    # unique-retrieval rows, two cache-consistency rows, two link rows,
    # four link-use bounds, one t definition, three chi rows.
    inst = manual_instance(tiny_topology, [[0.6, 0.4]], content_size=[10.0])
    model = parse_lp(export_milp(inst))
    by_family = {}
    for con in model.constraints:
        family = con.name.split("_")[0]
        by_family[family] = by_family.get(family, 0) + 1
    assert by_family == {
        "place": 1,
        "space": 1,
        "onepath": 2,
        "hosted": 2,
        "bw": 2,
        "luselo": 2,
        "lusehi": 2,
        "tdef": 1,
        "chicap": 1,
        "chigate": 1,
        "chibind": 1,
    }
    assert len(model.constraints) == constraint_census(1, 2, 1, 2)["total"] == 16


def test_row_count_matches_symbolic_census():
    t = build_topology(TopologyConfig(branching=2, depth=2, ec_rule="internal"))
    for flows, seed in ((1, 0), (3, 1), (5, 2)):
        inst = generate_instance(t, flows, seed=seed)
        model = parse_lp(export_milp(inst))
        K, A = flows, t.num_access_routers
        E, L = t.num_edge_clouds, t.num_links
        assert len(model.constraints) == constraint_census(K, A, E, L)["total"]
        assert len(model.variables) == variable_census(K, A, E, L)["total"]
        assert len(model.binaries) == K * E + K * L + K * A * E


def test_published_variable_counts_imply_7_6_20_topology():
    # The reported 376/746/1116/1486 variables at 5/10/15/20 requests
    # fit |A|=7, |E|=6, |L|=20 exactly (74 variables per flow plus 6).
    for flows, expected in ((5, 376), (10, 746), (15, 1116), (20, 1486)):
        assert variable_census(flows, 7, 6, 20)["total"] == expected


def test_export_on_a_7_6_20_network_has_376_variables():
    t = build_topology(
        TopologyConfig(branching=7, depth=1, mesh_links=13, ec_rule="random", ec_count=6, seed=0)
    )
    assert t.num_access_routers == 7
    assert t.num_edge_clouds == 6
    assert t.num_links == 20
    inst = generate_instance(t, 5, seed=0)
    model = parse_lp(export_milp(inst))
    assert len(model.variables) == 376


def test_external_solver_agrees_with_branch_and_bound():
    t = build_topology(TopologyConfig(branching=2, depth=2, ec_rule="internal"))
    ranges = ParameterRanges(alpha=(0.5, 0.5), beta=(0.5, 0.5))
    for seed in range(5):
        inst = generate_instance(t, 3, ranges=ranges, seed=seed)
        ours = solve_exact(inst).cost.total
        theirs = solve_lp_with_highs(export_milp(inst))
        assert abs(ours - theirs) < 1e-6


def test_external_solver_agrees_under_tight_links():
    t = build_topology(TopologyConfig(branching=2, depth=2, ec_rule="internal"))
    ranges = ParameterRanges(
        alpha=(0.5, 0.5), beta=(0.5, 0.5),
        link_capacity=(8.0, 14.0), bandwidth=(4.0, 10.0),
    )
    for seed in range(5):
        inst = generate_instance(t, 3, ranges=ranges, seed=seed)
        ours = solve_exact(inst).cost.total
        theirs = solve_lp_with_highs(export_milp(inst))
        assert abs(ours - theirs) < 1e-6


def test_parse_round_trip_preserves_coefficients(tiny_topology):
    inst = manual_instance(tiny_topology, [[0.3, 0.5]], content_size=[25.0],
                           ec_space=[250.0], alpha=0.7, beta=0.3)
    text = export_milp(inst)
    model = parse_lp(text)
    space_row = next(c for c in model.constraints if c.name == "space_0")
    assert space_row.coefficients == {"x_0_0": 25.0}
    assert space_row.rhs == 250.0
    assert space_row.sense == "<="
    # objective: alpha on chi, beta * p * (N - NT) on z, constant beta*K*NT
    assert model.objective["chi_0_0"] == pytest.approx(0.7)
    assert model.objective["z_0_0_0"] == pytest.approx(0.3 * 0.3 * (1 - 12))
    assert model.objective_constant == pytest.approx(0.3 * 1 * 12)


def test_parser_rejects_malformed_text():
    from edgecache.lpfile import LpFormatError

    with pytest.raises(LpFormatError):
        parse_lp("Minimize\n obj: x\nSubject To\n c1: x + y 4\nEnd\n")
    with pytest.raises(LpFormatError):
        parse_lp("Minimize\n obj: x\nSubject To\n c1: x <= 1\n")  # no End
