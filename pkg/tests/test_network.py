import numpy as np
import pytest

from app.network import (
    EdgeRecord,
    HydraulicParams,
    NetworkFormatError,
    RiverNetwork,
    generate_network,
    horton_orders,
    incidence_matrix,
    non_binary_links,
    parse_network,
    parse_network_with_params,
    random_hydraulics,
    ratio_hydraulics,
    serialize_network,
    subnetwork,
    subnetwork_params,
    upstream_areas,
    upstream_indicator,
)
from app.streams import stream

COMPLETE_DEPTH_3 = """
edge r - 1 2 0.1
edge a r 1 2 0.1
edge b r 1 2 0.1
edge c a 1 2 0.1
edge d a 1 2 0.1
edge e b 1 2 0.1
edge f b 1 2 0.1
"""


def _brute_force_upstream(net):
    n = net.n
    out = np.zeros((n, n), dtype=np.int64)
    for j in range(n):
        current = j
        while current is not None:
            out[current, j] = 1
            current = net.edges[current].parent
    return out


def test_single_edge_line():
    net, params = parse_network_with_params("edge r - 0.6 2.0 0.016\n")
    assert net.n == 1
    assert net.areas[0] == pytest.approx(6.0e5)
    assert params.K[0] == pytest.approx(2.0 / 3600.0)
    assert params.H[0] == pytest.approx(0.016 / 3600.0)


def test_basin_file_is_canonical(basin):
    net, _ = basin
    assert net.n == 9
    assert net.edges[0].parent is None and net.edges[0].id == "r"
    for index, edge in enumerate(net.edges[1:], start=1):
        assert edge.parent < index


def test_canonical_order_is_breadth_first_regardless_of_file_order():
    net = parse_network("# leaves first\nedge x a 1 1 1\nedge a r 1 1 1\nedge r - 1 1 1\nedge b r 1 1 1\n")
    assert net.ids == ["r", "a", "b", "x"]


@pytest.mark.parametrize(
    "text, fragment, line",
    [
        ("edge r r 0.6 2 1\n", "cycle", 1),
        ("edge r - 1 1 1\nedge r - 1 1 1\n", "duplicate", 2),
        ("edge r - 1 1 1\nedge a q 1 1 1\n", "unknown parent", 2),
        ("edge r - 1 1 1\nedge a r 0 1 1\n", "non-positive area", 2),
        ("edge r - 1 1 1\nedge a r 1 1 1\nedge b r 1 1 1\nedge c r 1 1 1\n", "more than 2", 4),
        ("edge r - 1 1 1\nedge a b 1 1 1\nedge b a 1 1 1\n", "cycle", 2),
        ("edge r - 1 1 1\nedge a r 1 -1 1\n", "non-positive rate", 2),
        ("edge r - 1 1\n", "expected", 1),
        ("node r - 1 1 1\n", "unknown record", 1),
    ],
)
def test_parse_errors_carry_line_numbers(text, fragment, line):
    with pytest.raises(NetworkFormatError) as info:
        parse_network(text)
    assert fragment in str(info.value)
    assert info.value.line_number == line


def test_missing_root():
    with pytest.raises(NetworkFormatError, match="no root"):
        parse_network("edge a b 1 1 1\nedge b a 1 1 1\n")


def test_single_tributary_is_a_warning(caplog):
    net = parse_network("edge r - 1 1 1\nedge a r 1 1 1\n")
    assert non_binary_links(net) == [0]
    assert any("single tributary" in record.getMessage() for record in caplog.records)


def test_incidence_examples():
    assert incidence_matrix(parse_network("edge r - 1 1 1\n")).tolist() == [[1]]
    net = parse_network("edge r - 1 1 1\nedge a r 1 1 1\nedge b r 1 1 1\n")
    assert incidence_matrix(net).tolist() == [[1, -1, -1], [0, 1, 0], [0, 0, 1]]


@pytest.mark.parametrize("order", [1, 2, 3, 4])
def test_incidence_inverse_is_upstream_indicator(order):
    for seed in range(5):
        net = generate_network(order, stream(seed, "network", order))
        if net.n > 64:
            continue
        lam = incidence_matrix(net)
        inverse = upstream_indicator(net)
        assert np.array_equal(np.triu(lam), lam)
        assert np.all(np.diag(lam) == 1)
        assert round(np.linalg.det(lam)) == 1
        assert np.array_equal(lam @ inverse, np.eye(net.n, dtype=np.int64))
        assert np.array_equal(inverse, _brute_force_upstream(net))


def test_horton_orders():
    net = parse_network(COMPLETE_DEPTH_3)
    orders = horton_orders(net)
    assert orders[0] == 3
    assert orders[1] == orders[2] == 2
    assert set(orders[3:]) == {1}
    assert horton_orders(parse_network("edge r - 1 1 1\nedge a r 1 1 1\n")).tolist() == [1, 1]


def test_subnetworks():
    net = parse_network(COMPLETE_DEPTH_3)
    assert subnetwork(net, 0) == net
    leaf = subnetwork(net, 6)
    assert leaf.n == 1 and leaf.ids == ["f"]
    branch = subnetwork(net, 1)
    assert branch.ids == ["a", "c", "d"]
    assert incidence_matrix(branch).tolist() == [[1, -1, -1], [0, 1, 0], [0, 0, 1]]
    with pytest.raises(IndexError):
        subnetwork(net, 7)


def test_subnetwork_params_follow_ids(three_link):
    net, params = three_link
    sub = subnetwork_params(net, params, 2)
    assert sub.K.tolist() == [params.K[2]]


def test_upstream_areas(basin):
    net, _ = basin
    areas = upstream_areas(net)
    assert areas[0] == pytest.approx(net.total_area)
    assert areas[net.index_of("c")] == pytest.approx(3 * 6.0e5)


@pytest.mark.parametrize("order", [1, 2, 3, 4])
def test_generated_root_order(order):
    net = generate_network(order, stream(3, "network"))
    assert horton_orders(net)[0] == order
    assert not non_binary_links(net)
    assert np.allclose(net.areas, 6.0e5)


def test_generation_is_reproducible():
    a = generate_network(4, stream(9, "network"))
    b = generate_network(4, stream(9, "network"))
    assert a == b
    with pytest.raises(ValueError):
        generate_network(0, stream(9, "network"))


def test_serialize_round_trip(basin):
    net, params = basin
    text = serialize_network(net, params)
    again, params_again = parse_network_with_params(text)
    assert again.ids == net.ids
    assert [e.parent for e in again.edges] == [e.parent for e in net.edges]
    assert np.allclose(again.areas, net.areas, rtol=1e-15)
    assert np.allclose(params_again.K, params.K, rtol=1e-15)
    assert serialize_network(again, params_again) == text


def test_network_invariants_enforced():
    with pytest.raises(NetworkFormatError):
        RiverNetwork(edges=(EdgeRecord("a", None, 1.0), EdgeRecord("b", 2, 1.0), EdgeRecord("c", 0, 1.0)))
    with pytest.raises(NetworkFormatError):
        RiverNetwork(edges=())
    with pytest.raises(ValueError):
        HydraulicParams(K=[1.0, 2.0], H=[1.0])
    with pytest.raises(ValueError):
        HydraulicParams(K=[0.0], H=[1.0])


def test_random_hydraulics_ranges(basin):
    net, params = basin
    sampled = random_hydraulics(net, 2.0, 0.1, (0.5, 1.5), (0.5, 1.5), stream(1, "rates"))
    assert np.all((sampled.K > 1.0) & (sampled.K <= 3.0))
    assert np.all((sampled.H > 0.05) & (sampled.H <= 0.15))
    flat = random_hydraulics(net, params.K, params.H, (1.0, 1.0), (1.0, 1.0), stream(1, "rates"))
    assert np.allclose(flat.K, params.K) and np.allclose(flat.H, params.H)
    ratios = ratio_hydraulics(net, 2.0, stream(1, "ratios"))
    assert ratios.K[0] == 2.0
    assert np.all(ratios.K[1:] <= 2.0) and np.all(ratios.H <= 2.0e-3)
