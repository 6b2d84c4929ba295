import math

import numpy as np
import pytest

from app.dynamics import (
    M_e_profile,
    SingularSystemError,
    build_M,
    flow_map,
    geomorph_kernel,
    hydrograph_conv,
    hydrograph_exp,
    hydrograph_mass,
    hypoexponential_density,
    m_homogeneous,
    m_matrix,
    m_series,
    m_zero,
    path_generator,
    printed_series_discrepancy,
    truncation_time,
)
from app.network import HydraulicParams, generate_network, parse_network, random_hydraulics, upstream_areas
from app.streams import stream
from app.units import per_hour_to_per_second


def test_single_edge_matrix(single_link):
    net, params = single_link
    M = build_M(net, params) * 3600.0
    assert np.allclose(M, [[-2.0, 2.0], [0.0, -1.0]], rtol=1e-14)


def test_three_edge_block_pattern(three_link):
    net, params = three_link
    M = build_M(net, params)
    K = params.K
    assert M.shape == (6, 6)
    assert M[0, 1] == pytest.approx(K[0]) and M[0, 2] == pytest.approx(K[0])
    assert M[0, 0] == pytest.approx(-K[0])
    assert np.allclose(M[:3, 3:], np.diag(K))
    assert np.allclose(M[3:, :3], 0.0)
    assert np.allclose(M[3:, 3:], -np.diag(params.H))


def test_spectrum_is_minus_rates():
    for seed in range(10):
        net = generate_network(3, stream(seed, "net"))
        params = random_hydraulics(net, 2.0, 0.5, (0.5, 1.5), (0.5, 1.5), stream(seed, "rates"))
        eig = np.sort(np.linalg.eigvals(build_M(net, params)).real)
        expected = np.sort(-np.concatenate([params.K, params.H]))
        assert np.allclose(eig, expected, rtol=1e-8)


def test_dimension_mismatch(three_link):
    net, _ = three_link
    with pytest.raises(ValueError):
        build_M(net, HydraulicParams.uniform(2, 1.0, 1.0))


def test_flow_map_single_edge_closed_form():
    net = parse_network("edge r - 1 1 1\n")
    K, H = 2.0, 0.7
    params = HydraulicParams(K=[K], H=[H])
    M = build_M(net, params)
    t = 1.3
    expected = np.array([[math.exp(-K * t), K * (math.exp(-H * t) - math.exp(-K * t)) / (K - H)], [0.0, math.exp(-H * t)]])
    assert np.allclose(flow_map(M, t), expected, rtol=1e-12)
    assert np.array_equal(flow_map(M, 0.0), np.eye(2))
    with pytest.raises(ValueError):
        flow_map(M, -1.0)


def test_flow_map_semigroup_and_positivity(basin):
    net, params = basin
    M = build_M(net, params)
    t = 3600.0 * 50
    once = flow_map(M, t)
    twice = flow_map(M, 2 * t)
    assert np.allclose(twice, once @ once, rtol=1e-12, atol=1e-15)
    assert np.all(flow_map(M, [t, 10 * t]) >= -1e-15)


def test_m_matrix_single_edge_closed_form(single_link):
    net, params = single_link
    K, H = 2.0, 1.0
    u = np.linspace(0.01, 0.99, 99)
    values = m_matrix(net, params, u)[:, 0, 0]
    expected = K * (u - u ** (K / H)) / (K - H)
    assert np.allclose(values, expected, rtol=1e-10, atol=1e-14)
    assert m_matrix(net, params, 1.0)[0, 0] == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(ValueError):
        m_matrix(net, params, 0.0)


def test_homogeneous_closed_form_matches_exponential():
    net = parse_network("edge r - 1 1 1\nedge a r 1 1 1\nedge b r 1 1 1\nedge c a 1 1 1\nedge d a 1 1 1\n")
    K = per_hour_to_per_second(2.0)
    beta = 0.3
    params = HydraulicParams.uniform(net.n, K, beta * K)
    u = np.array([0.05, 0.3, 0.7, 1.0])
    assert np.allclose(m_homogeneous(net, beta, u), m_matrix(net, params, u), rtol=1e-9, atol=1e-13)
    with pytest.raises(SingularSystemError):
        m_homogeneous(net, 1.0, 0.5)


def test_m_zero_limit():
    net = parse_network("edge r - 1 1 1\nedge a r 1 1 1\nedge b r 1 1 1\n")
    u = np.array([0.0, 0.5, 1.0])
    values = m_zero(net, u)
    assert values.shape == (3, 3, 3)
    assert np.array_equal(values[2], np.array([[1, 0, 0], [1, 1, 0], [1, 0, 1]], dtype=float))
    params = HydraulicParams.uniform(3, 1.0, 1.0e-7)
    assert np.allclose(m_matrix(net, params, 0.5), values[1], rtol=1e-5)


def test_homogeneous_form_tends_to_m_zero_for_slow_hillslopes():
    net = parse_network("edge r - 1 1 1\nedge a r 1 1 1\nedge b r 1 1 1\nedge c a 1 1 1\nedge d a 1 1 1\n")
    beta = 1e-4
    u = np.array([0.05, 0.3, 0.7, 0.95])
    gap = np.abs(m_homogeneous(net, beta, u) - m_zero(net, u))
    assert gap.max() <= 20 * beta


def test_series_agrees_and_transcription_does_not(three_link):
    net, params = three_link
    for u in (0.2, 0.6, 0.95):
        assert np.allclose(m_series(net, params, u, terms=80), m_matrix(net, params, u), rtol=1e-9, atol=1e-12)
    gap = printed_series_discrepancy(net, params, [0.5, 0.9], terms=40)
    assert math.isfinite(gap) and gap > 1e-6


def test_profile_single_edge_peak(single_link):
    net, params = single_link
    a = net.total_area
    assert M_e_profile(net, params, 0, 0.5) == pytest.approx(0.5 * params.H[0] * a, rel=1e-10)
    assert M_e_profile(net, params, 0, 0.0) == 0.0
    assert M_e_profile(net, params, 0, 1.0) == pytest.approx(0.0, abs=1e-12 * params.H[0] * a)


def test_hydrograph_forms_coincide():
    for order, seed in [(1, 0), (2, 1), (2, 2), (3, 3), (3, 4)]:
        net = generate_network(order, stream(seed, "net"))
        if net.n > 7:
            continue
        params = random_hydraulics(
            net, per_hour_to_per_second(2.0), per_hour_to_per_second(0.2), (0.5, 1.5), (0.5, 1.5), stream(seed, "rates")
        )
        t = np.linspace(0.0, 3600.0 * 100, 200)
        theta = hydrograph_exp(net, params, t)
        for e in range(net.n):
            conv = hydrograph_conv(net, params, e, t)
            peak = np.max(np.abs(theta[:, e]))
            assert np.max(np.abs(theta[:, e] - conv)) <= 1e-8 * peak


def test_hydrograph_mass_is_area_fraction(basin):
    net, params = basin
    mass = hydrograph_mass(net, params)
    assert np.allclose(mass[: net.n], upstream_areas(net) / net.total_area, rtol=1e-10)
    assert np.allclose(mass[net.n :], net.areas / net.total_area, rtol=1e-10)


def test_hydrograph_forms_coincide_on_homogeneous_tree():
    net = parse_network(
        "edge r - 1 1 1\nedge a r 1 1 1\nedge b r 1 1 1\n"
        "edge c a 1 1 1\nedge d a 1 1 1\nedge e b 1 1 1\nedge f b 1 1 1\n"
    )
    params = HydraulicParams.uniform(net.n, per_hour_to_per_second(2.0), per_hour_to_per_second(0.2))
    t = np.linspace(0.0, 3600.0 * 100, 200)
    theta = hydrograph_exp(net, params, t)
    for e in range(net.n):
        conv = hydrograph_conv(net, params, e, t)
        peak = np.max(np.abs(theta[:, e]))
        assert conv[0] == 0.0
        assert np.all(conv >= -1e-12 * peak)
        assert np.max(np.abs(theta[:, e] - conv)) <= 1e-8 * peak


def test_equal_rates_give_erlang_density():
    t = np.linspace(0.0, 20.0, 201)
    assert np.allclose(hypoexponential_density([1.0, 1.0], t), t * np.exp(-t), rtol=1e-10, atol=1e-14)
    erlang3 = 0.5 * t**2 * np.exp(-t)
    assert np.allclose(hypoexponential_density([1.0, 1.0, 1.0], t), erlang3, rtol=1e-10, atol=1e-14)
    mixed = hypoexponential_density([1.0, 2.0], t)
    assert np.allclose(mixed, 2.0 * (np.exp(-t) - np.exp(-2.0 * t)), rtol=1e-10, atol=1e-14)
    with pytest.raises(ValueError):
        path_generator([1.0, 0.0])


def test_kernel_table_integrates_to_upstream_area(three_link):
    net, params = three_link
    for e in range(net.n):
        table = geomorph_kernel(net, params, e)
        assert table.tau_max == pytest.approx(truncation_time(params, 1e-14))
        total = float(table.rule.integrate(table.total))
        assert total == pytest.approx(upstream_areas(net)[e], rel=1e-9)
        assert float(table.refined().rule.integrate(table.refined().total)) == pytest.approx(total, rel=1e-10)
