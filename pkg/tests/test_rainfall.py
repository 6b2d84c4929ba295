import math

import numpy as np
import pytest
from scipy import special

from app.network import HydraulicParams, parse_network
from app.rainfall import (
    Deterministic,
    Exponential,
    Gamma,
    InvarianceConditionError,
    MarkDistribution,
    Pareto,
    RainConfigError,
    RainfallModel,
    check_invariance_condition,
    mark_moment,
    mark_transform,
    parse_rain_config,
    require_invariance,
    sample_depths,
    sample_storm,
)
from app.streams import StormStreams, stream


def test_exponential_transform_and_moments():
    dist = Exponential(mean_depth=0.005)
    assert mark_transform(dist, 0.0) == 1.0
    assert mark_transform(dist, 200.0) == pytest.approx(0.5)
    assert dist.sigma == pytest.approx(200.0)
    assert mark_moment(dist, 3) == pytest.approx(6 * 0.005**3)
    assert dist.complement(1e-12) == pytest.approx(0.005e-12, rel=1e-9)


def test_gamma_and_deterministic():
    gamma = Gamma(shape=2.5, scale=0.002)
    assert gamma.transform(100.0) == pytest.approx((1 + 0.2) ** -2.5)
    assert gamma.moment(2) == pytest.approx(2.5 * 3.5 * 0.002**2)
    det = Deterministic(depth=0.01)
    assert det.transform(10.0) == pytest.approx(math.exp(-0.1))
    assert det.moment(4) == pytest.approx(1e-8)
    assert det.complement(1e-9) == pytest.approx(1e-11, rel=1e-9)


def test_pareto_transform_agrees_with_closed_complement():
    dist = Pareto(alpha=0.5, k=0.002)
    s = np.array([1e-3, 0.5, 50.0, 2000.0])
    assert np.allclose(1.0 - dist.quadrature_transform(s), dist.complement(s), rtol=1e-6)
    small = 1e-10
    expected = special.gamma(0.5) * (dist.k * small) ** 0.5
    assert dist.complement(small) == pytest.approx(expected, rel=1e-4)
    assert dist.complement_order == 0.5


def test_pareto_moments_and_real_only():
    dist = Pareto(alpha=2.5, k=0.001)
    assert dist.moment(1) == pytest.approx(2.5 * 0.001 / 1.5)
    assert math.isinf(dist.moment(3))
    assert math.isinf(Pareto(alpha=0.5, k=1.0).mean)
    with pytest.raises(ValueError):
        mark_transform(dist, 1.0 + 1.0j)
    assert mark_transform(dist, 0.0) == pytest.approx(1.0)


def test_transform_requires_non_negative_real_part():
    with pytest.raises(ValueError):
        mark_transform(Exponential(0.005), -1.0)
    with pytest.raises(ValueError):
        mark_moment(Exponential(0.005), 0)


@pytest.mark.parametrize(
    "dist",
    [Exponential(0.005), Gamma(3.0, 0.002), Deterministic(0.004), Pareto(3.5, 0.003)],
)
def test_sample_mean(dist):
    draws = dist.sample(stream(5, "marks"), 200_000)
    spread = math.sqrt(dist.moment(2) - dist.mean**2) if dist.family != "det" else 0.0
    assert abs(draws.mean() - dist.mean) <= 5 * spread / math.sqrt(draws.size) + 1e-15


def test_model_validation():
    with pytest.raises(ValueError):
        RainfallModel(rate=0.0, marginal=Exponential(0.005))
    with pytest.raises(ValueError):
        RainfallModel(rate=1.0, marginal=Exponential(0.005), spatial="patchy")
    with pytest.raises(ValueError):
        RainfallModel(rate=1.0, marginal=[Exponential(0.005)], spatial="uniform")
    model = RainfallModel(rate=1.0, marginal=[Exponential(0.005), Gamma(2.0, 0.001)], spatial="independent")
    assert model.families() == {"exp", "gamma"}
    with pytest.raises(ValueError):
        model.check_network_size(3)


def test_parse_rain_config_converts_units(daily_rain):
    assert daily_rain.rate == pytest.approx(1.0 / 86400.0)
    assert daily_rain.is_uniform
    assert daily_rain.marginal_for(0).mean == pytest.approx(0.005)
    pareto = parse_rain_config("# heavy\nlambda_per_hour=0.5\nmarginal=pareto\nalpha=0.5\nk_mm=2\nspatial=independent\n")
    assert not pareto.is_uniform
    assert pareto.marginal_for(3) == Pareto(alpha=0.5, k=0.002)


@pytest.mark.parametrize(
    "text, fragment",
    [
        ("lambda_per_hour=1\nmarginal=exp\n", "mean_mm"),
        ("lambda_per_hour=1\nmarginal=weibull\n", "unknown marginal"),
        ("lambda_per_hour=-1\nmarginal=exp\nmean_mm=5\n", "must be positive"),
        ("lambda_per_hour=1\nmarginal=exp\nmean_mm=5\nwind=3\n", "unknown rainfall keys"),
        ("lambda_per_hour=1\nmarginal=exp\nmean_mm=five\n", "not a number"),
        ("lambda_per_hour=1\nmarginal=exp\nmean_mm=5\nspatial=clustered\n", "spatial"),
    ],
)
def test_parse_rain_config_errors(text, fragment):
    with pytest.raises(RainConfigError, match=fragment):
        parse_rain_config(text)


def test_invariance_condition(three_link):
    net, params = three_link
    model = RainfallModel(rate=1.0, marginal=Pareto(0.3, 0.001))
    assert check_invariance_condition(net, params, model)

    class NoLogMoment(MarkDistribution):
        family = "custom"
        log_moment_finite = False

    bad = RainfallModel(rate=1.0, marginal=NoLogMoment())
    assert not check_invariance_condition(net, params, bad)
    with pytest.raises(InvarianceConditionError):
        require_invariance(net, params, bad)


def test_depth_sampling_layouts():
    net = parse_network("edge r - 1 1 1\nedge a r 1 1 1\nedge b r 1 1 1\n")
    uniform = RainfallModel(rate=1.0, marginal=Exponential(0.005))
    depths = sample_depths(uniform, net, 50, StormStreams(3))
    assert depths.shape == (50, 3)
    assert np.all(depths == depths[:, :1])

    independent = RainfallModel(rate=1.0, marginal=Exponential(0.005), spatial="independent")
    depths = sample_depths(independent, net, 50, StormStreams(3))
    assert not np.allclose(depths[:, 0], depths[:, 1])
    again = sample_depths(independent, net, 50, StormStreams(3))
    assert np.array_equal(depths, again)

    storm = sample_storm(uniform, net, stream(1, "storm"))
    assert storm.shape == (3,) and np.all(storm == storm[0])


MARKS = [Exponential(0.005), Gamma(2.5, 0.002), Deterministic(0.004), Pareto(3.5, 0.003), Pareto(0.5, 0.001)]


@pytest.mark.parametrize("dist", MARKS)
def test_mark_transform_is_completely_monotone_on_a_grid(dist):
    s = np.linspace(0.0, 5000.0, 201)
    values = np.asarray(mark_transform(dist, s), dtype=float)
    assert np.all(values > 0) and values[0] == pytest.approx(1.0)
    assert np.all(np.diff(values) < 0)
    assert np.all(np.diff(values, 2) >= -1e-12)


@pytest.mark.parametrize("dist", MARKS[:3])
def test_transform_slope_at_zero_is_minus_the_mean(dist):
    h = 1e-6 / dist.mean
    slope = (dist.transform(h) - dist.transform(-h)) / (2.0 * h)
    assert -slope == pytest.approx(mark_moment(dist, 1), rel=1e-6)


def test_pareto_transform_slope_at_zero_is_minus_the_mean():
    dist = Pareto(3.5, 0.003)
    h = 1e-4 / dist.mean
    assert dist.complement(h) / h == pytest.approx(mark_moment(dist, 1), rel=2e-4)


@pytest.mark.parametrize("dist", [Exponential(0.005), Gamma(2.5, 0.002)])
def test_sampled_storms_reproduce_the_transform(dist):
    net = parse_network("edge r - 1 1 1\nedge a r 1 1 1\n")
    model = RainfallModel(rate=1.0, marginal=dist)
    rng = stream(11, "storms", dist.family)
    depths = np.array([sample_storm(model, net, rng)[0] for _ in range(20_000)])
    for s in np.array([0.2, 0.5, 1.0, 2.0, 4.0]) / dist.mean:
        samples = np.exp(-s * depths)
        error = 3.0 * samples.std(ddof=1) / math.sqrt(samples.size)
        assert abs(samples.mean() - mark_transform(dist, s)) <= error
