import sys
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from app.network import HydraulicParams, parse_network_with_params  # noqa: E402
from app.rainfall import parse_rain_config  # noqa: E402
from app.units import per_hour_to_per_second  # noqa: E402


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long Monte-Carlo acceptance checks")


@pytest.fixture
def basin():
    """The nine-link sample basin with its rates."""

    return parse_network_with_params((ROOT / "data" / "sample_basin.txt").read_text(encoding="utf-8"))


@pytest.fixture
def daily_rain():
    return parse_rain_config((ROOT / "data" / "daily_rain.txt").read_text(encoding="utf-8"))


@pytest.fixture
def single_link():
    net, _ = parse_network_with_params("edge r - 0.6 2.0 1.0\n")
    return net, HydraulicParams(K=[per_hour_to_per_second(2.0)], H=[per_hour_to_per_second(1.0)])


@pytest.fixture
def three_link():
    return parse_network_with_params("edge r - 1.0 2.0 0.5\nedge a r 0.5 1.5 0.3\nedge b r 0.8 1.2 0.2\n")
