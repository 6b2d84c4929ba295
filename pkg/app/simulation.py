"""Exact event-driven simulation of discharge and hillslope runoff.

Between storms the state follows ``x(t) = e^{M(t - T_n)} x(T_n)``; at a
storm the hillslope block jumps by ``H(a∘P_n)``. No time stepping is
involved, so paths are exact up to the matrix exponential.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np
from numpy.polynomial.legendre import leggauss

from app.dynamics import batched_expm, build_M
from app.network import HydraulicParams, RiverNetwork, upstream_indicator
from app.rainfall import RainfallModel, sample_depths
from app.streams import StormStreams

logger = logging.getLogger(__name__)

MIN_EXPECTED_STORMS = 100
_GL_ORDER = 16
_BATCH_ELEMENTS = 2**22

Observable = Union[np.ndarray, Callable[[np.ndarray], np.ndarray]]


class NoMeanError(ValueError):
    """The storm depth has no finite mean, so the invariant mean is infinite."""


@dataclass(frozen=True, eq=False)
class StatePath:
    """One simulated path: event times, states around each event, storm depths.

    ``event_times[0]`` is 0 and the remaining entries are storm times.
    ``states[k]`` is the state just after event ``k`` and ``pre_jump[k]``
    just before it (``pre_jump[0]`` is the initial state).
    """

    event_times: np.ndarray
    states: np.ndarray
    pre_jump: np.ndarray
    depths: np.ndarray
    end_state: np.ndarray
    horizon: float
    system: np.ndarray = field(repr=False)
    net: RiverNetwork = field(repr=False)
    params: HydraulicParams = field(repr=False)
    rain: RainfallModel = field(repr=False)

    @property
    def storm_times(self) -> np.ndarray:
        return self.event_times[1:]

    @property
    def n_storms(self) -> int:
        return int(self.event_times.size - 1)

    @property
    def initial_state(self) -> np.ndarray:
        return self.pre_jump[0]


def invariant_mean(net: RiverNetwork, params: HydraulicParams, rain: RainfallModel) -> np.ndarray:
    """``rate * [L^{-1}(a∘E P); a∘E P]`` in m³/s."""

    params.check_network(net)
    mean_depth = rain.mean_depths(net.n)
    if not np.all(np.isfinite(mean_depth)):
        raise NoMeanError("storm depths have no finite mean (Pareto alpha <= 1)")
    input_rate = rain.rate * net.areas * mean_depth
    return np.concatenate([upstream_indicator(net) @ input_rate, input_rate])


def _default_initial_state(net: RiverNetwork, params: HydraulicParams, rain: RainfallModel) -> np.ndarray:
    try:
        return invariant_mean(net, params, rain)
    except NoMeanError:
        logger.info("Infinite mean depth; starting from the empty state")
        return np.zeros(2 * net.n)


def _propagate(M: np.ndarray, offsets: np.ndarray, starts: np.ndarray) -> np.ndarray:
    """``e^{M offsets[k]} starts[k]`` row by row."""

    d = M.shape[0]
    out = np.empty((offsets.size, d))
    chunk = max(1, _BATCH_ELEMENTS // (d * d))
    for begin in range(0, offsets.size, chunk):
        stop = begin + chunk
        maps = batched_expm(M, offsets[begin:stop])
        out[begin:stop] = np.einsum("kij,kj->ki", maps, starts[begin:stop])
    return out


def _storm_times(rate: float, horizon: float, rng: np.random.Generator) -> np.ndarray:
    count = int(rng.poisson(rate * horizon))
    return np.sort(rng.uniform(0.0, horizon, count))


def simulate(
    net: RiverNetwork,
    params: HydraulicParams,
    rain: RainfallModel,
    horizon: float,
    x0: Optional[np.ndarray] = None,
    streams: Union[StormStreams, int] = 0,
) -> StatePath:
    """Simulate the exact path on ``[0, horizon]`` (seconds)."""

    if not horizon > 0:
        raise ValueError(f"horizon must be positive, got {horizon}")
    M = build_M(net, params)
    n = net.n
    state = _default_initial_state(net, params, rain) if x0 is None else np.array(x0, dtype=float)
    if state.shape != (2 * n,):
        raise ValueError(f"initial state must have length {2 * n}")
    if np.any(state < 0):
        raise ValueError("initial state must be non-negative")
    if not isinstance(streams, StormStreams):
        streams = StormStreams(seed=int(streams))

    expected = rain.rate * horizon
    if expected < MIN_EXPECTED_STORMS:
        logger.warning(
            "Short horizon for ergodic statistics",
            extra={"expected_storms": expected, "seed": streams.seed},
        )

    times = _storm_times(rain.rate, horizon, streams.arrivals())
    depths = sample_depths(rain, net, times.size, streams)
    jumps = np.zeros((times.size, 2 * n))
    jumps[:, n:] = depths * (params.H * net.areas)

    event_times = np.concatenate([[0.0], times])
    gaps = np.diff(event_times)
    states = np.empty((times.size + 1, 2 * n))
    pre_jump = np.empty_like(states)
    states[0] = state
    pre_jump[0] = state
    x = state
    chunk = max(1, _BATCH_ELEMENTS // (4 * n * n))
    for begin in range(0, times.size, chunk):
        maps = batched_expm(M, gaps[begin : begin + chunk])
        for offset, flow in enumerate(maps):
            k = begin + offset
            before = flow @ x
            pre_jump[k + 1] = before
            x = before + jumps[k]
            states[k + 1] = x
    end_state = batched_expm(M, [horizon - event_times[-1]])[0] @ x

    logger.info(
        "Simulated path",
        extra={"edges": n, "storms": int(times.size), "horizon_s": horizon, "seed": streams.seed},
    )
    return StatePath(
        event_times=event_times,
        states=states,
        pre_jump=pre_jump,
        depths=depths,
        end_state=end_state,
        horizon=float(horizon),
        system=M,
        net=net,
        params=params,
        rain=rain,
    )


def sample_path(path: StatePath, times) -> np.ndarray:
    """States at arbitrary times in ``[0, horizon]``, shape ``(len(times), 2n)``."""

    grid = np.asarray(times, dtype=float).reshape(-1)
    if np.any(grid < 0) or np.any(grid > path.horizon):
        raise ValueError("sample times must lie within [0, horizon]")
    index = np.searchsorted(path.event_times, grid, side="right") - 1
    offsets = grid - path.event_times[index]
    return _propagate(path.system, offsets, path.states[index])


def storm_flags(path: StatePath, times) -> np.ndarray:
    """1 where at least one storm fell in the interval since the previous sample time."""

    grid = np.asarray(times, dtype=float).reshape(-1)
    counts = np.searchsorted(path.storm_times, grid, side="right")
    return (np.diff(counts, prepend=0) > 0).astype(int)


def _dyadic_offsets(length: float, step: float) -> np.ndarray:
    """Breakpoints 0, h, 2h, 4h, ... capped at ``length``."""

    points = [0.0]
    edge = step
    while edge < length:
        points.append(edge)
        edge *= 2.0
    points.append(length)
    return np.array(points)


def time_integral(path: StatePath, observable: Observable):
    """Integral over ``[0, horizon]`` of a linear weight vector or a callable observable."""

    M = path.system
    ends = np.concatenate([path.pre_jump[1:], path.end_state[None, :]])
    if not callable(observable):
        weights = np.asarray(observable, dtype=float)
        # Integral of e^{Ms}x over [0, D] is M^{-1}(e^{MD} - I)x.
        state_integral = np.linalg.solve(M, (ends - path.states).sum(axis=0))
        return float(weights @ state_integral) if weights.ndim == 1 else weights @ state_integral

    nodes, weights = leggauss(_GL_ORDER)
    step = 1.0 / float(np.max(np.abs(np.diag(M))))
    bounds = np.concatenate([path.event_times, [path.horizon]])
    offsets: list[np.ndarray] = []
    quad_weights: list[np.ndarray] = []
    owners: list[np.ndarray] = []
    for k in range(path.event_times.size):
        length = bounds[k + 1] - bounds[k]
        if length <= 0:
            continue
        breaks = _dyadic_offsets(length, step)
        lo, hi = breaks[:-1], breaks[1:]
        half = 0.5 * (hi - lo)
        offsets.append((half[:, None] * nodes + 0.5 * (hi + lo)[:, None]).reshape(-1))
        quad_weights.append((half[:, None] * weights).reshape(-1))
        owners.append(np.full(lo.size * _GL_ORDER, k))
    if not offsets:
        return 0.0
    offset = np.concatenate(offsets)
    weight = np.concatenate(quad_weights)
    owner = np.concatenate(owners)

    total = 0.0
    chunk = max(1, _BATCH_ELEMENTS // (M.shape[0] ** 2))
    for begin in range(0, offset.size, chunk):
        stop = begin + chunk
        states = _propagate(M, offset[begin:stop], path.states[owner[begin:stop]])
        total += float(np.asarray(observable(states), dtype=float) @ weight[begin:stop])
    return total


def ergodic_average(path: StatePath, observable: Observable):
    """Time average of ``observable`` along the exact path."""

    expected = path.rain.rate * path.horizon
    if expected < MIN_EXPECTED_STORMS:
        logger.warning("Few storms expected in the averaging window", extra={"expected_storms": expected})
    return time_integral(path, observable) / path.horizon


def storage(params: HydraulicParams, states: np.ndarray) -> np.ndarray:
    """Water stored in channels and hillslopes, ``sum Q/K + R/H`` (m³)."""

    n = params.n
    states = np.atleast_2d(states)
    return states[:, :n] @ (1.0 / params.K) + states[:, n:] @ (1.0 / params.H)


def volume_balance(path: StatePath) -> float:
    """Relative residual of ``S(T) - S(0) + int Q_r = sum a P``."""

    n = path.net.n
    outflow_weights = np.zeros(2 * n)
    outflow_weights[0] = 1.0
    outflow = time_integral(path, outflow_weights)
    start = float(storage(path.params, path.initial_state)[0])
    end = float(storage(path.params, path.end_state)[0])
    rainfall = float((path.depths @ path.net.areas).sum())
    lhs = end - start + outflow
    scale = max(abs(rainfall), abs(start), abs(end), np.finfo(float).tiny)
    residual = abs(lhs - rainfall) / scale
    logger.debug("Volume balance", extra={"residual": residual, "storms": path.n_storms})
    return residual


__all__ = [
    "NoMeanError",
    "StatePath",
    "ergodic_average",
    "invariant_mean",
    "sample_path",
    "simulate",
    "storage",
    "storm_flags",
    "time_integral",
    "volume_balance",
]
