"""Linear reservoir dynamics of the coupled stream/hillslope system.

State ordering is ``[Q; R]``: stream discharges first, hillslope outflows
second, each in canonical edge order. All rates are 1/s and all times are
seconds.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import expm

from app.network import HydraulicParams, RiverNetwork, incidence_matrix, upstream_indicator
from app.quadrature import CompositeRule, adaptive_rule

logger = logging.getLogger(__name__)

# Upper bound on float64 entries held by one batched expm call.
_BATCH_ELEMENTS = 2**22

GRADED_LEVELS = 60


class SingularSystemError(RuntimeError):
    """A linear solve hit a (numerically) singular matrix."""


def build_M(net: RiverNetwork, params: HydraulicParams) -> np.ndarray:
    params.check_network(net)
    n = net.n
    lam = incidence_matrix(net).astype(float)
    M = np.zeros((2 * n, 2 * n))
    M[:n, :n] = -params.K[:, None] * lam
    M[:n, n:] = np.diag(params.K)
    M[n:, n:] = -np.diag(params.H)
    return M


def decay_rate(params: HydraulicParams) -> float:
    """Slowest eigenvalue magnitude of the system, ``min_e min(K_e, H_e)``."""

    return float(min(params.K.min(), params.H.min()))


def _as_times(t) -> tuple[np.ndarray, bool]:
    arr = np.asarray(t, dtype=float)
    scalar = arr.ndim == 0
    arr = arr.reshape(-1)
    if np.any(arr < 0) or np.any(~np.isfinite(arr)):
        raise ValueError("times must be finite and non-negative")
    return arr, scalar


def batched_expm(A: np.ndarray, taus: np.ndarray) -> np.ndarray:
    """``expm(tau * A)`` for every tau, shape ``(len(taus), d, d)``."""

    taus = np.asarray(taus, dtype=float).reshape(-1)
    d = A.shape[0]
    chunk = max(1, _BATCH_ELEMENTS // (d * d))
    out = np.empty((taus.size, d, d))
    for start in range(0, taus.size, chunk):
        block = taus[start : start + chunk]
        out[start : start + chunk] = expm(block[:, None, None] * A)
    return out


def flow_action(A: np.ndarray, taus, v: np.ndarray) -> np.ndarray:
    """``expm(tau * A) @ v`` for every tau; ``v`` may be complex."""

    taus = np.asarray(taus, dtype=float).reshape(-1)
    v = np.asarray(v)
    d = A.shape[0]
    chunk = max(1, _BATCH_ELEMENTS // (d * d))
    out = np.empty((taus.size, d), dtype=np.result_type(v.dtype, np.float64))
    for start in range(0, taus.size, chunk):
        block = taus[start : start + chunk]
        out[start : start + chunk] = np.einsum("kij,j->ki", expm(block[:, None, None] * A), v)
    return out


def flow_map(M: np.ndarray, t) -> np.ndarray:
    """The deterministic flow ``e^{Mt}``; a stack of matrices for array ``t``."""

    times, scalar = _as_times(t)
    maps = batched_expm(M, times)
    return maps[0] if scalar else maps


def _u_to_tau(u, H_root: float, allow_zero: bool = False) -> tuple[np.ndarray, bool]:
    arr = np.asarray(u, dtype=float)
    scalar = arr.ndim == 0
    arr = arr.reshape(-1)
    low_ok = (arr >= 0) if allow_zero else (arr > 0)
    if not np.all(low_ok & (arr <= 1)):
        raise ValueError("u must lie in (0, 1]" if not allow_zero else "u must lie in [0, 1]")
    with np.errstate(divide="ignore"):
        tau = -np.log(arr) / H_root
    return tau, scalar


def m_matrix(net: RiverNetwork, params: HydraulicParams, u) -> np.ndarray:
    """Lower-left block of ``exp(tau M^T)`` with ``tau = -ln(u)/H_r``."""

    M = build_M(net, params)
    tau, scalar = _u_to_tau(u, float(params.H[0]))
    n = net.n
    blocks = batched_expm(M.T, tau)[:, n:, :n]
    return blocks[0] if scalar else blocks


def m_homogeneous(net: RiverNetwork, beta: float, u) -> np.ndarray:
    """Closed form of ``m(u)`` when every edge shares ``K`` and ``H``; ``beta = H/K``."""

    if not beta > 0:
        raise ValueError(f"beta must be positive, got {beta}")
    if abs(beta - 1.0) < 1.0e-9:
        raise SingularSystemError("beta coincides with the eigenvalue 1 of the incidence matrix")
    arr = np.asarray(u, dtype=float)
    scalar = arr.ndim == 0
    arr = arr.reshape(-1)
    if not np.all((arr > 0) & (arr <= 1)):
        raise ValueError("u must lie in (0, 1]")
    lam = incidence_matrix(net).astype(float)
    eye = np.eye(net.n)
    shifted = lam - beta * eye
    out = np.empty((arr.size, net.n, net.n))
    for k, value in enumerate(arr):
        power = expm(math.log(value) * lam / beta)
        out[k] = np.linalg.solve(shifted, value * eye - power).T
    return out[0] if scalar else out


def m_zero(net: RiverNetwork, u) -> np.ndarray:
    arr = np.asarray(u, dtype=float)
    if np.any(arr < 0) or np.any(arr > 1):
        raise ValueError("u must lie in [0, 1]")
    inverse_t = upstream_indicator(net).T.astype(float)
    return np.multiply.outer(arr, inverse_t)


def m_series(net: RiverNetwork, params: HydraulicParams, u: float, terms: int = 60) -> np.ndarray:
    """Truncated power series of ``m(u)``: sum of ``tau^n/n! ([M^n]_{12})^T``."""

    M = build_M(net, params)
    tau, _ = _u_to_tau(u, float(params.H[0]))
    tau = float(tau[0])
    n = net.n
    term = np.eye(2 * n)
    total = np.zeros((n, n))
    for k in range(1, terms + 1):
        term = term @ M * (tau / k)
        total += term[:n, n:].T
    return total


def printed_series(net: RiverNetwork, params: HydraulicParams, u: float, terms: int = 60) -> np.ndarray:
    """The literal series transcription ``sum -log(u)^n/(H_r^n n!) {K[I-LKH]^-1[I-(LKH^-1)^n]H^(n-1)}^T``.

    Kept only to measure how far it is from the matrix exponential; the
    bracket ``I - LKH`` mixes units, so it is not expected to agree.
    """

    if not 0 < u <= 1:
        raise ValueError("u must lie in (0, 1]")
    n = net.n
    lam = incidence_matrix(net).astype(float)
    K = np.diag(params.K)
    H = np.diag(params.H)
    H_inv = np.diag(1.0 / params.H)
    eye = np.eye(n)
    try:
        left = K @ np.linalg.inv(eye - lam @ K @ H)
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError("I - LKH is singular") from exc
    ratio = lam @ K @ H_inv
    log_u = math.log(u)
    H_root = float(params.H[0])
    total = np.zeros((n, n))
    ratio_power = eye.copy()
    for k in range(0, terms + 1):
        h_power = np.diag(params.H ** (k - 1))
        coeff = -(log_u**k) / (H_root**k * math.factorial(k))
        total += coeff * (left @ (eye - ratio_power) @ h_power).T
        ratio_power = ratio_power @ ratio
    return total


def printed_series_discrepancy(
    net: RiverNetwork,
    params: HydraulicParams,
    u_grid: Sequence[float],
    terms: int = 60,
) -> float:
    """Sup-norm gap between the literal series and the matrix exponential."""

    gap = 0.0
    for u in u_grid:
        exact = m_matrix(net, params, float(u))
        literal = printed_series(net, params, float(u), terms)
        gap = max(gap, float(np.max(np.abs(literal - exact))))
    logger.info("Series transcription discrepancy", extra={"sup_gap": gap, "points": len(u_grid)})
    return gap


def _check_edge(net: RiverNetwork, e: int) -> None:
    if not 0 <= e < net.n:
        raise IndexError(f"edge index {e} out of range for a network of {net.n} edges")


def M_e_profile(net: RiverNetwork, params: HydraulicParams, e: int, u_grid) -> np.ndarray:
    """``M_e(u) = sum_{e'} H_{e'} a_{e'} m_{e',e}(u)`` on a grid in [0, 1]."""

    _check_edge(net, e)
    M = build_M(net, params)
    tau, scalar = _u_to_tau(u_grid, float(params.H[0]), allow_zero=True)
    values = np.zeros(tau.size)
    finite = np.isfinite(tau)
    if finite.any():
        w = np.concatenate([np.zeros(net.n), params.H * net.areas])
        values[finite] = flow_action(M, tau[finite], w)[:, e]
    values = np.maximum(values, 0.0)
    return values[0] if scalar else values


def hydrograph_exp(net: RiverNetwork, params: HydraulicParams, t) -> np.ndarray:
    times, scalar = _as_times(t)
    M = build_M(net, params)
    w = np.concatenate([np.zeros(net.n), params.H * net.areas]) / net.total_area
    theta = flow_action(M, times, w)
    return theta[0] if scalar else theta


def hydrograph_mass(net: RiverNetwork, params: HydraulicParams) -> np.ndarray:
    """``-M^{-1}`` applied to the unit-rain input; the Q block is ``A_e/a``."""

    M = build_M(net, params)
    w = np.concatenate([np.zeros(net.n), params.H * net.areas]) / net.total_area
    return -np.linalg.solve(M, w)


def path_generator(rates: Sequence[float]) -> np.ndarray:
    """Bidiagonal generator of a chain of reservoirs drained in sequence at ``rates``."""

    r = np.asarray(rates, dtype=float)
    if r.ndim != 1 or r.size == 0 or np.any(r <= 0):
        raise ValueError("path rates must be a non-empty list of positive numbers")
    return np.diag(-r) + np.diag(r[:-1], 1)


def hypoexponential_density(rates: Sequence[float], t) -> np.ndarray:
    """Density of a sum of independent exponentials with the given ``rates``.

    Equal rates are allowed: the density is read off the exponential of the
    path generator instead of a partial-fraction sum.
    """

    times, scalar = _as_times(t)
    G = path_generator(rates)
    density = G[-1, -1] * -batched_expm(G, times)[:, 0, -1]
    return density[0] if scalar else density


def _path_rates(net: RiverNetwork, params: HydraulicParams, source: int, outlet: int) -> list[float]:
    rates = [float(params.H[source]), float(params.K[source])]
    current = source
    while current != outlet:
        current = net.edges[current].parent
        rates.append(float(params.K[current]))
    return rates


def hydrograph_conv(net: RiverNetwork, params: HydraulicParams, e: int, t) -> np.ndarray:
    """Travel-time convolution form of the unit hydrograph at the outlet of ``e``."""

    _check_edge(net, e)
    params.check_network(net)
    times, scalar = _as_times(t)
    total = np.zeros_like(times)
    for source in sorted(net.upstream_sets[e]):
        rates = _path_rates(net, params, source, e)
        total += net.areas[source] / net.total_area * hypoexponential_density(rates, times)
    return total[0] if scalar else total


@dataclass(frozen=True)
class KernelTable:
    """Quadrature table of the weighted kernel ``H_{e'} a_{e'} m_{e',e}(tau)`` on ``[0, tau_max]``.

    ``profile[k, e']`` is the contribution of hillslope ``e'`` at node ``k``;
    the row sum is ``M_e(tau)``.
    """

    edge: int
    tau_max: float
    rule: CompositeRule
    net: RiverNetwork = field(repr=False)
    params: HydraulicParams = field(repr=False)

    @property
    def nodes(self) -> np.ndarray:
        return self.rule.nodes

    @property
    def weights(self) -> np.ndarray:
        return self.rule.weights

    @property
    def profile(self) -> np.ndarray:
        return self.rule.values

    @property
    def total(self) -> np.ndarray:
        return self.rule.values.sum(axis=1)

    def refined(self) -> "KernelTable":
        func = kernel_function(self.net, self.params, self.edge)
        return KernelTable(
            edge=self.edge,
            tau_max=self.tau_max,
            rule=self.rule.refined(func),
            net=self.net,
            params=self.params,
        )


def kernel_function(net: RiverNetwork, params: HydraulicParams, e: int):
    """Vectorised map ``tau -> H_{e'} a_{e'} m_{e',e}(tau)``, shape ``(len(tau), n)``."""

    Mt = build_M(net, params).T
    n = net.n
    start = np.zeros(2 * n)
    start[e] = 1.0
    weight = params.H * net.areas

    def kernel(tau: np.ndarray) -> np.ndarray:
        return np.maximum(flow_action(Mt, tau, start)[:, n:], 0.0) * weight

    return kernel


def truncation_time(params: HydraulicParams, epsilon: float, power: float = 1.0) -> float:
    """``ln(1/epsilon) / (kappa * min(1, power))`` with ``kappa`` the slowest decay rate."""

    return math.log(1.0 / epsilon) / (decay_rate(params) * min(1.0, power))


def _graded_breakpoints(tau_max: float, levels: int = GRADED_LEVELS) -> np.ndarray:
    """Eight even panels with the first one split geometrically towards 0.

    Fractional powers of the kernel behave like ``tau^power`` at the origin.
    """

    fine = tau_max * 2.0 ** -np.arange(levels, 3, -1, dtype=float)
    return np.concatenate([[0.0], fine, np.linspace(0.0, tau_max, 9)[1:]])


def geomorph_kernel(
    net: RiverNetwork,
    params: HydraulicParams,
    e: int,
    *,
    rtol: float = 1.0e-10,
    epsilon: float = 1.0e-14,
    power: float = 1.0,
    order: int = 32,
) -> KernelTable:
    _check_edge(net, e)
    params.check_network(net)
    tau_max = truncation_time(params, epsilon, power)
    panels = _graded_breakpoints(tau_max) if power < 1 else 8
    rule = adaptive_rule(kernel_function(net, params, e), 0.0, tau_max, rtol=rtol, order=order, initial_panels=panels)
    logger.debug(
        "Built geomorphological kernel",
        extra={"edge_id": net.edges[e].id, "nodes": rule.nodes.size, "tau_max": tau_max},
    )
    return KernelTable(edge=e, tau_max=tau_max, rule=rule, net=net, params=params)


__all__ = [
    "KernelTable",
    "M_e_profile",
    "SingularSystemError",
    "batched_expm",
    "build_M",
    "decay_rate",
    "flow_action",
    "flow_map",
    "geomorph_kernel",
    "hydrograph_conv",
    "hydrograph_exp",
    "hydrograph_mass",
    "hypoexponential_density",
    "kernel_function",
    "m_homogeneous",
    "m_matrix",
    "m_series",
    "m_zero",
    "path_generator",
    "printed_series",
    "printed_series_discrepancy",
    "truncation_time",
]
