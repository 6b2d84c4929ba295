"""Invariant moments of discharge and tail asymptotics.

Moments follow from the cumulant expansion of the invariant transform:
the ``i``-th cumulant of ``Q_e`` is ``rate * int E[Y_e(tau)^i] dtau`` with
``Y_e(tau)`` the contribution to ``Q_e`` of a storm ``tau`` seconds old.
For spatially uniform marks this reduces to the geomorphological
coefficients ``c_i`` and partial Bell polynomials.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence

import numpy as np
from scipy import optimize, special

from app.dynamics import KernelTable, M_e_profile, geomorph_kernel
from app.invariant import TransformEvaluator
from app.network import HydraulicParams, RiverNetwork, upstream_areas
from app.rainfall import Exponential, MarkDistribution, Pareto, RainfallModel

logger = logging.getLogger(__name__)

SCAN_POINTS = 1024
GOLDEN_XTOL = 1.0e-10


def _index_vectors(n: int, k: int) -> Iterator[tuple[int, ...]]:
    """Vectors ``j`` with ``sum j_i = k`` and ``sum i j_i = n`` (length ``n - k + 1``)."""

    size = n - k + 1

    def walk(i: int, parts: int, weight: int, prefix: tuple[int, ...]):
        if i > size:
            if parts == k and weight == n:
                yield prefix
            return
        max_j = min(k - parts, (n - weight) // i)
        for j in range(max_j + 1):
            yield from walk(i + 1, parts + j, weight + i * j, prefix + (j,))

    yield from walk(1, 0, 0, ())


def bell_coefficient(j: Sequence[int]) -> int:
    """Exact ``n! / prod(j_i! (i!)^{j_i})`` for one index vector."""

    n = sum((i + 1) * count for i, count in enumerate(j))
    denominator = 1
    for i, count in enumerate(j, start=1):
        denominator *= math.factorial(count) * math.factorial(i) ** count
    return math.factorial(n) // denominator


def bell_polynomial(n: int, k: int, x: Sequence[float]) -> float:
    """Partial Bell polynomial ``B_{n,k}(x_1, ..., x_{n-k+1})``."""

    if int(n) != n or int(k) != k:
        raise ValueError("n and k must be integers")
    n, k = int(n), int(k)
    if not 1 <= k <= n:
        raise ValueError(f"k must satisfy 1 <= k <= n, got n={n}, k={k}")
    if len(x) < n - k + 1:
        raise ValueError(f"B_{{{n},{k}}} needs {n - k + 1} arguments, got {len(x)}")
    total = 0
    for j in _index_vectors(n, k):
        term = bell_coefficient(j)
        for i, count in enumerate(j):
            if count:
                term = term * x[i] ** count
        total = total + term
    return total


def moments_from_cumulants(cumulants: Sequence[float]) -> list[float]:
    """Raw moments ``E X^n = sum_k B_{n,k}(kappa)`` for ``n = 1..len(cumulants)``."""

    return [
        float(sum(bell_polynomial(n, k, cumulants) for k in range(1, n + 1)))
        for n in range(1, len(cumulants) + 1)
    ]


@dataclass(frozen=True, slots=True)
class GeomorphCoefficients:
    """``alpha -> c_alpha`` for one edge (dimensionless)."""

    edge_id: str
    values: dict[float, float] = field(default_factory=dict)

    def __getitem__(self, alpha: float) -> float:
        return self.values[float(alpha)]

    @property
    def alphas(self) -> list[float]:
        return sorted(self.values)


@dataclass(frozen=True, slots=True)
class MomentTable:
    """Invariant moments ``E Q_e^n`` for ``n = 1..n_max`` in (m³/s)^n."""

    edge_id: str
    n_max: int
    values: tuple[float, ...]
    coefficients: GeomorphCoefficients

    def moment(self, n: int) -> float:
        if not 1 <= n <= self.n_max:
            raise IndexError(f"moment order {n} outside 1..{self.n_max}")
        return self.values[n - 1]

    def rows(self) -> list[dict]:
        return [
            {"edge_id": self.edge_id, "n": n, "moment_si": value, "c_n": self.coefficients[n]}
            for n, value in enumerate(self.values, start=1)
        ]


def _scale(net: RiverNetwork, params: HydraulicParams) -> float:
    return net.total_area * float(params.K[0])


def _c_from_table(table: KernelTable, alpha: float, scale: float, H_root: float) -> float:
    ratio = np.maximum(table.total / scale, 0.0)
    return float(H_root * table.rule.integrate(ratio**alpha))


def c_closed_form(net: RiverNetwork, params: HydraulicParams, e: int) -> float:
    """``c_1 = (H_r/K_r) A_e/a``; at the root this is ``H_r/K_r``."""

    return float(params.H[0] / params.K[0] * upstream_areas(net)[e] / net.total_area)


def c_coefficient(
    net: RiverNetwork,
    params: HydraulicParams,
    e: int,
    alpha: float,
    *,
    rtol: float = 1.0e-10,
    epsilon: float = 1.0e-14,
    order: int = 32,
) -> float:
    """``c_alpha = H_r int_0^inf (M_e(tau)/(a K_r))^alpha dtau`` for real ``alpha > 0``."""

    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    table = geomorph_kernel(net, params, e, rtol=rtol, epsilon=epsilon, power=alpha, order=order)
    value = _c_from_table(table, alpha, _scale(net, params), float(params.H[0]))
    logger.debug("Geomorphological coefficient", extra={"edge_id": net.edges[e].id, "alpha": alpha, "c": value})
    return value


def geomorph_coefficients(
    net: RiverNetwork,
    params: HydraulicParams,
    e: int,
    alphas: Sequence[float],
    **quadrature,
) -> GeomorphCoefficients:
    values = {float(alpha): c_coefficient(net, params, e, alpha, **quadrature) for alpha in alphas}
    return GeomorphCoefficients(edge_id=net.edges[e].id, values=values)


def _integer_coefficients(
    table: KernelTable, net: RiverNetwork, params: HydraulicParams, e: int, n_max: int
) -> GeomorphCoefficients:
    scale = _scale(net, params)
    H_root = float(params.H[0])
    values = {}
    for i in range(1, n_max + 1):
        values[float(i)] = _c_from_table(table, i, scale, H_root)
    return GeomorphCoefficients(edge_id=net.edges[e].id, values=values)


def _mixture_moments(profile: np.ndarray, marginals: Sequence[MarkDistribution], n_max: int) -> np.ndarray:
    """``E (sum_e' w_e' P_e')^i`` per row of ``profile`` for ``i = 0..n_max``."""

    raw = np.zeros((profile.shape[0], n_max + 1))
    raw[:, 0] = 1.0
    binom = special.comb(np.arange(n_max + 1)[:, None], np.arange(n_max + 1)[None, :])
    for column, dist in enumerate(marginals):
        w = profile[:, column]
        mark = np.array([1.0] + [dist.moment(j) for j in range(1, n_max + 1)])
        scaled = w[:, None] ** np.arange(n_max + 1) * mark
        combined = np.zeros_like(raw)
        for i in range(n_max + 1):
            combined[:, i] = (binom[i, : i + 1] * raw[:, : i + 1] * scaled[:, i::-1]).sum(axis=1)
        raw = combined
    return raw


def _infinite_from(rain: RainfallModel, n: int, n_max: int) -> int:
    """First order ``<= n_max`` whose mark moment is infinite, or ``n_max + 1``."""

    for i in range(1, n_max + 1):
        if not all(math.isfinite(m.moment(i)) for m in rain.marginals(n)):
            return i
    return n_max + 1


def moment_table(
    net: RiverNetwork,
    params: HydraulicParams,
    rain: RainfallModel,
    e: int,
    n_max: int,
    *,
    rtol: float = 1.0e-10,
    epsilon: float = 1.0e-14,
    order: int = 32,
) -> MomentTable:
    """Moments ``1..n_max`` of ``Q_e``; orders the marks cannot support are ``inf``.

    Uniform marks use ``(a K_r)^n sum_k (rate/H_r)^k B_{n,k}(m_P^(i) c_i)``;
    the root normalisation is kept on every edge and the edge enters
    through ``M_e``. Independent marks go through the cumulants directly.
    """

    if int(n_max) != n_max or n_max < 1:
        raise ValueError(f"n_max must be a positive integer, got {n_max}")
    n_max = int(n_max)
    params.check_network(net)
    rain.check_network_size(net.n)
    table = geomorph_kernel(net, params, e, rtol=rtol, epsilon=epsilon, order=order)
    coefficients = _integer_coefficients(table, net, params, e, n_max)
    finite_upto = _infinite_from(rain, net.n, n_max) - 1
    if finite_upto < n_max:
        logger.info(
            "Mark moments run out",
            extra={"edge_id": net.edges[e].id, "finite_orders": finite_upto, "requested": n_max},
        )

    values: list[float] = []
    if finite_upto:
        if rain.is_uniform:
            mark = rain.marginal_for(0)
            scale = _scale(net, params)
            ratio = rain.rate / float(params.H[0])
            x = [mark.moment(i) * coefficients[i] for i in range(1, finite_upto + 1)]
            for n in range(1, finite_upto + 1):
                inner = sum(ratio**k * bell_polynomial(n, k, x) for k in range(1, n + 1))
                values.append(float(scale**n * inner))
        else:
            raw = _mixture_moments(table.profile, rain.marginals(net.n), finite_upto)
            cumulants = [float(rain.rate * table.rule.integrate(raw[:, i])) for i in range(1, finite_upto + 1)]
            values = moments_from_cumulants(cumulants)
    values.extend([math.inf] * (n_max - finite_upto))
    return MomentTable(edge_id=net.edges[e].id, n_max=n_max, values=tuple(values), coefficients=coefficients)


def moment_n(net: RiverNetwork, params: HydraulicParams, rain: RainfallModel, e: int, n: int, **quadrature) -> float:
    """``E Q_e^n`` in (m³/s)^n; ``inf`` when the marks lack an ``n``-th moment."""

    return moment_table(net, params, rain, e, n, **quadrature).moment(n)


@dataclass(frozen=True, slots=True)
class ParetoTail:
    """``P(Q_e > x) ~ coefficient * x^(-exponent)``."""

    edge_id: str
    coefficient: float
    exponent: float
    c_alpha: float
    transform_constant: Optional[float] = None

    @property
    def gamma_ratio(self) -> Optional[float]:
        """Transform-side constant over the tail constant; ``Gamma(1 - alpha)`` in theory."""

        if self.transform_constant is None:
            return None
        return self.transform_constant / self.coefficient


def _pareto_marks(rain: RainfallModel) -> Pareto:
    mark = rain.marginal_for(0)
    if not rain.is_uniform or not isinstance(mark, Pareto):
        raise ValueError("Pareto tail asymptotics need spatially uniform Pareto marks")
    if not 0 < mark.alpha < 1:
        raise ValueError(f"Pareto tail asymptotics need alpha in (0, 1), got {mark.alpha}")
    return mark


def pareto_transform_constant(
    net: RiverNetwork,
    params: HydraulicParams,
    rain: RainfallModel,
    e: int,
    *,
    scale: float = 1.0e-8,
    evaluator: Optional[TransformEvaluator] = None,
) -> float:
    """``lim_{s -> 0} (1 - g_e(s)) / s^alpha``, read off at ``s k max M_e = scale``."""

    mark = _pareto_marks(rain)
    evaluator = evaluator or TransformEvaluator(net, params, rain)
    peak = float(evaluator.kernel(e).total.max())
    s = scale / (mark.k * peak)
    return float(-evaluator.log_ge_tilde(e, s) / s**mark.alpha)


def pareto_tail(
    net: RiverNetwork,
    params: HydraulicParams,
    rain: RainfallModel,
    e: int,
    *,
    cross_check: bool = True,
    rtol: float = 1.0e-10,
    epsilon: float = 1.0e-14,
    order: int = 32,
) -> ParetoTail:
    """Tail constant ``rate (k a K_r)^alpha c_alpha / H_r`` and exponent ``alpha``."""

    mark = _pareto_marks(rain)
    alpha = mark.alpha
    c_alpha = c_coefficient(net, params, e, alpha, rtol=rtol, epsilon=epsilon, order=order)
    coefficient = rain.rate * (mark.k * _scale(net, params)) ** alpha * c_alpha / float(params.H[0])
    transform_constant = None
    if cross_check:
        evaluator = TransformEvaluator(net, params, rain, rtol=rtol, epsilon=epsilon, order=order)
        transform_constant = pareto_transform_constant(net, params, rain, e, evaluator=evaluator)
    tail = ParetoTail(
        edge_id=net.edges[e].id,
        coefficient=float(coefficient),
        exponent=alpha,
        c_alpha=c_alpha,
        transform_constant=transform_constant,
    )
    if tail.gamma_ratio is not None:
        expected = special.gamma(1.0 - alpha)
        level = logging.INFO if abs(tail.gamma_ratio / expected - 1.0) < 1.0e-3 else logging.WARNING
        logger.log(
            level,
            "Pareto constant cross-check",
            extra={"edge_id": tail.edge_id, "ratio": tail.gamma_ratio, "gamma_1_minus_alpha": expected},
        )
    return tail


def profile_peak(net: RiverNetwork, params: HydraulicParams, e: int, points: int = SCAN_POINTS) -> tuple[float, float]:
    """``(u*, M_e*)``: maximiser and maximum of ``M_e`` on ``[0, 1]``."""

    grid = np.linspace(0.0, 1.0, points)
    values = M_e_profile(net, params, e, grid)
    best = int(np.argmax(values))
    if best in (0, points - 1) or not values[best] > 0:
        raise RuntimeError(f"M_e profile of edge {net.edges[e].id} has no interior maximum")
    bracket = (grid[best - 1], grid[best], grid[best + 1])

    def negative(u: float) -> float:
        return -float(M_e_profile(net, params, e, u))

    try:
        result = optimize.minimize_scalar(negative, bracket=bracket, method="golden", options={"xtol": GOLDEN_XTOL})
    except ValueError:
        result = optimize.minimize_scalar(
            negative, bounds=(bracket[0], bracket[2]), method="bounded", options={"xatol": GOLDEN_XTOL}
        )
    u_star = float(result.x)
    peak = max(-float(result.fun), float(values[best]))
    return u_star, peak


def exp_tail_rate(net: RiverNetwork, params: HydraulicParams, rain: RainfallModel, e: int) -> float:
    """``sigma / M_e*`` (s/m³): the logarithmic decay rate of ``P(Q_e > x)``."""

    mark = rain.marginal_for(0)
    if not rain.is_uniform or not isinstance(mark, Exponential):
        raise ValueError("the exponential tail rate needs spatially uniform exponential marks")
    u_star, peak = profile_peak(net, params, e)
    rate = mark.sigma / peak
    logger.info(
        "Exponential tail rate",
        extra={"edge_id": net.edges[e].id, "u_star": u_star, "M_star": peak, "rate": rate},
    )
    return rate


__all__ = [
    "GeomorphCoefficients",
    "MomentTable",
    "ParetoTail",
    "bell_coefficient",
    "bell_polynomial",
    "c_closed_form",
    "c_coefficient",
    "exp_tail_rate",
    "geomorph_coefficients",
    "moment_n",
    "moment_table",
    "moments_from_cumulants",
    "pareto_tail",
    "pareto_transform_constant",
    "profile_peak",
]
