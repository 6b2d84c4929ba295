"""Laplace transforms of the invariant and transition laws, and their inversion.

All integrals over ``u in (0, 1]`` are taken in ``tau = -ln(u)/H_r`` so
the transform of the invariant law reads

    g(s) = exp(-rate * int_0^inf (1 - f_Y((e^{tau M^T} s)_R)) dtau)

truncated at ``tau_max = ln(1/epsilon)/kappa``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from threading import Lock
from typing import Callable, Optional

import numpy as np
from scipy.integrate import trapezoid

from app.config import ROOT, load_yaml
from app.dynamics import (
    KernelTable,
    build_M,
    flow_action,
    flow_map,
    geomorph_kernel,
    kernel_function,
    truncation_time,
)
from app.network import HydraulicParams, RiverNetwork
from app.quadrature import QuadratureError, adaptive_rule
from app.rainfall import RainfallModel, require_invariance
from app.simulation import invariant_mean

logger = logging.getLogger(__name__)

ZAKIAN_PATH = ROOT / "config" / "zakian.yml"
_CHUNK = 1024


class UnsupportedInversionError(ValueError):
    """The requested inversion needs complex transform values the mark law does not provide."""


class ZakianGateError(RuntimeError):
    """The inversion constants failed the analytic transform-pair checks."""


class DensityMassError(RuntimeError):
    """An inverted density failed its normalisation or mean check."""


class TransformEvaluator:
    """Evaluates the invariant and transition transforms for one configuration.

    Per-edge kernel tables are built lazily and cached; the evaluator is
    safe to share between threads.
    """

    def __init__(
        self,
        net: RiverNetwork,
        params: HydraulicParams,
        rain: RainfallModel,
        *,
        rtol: float = 1.0e-10,
        epsilon: float = 1.0e-14,
        order: int = 32,
    ) -> None:
        params.check_network(net)
        rain.check_network_size(net.n)
        require_invariance(net, params, rain)
        self.net = net
        self.params = params
        self.rain = rain
        self.rtol = rtol
        self.epsilon = epsilon
        self.order = order
        self.system = build_M(net, params)
        self.power = rain.complement_order(net.n)
        self.tau_max = truncation_time(params, epsilon, self.power)
        self._marginals = rain.marginals(net.n)
        self._weights = params.H * net.areas
        self._kernels: dict[int, KernelTable] = {}
        self._lock = Lock()

    def kernel(self, e: int) -> KernelTable:
        with self._lock:
            table = self._kernels.get(e)
        if table is None:
            table = geomorph_kernel(
                self.net,
                self.params,
                e,
                rtol=self.rtol,
                epsilon=self.epsilon,
                power=self.power,
                order=self.order,
            )
            with self._lock:
                table = self._kernels.setdefault(e, table)
        return table

    def mean(self, e: int) -> float:
        return float(invariant_mean(self.net, self.params, self.rain)[e])

    def complement(self, arguments: np.ndarray) -> np.ndarray:
        """``1 - f_Y`` for per-edge jump arguments of shape ``(..., n)``.

        ``arguments[..., e']`` already carries the factor ``H_{e'} a_{e'}``.
        """

        if self.rain.is_uniform:
            return self._marginals[0].complement(arguments.sum(axis=-1))
        log_total = sum(
            dist.log_transform(arguments[..., i]) for i, dist in enumerate(self._marginals)
        )
        return -np.expm1(log_total)

    def _kernel_complement(self, profile: np.ndarray, s: np.ndarray) -> np.ndarray:
        if self.rain.is_uniform:
            return self._marginals[0].complement(np.multiply.outer(profile.sum(axis=1), s))
        args = profile[:, None, :] * s[None, :, None]
        return self.complement(args)

    def ge_tilde(self, e: int, s):
        """Transform of the invariant law of ``Q_e`` at real or complex ``s`` (s/m³)."""

        s_arr = np.asarray(s)
        flat = s_arr.reshape(-1)
        table = self.kernel(e)
        if not np.iscomplexobj(flat) or np.all(flat.imag == 0):
            flat = flat.real.astype(float)
            integral = table.rule.integrate(self._kernel_complement(table.profile, flat))
        else:
            integral = np.empty(flat.size, dtype=complex)
            for start in range(0, flat.size, _CHUNK):
                block = flat[start : start + _CHUNK]
                integral[start : start + _CHUNK] = self._complex_integral(table, block)
        values = np.exp(-self.rain.rate * integral)
        return values.reshape(s_arr.shape) if s_arr.ndim else values[0]

    def _complex_integral(self, table: KernelTable, s: np.ndarray) -> np.ndarray:
        kernel = kernel_function(self.net, self.params, table.edge)

        def integrand(tau: np.ndarray) -> np.ndarray:
            return self._kernel_complement(kernel(tau), s)

        breakpoints = np.concatenate([table.rule.panels[:, 0], [table.tau_max]])
        try:
            rule = adaptive_rule(
                integrand, 0.0, table.tau_max, rtol=self.rtol, order=self.order, initial_panels=breakpoints
            )
        except QuadratureError:
            logger.warning(
                "Complex transform quadrature did not converge",
                extra={"edge_id": self.net.edges[table.edge].id, "points": int(s.size)},
            )
            raise
        return rule.integrate()

    def log_ge_tilde(self, e: int, s):
        return np.log(self.ge_tilde(e, s))

    def _jump_integrand(self, s_vec: np.ndarray) -> Callable[[np.ndarray], np.ndarray]:
        Mt = self.system.T
        n = self.net.n

        def integrand(tau: np.ndarray) -> np.ndarray:
            z = flow_action(Mt, tau, s_vec)[:, n:] * self._weights
            return self.complement(z)

        return integrand

    def _check_vector(self, s) -> np.ndarray:
        s_vec = np.asarray(s)
        if s_vec.shape != (2 * self.net.n,):
            raise ValueError(f"s must have length {2 * self.net.n}")
        if np.iscomplexobj(s_vec) and np.all(s_vec.imag == 0):
            s_vec = s_vec.real
        return s_vec

    def g_tilde(self, s) -> complex:
        """Transform of the joint invariant law at a 2n-vector ``s``."""

        s_vec = self._check_vector(s)
        if not np.any(s_vec):
            return 1.0
        rule = adaptive_rule(self._jump_integrand(s_vec), 0.0, self.tau_max, rtol=self.rtol, order=self.order)
        value = np.exp(-self.rain.rate * rule.integrate())
        return complex(value) if np.iscomplexobj(value) else float(value)

    def p_tilde(self, t: float, x, s) -> complex:
        """Transform in ``s`` of the law at time ``t`` started from state ``x``."""

        if t < 0:
            raise ValueError(f"t must be non-negative, got {t}")
        s_vec = self._check_vector(s)
        start = np.asarray(x, dtype=float)
        drift = (flow_map(self.system, t) @ start) @ s_vec
        if t == 0 or not np.any(s_vec):
            value = np.exp(-drift)
        else:
            upper = min(t, self.tau_max)
            rule = adaptive_rule(self._jump_integrand(s_vec), 0.0, upper, rtol=self.rtol, order=self.order)
            value = np.exp(-drift - self.rain.rate * rule.integrate())
        return complex(value) if np.iscomplexobj(value) else float(value)


@dataclass
class ContourInverter:
    """Inversion ``f(x) = (1/x) Re sum_k W_k F(A_k / x)`` with fixed nodes and weights."""

    name: str
    nodes: np.ndarray
    weights: np.ndarray
    clipped: int = field(default=0)

    def __call__(self, F: Callable[[np.ndarray], np.ndarray], x_grid) -> np.ndarray:
        x = np.asarray(x_grid, dtype=float)
        flat = x.reshape(-1)
        out = np.zeros(flat.size)
        positive = flat > 0
        if positive.any():
            xs = flat[positive]
            s = self.nodes[None, :] / xs[:, None]
            values = np.asarray(F(s)).reshape(s.shape)
            out[positive] = np.real(values @ self.weights) / xs
        negative = out < 0
        count = int(negative.sum())
        if count:
            self.clipped += count
            logger.warning(
                "Clipped negative inverted density values",
                extra={"method": self.name, "points": count, "total_clipped": self.clipped},
            )
            out[negative] = 0.0
        return out.reshape(x.shape)


def _pairs(raw, key: str) -> np.ndarray:
    values = raw.get(key)
    if not isinstance(values, list) or not values:
        raise RuntimeError(f"Zakian constants file is missing {key!r}")
    return np.array([complex(float(re), float(im)) for re, im in values])


@lru_cache(maxsize=4)
def load_zakian_constants(path: Path = ZAKIAN_PATH) -> tuple[np.ndarray, np.ndarray]:
    raw = load_yaml(path)
    poles = _pairs(raw, "poles")
    residues = _pairs(raw, "residues")
    if poles.size != residues.size:
        raise RuntimeError("Zakian poles and residues differ in length")
    return poles, residues


def zakian_inverter(path: Path = ZAKIAN_PATH) -> ContourInverter:
    poles, residues = load_zakian_constants(path)
    return ContourInverter(name="zakian", nodes=poles, weights=2.0 * residues)


def talbot_inverter(degree: int = 32) -> ContourInverter:
    """Fixed-Talbot contour with ``r = 2M/5``."""

    if degree < 2:
        raise ValueError("Talbot degree must be at least 2")
    r = 2.0 * degree / 5.0
    theta = np.arange(degree) * math.pi / degree
    nodes = np.empty(degree, dtype=complex)
    gamma = np.empty(degree, dtype=complex)
    nodes[0] = r
    gamma[0] = 0.5 * math.exp(r)
    cot = 1.0 / np.tan(theta[1:])
    nodes[1:] = r * theta[1:] * (cot + 1j)
    gamma[1:] = np.exp(nodes[1:]) * (1.0 + 1j * theta[1:] * (1.0 + cot**2) - 1j * cot)
    return ContourInverter(name="talbot", nodes=nodes, weights=(r / degree) * gamma)


def make_inverter(method: str = "talbot", degree: int = 32) -> ContourInverter:
    if method == "zakian":
        return zakian_inverter()
    if method == "talbot":
        return talbot_inverter(degree)
    raise ValueError(f"unknown inversion method {method!r}; expected zakian or talbot")


ANALYTIC_PAIRS = (
    ("1/s", lambda s: 1.0 / s, lambda x: np.ones_like(x), (0.1, 10.0)),
    ("1/(s+1)", lambda s: 1.0 / (s + 1.0), lambda x: np.exp(-x), (0.1, 5.0)),
    ("1/s^2", lambda s: 1.0 / s**2, lambda x: x, (0.1, 10.0)),
)


def check_inverter(inverter: ContourInverter, tolerance: float = 1.0e-4, points: int = 200) -> dict[str, float]:
    """Worst relative error of ``inverter`` on each analytic transform pair."""

    errors: dict[str, float] = {}
    for name, F, f, (lo, hi) in ANALYTIC_PAIRS:
        x = np.linspace(lo, hi, points)
        got = inverter(F, x)
        errors[name] = float(np.max(np.abs(got - f(x)) / np.abs(f(x))))
    return errors


@lru_cache(maxsize=1)
def zakian_gate(tolerance: float = 1.0e-4) -> dict[str, float]:
    """Run the analytic pairs once per process; raise if any exceeds ``tolerance``."""

    errors = check_inverter(zakian_inverter(), tolerance)
    failed = {name: err for name, err in errors.items() if not err <= tolerance}
    if failed:
        raise ZakianGateError(f"Zakian constants failed analytic pairs: {failed}")
    logger.info("Zakian gate passed", extra={"errors": errors})
    return errors


def invert_density(F: Callable[[np.ndarray], np.ndarray], x_grid, inverter: Optional[ContourInverter] = None) -> np.ndarray:
    """Invert a scalar transform on a grid of positive values (non-positive points give 0)."""

    return (inverter or talbot_inverter())(F, x_grid)


def density_profile(
    evaluator: TransformEvaluator,
    e: int,
    x_grid,
    *,
    method: str = "talbot",
    degree: int = 32,
) -> np.ndarray:
    """Invariant density of ``Q_e`` (s/m³) on ``x_grid`` (m³/s)."""

    if not evaluator.rain.supports_complex:
        raise UnsupportedInversionError(
            "density inversion needs complex mark transforms; Pareto marks are covered by the tail estimates"
        )
    if method == "talbot" and "det" in evaluator.rain.families():
        raise UnsupportedInversionError("the Talbot contour needs transforms analytic off the negative axis")
    zakian_gate()
    inverter = make_inverter(method, degree)
    density = invert_density(lambda s: evaluator.ge_tilde(e, s), x_grid, inverter)
    logger.info(
        "Inverted invariant density",
        extra={"edge_id": evaluator.net.edges[e].id, "points": int(np.size(x_grid)), "method": method, "clipped": inverter.clipped},
    )
    return density


def check_density(
    x_grid,
    density,
    mean: float,
    mass_tolerance: float = 0.01,
    mean_tolerance: float = 0.02,
) -> tuple[float, float]:
    """Trapezoid mass and mean ratio of ``density``; raise when either is off."""

    x = np.asarray(x_grid, dtype=float)
    g = np.asarray(density, dtype=float)
    mass = float(trapezoid(g, x))
    ratio = float(trapezoid(x * g, x)) / mean
    if not (abs(mass - 1.0) <= mass_tolerance and abs(ratio - 1.0) <= mean_tolerance):
        raise DensityMassError(
            f"inverted density has mass {mass:.4g} and mean ratio {ratio:.4g}; "
            "use the talbot method or a finer grid"
        )
    return mass, ratio


__all__ = [
    "ContourInverter",
    "DensityMassError",
    "TransformEvaluator",
    "UnsupportedInversionError",
    "ZakianGateError",
    "check_density",
    "check_inverter",
    "density_profile",
    "invert_density",
    "load_zakian_constants",
    "make_inverter",
    "talbot_inverter",
    "zakian_gate",
    "zakian_inverter",
]
