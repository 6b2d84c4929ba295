"""Adaptive composite Gauss–Legendre quadrature on finite intervals.

Panels are bisected until the rule on a panel agrees with the sum over its
two halves. The accepted panels, nodes and integrand values are returned
so callers can reuse them for many integrals of related integrands.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Union

import numpy as np
from numpy.polynomial.legendre import leggauss

logger = logging.getLogger(__name__)

DEFAULT_ORDER = 32


class QuadratureError(RuntimeError):
    """Raised when adaptive refinement does not reach the requested tolerance."""


@lru_cache(maxsize=16)
def gauss_legendre(order: int = DEFAULT_ORDER) -> tuple[np.ndarray, np.ndarray]:
    if order < 1:
        raise ValueError(f"Gauss–Legendre order must be positive, got {order}")
    nodes, weights = leggauss(order)
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


def panel_rule(a: float, b: float, order: int = DEFAULT_ORDER) -> tuple[np.ndarray, np.ndarray]:
    x, w = gauss_legendre(order)
    half = 0.5 * (b - a)
    return half * x + 0.5 * (a + b), half * w


@dataclass(frozen=True)
class CompositeRule:
    """Accepted panels with their nodes, weights and cached integrand values."""

    panels: np.ndarray
    nodes: np.ndarray
    weights: np.ndarray
    values: np.ndarray
    order: int

    def integrate(self, values: np.ndarray | None = None) -> np.ndarray:
        vals = self.values if values is None else values
        return np.tensordot(self.weights, vals, axes=(0, 0))

    def refined(self, func: Callable[[np.ndarray], np.ndarray]) -> "CompositeRule":
        """Same coverage with every panel halved; ``func`` is re-evaluated."""

        mids = 0.5 * (self.panels[:, 0] + self.panels[:, 1])
        halves = np.empty((2 * len(self.panels), 2))
        halves[0::2, 0] = self.panels[:, 0]
        halves[0::2, 1] = mids
        halves[1::2, 0] = mids
        halves[1::2, 1] = self.panels[:, 1]
        return rule_from_panels(func, halves, self.order)


def rule_from_panels(
    func: Callable[[np.ndarray], np.ndarray], panels: np.ndarray, order: int = DEFAULT_ORDER
) -> CompositeRule:
    pieces = [panel_rule(a, b, order) for a, b in panels]
    nodes = np.concatenate([p[0] for p in pieces])
    weights = np.concatenate([p[1] for p in pieces])
    return CompositeRule(
        panels=np.asarray(panels, dtype=float),
        nodes=nodes,
        weights=weights,
        values=np.asarray(func(nodes)),
        order=order,
    )


def _panel_integral(values: np.ndarray, weights: np.ndarray) -> np.ndarray:
    return np.tensordot(weights, values, axes=(0, 0))


def adaptive_rule(
    func: Callable[[np.ndarray], np.ndarray],
    a: float,
    b: float,
    *,
    rtol: float = 1e-10,
    atol: float = 0.0,
    order: int = DEFAULT_ORDER,
    initial_panels: Union[int, np.ndarray] = 8,
    max_depth: int = 48,
) -> CompositeRule:
    """Build a composite rule on ``[a, b]`` for a vectorised integrand.

    ``func`` maps an array of nodes of shape ``(k,)`` to values of shape
    ``(k,)`` or ``(k, m)``; real or complex. A panel is accepted when
    ``max|I_panel - I_left - I_right| <= rtol * max|I_total| * width/(b-a)``
    (or ``atol`` scaled the same way). ``initial_panels`` is a panel count
    or an increasing array of breakpoints from ``a`` to ``b``.
    """

    if not b > a:
        raise ValueError(f"Empty integration interval [{a}, {b}]")

    if np.ndim(initial_panels) == 0:
        edges = np.linspace(a, b, int(initial_panels) + 1)
    else:
        edges = np.asarray(initial_panels, dtype=float)
        if edges[0] != a or edges[-1] != b or np.any(np.diff(edges) <= 0):
            raise ValueError("initial breakpoints must increase from a to b")
    stack = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        x, w = panel_rule(lo, hi, order)
        v = np.asarray(func(x))
        stack.append((lo, hi, x, w, v, 0))

    coarse_total = sum(_panel_integral(item[4], item[3]) for item in stack)
    scale = float(np.max(np.abs(coarse_total))) if np.size(coarse_total) else 0.0
    length = b - a

    accepted: list[tuple[float, float, np.ndarray, np.ndarray, np.ndarray]] = []
    while stack:
        lo, hi, x, w, v, depth = stack.pop()
        mid = 0.5 * (lo + hi)
        xl, wl = panel_rule(lo, mid, order)
        xr, wr = panel_rule(mid, hi, order)
        vl = np.asarray(func(xl))
        vr = np.asarray(func(xr))
        whole = _panel_integral(v, w)
        split = _panel_integral(vl, wl) + _panel_integral(vr, wr)
        error = float(np.max(np.abs(whole - split)))
        allowed = max(rtol * scale, atol) * (hi - lo) / length
        if error <= allowed or depth >= max_depth:
            if error > allowed:
                raise QuadratureError(
                    f"Adaptive quadrature did not converge on [{lo:.6g}, {hi:.6g}] "
                    f"(error {error:.3g} > {allowed:.3g})"
                )
            accepted.append((lo, mid, xl, wl, vl))
            accepted.append((mid, hi, xr, wr, vr))
            continue
        stack.append((lo, mid, xl, wl, vl, depth + 1))
        stack.append((mid, hi, xr, wr, vr, depth + 1))

    accepted.sort(key=lambda item: item[0])
    rule = CompositeRule(
        panels=np.array([[item[0], item[1]] for item in accepted]),
        nodes=np.concatenate([item[2] for item in accepted]),
        weights=np.concatenate([item[3] for item in accepted]),
        values=np.concatenate([item[4] for item in accepted]),
        order=order,
    )
    logger.debug(
        "Adaptive rule built",
        extra={"panels": len(accepted), "interval": (a, b), "rtol": rtol},
    )
    return rule


def integrate(
    func: Callable[[np.ndarray], np.ndarray],
    a: float,
    b: float,
    **kwargs,
) -> np.ndarray:
    return adaptive_rule(func, a, b, **kwargs).integrate()


__all__ = [
    "CompositeRule",
    "QuadratureError",
    "adaptive_rule",
    "gauss_legendre",
    "integrate",
    "panel_rule",
    "rule_from_panels",
]
