"""Storm arrivals and storm depths.

Storms arrive as a Poisson process with rate ``rate`` (1/s). Each storm
drops a depth vector (m) on the hillslopes, either the same depth
everywhere (``uniform``) or an independent depth per hillslope
(``independent``).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from io import StringIO
from typing import ClassVar, Sequence, Union

import numpy as np
from dotenv import dotenv_values
from scipy import special

from app.network import HydraulicParams, RiverNetwork
from app.quadrature import integrate
from app.streams import StormStreams
from app.units import mm_to_m, per_hour_to_per_second

logger = logging.getLogger(__name__)

SPATIAL_MODES = ("uniform", "independent")


class RainConfigError(ValueError):
    """Invalid rainfall configuration block."""


class InvarianceConditionError(ValueError):
    """The jump law has no finite logarithmic moment, so no invariant law exists."""


def _arg(s) -> np.ndarray:
    return np.asarray(s)


class MarkDistribution:
    """Law of a single storm depth in metres."""

    family: ClassVar[str] = ""
    complex_ok: ClassVar[bool] = True
    log_moment_finite: ClassVar[bool] = True

    def transform(self, s):
        return np.exp(self.log_transform(s))

    def log_transform(self, s):
        raise NotImplementedError

    def complement(self, s):
        """``1 - transform(s)`` without cancellation at small ``s``."""

        return -np.expm1(self.log_transform(s))

    def moment(self, i: int) -> float:
        raise NotImplementedError

    def sample(self, rng: np.random.Generator, size=None):
        raise NotImplementedError

    @property
    def mean(self) -> float:
        return self.moment(1)

    @property
    def complement_order(self) -> float:
        """Power ``p`` with ``1 - transform(s) ~ s^p`` as ``s -> 0``."""

        return 1.0


@dataclass(frozen=True, slots=True)
class Exponential(MarkDistribution):
    """Exponential depths with mean ``mean_depth`` (m); rate ``sigma = 1/mean``."""

    mean_depth: float
    family: ClassVar[str] = "exp"

    def __post_init__(self) -> None:
        if not self.mean_depth > 0:
            raise ValueError(f"exponential mean must be positive, got {self.mean_depth}")

    @property
    def sigma(self) -> float:
        return 1.0 / self.mean_depth

    def transform(self, s):
        return 1.0 / (1.0 + self.mean_depth * _arg(s))

    def log_transform(self, s):
        return -np.log1p(self.mean_depth * _arg(s))

    def complement(self, s):
        z = self.mean_depth * _arg(s)
        return z / (1.0 + z)

    def moment(self, i: int) -> float:
        return math.factorial(i) * self.mean_depth**i

    def sample(self, rng: np.random.Generator, size=None):
        return rng.exponential(self.mean_depth, size)


@dataclass(frozen=True, slots=True)
class Gamma(MarkDistribution):
    shape: float
    scale: float
    family: ClassVar[str] = "gamma"

    def __post_init__(self) -> None:
        if not (self.shape > 0 and self.scale > 0):
            raise ValueError("gamma shape and scale must be positive")

    def log_transform(self, s):
        return -self.shape * np.log1p(self.scale * _arg(s))

    def moment(self, i: int) -> float:
        return float(self.scale**i * special.poch(self.shape, i))

    def sample(self, rng: np.random.Generator, size=None):
        return rng.gamma(self.shape, self.scale, size)


@dataclass(frozen=True, slots=True)
class Deterministic(MarkDistribution):
    depth: float
    family: ClassVar[str] = "det"

    def __post_init__(self) -> None:
        if not self.depth > 0:
            raise ValueError(f"deterministic depth must be positive, got {self.depth}")

    def log_transform(self, s):
        return -self.depth * _arg(s)

    def moment(self, i: int) -> float:
        return self.depth**i

    def sample(self, rng: np.random.Generator, size=None):
        if size is None:
            return self.depth
        return np.full(size, self.depth)


@dataclass(frozen=True, slots=True)
class Pareto(MarkDistribution):
    """Pareto depths with survival ``(k/x)^alpha`` for ``x >= k``; real arguments only."""

    alpha: float
    k: float
    family: ClassVar[str] = "pareto"
    complex_ok: ClassVar[bool] = False

    def __post_init__(self) -> None:
        if not (self.alpha > 0 and self.k > 0):
            raise ValueError("Pareto alpha and k must be positive")

    def _real(self, s) -> np.ndarray:
        arr = np.asarray(s)
        if np.iscomplexobj(arr):
            if np.any(arr.imag != 0):
                raise ValueError("the Pareto transform is only available for real arguments")
            arr = arr.real
        return arr.astype(float)

    def quadrature_transform(self, s, rtol: float = 1.0e-10):
        """``E exp(-sP)`` as ``int_0^1 exp(-s k v^(-1/alpha)) dv`` (``P = k V^(-1/alpha)``)."""

        z = self.k * self._real(s)
        flat = np.atleast_1d(z).reshape(-1)
        exponent = -1.0 / self.alpha

        def integrand(v: np.ndarray) -> np.ndarray:
            return np.exp(-np.multiply.outer(v**exponent, flat))

        values = integrate(integrand, 0.0, 1.0, rtol=rtol, atol=1.0e-300)
        return values.reshape(np.shape(z)) if np.ndim(z) else float(values[0])

    def transform(self, s):
        return self.quadrature_transform(s)

    def log_transform(self, s):
        if self.alpha < 1:
            return np.log1p(-self.complement(s))
        return np.log(self.transform(s))

    def complement(self, s):
        z = self.k * self._real(s)
        if self.alpha < 1:
            # 1 - E e^{-zV^{-1/alpha}} = -expm1(-z) + z^alpha Gamma(1-alpha) Q(1-alpha, z)
            a = 1.0 - self.alpha
            return -np.expm1(-z) + z**self.alpha * special.gamma(a) * special.gammaincc(a, z)
        return 1.0 - self.quadrature_transform(s)

    @property
    def complement_order(self) -> float:
        return min(1.0, self.alpha)

    def moment(self, i: int) -> float:
        if i >= self.alpha:
            return math.inf
        return self.alpha * self.k**i / (self.alpha - i)

    def sample(self, rng: np.random.Generator, size=None):
        return self.k * (rng.pareto(self.alpha, size) + 1.0)


Marginal = Union[MarkDistribution, Sequence[MarkDistribution]]


@dataclass(frozen=True)
class RainfallModel:
    """Compound-Poisson rainfall: storm rate (1/s), spatial mode and depth law(s)."""

    rate: float
    marginal: Marginal
    spatial: str = "uniform"

    def __post_init__(self) -> None:
        if not self.rate > 0:
            raise ValueError(f"storm rate must be positive, got {self.rate}")
        if self.spatial not in SPATIAL_MODES:
            raise ValueError(f"spatial mode must be one of {SPATIAL_MODES}, got {self.spatial!r}")
        if not isinstance(self.marginal, MarkDistribution):
            marginals = tuple(self.marginal)
            if self.spatial == "uniform":
                raise ValueError("uniform rainfall takes a single depth distribution")
            if not marginals or not all(isinstance(m, MarkDistribution) for m in marginals):
                raise ValueError("per-edge marginals must be depth distributions")
            object.__setattr__(self, "marginal", marginals)

    @property
    def is_uniform(self) -> bool:
        return self.spatial == "uniform"

    def marginal_for(self, e: int) -> MarkDistribution:
        if isinstance(self.marginal, MarkDistribution):
            return self.marginal
        return self.marginal[e]

    def marginals(self, n: int) -> list[MarkDistribution]:
        self.check_network_size(n)
        return [self.marginal_for(e) for e in range(n)]

    def check_network_size(self, n: int) -> None:
        if not isinstance(self.marginal, MarkDistribution) and len(self.marginal) != n:
            raise ValueError(f"rainfall has {len(self.marginal)} per-edge marginals, network has {n} edges")

    def mean_depths(self, n: int) -> np.ndarray:
        return np.array([m.moment(1) for m in self.marginals(n)], dtype=float)

    def complement_order(self, n: int) -> float:
        return min(m.complement_order for m in self.marginals(n))

    @property
    def supports_complex(self) -> bool:
        return all(m.complex_ok for m in self._distinct())

    def families(self) -> set[str]:
        return {m.family for m in self._distinct()}

    def _distinct(self) -> list[MarkDistribution]:
        if isinstance(self.marginal, MarkDistribution):
            return [self.marginal]
        return list(self.marginal)


def mark_transform(dist: MarkDistribution, s):
    """``E exp(-sP)``; ``Re(s) >= 0`` required, real ``s`` for Pareto."""

    arr = np.asarray(s)
    if np.any(np.real(arr) < 0):
        raise ValueError("mark transform requires Re(s) >= 0")
    if np.iscomplexobj(arr) and not dist.complex_ok and np.any(np.imag(arr) != 0):
        raise ValueError(f"{dist.family} transform is only defined for real s")
    return dist.transform(arr if arr.ndim else arr.item())


def mark_moment(dist: MarkDistribution, i: int) -> float:
    if int(i) != i or i < 1:
        raise ValueError(f"moment order must be a positive integer, got {i}")
    return dist.moment(int(i))


def check_invariance_condition(net: RiverNetwork, params: HydraulicParams, model: RainfallModel) -> bool:
    """Whether ``E log(1 + |Y|)`` is finite for the jump ``Y = H(a∘P)`` (max norm).

    Every built-in family has a finite logarithmic moment; a custom family
    reports it through ``log_moment_finite``.
    """

    params.check_network(net)
    model.check_network_size(net.n)
    ok = all(m.log_moment_finite for m in model.marginals(net.n))
    if not ok:
        logger.warning("Invariance condition fails", extra={"families": sorted(model.families())})
    return ok


def require_invariance(net: RiverNetwork, params: HydraulicParams, model: RainfallModel) -> None:
    if not check_invariance_condition(net, params, model):
        raise InvarianceConditionError("rainfall jumps have no finite logarithmic moment")


def sample_storm(model: RainfallModel, net: RiverNetwork, rng: np.random.Generator) -> np.ndarray:
    if model.is_uniform:
        return np.full(net.n, float(model.marginal_for(0).sample(rng)))
    return np.array([float(m.sample(rng)) for m in model.marginals(net.n)])


def sample_depths(
    model: RainfallModel, net: RiverNetwork, n_storms: int, streams: StormStreams
) -> np.ndarray:
    """Depths for ``n_storms`` storms, shape ``(n_storms, n)``.

    Uniform rain draws from the shared marks stream; independent rain
    draws each edge from its own stream.
    """

    if model.is_uniform:
        column = np.asarray(model.marginal_for(0).sample(streams.marks(), n_storms), dtype=float)
        return np.repeat(column[:, None], net.n, axis=1)
    depths = np.empty((n_storms, net.n))
    for e, dist in enumerate(model.marginals(net.n)):
        depths[:, e] = dist.sample(streams.marks(e), n_storms)
    return depths


def _positive(values: dict, key: str) -> float:
    raw = values.get(key)
    if raw is None or str(raw).strip() == "":
        raise RainConfigError(f"missing rainfall key {key!r}")
    try:
        number = float(raw)
    except ValueError as exc:
        raise RainConfigError(f"rainfall key {key!r} is not a number: {raw!r}") from exc
    if not number > 0:
        raise RainConfigError(f"rainfall key {key!r} must be positive, got {number}")
    return number


def parse_marginal(values: dict) -> MarkDistribution:
    family = (values.get("marginal") or "").strip().lower()
    if family == "exp":
        return Exponential(mean_depth=mm_to_m(_positive(values, "mean_mm")))
    if family == "pareto":
        return Pareto(alpha=_positive(values, "alpha"), k=mm_to_m(_positive(values, "k_mm")))
    if family == "gamma":
        return Gamma(shape=_positive(values, "shape"), scale=mm_to_m(_positive(values, "scale_mm")))
    if family == "det":
        return Deterministic(depth=mm_to_m(_positive(values, "depth_mm")))
    raise RainConfigError(f"unknown marginal {family!r}; expected exp, pareto, gamma or det")


def parse_rain_config(text: str) -> RainfallModel:
    """Parse a ``key=value`` rainfall block (``#`` comments allowed)."""

    values = {k.strip(): (v or "").strip() for k, v in dotenv_values(stream=StringIO(text)).items()}
    known = {"lambda_per_hour", "spatial", "marginal", "mean_mm", "alpha", "k_mm", "shape", "scale_mm", "depth_mm"}
    unknown = sorted(set(values) - known)
    if unknown:
        raise RainConfigError(f"unknown rainfall keys: {', '.join(unknown)}")
    spatial = (values.get("spatial") or "uniform").lower()
    if spatial not in SPATIAL_MODES:
        raise RainConfigError(f"spatial must be uniform or independent, got {spatial!r}")
    model = RainfallModel(
        rate=per_hour_to_per_second(_positive(values, "lambda_per_hour")),
        marginal=parse_marginal(values),
        spatial=spatial,
    )
    logger.debug("Parsed rainfall block", extra={"spatial": spatial, "marginal": model.marginal_for(0).family})
    return model


__all__ = [
    "Deterministic",
    "Exponential",
    "Gamma",
    "InvarianceConditionError",
    "MarkDistribution",
    "Pareto",
    "RainConfigError",
    "RainfallModel",
    "check_invariance_condition",
    "mark_moment",
    "mark_transform",
    "parse_marginal",
    "parse_rain_config",
    "require_invariance",
    "sample_depths",
    "sample_storm",
]
