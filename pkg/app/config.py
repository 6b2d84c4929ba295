from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Optional

from yaml import YAMLError, safe_load
from dotenv import load_dotenv


ROOT = Path(__file__).resolve().parent.parent
EXPERIMENT_PROFILE = os.getenv("EXPERIMENT_PROFILE", "").strip().lower()
_profiled_config = ROOT / "config" / f"experiment_{EXPERIMENT_PROFILE}.yml"
DEFAULT_CONFIG_PATH = (
    _profiled_config if EXPERIMENT_PROFILE and _profiled_config.exists() else ROOT / "config" / "experiment.yml"
)
INVERSION_METHODS = ("zakian", "talbot")

load_dotenv()


def _env_bool(name: str, default: bool) -> bool:
    raw = os.getenv(name)
    if raw is None:
        return default
    return raw.strip().lower() in {"1", "true", "yes", "on"}


def _env_int(name: str) -> Optional[int]:
    raw = os.getenv(name)
    if raw is None or not raw.strip():
        return None
    try:
        return int(raw.strip())
    except ValueError as exc:
        raise RuntimeError(f"{name} must be an integer, got {raw!r}") from exc


@dataclass(slots=True)
class QuadratureSettings:
    rtol: float = 1.0e-10
    epsilon: float = 1.0e-14
    order: int = 32

    def as_kwargs(self) -> dict[str, Any]:
        return {"rtol": self.rtol, "epsilon": self.epsilon, "order": self.order}


@dataclass(slots=True)
class InversionSettings:
    method: str = "talbot"
    talbot_degree: int = 32
    gate_tolerance: float = 1.0e-4


@dataclass(slots=True)
class ExperimentConfig:
    """Everything a CLI run needs; every path is resolved against ``ROOT`` when relative."""

    network_path: Optional[Path]
    rain_path: Optional[Path]
    seed: int
    out_dir: Path
    log_dir: Path
    debug_log_json: bool
    edges: list[str]
    quadrature: QuadratureSettings
    inversion: InversionSettings
    horizon_hours: float
    sample_step_hours: float
    replicates: int
    density_points: int
    density_x_max_factor: float
    density_mass_tolerance: float
    density_mean_tolerance: float
    moments_n_max: int
    hydrograph_t_max_hours: float
    hydrograph_points: int
    eps_k: tuple[float, float]
    eps_h: tuple[float, float]
    heterogeneity_x_max: float
    workers: int
    profile: str = ""
    sources: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.inversion.method not in INVERSION_METHODS:
            raise RuntimeError(
                f"inversion.method must be one of {INVERSION_METHODS}, got {self.inversion.method!r}"
            )
        positive = (
            "horizon_hours",
            "sample_step_hours",
            "density_x_max_factor",
            "density_mass_tolerance",
            "density_mean_tolerance",
            "hydrograph_t_max_hours",
        )
        for name in positive:
            if not getattr(self, name) > 0:
                raise RuntimeError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("density_points", "hydrograph_points", "moments_n_max", "replicates", "workers"):
            if getattr(self, name) < 1:
                raise RuntimeError(f"{name} must be at least 1, got {getattr(self, name)}")
        for name in ("eps_k", "eps_h"):
            low, high = getattr(self, name)
            if not 0 < low <= high:
                raise RuntimeError(f"{name} must satisfy 0 < low <= high, got {(low, high)}")


DEFAULTS: dict[str, Any] = {
    "network": None,
    "rain": None,
    "seed": 0,
    "out_dir": "out",
    "log_dir": "logs",
    "edges": [],
    "workers": 4,
    "quadrature": {"rtol": 1.0e-10, "epsilon": 1.0e-14, "order": 32},
    "inversion": {"method": "talbot", "talbot_degree": 32, "gate_tolerance": 1.0e-4},
    "simulate": {"horizon_hours": 4800.0, "sample_step_hours": 1.0, "replicates": 1},
    "density": {"points": 401, "x_max_factor": 10.0, "mass_tolerance": 0.01, "mean_tolerance": 0.02},
    "moments": {"n_max": 10},
    "hydrograph": {"t_max_hours": 2000.0, "points": 200},
    "heterogeneity": {"eps_k": [0.5, 1.5], "eps_h": [0.5, 1.5], "x_max": 5.0},
}


def _load_yaml(path: Path) -> dict[str, Any]:
    try:
        loaded = safe_load(path.read_text(encoding="utf-8")) or {}
    except OSError as exc:
        raise RuntimeError(f"Unable to read configuration file {path}: {exc}") from exc
    except YAMLError as exc:
        raise RuntimeError(f"Invalid YAML in {path}: {exc}") from exc
    if loaded and not isinstance(loaded, dict):
        raise RuntimeError(f"Invalid YAML in {path}: top-level document must be a mapping")
    return loaded


def load_yaml(path: Path) -> dict[str, Any]:
    return _load_yaml(Path(path))


def _merge(base: dict[str, Any], update: Mapping[str, Any]) -> dict[str, Any]:
    merged = dict(base)
    for key, value in update.items():
        if value is None:
            continue
        if isinstance(value, Mapping) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def _resolve(raw: Any) -> Optional[Path]:
    if raw in (None, ""):
        return None
    path = Path(str(raw)).expanduser()
    return path if path.is_absolute() else ROOT / path


def _pair(raw: Any, name: str) -> tuple[float, float]:
    try:
        low, high = (float(v) for v in raw)
    except (TypeError, ValueError) as exc:
        raise RuntimeError(f"{name} must be a [low, high] pair, got {raw!r}") from exc
    return low, high


def _apply_env(values: dict[str, Any]) -> dict[str, Any]:
    env: dict[str, Any] = {}
    seed = _env_int("STREAMFLOW_SEED")
    if seed is not None:
        env["seed"] = seed
    if os.getenv("STREAMFLOW_OUT"):
        env["out_dir"] = os.environ["STREAMFLOW_OUT"].strip()
    if os.getenv("STREAMFLOW_LOG_DIR"):
        env["log_dir"] = os.environ["STREAMFLOW_LOG_DIR"].strip()
    return _merge(values, env)


def _build_config(values: dict[str, Any], sources: list[str]) -> ExperimentConfig:
    quadrature = values.get("quadrature") or {}
    inversion = values.get("inversion") or {}
    simulate = values.get("simulate") or {}
    density = values.get("density") or {}
    hydrograph = values.get("hydrograph") or {}
    heterogeneity = values.get("heterogeneity") or {}
    try:
        return ExperimentConfig(
            network_path=_resolve(values.get("network")),
            rain_path=_resolve(values.get("rain")),
            seed=int(values.get("seed", 0)),
            out_dir=_resolve(values.get("out_dir")) or ROOT / "out",
            log_dir=_resolve(values.get("log_dir")) or ROOT / "logs",
            debug_log_json=_env_bool("DEBUG_LOG_JSON", False),
            edges=[str(e) for e in values.get("edges") or []],
            quadrature=QuadratureSettings(
                rtol=float(quadrature["rtol"]),
                epsilon=float(quadrature["epsilon"]),
                order=int(quadrature["order"]),
            ),
            inversion=InversionSettings(
                method=str(inversion["method"]).strip().lower(),
                talbot_degree=int(inversion["talbot_degree"]),
                gate_tolerance=float(inversion["gate_tolerance"]),
            ),
            horizon_hours=float(simulate["horizon_hours"]),
            sample_step_hours=float(simulate["sample_step_hours"]),
            replicates=int(simulate["replicates"]),
            density_points=int(density["points"]),
            density_x_max_factor=float(density["x_max_factor"]),
            density_mass_tolerance=float(density["mass_tolerance"]),
            density_mean_tolerance=float(density["mean_tolerance"]),
            moments_n_max=int((values.get("moments") or {})["n_max"]),
            hydrograph_t_max_hours=float(hydrograph["t_max_hours"]),
            hydrograph_points=int(hydrograph["points"]),
            eps_k=_pair(heterogeneity["eps_k"], "heterogeneity.eps_k"),
            eps_h=_pair(heterogeneity["eps_h"], "heterogeneity.eps_h"),
            heterogeneity_x_max=float(heterogeneity["x_max"]),
            workers=int(values.get("workers", 1)),
            profile=EXPERIMENT_PROFILE,
            sources=sources,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise RuntimeError(f"Invalid experiment configuration: {exc}") from exc


def load_experiment_config(
    path: Optional[Path] = None,
    overrides: Optional[Mapping[str, Any]] = None,
    base_path: Optional[Path] = None,
) -> ExperimentConfig:
    """Defaults < base YAML < ``path`` < environment < ``overrides`` (flags)."""

    values = dict(DEFAULTS)
    sources = ["defaults"]
    base = base_path or DEFAULT_CONFIG_PATH
    if base.exists():
        values = _merge(values, _load_yaml(base))
        sources.append(str(base))
    if path is not None:
        values = _merge(values, _load_yaml(Path(path)))
        sources.append(str(path))
    values = _apply_env(values)
    if overrides:
        values = _merge(values, overrides)
        sources.append("flags")
    return _build_config(values, sources)


__all__ = [
    "DEFAULT_CONFIG_PATH",
    "ExperimentConfig",
    "InversionSettings",
    "QuadratureSettings",
    "ROOT",
    "load_experiment_config",
    "load_yaml",
]
