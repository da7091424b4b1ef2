"""Benchmark problems: the thermal fin and the building floor."""
import numpy as np

from ..errors import InvalidArgumentError

from .building import BenchmarkInfo, build_building, interest_misfit, load_geometry
from .fin import build_thermal_fin


def lower_bound_objective_check(fom, samples: int = 20, seed: int = 0, threshold: float = 0.0) -> dict:
    """Sample the objective; ``ok`` is False if any value is <= threshold."""
    rng = np.random.default_rng(seed)
    values = np.array([fom.objective(mu) for mu in fom.space.sample(rng, samples)])
    return {"min": float(values.min()), "max": float(values.max()), "ok": bool(values.min() > threshold)}


def build_problem(problem: str, resolution=None, seed: int = 0):
    if problem == "fin":
        return build_thermal_fin(4 if resolution is None else resolution, seed=seed)
    if problem == "building":
        return build_building((20, 10) if resolution is None else tuple(resolution))
    raise InvalidArgumentError(f"unknown problem {problem!r}")


__all__ = ["BenchmarkInfo", "build_building", "build_thermal_fin", "build_problem",
           "interest_misfit", "load_geometry", "lower_bound_objective_check"]
