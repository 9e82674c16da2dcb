"""Gibbs sampling (coordinate hit-and-run) for log-smooth, strongly log-concave
targets, with exact conditional samplers, mixing-time bound calculators and
numerical checks of the underlying isoperimetric inequalities."""

__version__ = "0.1.0"

from .targets import (TargetDensity, make_gaussian, make_separable, make_target,  # noqa: E402
                      make_two_point_gaussian, make_perturbed_gaussian)
from .chain import ChainConfig, run, run_ensemble, step  # noqa: E402

__all__ = ["__version__", "TargetDensity", "make_gaussian", "make_separable", "make_target",
           "make_two_point_gaussian", "make_perturbed_gaussian", "ChainConfig", "run",
           "run_ensemble", "step"]
