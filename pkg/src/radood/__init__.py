"""Radar out-of-distribution detection on complex Doppler profiles.

Submodules:
  clx        complex-linear-algebra helpers shared across the package
  rng        derived Philox streams for reproducible, order-free sampling
  sigmodel   synthetic scene generator (clutter laws, targets, CIQ1 files)
  cvnn       complex-valued autodiff, layers, Adam, checkpoints
  cvae       the complex-valued variational autoencoder and its trainer
  scores     detection scores, empirical nulls, threshold calibration
  classical  SCM/Tyler covariance estimates and the ANMF baseline
  bench      Monte-Carlo Pd/Pfa benchmark harness and report files
  cli        command-line front end (generate/train/calibrate/evaluate/compare)

Submodules are imported on first attribute access so that the CLI can pin
BLAS thread counts before numpy loads.
"""

from importlib import import_module

__version__ = "0.1.0"

_SUBMODULES = ("clx", "rng", "sigmodel", "cvnn", "cvae", "scores",
               "classical", "bench", "cli")

__all__ = list(_SUBMODULES) + ["__version__"]


def __getattr__(name):
    if name in _SUBMODULES:
        module = import_module(f".{name}", __name__)
        globals()[name] = module
        return module
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


def __dir__():
    return sorted(set(globals()) | set(_SUBMODULES))
