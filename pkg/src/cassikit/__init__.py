"""cassikit: snapshot spectral imaging simulation and reconstruction.

Submodules load lazily so entry points can pin BLAS thread counts before
numpy comes in (single-threaded runs are what make results bit-reproducible).
"""

import importlib

__version__ = "0.1.0"

_SUBMODULES = ("autodiff", "cassi", "fidelity", "denoiser", "fusion",
               "unfold", "synthetic", "training", "metrics", "hsio",
               "summary", "kernels", "cli", "ablation")


def __getattr__(name):
    if name in _SUBMODULES:
        return importlib.import_module(f".{name}", __name__)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


def __dir__():
    return sorted(list(globals()) + list(_SUBMODULES))
