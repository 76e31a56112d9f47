"""Variational embeddings and latent-space search for architecture DAGs.

Submodules are imported lazily so that lightweight uses (and the command-line
entry point, which must configure BLAS threading first) do not pay for numpy
at package-import time.
"""

from __future__ import annotations

import importlib

__version__ = "0.1.0"

_SUBMODULES = (
    "autodiff",
    "cli",
    "metrics",
    "model",
    "nn",
    "rng",
    "search",
    "space",
    "train",
)

_ATTRIBUTES = {
    "ArchitectureDag": "space",
    "SearchSpace": "space",
    "VaeModel": "model",
    "TrainConfig": "train",
    "OracleConfig": "search",
    "GpConfig": "search",
}

__all__ = list(_SUBMODULES) + list(_ATTRIBUTES) + ["__version__"]


def __getattr__(name: str):
    if name in _SUBMODULES:
        module = importlib.import_module(f".{name}", __name__)
        globals()[name] = module
        return module
    if name in _ATTRIBUTES:
        module = importlib.import_module(f".{_ATTRIBUTES[name]}", __name__)
        value = getattr(module, name)
        globals()[name] = value
        return value
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


def __dir__() -> list[str]:
    return sorted(set(globals()) | set(__all__))
