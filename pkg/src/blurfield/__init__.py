"""Per-pixel linear motion-blur estimation and removal for single images.

Submodules import lazily so the CLI can configure thread limits before the
numeric stack loads.
"""

import importlib

__version__ = "0.1.0"

_SUBMODULES = (
    "core", "formats", "predict", "extend", "fuse", "deconv",
    "synth", "metrics", "pipeline", "viz", "cli",
)


def __getattr__(name):
    if name in _SUBMODULES:
        return importlib.import_module(f".{name}", __name__)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


def __dir__():
    return sorted(list(globals()) + list(_SUBMODULES))
