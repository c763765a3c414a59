"""Monocular SLAM backend for unconstrained walking footage."""

from wildslam._core import (
    WildslamError,
    __version__,
    cli_main,
    estimate_focal,
    evaluate,
    run,
    simulate,
    world_names,
)

__all__ = [
    "WildslamError",
    "__version__",
    "cli_main",
    "estimate_focal",
    "evaluate",
    "run",
    "simulate",
    "world_names",
]
