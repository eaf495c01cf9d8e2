"""Multi-agent trajectory prediction with motion patterns and social attention.

Thin wrapper over the C++ core. Configs use the same flat keys as the
``sprnn`` command-line tool (``sprnn train --help`` lists them).
"""

from ._core import (
    CheckpointError,
    Config,
    ConfigError,
    DataError,
    Model,
    ShapeError,
    TrainingError,
    __version__,
    ade,
    evaluate,
    fde,
    gradcheck,
    predict,
    synth_scenes,
    train,
)

ABLATIONS = ("vrnn", "pat", "pat_soc", "pat_soc_att")

__all__ = [
    "ABLATIONS",
    "CheckpointError",
    "Config",
    "ConfigError",
    "DataError",
    "Model",
    "ShapeError",
    "TrainingError",
    "__version__",
    "ade",
    "evaluate",
    "fde",
    "gradcheck",
    "predict",
    "synth_scenes",
    "train",
]
