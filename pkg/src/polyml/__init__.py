"""Machine learning methods for polymer process modelling.

Submodules: ``numeric``, ``data``, ``metrics``, ``linear``, ``svm``, ``trees``,
``ensemble``, ``clustering``, ``nn`` (autograd, MLP, recurrent, conv,
transformer), ``serialize``, ``pipeline`` and ``cli``.
"""
from .errors import (ConfigError, ConvergenceError, DataError, NotFittedError, PolymlError,
                     ShapeError, TrainingDivergedError, UndefinedMetricError)

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "ConvergenceError", "DataError", "NotFittedError", "PolymlError",
    "ShapeError", "TrainingDivergedError", "UndefinedMetricError", "__version__",
]
