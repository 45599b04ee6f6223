"""Small worked-example datasets shared by tests and the CLI."""
from __future__ import annotations

import numpy as np

from .data import CATEGORICAL, Dataset

_WEATHER_ROWS = [
    ("sunny", "hot", "high", "weak", "N"),
    ("sunny", "hot", "high", "strong", "N"),
    ("overcast", "hot", "high", "weak", "P"),
    ("rain", "mild", "high", "weak", "P"),
    ("rain", "cool", "normal", "weak", "P"),
    ("rain", "cool", "normal", "strong", "N"),
    ("overcast", "cool", "normal", "strong", "P"),
    ("sunny", "mild", "high", "weak", "N"),
    ("sunny", "cool", "normal", "weak", "P"),
    ("rain", "mild", "normal", "weak", "P"),
    ("sunny", "mild", "normal", "strong", "P"),
    ("overcast", "mild", "high", "strong", "P"),
    ("overcast", "hot", "normal", "weak", "P"),
    ("rain", "mild", "high", "strong", "N"),
]
WEATHER_COLUMNS = ["Outlook", "Temperature", "Humidity", "Wind", "Class"]


def weather() -> Dataset:
    """The 14-day play-tennis table (class N/P)."""
    cols = list(zip(*_WEATHER_ROWS))
    return Dataset.from_arrays(
        {name: list(col) for name, col in zip(WEATHER_COLUMNS, cols)},
        label="Class",
        kinds={c: CATEGORICAL for c in WEATHER_COLUMNS},
    )



# Three-layer fault-diagnosis network: input -> hidden weights v, hidden ->
# output weights w, threshold rows T1 (input), T2 (hidden), T3 (output).
FAULT_V = np.array([[-1.0, -0.5, 0.5], [1.0, 0.0, -0.5], [0.5, -0.5, 0.5]])
FAULT_W = np.array([[-1.0, -0.5, 0.5], [1.0, 0.0, 0.5], [0.5, -0.5, 0.5]])
FAULT_T = np.array([[0.0, 0.0, 0.0], [0.5, 0.0, -0.5], [0.0, 0.5, -0.5]])
# inlet temperature 300/1000, pressure 100/1000, flow 200/1000
FAULT_INPUT = np.array([0.3, 0.1, 0.2])
FAULT_TARGET = np.array([1.0, 0.0, 0.0])


def fault_network(threshold_rule: str = "descent"):
    from .nn.mlp import ThresholdNetwork

    return ThresholdNetwork(FAULT_V, FAULT_W, FAULT_T, threshold_rule=threshold_rule)
