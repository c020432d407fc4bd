"""Continual-learning benchmark for tabular classification streams."""

from malcl.data import LabeledDataset, SyntheticStreamConfig, build_stream, generate_synthetic_stream, load_tabular
from malcl.errors import ConfigurationError, FormatError, MalclError, NonFiniteLossError, SchemaError
from malcl.estimator import ContinualClassifier
from malcl.strategies import REGISTRY, strategy_dispatch

__version__ = "0.1.0"

__all__ = [
    "ContinualClassifier", "LabeledDataset", "SyntheticStreamConfig", "build_stream",
    "generate_synthetic_stream", "load_tabular", "ConfigurationError", "FormatError", "MalclError",
    "NonFiniteLossError", "SchemaError", "REGISTRY", "strategy_dispatch", "__version__",
]
