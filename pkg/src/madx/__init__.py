"""Modular language, task, and invertible adapters on a small numpy transformer."""

from .adapters import AdapterConfig, AdapterStack, ConfigError, InvertibleAdapter
from .corpus import LanguageSpec, TaskSpec
from .registry import AdapterArtifact, Registry, count_parameters
from .training import TrainConfig
from .transformer import ModelConfig, TransformerEncoder

__all__ = ["AdapterArtifact", "AdapterConfig", "AdapterStack", "ConfigError", "InvertibleAdapter",
           "LanguageSpec", "ModelConfig", "Registry", "TaskSpec", "TrainConfig", "TransformerEncoder",
           "count_parameters"]
__version__ = "0.1.0"
