"""sigg: adversarial generation of synchronized discrete action
sequences for interacting agents, with sequence-adapted generative
evaluation metrics."""

__version__ = "0.1.0"

from .actionspace import ActionDictionary, Interaction, build_dictionary
from .discriminator import (ChunkPlan, Discriminator, DiscriminatorConfig,
                            plan_chunks)
from .generator import Generator, GeneratorConfig
from .metrics import (EntropyReport, GaussianStats, InceptionModel,
                      conditional_entropy, entropy_report, frechet_distance,
                      inception_train, marginal_entropy, sfid)
from .synthdata import SynthConfig, simulate
from .training import TrainConfig, Trainer, d_loss, g_loss

__all__ = [
    "__version__", "ActionDictionary", "Interaction", "build_dictionary",
    "ChunkPlan", "Discriminator", "DiscriminatorConfig", "plan_chunks",
    "Generator", "GeneratorConfig", "EntropyReport", "GaussianStats",
    "InceptionModel", "conditional_entropy", "entropy_report",
    "frechet_distance", "inception_train", "marginal_entropy", "sfid",
    "SynthConfig", "simulate", "TrainConfig", "Trainer", "d_loss", "g_loss",
]
