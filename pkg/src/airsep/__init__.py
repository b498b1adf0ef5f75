"""Speed-advisory separation assurance: simulation, policy, training, evaluation."""

__version__ = "0.1.0"

from . import airspace, config, featurize, harness, numerics, policy, ppo, reward

__all__ = [
    "airspace",
    "config",
    "featurize",
    "harness",
    "numerics",
    "policy",
    "ppo",
    "reward",
    "__version__",
]
