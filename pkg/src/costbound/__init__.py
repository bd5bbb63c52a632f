"""Safety-constrained reinforcement learning from pixels.

A latent world model with reward and cost heads supplies compact state
estimates to a maximum-entropy actor-critic; a dedicated safety critic
and an adaptive Lagrange multiplier keep the policy's episode cost return
under a configured budget. Everything runs on a self-contained float64
reverse-mode autodiff substrate.
"""

__version__ = "0.1.0"

from .agent import Actor, Critic, LagrangeState, TemperatureState
from .autodiff import Tensor, backward, no_grad
from .config import TrainConfig, load_config, save_config
from .distributions import DiagGaussian, bernoulli_log_prob, gaussian_log_prob, kl_diag_gaussians
from .envs import ActionRepeat, HazardWorld, HazardWorldConfig, TabularChainEnv
from .latent import LatentModel, LatentModelConfig
from .optim import Adam, clip_grad_norm, ema_update
from .oracle import TabularCMDP, finite_diff_grad, mc_return, value_iteration
from .replay import ReplayBuffer, SequenceBatch
from .trainer import Trainer, build_env, normalized_metrics

__all__ = [
    "Actor",
    "ActionRepeat",
    "Adam",
    "Critic",
    "DiagGaussian",
    "HazardWorld",
    "HazardWorldConfig",
    "LagrangeState",
    "LatentModel",
    "LatentModelConfig",
    "ReplayBuffer",
    "SequenceBatch",
    "TabularCMDP",
    "TabularChainEnv",
    "TemperatureState",
    "Tensor",
    "TrainConfig",
    "Trainer",
    "backward",
    "bernoulli_log_prob",
    "build_env",
    "clip_grad_norm",
    "ema_update",
    "finite_diff_grad",
    "gaussian_log_prob",
    "kl_diag_gaussians",
    "load_config",
    "mc_return",
    "no_grad",
    "normalized_metrics",
    "save_config",
    "value_iteration",
]
