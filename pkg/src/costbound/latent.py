"""Sequential latent variable model with reward and cost prediction.

The latent state is a pair (z1, z2). z1 is small and stochastic with a
learned prior; z2 is larger and evolves through a transition network that
is shared between the generative and inference paths:

    generative                     inference
    z1_1  ~ N(0, I)                z1_1  ~ q(z1_1 | x_1)
    z2_1  ~ p(z2_1 | z1_1)         z2_1  ~ p(z2_1 | z1_1)            (shared)
    z1_t+1 ~ p(z1_t+1 | z2_t, a_t) z1_t+1 ~ q(z1_t+1 | x_t+1, z2_t, a_t)
    z2_t+1 ~ p(z2_t+1 | z1_t+1, z2_t, a_t)                           (shared)

Observations decode from (z1, z2) as a Gaussian with fixed std; rewards
from (z_t, a_t, z_t+1) as a unit-std Gaussian; costs from the same inputs
as a Bernoulli logit over "any violation this step".

Because the z2 factors are identical on both paths, the KL between the
inference and generative distributions over (z1, z2) reduces exactly to
the KL between the z1 factors; the training objective computes it that
way (full derivation in the README).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .distributions import DiagGaussian, bernoulli_log_prob, gaussian_log_prob, kl_diag_gaussians
from .nn import MLP, ConvDecoder, ConvEncoder, GaussianHead, MLPDecoder, MLPEncoder


class NonFiniteLossError(RuntimeError):
    """Raised when a training objective produces NaN or Inf."""


@dataclass
class LatentModelConfig:
    obs_shape: tuple
    action_dim: int
    z1_dim: int = 32
    z2_dim: int = 200
    feature_dim: int = 64
    hidden_dim: int = 256
    conv_channels: tuple = (16, 32)
    recon_std: float = 0.4
    encoder: str = "auto"  # auto | conv | mlp

    def encoder_kind(self) -> str:
        if self.encoder != "auto":
            return self.encoder
        return "conv" if len(self.obs_shape) == 3 else "mlp"


@dataclass
class InferredLatents:
    """Per-timestep latents and the distributions the KL term pairs up."""

    z1: list            # L+1 tensors [B, z1_dim]
    z2: list            # L+1 tensors [B, z2_dim]
    posteriors: list    # L+1 DiagGaussians over z1
    priors: list        # L+1 DiagGaussians over z1 (index 0: standard normal)

    def full_state(self, t: int) -> Tensor:
        return ad.concat([self.z1[t], self.z2[t]], axis=1)


@dataclass
class GeneratedRollout:
    z1: list
    z2: list
    obs_dists: list      # DiagGaussian per step, fixed std
    reward_dists: list   # DiagGaussian per step, unit std
    cost_logits: list    # Tensor per step


def posterior_noise(rng: np.random.Generator, batch: int, steps: int, cfg: "LatentModelConfig"):
    """Standard-normal driving noise for ``steps`` latent samples."""
    return (
        rng.standard_normal((batch, steps, cfg.z1_dim)),
        rng.standard_normal((batch, steps, cfg.z2_dim)),
    )


class LatentModel:
    def __init__(self, cfg: LatentModelConfig, rng: np.random.Generator):
        self.cfg = cfg
        z1, z2, feat, hid = cfg.z1_dim, cfg.z2_dim, cfg.feature_dim, cfg.hidden_dim
        act = cfg.action_dim
        state = z1 + z2
        hidden = (hid, hid)
        if cfg.encoder_kind() == "conv":
            self.encoder = ConvEncoder(cfg.obs_shape, cfg.conv_channels, feat, rng)
            self.decoder = ConvDecoder(state, cfg.obs_shape, cfg.conv_channels, rng)
        else:
            self.encoder = MLPEncoder(cfg.obs_shape, hidden, feat, rng)
            self.decoder = MLPDecoder(state, cfg.obs_shape, hidden, rng)
        self.post_init = GaussianHead(feat, hidden, z1, rng)
        self.post_step = GaussianHead(feat + z2 + act, hidden, z1, rng)
        self.prior_step = GaussianHead(z2 + act, hidden, z1, rng)
        self.z2_init = GaussianHead(z1, hidden, z2, rng)
        self.z2_step = GaussianHead(z1 + z2 + act, hidden, z2, rng)
        self.reward_head = MLP(2 * state + act, hidden, 1, rng)
        self.cost_head = MLP(2 * state + act, hidden, 1, rng)
        self._components = [
            ("encoder", self.encoder),
            ("decoder", self.decoder),
            ("post_init", self.post_init),
            ("post_step", self.post_step),
            ("prior_step", self.prior_step),
            ("z2_init", self.z2_init),
            ("z2_step", self.z2_step),
            ("reward_head", self.reward_head),
            ("cost_head", self.cost_head),
        ]
        self._log_recon_std = math.log(cfg.recon_std)

    def parameters(self):
        return [p for _, c in self._components for p in c.parameters()]

    # -- inference -------------------------------------------------------------

    def encode_sequence(self, observations: np.ndarray) -> list:
        """Encode [B, T, *obs] into a list of T feature tensors [B, F]."""
        b, t = observations.shape[:2]
        flat = np.ascontiguousarray(observations.transpose(1, 0, *range(2, observations.ndim)))
        feats = self.encoder(Tensor(flat.reshape(t * b, *self.cfg.obs_shape)))
        return [feats[i * b : (i + 1) * b] for i in range(t)]

    def infer_posterior(self, observations: np.ndarray, actions: np.ndarray, noise) -> InferredLatents:
        """Filter the posterior latents through a [B, L+1] observation window.

        ``noise`` is a pair of standard-normal arrays [B, L+1, z1] and
        [B, L+1, z2]; zero noise gives the distribution-mean path. All
        samples are reparameterized, so gradients flow into every head.
        """
        b, steps = observations.shape[:2]
        l = steps - 1
        if actions.shape[:2] != (b, l):
            raise ValueError(f"actions shape {actions.shape} incompatible with {observations.shape}")
        eps1, eps2 = noise
        if eps1.shape != (b, steps, self.cfg.z1_dim) or eps2.shape != (b, steps, self.cfg.z2_dim):
            raise ValueError("noise shapes do not match the window")
        feats = self.encode_sequence(observations)
        zeros = Tensor(np.zeros((b, self.cfg.z1_dim)))
        q0 = self.post_init(feats[0])
        z1_t = q0.rsample(eps1[:, 0])
        z2_t = self.z2_init(z1_t).rsample(eps2[:, 0])
        z1s, z2s = [z1_t], [z2_t]
        posteriors, priors = [q0], [DiagGaussian(zeros, zeros)]
        for t in range(1, steps):
            a = Tensor(actions[:, t - 1])
            prev_z2 = z2s[-1]
            q_t = self.post_step(ad.concat([feats[t], prev_z2, a], axis=1))
            p_t = self.prior_step(ad.concat([prev_z2, a], axis=1))
            z1_t = q_t.rsample(eps1[:, t])
            z2_t = self.z2_step(ad.concat([z1_t, prev_z2, a], axis=1)).rsample(eps2[:, t])
            z1s.append(z1_t)
            z2s.append(z2_t)
            posteriors.append(q_t)
            priors.append(p_t)
        if not np.all(np.isfinite(z1s[-1].data)) or not np.all(np.isfinite(z2s[-1].data)):
            raise NonFiniteLossError("latent inference produced non-finite values")
        return InferredLatents(z1s, z2s, posteriors, priors)

    # -- generation --------------------------------------------------------------

    def generate_rollout(self, z1_0: Tensor, z2_0: Tensor, actions: np.ndarray, noise) -> GeneratedRollout:
        """Advance the generative transitions for H action steps from (z1_0, z2_0)."""
        b, horizon = actions.shape[:2]
        if horizon < 1:
            raise ValueError("rollout horizon must be >= 1")
        eps1, eps2 = noise
        z1s, z2s = [z1_0], [z2_0]
        reward_dists, cost_logits = [], []
        for t in range(horizon):
            a = Tensor(actions[:, t])
            prev_z1, prev_z2 = z1s[-1], z2s[-1]
            p1 = self.prior_step(ad.concat([prev_z2, a], axis=1))
            z1_t = p1.rsample(eps1[:, t])
            z2_t = self.z2_step(ad.concat([z1_t, prev_z2, a], axis=1)).rsample(eps2[:, t])
            pair = ad.concat([prev_z1, prev_z2, a, z1_t, z2_t], axis=1)
            r_mean = self.reward_head(pair)
            reward_dists.append(DiagGaussian(r_mean, Tensor(np.zeros_like(r_mean.data))))
            cost_logits.append(self.cost_head(pair))
            z1s.append(z1_t)
            z2s.append(z2_t)
        states = ad.concat([ad.concat([z1s[t + 1], z2s[t + 1]], axis=1) for t in range(horizon)], axis=0)
        dec_mean = self.decoder(states)
        obs_dists = []
        for t in range(horizon):
            mean_t = dec_mean[t * b : (t + 1) * b]
            obs_dists.append(DiagGaussian(mean_t, Tensor(np.full(mean_t.shape, self._log_recon_std))))
        return GeneratedRollout(z1s, z2s, obs_dists, reward_dists, cost_logits)

    # -- training objective ---------------------------------------------------------

    def model_loss(self, batch, noise):
        """Negative evidence bound: reconstruction, reward and cost likelihoods
        plus the posterior/prior KL over z1, summed over the window and
        averaged over the batch. Returns (loss, term dict).
        """
        obs, actions = batch.observations, batch.actions
        b, steps = obs.shape[:2]
        l = steps - 1
        inf = self.infer_posterior(obs, actions, noise)

        # observation reconstruction over all L+1 frames (time-major)
        states = ad.concat([inf.full_state(t) for t in range(steps)], axis=0)
        dec_mean = self.decoder(states)
        flat_dim = int(np.prod(self.cfg.obs_shape))
        dec_flat = dec_mean.reshape(steps * b, flat_dim)
        target = np.ascontiguousarray(obs.transpose(1, 0, *range(2, obs.ndim))).reshape(steps * b, flat_dim)
        recon_dist = DiagGaussian(dec_flat, Tensor(np.full((steps * b, flat_dim), self._log_recon_std)))
        recon_nll = -gaussian_log_prob(recon_dist, target).sum() / b

        # reward and cost terms over the L transitions
        if l > 0:
            pairs = ad.concat(
                [
                    ad.concat([inf.full_state(t), Tensor(actions[:, t]), inf.full_state(t + 1)], axis=1)
                    for t in range(l)
                ],
                axis=0,
            )
            r_target = batch.rewards.T.reshape(l * b, 1)
            r_mean = self.reward_head(pairs)
            reward_nll = -gaussian_log_prob(
                DiagGaussian(r_mean, Tensor(np.zeros((l * b, 1)))), r_target
            ).sum() / b
            c_logit = self.cost_head(pairs)
            violation = (batch.costs.T.reshape(l * b, 1) > 0.0).astype(np.float64)
            cost_nll = -bernoulli_log_prob(c_logit, violation).sum() / b
        else:
            reward_nll = Tensor(0.0)
            cost_nll = Tensor(0.0)

        # KL over z1 at every sample point (z2 factors are shared and cancel)
        q_mean = ad.concat([d.mean for d in inf.posteriors], axis=0)
        q_ls = ad.concat([d.log_std for d in inf.posteriors], axis=0)
        p_mean = ad.concat([d.mean for d in inf.priors], axis=0)
        p_ls = ad.concat([d.log_std for d in inf.priors], axis=0)
        kl = kl_diag_gaussians(DiagGaussian(q_mean, q_ls), DiagGaussian(p_mean, p_ls)).sum() / b

        loss = recon_nll + reward_nll + cost_nll + kl
        if not np.isfinite(loss.data):
            raise NonFiniteLossError("model loss diverged (non-finite)")
        parts = {
            "recon_nll": recon_nll.item(),
            "reward_nll": reward_nll.item(),
            "cost_nll": cost_nll.item(),
            "kl": kl.item(),
        }
        return loss, parts

    # -- online filtering (action selection path) ------------------------------------

    def filter_init(self, obs: np.ndarray, eps1: np.ndarray, eps2: np.ndarray):
        """Latent state from the first observation of an episode (numpy in/out)."""
        with ad.no_grad():
            feat = self.encoder(Tensor(obs[None]))
            z1 = self.post_init(feat).rsample(eps1[None])
            z2 = self.z2_init(z1).rsample(eps2[None])
        return z1.data[0].copy(), z2.data[0].copy()

    def filter_step(self, state, action, obs, eps1, eps2):
        """Advance the filtered latent (z1, z2) with one executed action and
        the new observation; only z2 conditions the update."""
        _, z2 = state
        with ad.no_grad():
            feat = self.encoder(Tensor(obs[None]))
            a = Tensor(np.asarray(action, dtype=np.float64)[None])
            prev_z2 = Tensor(z2[None])
            q = self.post_step(ad.concat([feat, prev_z2, a], axis=1))
            new_z1 = q.rsample(eps1[None])
            new_z2 = self.z2_step(ad.concat([new_z1, prev_z2, a], axis=1)).rsample(eps2[None])
        return new_z1.data[0].copy(), new_z2.data[0].copy()
