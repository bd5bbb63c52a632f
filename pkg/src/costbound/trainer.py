"""End-to-end training loop: warmup, interleaved collection and gradient
phases, periodic evaluation, metrics, and resumable checkpoints.

The schedule is: (1) fill the replay buffer with ``warmup_transitions``
wrapped steps of a truncated-Gaussian random policy; (2) train the latent
model alone for ``warmup_model_steps``; (3) alternate one wrapped
environment step (action from the actor on the online-filtered latent
state) with ``grad_steps_per_env_step`` gradient steps per base step.
Episode terminations during the main phase update the Lagrange
multiplier with that episode's undiscounted cost return; evaluation
episodes run on a separate environment instance with the deterministic
policy and the mean-path latent filter, and never touch learned state.

``env_step`` counts base environment steps everywhere (one agent decision
advances it by the action-repeat factor).
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .agent import (
    Actor,
    Critic,
    LagrangeState,
    TemperatureState,
    make_target,
    policy_loss,
    reward_critic_losses,
    safety_critic_loss,
)
from .autodiff import Tensor
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import TrainConfig
from .envs import ActionRepeat, HazardWorld, HazardWorldConfig, write_ppm
from .latent import LatentModel, LatentModelConfig, NonFiniteLossError, posterior_noise
from .optim import Adam, clip_grad_norm, ema_update
from .replay import ReplayBuffer, _rng_from_meta, _rng_state_to_meta

METRICS_HEADER = "step,reward_mean,cost_mean,lambda,alpha,model_loss,q1_loss,q2_loss,qc_loss,policy_loss"

_RNG_NAMES = ("warmup", "action", "filter", "model", "ac")


def build_env(cfg: TrainConfig, seed: int) -> ActionRepeat:
    base = HazardWorld(
        HazardWorldConfig(
            arena_size=cfg.arena_size,
            view_size=cfg.view_size,
            view_extent=cfg.view_extent,
            hazard_count=cfg.hazard_count,
            hazard_radius=cfg.hazard_radius,
            goal_radius=cfg.goal_radius,
            goal_bonus=cfg.goal_bonus,
            shaping_scale=cfg.shaping_scale,
            agent_speed=cfg.agent_speed,
            spawn_clearance=cfg.spawn_clearance,
            episode_limit=cfg.episode_limit * cfg.action_repeat,
            seed=seed,
        )
    )
    return ActionRepeat(base, cfg.action_repeat)


def truncated_normal(rng: np.random.Generator, std: float, size) -> np.ndarray:
    """Zero-mean Gaussian with std ``std`` truncated to [-1, 1], by rejection."""
    out = rng.standard_normal(size) * std
    while True:
        bad = np.abs(out) > 1.0
        if not bad.any():
            return out
        out[bad] = rng.standard_normal(int(bad.sum())) * std


def normalized_metrics(run_rows: np.ndarray, reference_rows: np.ndarray, window: int = 5) -> dict:
    """Reward/cost of a run divided by an unconstrained reference run.

    Both inputs are metrics tables [N, >=3] with columns (step, reward,
    cost, ...). Uses the mean of the last ``window`` evaluation rows of
    each table; raises on a zero reference divisor.
    """
    if run_rows.ndim != 2 or reference_rows.ndim != 2:
        raise ValueError("metrics tables must be 2-D")
    run_tail = run_rows[-min(window, len(run_rows)) :]
    ref_tail = reference_rows[-min(window, len(reference_rows)) :]
    ref_reward = float(ref_tail[:, 1].mean())
    ref_cost = float(ref_tail[:, 2].mean())
    if ref_reward == 0.0 or ref_cost == 0.0:
        raise ZeroDivisionError("reference run has zero mean reward or cost")
    return {
        "normalized_reward": float(run_tail[:, 1].mean()) / ref_reward,
        "normalized_cost": float(run_tail[:, 2].mean()) / ref_cost,
        "window": int(min(window, len(run_rows), len(reference_rows))),
    }


def load_metrics(path) -> np.ndarray:
    """Read a metrics CSV back as a float table (may be empty)."""
    rows = Path(path).read_text().strip().splitlines()
    if not rows or rows[0] != METRICS_HEADER:
        raise ValueError(f"{path} is not a metrics file")
    if len(rows) == 1:
        return np.empty((0, 10))
    return np.array([[float(v) for v in row.split(",")] for row in rows[1:]])


def _jsonable(value):
    if isinstance(value, np.ndarray):
        return {"__array__": value.tolist()}
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer, int)):
        return int(value)
    if isinstance(value, (np.floating, float)):
        return float(value)
    return value


def _from_jsonable(value):
    if isinstance(value, dict):
        if "__array__" in value and len(value) == 1:
            return np.array(value["__array__"], dtype=np.float64)
        return {k: _from_jsonable(v) for k, v in value.items()}
    return value


class Trainer:
    CHECKPOINT_STATE_VERSION = 1

    def __init__(self, cfg: TrainConfig, out_dir):
        cfg.validate()
        self.cfg = cfg
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)

        seq = np.random.SeedSequence(cfg.seed)
        children = seq.spawn(9)
        init_rng = np.random.default_rng(children[0])
        env_seed = int(children[1].generate_state(1)[0])
        self.rngs = {
            "warmup": np.random.default_rng(children[2]),
            "action": np.random.default_rng(children[3]),
            "filter": np.random.default_rng(children[4]),
            "model": np.random.default_rng(children[5]),
            "ac": np.random.default_rng(children[6]),
        }
        self.eval_seeds = [int(s) for s in children[7].generate_state(max(cfg.eval_episodes, 1))]

        self.env = build_env(cfg, env_seed)
        self.eval_env = build_env(cfg, env_seed)
        obs_shape = self.env.obs_shape
        self.action_dim = self.env.action_dim

        model_cfg = LatentModelConfig(
            obs_shape=obs_shape,
            action_dim=self.action_dim,
            z1_dim=cfg.z1_size,
            z2_dim=cfg.z2_size,
            feature_dim=cfg.feature_size,
            hidden_dim=cfg.model_hidden,
            conv_channels=cfg.conv_channels,
            recon_std=cfg.recon_std,
            encoder=cfg.encoder,
        )
        self.model = LatentModel(model_cfg, init_rng)
        state_dim = cfg.z1_size + cfg.z2_size
        hidden = (cfg.ac_hidden, cfg.ac_hidden)
        self.actor = Actor(state_dim, self.action_dim, hidden, init_rng)
        self.q1 = Critic(state_dim, self.action_dim, hidden, init_rng)
        self.q2 = Critic(state_dim, self.action_dim, hidden, init_rng)
        self.qc = Critic(state_dim, self.action_dim, hidden, init_rng)
        self.q1_target = make_target(self.q1)
        self.q2_target = make_target(self.q2)
        self.qc_target = make_target(self.qc)

        self.opt_model = Adam(self.model.parameters(), lr=cfg.model_lr)
        self.opt_actor = Adam(self.actor.parameters(), lr=cfg.ac_lr)
        self.opt_q1 = Adam(self.q1.parameters(), lr=cfg.ac_lr)
        self.opt_q2 = Adam(self.q2.parameters(), lr=cfg.ac_lr)
        self.opt_qc = Adam(self.qc.parameters(), lr=cfg.ac_lr)

        target_entropy = cfg.target_entropy
        if target_entropy is None:
            target_entropy = -float(self.action_dim)
        self.temperature = TemperatureState(cfg.init_alpha, target_entropy, lr=cfg.ac_lr)
        init_lambda = cfg.init_lambda if cfg.constrained else 0.0
        self.lagrange = LagrangeState(init_lambda, lr=cfg.lambda_lr, budget=cfg.cost_budget)

        obs_dtype = np.uint8 if getattr(self.env.env, "quantized_pixels", False) else np.float64
        self.buffer = ReplayBuffer(
            cfg.replay_capacity, obs_shape, self.action_dim,
            seed=int(children[8].generate_state(1)[0]), obs_dtype=obs_dtype,
        )

        self.phase = "warmup_collect"
        self.env_step = 0
        self.warmup_collected = 0
        self.warmup_model_done = 0
        self.grad_accum = 0.0
        self.ep_reward = 0.0
        self.ep_cost = 0.0
        self.eval_next = cfg.eval_interval
        self.ckpt_next = cfg.checkpoint_interval if cfg.checkpoint_interval else None
        self.metrics_rows: list[str] = []
        self._loss_sums = {"model": 0.0, "q1": 0.0, "q2": 0.0, "qc": 0.0, "policy": 0.0}
        self._loss_counts = {"model": 0, "ac": 0}
        self.z1 = None
        self.z2 = None
        self.obs = self.env.reset(seed=env_seed)

    # -- paths -------------------------------------------------------------------

    @property
    def metrics_path(self) -> Path:
        return self.out_dir / "metrics.csv"

    @property
    def final_checkpoint_path(self) -> Path:
        return self.out_dir / "final.ckpt"

    # -- main loop ----------------------------------------------------------------

    def run(self) -> Path:
        """Train to ``total_env_steps``; returns the final checkpoint path."""
        self._write_manifest()
        self._flush_metrics()
        cfg = self.cfg
        while True:
            if self.env_step >= cfg.total_env_steps:
                break
            if self.phase == "warmup_collect":
                if self.warmup_collected >= cfg.warmup_transitions:
                    self.phase = "warmup_model"
                    continue
                action = truncated_normal(self.rngs["warmup"], cfg.warmup_policy_std, self.action_dim)
                self._collect(action, warmup=True)
                self.warmup_collected += 1
                self._maybe_checkpoint()
            elif self.phase == "warmup_model":
                if self.warmup_model_done >= cfg.warmup_model_steps or not self._has_data():
                    self._enter_main_phase()
                    continue
                self._model_update()
                self.warmup_model_done += 1
            else:  # main
                action = self._policy_action()
                delta = self._collect(action, warmup=False)
                self.grad_accum += delta * cfg.grad_steps_per_env_step
                while self.grad_accum >= 1.0:
                    self.grad_accum -= 1.0
                    self._gradient_step()
                self._maybe_eval()
                self._maybe_checkpoint()
        self._flush_metrics()
        self.save(self.final_checkpoint_path)
        return self.final_checkpoint_path

    def _has_data(self) -> bool:
        return self.buffer.num_windows(self.cfg.sequence_length) > 0

    def _enter_main_phase(self):
        self.buffer.end_episode()
        self.ep_reward = 0.0
        self.ep_cost = 0.0
        self.obs = self.env.reset()
        self._filter_reset()
        # any eval points crossed during warmup are skipped, not replayed
        interval = self.cfg.eval_interval
        self.eval_next = ((self.env_step // interval) + 1) * interval
        self.phase = "main"

    # -- collection ------------------------------------------------------------------

    def _collect(self, action: np.ndarray, warmup: bool) -> int:
        before = self.env.base_steps_taken
        result = self.env.step(action)
        delta = self.env.base_steps_taken - before
        self.env_step += delta
        self.buffer.append(self.obs, action, result.reward, result.cost, result.done)
        self.ep_reward += result.reward
        self.ep_cost += result.cost
        if result.done:
            if not warmup and self.cfg.constrained:
                self.lagrange.update(self.ep_cost)
            self.ep_reward = 0.0
            self.ep_cost = 0.0
            self.obs = self.env.reset()
            if not warmup:
                self._filter_reset()
        else:
            if not warmup:
                self._filter_update(action, result.observation)
            self.obs = result.observation
        return delta

    def _filter_reset(self):
        cfg = self.model.cfg
        eps1 = self.rngs["filter"].standard_normal(cfg.z1_dim)
        eps2 = self.rngs["filter"].standard_normal(cfg.z2_dim)
        self.z1, self.z2 = self.model.filter_init(self.obs, eps1, eps2)

    def _filter_update(self, action: np.ndarray, new_obs: np.ndarray):
        cfg = self.model.cfg
        eps1 = self.rngs["filter"].standard_normal(cfg.z1_dim)
        eps2 = self.rngs["filter"].standard_normal(cfg.z2_dim)
        self.z1, self.z2 = self.model.filter_step((self.z1, self.z2), action, new_obs, eps1, eps2)

    def _policy_action(self) -> np.ndarray:
        state = np.concatenate([self.z1, self.z2])[None]
        noise = self.rngs["action"].standard_normal((1, self.action_dim))
        with ad.no_grad():
            action, _ = self.actor.sample(Tensor(state), noise)
        return action.data[0].copy()

    # -- gradient steps -----------------------------------------------------------------

    def _model_update(self) -> float:
        cfg = self.cfg
        batch = self.buffer.sample_sequences(cfg.model_batch, cfg.sequence_length)
        noise = posterior_noise(self.rngs["model"], cfg.model_batch, cfg.sequence_length + 1, self.model.cfg)
        self.opt_model.zero_grad()
        try:
            loss, _ = self.model.model_loss(batch, noise)
        except NonFiniteLossError:
            self._diagnostic_abort()
            raise
        ad.backward(loss)
        clip_grad_norm(self.model.parameters(), cfg.grad_clip)
        self.opt_model.step()
        value = loss.item()
        self._loss_sums["model"] += value
        self._loss_counts["model"] += 1
        return value

    def _gradient_step(self):
        if not self._has_data():
            return
        cfg = self.cfg
        length = cfg.sequence_length
        batch = self.buffer.sample_sequences(cfg.ac_batch, length)
        noise = posterior_noise(self.rngs["ac"], cfg.ac_batch, length + 1, self.model.cfg)
        with ad.no_grad():
            inf = self.model.infer_posterior(batch.observations, batch.actions, noise)
            z_tau = inf.full_state(length - 1).data.copy()
            z_next = inf.full_state(length).data.copy()
        a_tau = batch.actions[:, length - 1]
        r_tau = batch.rewards[:, length - 1]
        c_tau = batch.costs[:, length - 1]
        alpha = self.temperature.alpha
        lam = self.lagrange.lam
        draw = lambda: self.rngs["ac"].standard_normal((cfg.ac_batch, self.action_dim))

        l1, l2 = reward_critic_losses(
            self.q1, self.q2, self.q1_target, self.q2_target, self.actor,
            alpha, z_tau, a_tau, r_tau, z_next, cfg.gamma, draw(),
        )
        self.opt_q1.zero_grad()
        self.opt_q2.zero_grad()
        ad.backward(l1)
        ad.backward(l2)
        clip_grad_norm(self.q1.parameters(), cfg.grad_clip)
        clip_grad_norm(self.q2.parameters(), cfg.grad_clip)
        self.opt_q1.step()
        self.opt_q2.step()

        self._model_update()

        pi_loss, logp = policy_loss(
            self.actor, self.q1, self.q2, self.qc, alpha, lam, z_next, draw()
        )
        self.opt_actor.zero_grad()
        ad.backward(pi_loss)
        clip_grad_norm(self.actor.parameters(), cfg.grad_clip)
        self.opt_actor.step()

        lc = safety_critic_loss(
            self.qc, self.qc_target, self.actor, z_tau, a_tau, c_tau, z_next,
            cfg.cost_gamma, draw(),
        )
        self.opt_qc.zero_grad()
        ad.backward(lc)
        clip_grad_norm(self.qc.parameters(), cfg.grad_clip)
        self.opt_qc.step()

        self.temperature.update(logp.data)

        nu = cfg.target_ema
        ema_update(self.q1_target.parameters(), self.q1.parameters(), nu)
        ema_update(self.q2_target.parameters(), self.q2.parameters(), nu)
        ema_update(self.qc_target.parameters(), self.qc.parameters(), nu)

        values = {"q1": l1.item(), "q2": l2.item(), "qc": lc.item(), "policy": pi_loss.item()}
        if not all(np.isfinite(v) for v in values.values()):
            self._diagnostic_abort()
            raise NonFiniteLossError(f"actor-critic losses diverged: {values}")
        for key, v in values.items():
            self._loss_sums[key] += v
        self._loss_counts["ac"] += 1

    def _diagnostic_abort(self):
        self.save(self.out_dir / "diagnostic.ckpt")

    # -- evaluation -------------------------------------------------------------------

    def evaluate(self, episodes: int | None = None, dump_frames: bool = False):
        """Mean undiscounted reward and cost returns of the deterministic
        policy over evaluation episodes; touches no learned or collected
        state."""
        episodes = self.cfg.eval_episodes if episodes is None else episodes
        cfg = self.model.cfg
        zero1 = np.zeros(cfg.z1_dim)
        zero2 = np.zeros(cfg.z2_dim)
        rewards = np.zeros(episodes)
        costs = np.zeros(episodes)
        frames_dir = self.out_dir / "frames"
        for ep in range(episodes):
            seed = self.eval_seeds[ep % len(self.eval_seeds)]
            obs = self.eval_env.reset(seed=seed)
            z = self.model.filter_init(obs, zero1, zero2)
            done = False
            frame = 0
            while not done:
                if dump_frames and ep == 0 and frame < 5:
                    frames_dir.mkdir(exist_ok=True)
                    img = np.rint(obs * 255.0).astype(np.uint8)
                    write_ppm(frames_dir / f"step{self.env_step}_f{frame}.ppm", img)
                state = np.concatenate([z[0], z[1]])[None]
                with ad.no_grad():
                    action = self.actor.mode(Tensor(state)).data[0]
                result = self.eval_env.step(action)
                rewards[ep] += result.reward
                costs[ep] += result.cost
                done = result.done
                if not done:
                    z = self.model.filter_step(z, action, result.observation, zero1, zero2)
                obs = result.observation
                frame += 1
        return float(rewards.mean()), float(costs.mean())

    def _maybe_eval(self):
        while self.env_step >= self.eval_next:
            reward_mean, cost_mean = self.evaluate(dump_frames=self.cfg.dump_frames)
            self._record_metrics(reward_mean, cost_mean)
            self.eval_next += self.cfg.eval_interval

    def _record_metrics(self, reward_mean: float, cost_mean: float):
        def mean_of(key, count_key):
            count = self._loss_counts[count_key]
            return self._loss_sums[key] / count if count else float("nan")

        values = [
            reward_mean,
            cost_mean,
            self.lagrange.lam,
            self.temperature.alpha,
            mean_of("model", "model"),
            mean_of("q1", "ac"),
            mean_of("q2", "ac"),
            mean_of("qc", "ac"),
            mean_of("policy", "ac"),
        ]
        row = ",".join([str(self.env_step)] + [repr(float(v)) for v in values])
        self.metrics_rows.append(row)
        self._loss_sums = {k: 0.0 for k in self._loss_sums}
        self._loss_counts = {k: 0 for k in self._loss_counts}
        self._flush_metrics()

    def _flush_metrics(self):
        text = "\n".join([METRICS_HEADER] + self.metrics_rows) + "\n"
        self.metrics_path.write_text(text)

    def _write_manifest(self):
        from . import __version__

        manifest = {
            "config": self.cfg.to_dict(),
            "seed": self.cfg.seed,
            "package_version": __version__,
            "metrics_header": METRICS_HEADER,
        }
        (self.out_dir / "run_manifest.json").write_text(
            json.dumps(manifest, sort_keys=True, indent=2) + "\n"
        )

    # -- checkpointing -----------------------------------------------------------------

    def _maybe_checkpoint(self):
        if self.ckpt_next is None:
            return
        if self.env_step >= self.ckpt_next:
            self.save(self.out_dir / f"step_{self.env_step}.ckpt")
            while self.ckpt_next <= self.env_step:
                self.ckpt_next += self.cfg.checkpoint_interval

    def _param_groups(self) -> dict:
        return {
            "model": self.model.parameters(),
            "actor": self.actor.parameters(),
            "q1": self.q1.parameters(),
            "q2": self.q2.parameters(),
            "qc": self.qc.parameters(),
            "q1_target": self.q1_target.parameters(),
            "q2_target": self.q2_target.parameters(),
            "qc_target": self.qc_target.parameters(),
        }

    def _optimizers(self) -> dict:
        return {
            "model": self.opt_model,
            "actor": self.opt_actor,
            "q1": self.opt_q1,
            "q2": self.opt_q2,
            "qc": self.opt_qc,
            "alpha": self.temperature.optimizer,
        }

    def save(self, path) -> Path:
        arrays = {}
        for group, params in self._param_groups().items():
            for i, p in enumerate(params):
                arrays[f"params/{group}/{i:03d}"] = p.data
        opt_steps = {}
        for name, opt in self._optimizers().items():
            opt_steps[name] = opt.step_count
            for i, arr in enumerate(opt.state_arrays()):
                arrays[f"opt/{name}/{i:03d}"] = arr
        arrays["log_alpha"] = self.temperature.log_alpha.data
        arrays["state/obs"] = self.obs
        has_filter = self.z1 is not None
        if has_filter:
            arrays["state/z1"] = self.z1
            arrays["state/z2"] = self.z2
        buffer_meta, buffer_arrays = self.buffer.state()
        for name, arr in buffer_arrays.items():
            arrays[f"buffer/{name}"] = arr
        meta = {
            "state_version": self.CHECKPOINT_STATE_VERSION,
            "config": self.cfg.to_dict(),
            "phase": self.phase,
            "env_step": self.env_step,
            "warmup_collected": self.warmup_collected,
            "warmup_model_done": self.warmup_model_done,
            "grad_accum": self.grad_accum,
            "ep_reward": self.ep_reward,
            "ep_cost": self.ep_cost,
            "eval_next": self.eval_next,
            "ckpt_next": self.ckpt_next,
            "lagrange_lam": self.lagrange.lam,
            "has_filter": has_filter,
            "metrics_rows": self.metrics_rows,
            "loss_sums": self._loss_sums,
            "loss_counts": self._loss_counts,
            "opt_steps": opt_steps,
            "rngs": {name: _rng_state_to_meta(rng) for name, rng in self.rngs.items()},
            "env_state": _jsonable(self.env.get_state()),
            "buffer_meta": buffer_meta,
        }
        save_checkpoint(path, meta, arrays)
        return Path(path)

    @classmethod
    def restore(cls, path, out_dir) -> "Trainer":
        meta, arrays = load_checkpoint(path)
        if meta.get("state_version") != cls.CHECKPOINT_STATE_VERSION:
            raise CheckpointError(f"unsupported trainer state version {meta.get('state_version')}")
        cfg = TrainConfig.from_dict(meta["config"])
        trainer = cls(cfg, out_dir)
        for group, params in trainer._param_groups().items():
            for i, p in enumerate(params):
                stored = arrays[f"params/{group}/{i:03d}"]
                if stored.shape != p.data.shape:
                    raise CheckpointError(
                        f"shape mismatch for {group}[{i}]: {stored.shape} vs {p.data.shape}"
                    )
                p.data = stored.astype(np.float64)
        for name, opt in trainer._optimizers().items():
            count = 2 * len(opt.params)
            opt.load_state_arrays(
                [arrays[f"opt/{name}/{i:03d}"] for i in range(count)], meta["opt_steps"][name]
            )
        trainer.temperature.log_alpha.data = arrays["log_alpha"].astype(np.float64)
        trainer.lagrange.lam = float(meta["lagrange_lam"])
        trainer.obs = arrays["state/obs"].astype(np.float64)
        if meta["has_filter"]:
            trainer.z1 = arrays["state/z1"].astype(np.float64)
            trainer.z2 = arrays["state/z2"].astype(np.float64)
        else:
            trainer.z1 = trainer.z2 = None
        trainer.buffer.load_state(
            meta["buffer_meta"], {k.split("/", 1)[1]: v for k, v in arrays.items() if k.startswith("buffer/")}
        )
        for name in _RNG_NAMES:
            trainer.rngs[name] = _rng_from_meta(meta["rngs"][name])
        trainer.env.set_state(_from_jsonable(meta["env_state"]))
        trainer.phase = meta["phase"]
        trainer.env_step = int(meta["env_step"])
        trainer.warmup_collected = int(meta["warmup_collected"])
        trainer.warmup_model_done = int(meta["warmup_model_done"])
        trainer.grad_accum = float(meta["grad_accum"])
        trainer.ep_reward = float(meta["ep_reward"])
        trainer.ep_cost = float(meta["ep_cost"])
        trainer.eval_next = int(meta["eval_next"])
        trainer.ckpt_next = None if meta["ckpt_next"] is None else int(meta["ckpt_next"])
        trainer.metrics_rows = list(meta["metrics_rows"])
        trainer._loss_sums = {k: float(v) for k, v in meta["loss_sums"].items()}
        trainer._loss_counts = {k: int(v) for k, v in meta["loss_counts"].items()}
        return trainer
