"""Episode-aware replay storage and contiguous sequence-window sampling.

Each stored record is (x_t, a_t, r_t, c_t, done_t): the observation at
which the action was taken and the aggregated signals of that step. A
sampled window of ``length`` transitions spans ``length + 1`` consecutive
records of one episode: observations come from all of them, actions,
rewards and costs from the first ``length``. Windows therefore never
cross an episode boundary, and the action at position t in a window is
the one executed between observations t and t+1.

Eviction drops whole oldest episodes once the transition count exceeds
capacity; the episode currently being written is never evicted.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class SequenceBatch:
    observations: np.ndarray  # [B, L+1, *obs_shape], float64
    actions: np.ndarray       # [B, L, action_dim]
    rewards: np.ndarray       # [B, L]
    costs: np.ndarray         # [B, L]
    dones: np.ndarray         # [B, L], bool

    @property
    def batch_size(self) -> int:
        return self.observations.shape[0]

    @property
    def length(self) -> int:
        return self.actions.shape[1]


class ReplayBuffer:
    def __init__(
        self,
        capacity: int,
        obs_shape,
        action_dim: int,
        seed: int = 0,
        obs_dtype=np.float64,
    ):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        if obs_dtype not in (np.float64, np.uint8):
            raise ValueError("obs_dtype must be float64 or uint8")
        self.capacity = int(capacity)
        self.obs_shape = tuple(obs_shape)
        self.action_dim = int(action_dim)
        self.obs_dtype = obs_dtype
        self._rng = np.random.default_rng(seed)
        self._episodes: list[dict] = []   # frozen, as arrays
        self._cur_obs: list[np.ndarray] = []
        self._cur_act: list[np.ndarray] = []
        self._cur_rew: list[float] = []
        self._cur_cost: list[float] = []
        self._cur_done: list[bool] = []

    # -- writing -------------------------------------------------------------

    def _encode_obs(self, obs: np.ndarray) -> np.ndarray:
        obs = np.asarray(obs)
        if obs.shape != self.obs_shape:
            raise ValueError(f"observation shape {obs.shape} != {self.obs_shape}")
        if self.obs_dtype == np.uint8:
            # valid only for observations quantized to multiples of 1/255
            return np.rint(obs * 255.0).astype(np.uint8)
        return np.array(obs, dtype=np.float64)

    def _decode_obs(self, stored: np.ndarray) -> np.ndarray:
        if self.obs_dtype == np.uint8:
            return stored.astype(np.float64) / 255.0
        return stored.astype(np.float64)

    def append(self, obs, action, reward: float, cost: float, done: bool):
        action = np.asarray(action, dtype=np.float64)
        if action.shape != (self.action_dim,):
            raise ValueError(f"action shape {action.shape} != ({self.action_dim},)")
        self._cur_obs.append(self._encode_obs(obs))
        self._cur_act.append(action.copy())
        self._cur_rew.append(float(reward))
        self._cur_cost.append(float(cost))
        self._cur_done.append(bool(done))
        if done:
            self._freeze_current()
        self._evict()

    def end_episode(self):
        """Close the in-progress episode without a terminal flag.

        Used at phase boundaries where collection restarts from a fresh
        reset; the stored transitions stay valid, later windows simply
        cannot span the cut.
        """
        if self._cur_obs:
            self._freeze_current()

    def _freeze_current(self):
        self._episodes.append(
            {
                "obs": np.stack(self._cur_obs),
                "act": np.stack(self._cur_act),
                "rew": np.array(self._cur_rew, dtype=np.float64),
                "cost": np.array(self._cur_cost, dtype=np.float64),
                "done": np.array(self._cur_done, dtype=bool),
            }
        )
        self._cur_obs, self._cur_act = [], []
        self._cur_rew, self._cur_cost, self._cur_done = [], [], []

    def _evict(self):
        while len(self) > self.capacity and self._episodes:
            self._episodes.pop(0)

    # -- sizes ---------------------------------------------------------------

    def __len__(self) -> int:
        return sum(ep["rew"].shape[0] for ep in self._episodes) + len(self._cur_rew)

    @property
    def num_episodes(self) -> int:
        return len(self._episodes) + (1 if self._cur_rew else 0)

    def _episode_views(self):
        eps = list(self._episodes)
        if self._cur_rew:
            eps.append(
                {
                    "obs": np.stack(self._cur_obs),
                    "act": np.stack(self._cur_act),
                    "rew": np.array(self._cur_rew, dtype=np.float64),
                    "cost": np.array(self._cur_cost, dtype=np.float64),
                    "done": np.array(self._cur_done, dtype=bool),
                }
            )
        return eps

    def num_windows(self, length: int) -> int:
        return sum(max(0, ep["rew"].shape[0] - length) for ep in self._episode_views())

    # -- sampling ------------------------------------------------------------

    def sample_sequences(self, batch_size: int, length: int) -> SequenceBatch:
        """Uniform over all valid (episode, start) window positions."""
        if length < 1:
            raise ValueError("length must be >= 1")
        eps = self._episode_views()
        counts = np.array([max(0, ep["rew"].shape[0] - length) for ep in eps], dtype=np.int64)
        total = int(counts.sum())
        if total == 0:
            raise ValueError(
                f"insufficient data: no episode holds {length + 1} or more transitions"
            )
        prefix = np.cumsum(counts)
        draws = self._rng.integers(0, total, size=batch_size)
        obs = np.empty((batch_size, length + 1, *self.obs_shape), dtype=np.float64)
        act = np.empty((batch_size, length, self.action_dim), dtype=np.float64)
        rew = np.empty((batch_size, length), dtype=np.float64)
        cost = np.empty((batch_size, length), dtype=np.float64)
        done = np.empty((batch_size, length), dtype=bool)
        for b, idx in enumerate(draws):
            ep_idx = int(np.searchsorted(prefix, idx, side="right"))
            start = int(idx - (prefix[ep_idx - 1] if ep_idx else 0))
            ep = eps[ep_idx]
            obs[b] = self._decode_obs(ep["obs"][start : start + length + 1])
            act[b] = ep["act"][start : start + length]
            rew[b] = ep["rew"][start : start + length]
            cost[b] = ep["cost"][start : start + length]
            done[b] = ep["done"][start : start + length]
        return SequenceBatch(obs, act, rew, cost, done)

    # -- serialization (documented layout, used by checkpoints) ----------------

    def state(self):
        """(meta, arrays): episode lengths + open flag, and flat record arrays."""
        eps = self._episode_views()
        lengths = [int(ep["rew"].shape[0]) for ep in eps]
        meta = {
            "lengths": lengths,
            "open": bool(self._cur_rew),
            "rng": _rng_state_to_meta(self._rng),
            "obs_dtype": "uint8" if self.obs_dtype == np.uint8 else "float64",
        }
        if eps:
            arrays = {
                "obs": np.concatenate([ep["obs"] for ep in eps]),
                "act": np.concatenate([ep["act"] for ep in eps]),
                "rew": np.concatenate([ep["rew"] for ep in eps]),
                "cost": np.concatenate([ep["cost"] for ep in eps]),
                "done": np.concatenate([ep["done"] for ep in eps]),
            }
        else:
            arrays = {
                "obs": np.empty((0, *self.obs_shape), dtype=self.obs_dtype),
                "act": np.empty((0, self.action_dim), dtype=np.float64),
                "rew": np.empty(0, dtype=np.float64),
                "cost": np.empty(0, dtype=np.float64),
                "done": np.empty(0, dtype=bool),
            }
        return meta, arrays

    def load_state(self, meta, arrays):
        dtype = np.uint8 if meta["obs_dtype"] == "uint8" else np.float64
        if dtype != self.obs_dtype:
            raise ValueError("buffer obs_dtype mismatch")
        self._episodes = []
        self._cur_obs, self._cur_act = [], []
        self._cur_rew, self._cur_cost, self._cur_done = [], [], []
        offset = 0
        lengths = list(meta["lengths"])
        for i, n in enumerate(lengths):
            sl = slice(offset, offset + n)
            offset += n
            is_open_tail = meta["open"] and i == len(lengths) - 1
            if is_open_tail:
                self._cur_obs = [a.copy() for a in arrays["obs"][sl]]
                self._cur_act = [a.copy() for a in arrays["act"][sl]]
                self._cur_rew = [float(v) for v in arrays["rew"][sl]]
                self._cur_cost = [float(v) for v in arrays["cost"][sl]]
                self._cur_done = [bool(v) for v in arrays["done"][sl]]
            else:
                self._episodes.append(
                    {
                        "obs": arrays["obs"][sl].astype(self.obs_dtype).copy(),
                        "act": arrays["act"][sl].astype(np.float64).copy(),
                        "rew": arrays["rew"][sl].astype(np.float64).copy(),
                        "cost": arrays["cost"][sl].astype(np.float64).copy(),
                        "done": arrays["done"][sl].astype(bool).copy(),
                    }
                )
        self._rng = _rng_from_meta(meta["rng"])


def _rng_state_to_meta(rng: np.random.Generator) -> dict:
    state = rng.bit_generator.state
    return {
        "bit_generator": state["bit_generator"],
        "state": {k: str(v) for k, v in state["state"].items()},
        "has_uint32": int(state["has_uint32"]),
        "uinteger": int(state["uinteger"]),
    }


def _rng_from_meta(meta: dict) -> np.random.Generator:
    rng = np.random.default_rng(0)
    if meta["bit_generator"] != rng.bit_generator.state["bit_generator"]:
        raise ValueError(f"unsupported bit generator {meta['bit_generator']}")
    rng.bit_generator.state = {
        "bit_generator": meta["bit_generator"],
        "state": {k: int(v) for k, v in meta["state"].items()},
        "has_uint32": int(meta["has_uint32"]),
        "uinteger": int(meta["uinteger"]),
    }
    return rng
