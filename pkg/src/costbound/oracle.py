"""Independent verification utilities: finite differences, tabular policy
evaluation, and Monte-Carlo return estimation.

Nothing here touches the autodiff substrate or the learned critics; these
are the reference implementations the rest of the package is checked
against, so they must stay structurally separate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def finite_diff_grad(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function at ``x``.

    ``f`` must accept an array shaped like ``x`` and return a float.
    Raises if any evaluation is non-finite.
    """
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        xp = x.copy()
        xm = x.copy()
        xp[idx] += h
        xm[idx] -= h
        fp = float(f(xp))
        fm = float(f(xm))
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise FloatingPointError(f"non-finite evaluation at index {idx}")
        grad[idx] = (fp - fm) / (2.0 * h)
    return grad


def grad_rel_error(computed: np.ndarray, reference: np.ndarray) -> float:
    """L2 relative error between a gradient and its reference."""
    computed = np.asarray(computed, dtype=np.float64).ravel()
    reference = np.asarray(reference, dtype=np.float64).ravel()
    denom = max(np.linalg.norm(reference), 1e-12)
    return float(np.linalg.norm(computed - reference) / denom)


@dataclass
class TabularCMDP:
    """Finite MDP with separate reward and cost tables.

    transitions: [S, A, S] row-stochastic, rewards/costs: [S, A].
    """

    transitions: np.ndarray
    rewards: np.ndarray
    costs: np.ndarray
    gamma: float = 0.99
    cost_gamma: float = 0.995
    initial_state: int = 0

    def __post_init__(self):
        self.transitions = np.asarray(self.transitions, dtype=np.float64)
        self.rewards = np.asarray(self.rewards, dtype=np.float64)
        self.costs = np.asarray(self.costs, dtype=np.float64)
        if self.transitions.ndim != 3 or self.transitions.shape[0] != self.transitions.shape[2]:
            raise ValueError(f"transitions must be [S, A, S], got {self.transitions.shape}")
        s, a, _ = self.transitions.shape
        if self.rewards.shape != (s, a) or self.costs.shape != (s, a):
            raise ValueError("reward/cost tables must be [S, A]")
        row_sums = self.transitions.sum(axis=2)
        if not np.all(np.abs(row_sums - 1.0) <= 1e-12):
            raise ValueError("transition rows must sum to 1 within 1e-12")
        if np.any(self.costs < 0.0):
            raise ValueError("costs must be nonnegative")

    @property
    def num_states(self) -> int:
        return self.transitions.shape[0]

    @property
    def num_actions(self) -> int:
        return self.transitions.shape[1]


def value_iteration(
    m: TabularCMDP,
    policy: np.ndarray,
    signal: str = "cost",
    tol: float = 1e-10,
    max_iters: int = 2_000_000,
) -> np.ndarray:
    """Q-table of the given stochastic policy, evaluated to ``tol``.

    Iterates Q <- table + gamma * P (sum_a' policy(a'|s') Q(s', a')) until the
    sup-norm change drops below ``tol``. Returns Q of shape [S, A].
    """
    policy = np.asarray(policy, dtype=np.float64)
    if policy.shape != (m.num_states, m.num_actions):
        raise ValueError("policy table must be [S, A]")
    if not np.all(np.abs(policy.sum(axis=1) - 1.0) <= 1e-9) or np.any(policy < 0.0):
        raise ValueError("policy rows must be stochastic")
    if signal == "cost":
        table, discount = m.costs, m.cost_gamma
    elif signal == "reward":
        table, discount = m.rewards, m.gamma
    else:
        raise ValueError(f"unknown signal {signal!r}")
    q = np.zeros_like(table)
    for _ in range(max_iters):
        v = (policy * q).sum(axis=1)  # [S]
        q_next = table + discount * m.transitions @ v
        delta = np.max(np.abs(q_next - q))
        q = q_next
        if delta < tol:
            return q
    raise RuntimeError(f"policy evaluation did not reach tol={tol} in {max_iters} iterations")


def mc_return(
    env,
    policy,
    episodes: int,
    discount: float = 1.0,
    signal: str = "reward",
    seed: int | None = None,
    max_steps: int | None = None,
):
    """Empirical mean (and standard error) of episode returns under ``policy``.

    ``policy`` is a callable mapping an observation to an action. With
    discount=1 this is the plain undiscounted return. Episodes reset with
    seeds derived from ``seed`` when one is given.
    """
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    seeds = None
    if seed is not None:
        seeds = np.random.SeedSequence(seed).generate_state(episodes)
    returns = np.zeros(episodes)
    for ep in range(episodes):
        obs = env.reset(seed=None if seeds is None else int(seeds[ep]))
        total = 0.0
        weight = 1.0
        steps = 0
        while True:
            result = env.step(policy(obs))
            value = result.reward if signal == "reward" else result.cost
            total += weight * value
            weight *= discount
            steps += 1
            obs = result.observation
            if result.done or (max_steps is not None and steps >= max_steps):
                break
        returns[ep] = total
    mean = float(returns.mean())
    if episodes == 1:
        return mean, 0.0
    stderr = float(returns.std(ddof=1) / np.sqrt(episodes))
    return mean, stderr
