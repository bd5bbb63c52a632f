import numpy as np
import pytest

from costbound.envs import (
    ActionRepeat,
    ChainEnvConfig,
    HazardWorld,
    HazardWorldConfig,
    StepResult,
    TabularChainEnv,
    write_ppm,
)
from costbound.oracle import TabularCMDP, mc_return, value_iteration


def make_env(**kw):
    return HazardWorld(HazardWorldConfig(**kw))


def test_reset_same_seed_identical_observation():
    env = make_env(seed=3)
    a = env.reset(seed=42)
    b = env.reset(seed=42)
    assert np.array_equal(a, b)


def test_observation_in_unit_range_and_quantized():
    env = make_env()
    obs = env.reset(seed=0)
    assert obs.shape == (3, 16, 16)
    assert obs.min() >= 0.0 and obs.max() <= 1.0
    assert np.array_equal(np.rint(obs * 255.0).astype(np.uint8).astype(np.float64) / 255.0, obs)


def test_different_seeds_give_different_layouts():
    env = make_env()
    differing = 0
    for k in range(100):
        a = env.reset(seed=2 * k)
        b = env.reset(seed=2 * k + 1)
        differing += int(not np.array_equal(a, b))
    assert differing >= 99


def test_cost_zero_far_from_hazards_and_one_inside():
    env = make_env()
    env.reset(seed=1)
    # spawn has clearance from every hazard, so a zero action is safe
    result = env.step(np.zeros(2))
    assert result.cost == 0.0
    env._pos = env._hazards[0].copy()  # place agent exactly on a hazard center
    result = env.step(np.zeros(2))
    assert result.cost == 1.0


def test_scripted_trajectory_counts_hazard_steps_exactly():
    env = make_env(hazard_count=1, episode_limit=10)
    env.reset(seed=5)
    env._hazards = [np.array([5.0, 5.0])]
    env._goal = np.array([9.5, 9.5])
    env._goal_dist = float(np.linalg.norm(env._pos - env._goal))
    env._pos = np.array([5.0, 5.0])
    total_cost = 0.0
    for _ in range(3):
        total_cost += env.step(np.zeros(2)).cost  # sit inside the hazard
    env._pos = np.array([1.0, 1.0])
    for _ in range(7):
        total_cost += env.step(np.zeros(2)).cost
    assert total_cost == 3.0


def test_reward_shaping_tracks_goal_distance():
    env = make_env()
    env.reset(seed=7)
    env._hazards = []
    env._goal = env._pos + np.array([3.0, 0.0])
    env._goal_dist = 3.0
    result = env.step(np.array([1.0, 0.0]))  # straight toward the goal
    assert np.isclose(result.reward, env.cfg.shaping_scale * env.cfg.agent_speed)


def test_goal_contact_pays_bonus_and_relocates():
    env = make_env()
    env.reset(seed=8)
    env._hazards = []
    env._goal = env._pos + np.array([env.cfg.goal_radius * 0.5, 0.0])
    env._goal_dist = float(np.linalg.norm(env._pos - env._goal))
    old_goal = env._goal.copy()
    result = env.step(np.zeros(2))
    assert result.reward >= env.cfg.goal_bonus
    assert not np.array_equal(env._goal, old_goal)


def test_episode_ends_exactly_at_cap_and_step_after_raises():
    env = make_env(episode_limit=4)
    env.reset(seed=9)
    for i in range(4):
        result = env.step(np.zeros(2))
        assert result.done == (i == 3)
    with pytest.raises(RuntimeError):
        env.step(np.zeros(2))


def test_determinism_seed_plus_actions():
    actions = np.random.default_rng(10).uniform(-1, 1, size=(20, 2))

    def run():
        env = make_env()
        env.reset(seed=11)
        out = []
        for a in actions:
            r = env.step(a)
            out.append((r.observation.copy(), r.reward, r.cost, r.done))
        return out

    for (o1, r1, c1, d1), (o2, r2, c2, d2) in zip(run(), run()):
        assert np.array_equal(o1, o2) and r1 == r2 and c1 == c2 and d1 == d2


def test_partial_observability_two_states_same_observation():
    env = make_env(hazard_count=1)
    env.reset(seed=12)
    # hazard far outside the view window: moving it does not change the view
    env._hazards = [np.array([0.5, 0.5])]
    env._pos = np.array([9.0, 9.0])
    obs_a = env._observe()
    env._hazards = [np.array([0.5, 1.5])]
    obs_b = env._observe()
    assert np.array_equal(obs_a, obs_b)
    assert not np.array_equal(env._hazards[0], np.array([0.5, 0.5]))


def test_state_round_trip():
    env = make_env()
    env.reset(seed=13)
    env.step(np.array([0.3, -0.2]))
    state = env.get_state()
    a = env.step(np.array([0.1, 0.9]))
    env.set_state(state)
    b = env.step(np.array([0.1, 0.9]))
    assert np.array_equal(a.observation, b.observation)
    assert a.reward == b.reward and a.cost == b.cost


# -- action repeat ---------------------------------------------------------------


class _ScriptedEnv:
    obs_shape = (1, 1, 1)
    action_dim = 1

    def __init__(self, rewards, costs):
        self.rewards = list(rewards)
        self.costs = list(costs)
        self.i = 0

    def reset(self, seed=None):
        self.i = 0
        return np.zeros((1, 1, 1))

    def step(self, action):
        r, c = self.rewards[self.i], self.costs[self.i]
        self.i += 1
        done = self.i >= len(self.rewards)
        return StepResult(np.full((1, 1, 1), float(self.i)), r, c, done)


def test_action_repeat_one_is_identity():
    env = _ScriptedEnv([0.5, 0.7], [1.0, 0.0])
    wrapped = ActionRepeat(env, 1)
    wrapped.reset()
    r = wrapped.step(np.zeros(1))
    assert r.reward == 0.5 and r.cost == 1.0 and not r.done


def test_action_repeat_sums_rewards_and_costs():
    env = _ScriptedEnv([0.1, 0.2, 0.0, 0.0], [1.0, 1.0, 0.0, 0.0])
    wrapped = ActionRepeat(env, 2)
    wrapped.reset()
    r = wrapped.step(np.zeros(1))
    assert np.isclose(r.reward, 0.3)
    assert r.cost == 2.0
    assert wrapped.base_steps_taken == 2


def test_action_repeat_stops_early_at_done():
    env = _ScriptedEnv([1.0, 2.0, 4.0], [0.0, 0.0, 0.0])
    wrapped = ActionRepeat(env, 5)
    wrapped.reset()
    r = wrapped.step(np.zeros(1))
    assert r.done
    assert np.isclose(r.reward, 7.0)
    assert wrapped.base_steps_taken == 3


def test_wrapper_preserves_episode_cost_accounting():
    env = make_env(episode_limit=20)
    wrapped = ActionRepeat(env, 2)
    rng = np.random.default_rng(14)

    base = make_env(episode_limit=20)
    base.reset(seed=15)
    wrapped.reset(seed=15)
    actions = rng.uniform(-1, 1, size=(10, 2))
    base_cost = 0.0
    for a in actions:
        base_cost += base.step(a).cost
        base_cost += base.step(a).cost
    wrapped_cost = sum(wrapped.step(a).cost for a in actions)
    assert base_cost == wrapped_cost


# -- tabular chain env ---------------------------------------------------------------


def two_state_chain(gamma_c=0.995):
    # state 1 is absorbing and hazardous under action "stay" (0)
    transitions = np.zeros((2, 2, 2))
    transitions[0, 0, 0] = 1.0  # stay in safe state
    transitions[0, 1, 1] = 1.0  # move to hazard
    transitions[1, 0, 1] = 1.0  # stay in hazard
    transitions[1, 1, 0] = 1.0  # escape
    rewards = np.zeros((2, 2))
    costs = np.array([[0.0, 0.0], [1.0, 1.0]])
    return TabularCMDP(transitions, rewards, costs, gamma=0.99, cost_gamma=gamma_c)


def test_chain_discounted_cost_matches_geometric_series():
    m = two_state_chain()
    stay = np.array([[1.0, 0.0], [1.0, 0.0]])
    q = value_iteration(m, stay, signal="cost")
    assert np.isclose(q[1, 0], 1.0 / (1.0 - 0.995), atol=1e-6)


def test_chain_env_deterministic_rollout_matches_tables():
    m = two_state_chain()
    env = TabularChainEnv(ChainEnvConfig(m, episode_limit=5, seed=0))
    env.reset(seed=1)
    r = env.step(1)  # move into hazard
    assert r.cost == 0.0  # cost is charged for the state-action pair occupied
    r = env.step(0)  # stay in hazard
    assert r.cost == 1.0
    assert np.isclose(r.observation[0, 0, 0], 1.0)


def test_chain_env_empirical_returns_match_oracle():
    m = two_state_chain(gamma_c=0.9)
    env = TabularChainEnv(ChainEnvConfig(m, episode_limit=200, seed=0))
    policy_table = np.array([[0.7, 0.3], [0.5, 0.5]])
    q = value_iteration(m, policy_table, signal="cost")
    v0 = float(policy_table[0] @ q[0])

    rng = np.random.default_rng(16)

    def policy(obs):
        s = int(round(obs[0, 0, 0] * (m.num_states - 1)))
        return int(rng.choice(m.num_actions, p=policy_table[s]))

    mean, se = mc_return(env, policy, episodes=4000, discount=0.9, signal="cost", seed=17)
    assert abs(mean - v0) <= 3 * se + 1e-6


def test_chain_env_rejects_out_of_range_action():
    env = TabularChainEnv(ChainEnvConfig(two_state_chain(), episode_limit=3))
    env.reset(seed=0)
    with pytest.raises(ValueError):
        env.step(5)


def test_write_ppm_formats(tmp_path):
    img = (np.arange(3 * 4 * 4).reshape(3, 4, 4) % 256).astype(np.uint8)
    p6 = tmp_path / "img.ppm"
    write_ppm(p6, img)
    data = p6.read_bytes()
    assert data.startswith(b"P6\n4 4\n255\n")
    assert len(data) == len(b"P6\n4 4\n255\n") + 3 * 16
    p5 = tmp_path / "img.pgm"
    write_ppm(p5, img[0])
    assert p5.read_bytes().startswith(b"P5\n4 4\n255\n")
