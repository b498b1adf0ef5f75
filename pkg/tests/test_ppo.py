"""PPO trainer oracles: GAE recursions, buffer accounting, update mechanics."""

import math

import numpy as np
import pytest

from airsep import numerics as nm
from airsep.airspace import SectorParams
from airsep.config import training_config_from_dict
from airsep.featurize import featurize
from airsep.policy import PolicyConfig, forward, init_params
from airsep.ppo import (
    Adam,
    HyperParams,
    RolloutBuffer,
    ScenarioSpec,
    SectorEnv,
    Track,
    TrainConfig,
    clip_grad_norm,
    collect_rollouts,
    compute_gae,
    normalize_advantages,
    ppo_update,
    train,
)
from airsep.reward import RewardParams

SMOKE_NET = PolicyConfig(d_emb=16, d_ff=32, heads=4, layers=1)
HEAD_ON = ScenarioSpec(env_kind="headon")


def _track(rewards, values, dones, bootstrap=0.0):
    t = Track(env_index=0, episode=0, agent_id="A")
    t.rewards = list(rewards)
    t.values = list(values)
    t.dones = list(dones)
    t.observations = [None] * len(t.rewards)
    t.actions = [0] * len(t.rewards)
    t.log_probs = [0.0] * len(t.rewards)
    t.bootstrap_value = bootstrap
    return t


def _buffer(*tracks):
    buf = RolloutBuffer()
    buf.tracks = list(tracks)
    return buf


# ---------------------------------------------------------------------------
# GAE
# ---------------------------------------------------------------------------


def test_gae_hand_example():
    buf = _buffer(_track([1.0, 1.0], [0.5, 0.5], [0.0, 1.0]))
    adv, ret = compute_gae(buf, gamma=0.99, lam=0.95)
    assert abs(adv[1] - 0.5) < 1e-12
    assert abs(adv[0] - 1.46525) < 1e-12
    assert abs(ret[0] - (1.46525 + 0.5)) < 1e-12
    assert abs(ret[1] - 1.0) < 1e-12


def test_gae_lambda_zero_reduces_to_td_error():
    rng = np.random.default_rng(0)
    rewards = rng.standard_normal(30)
    values = rng.standard_normal(30)
    bootstrap = float(rng.standard_normal())
    dones = [0.0] * 29 + [0.0]
    buf = _buffer(_track(rewards, values, dones, bootstrap=bootstrap))
    gamma = 0.97
    adv, _ = compute_gae(buf, gamma=gamma, lam=0.0)
    next_values = np.append(values[1:], bootstrap)
    delta = rewards + gamma * next_values - values
    assert np.max(np.abs(adv - delta)) == 0.0


def test_gae_lambda_one_gamma_one_is_monte_carlo():
    rng = np.random.default_rng(1)
    rewards = rng.standard_normal(25)
    values = rng.standard_normal(25)
    dones = [0.0] * 24 + [1.0]  # terminal track
    buf = _buffer(_track(rewards, values, dones))
    adv, ret = compute_gae(buf, gamma=1.0, lam=1.0)
    rewards_to_go = np.cumsum(rewards[::-1])[::-1]
    assert np.max(np.abs(adv - (rewards_to_go - values))) < 1e-12
    assert np.max(np.abs(ret - rewards_to_go)) < 1e-12


def test_gae_rejects_mid_track_done():
    buf = _buffer(_track([1.0, 1.0, 1.0], [0.0, 0.0, 0.0], [0.0, 1.0, 0.0]))
    with pytest.raises(ValueError):
        compute_gae(buf, 0.99, 0.95)


def test_gae_multiple_tracks_flatten_in_order():
    t1 = _track([1.0], [0.2], [1.0])
    t2 = _track([2.0, 0.0], [0.1, 0.3], [0.0, 1.0])
    buf = _buffer(t1, t2)
    adv, ret = compute_gae(buf, 1.0, 1.0)
    assert adv.shape == (3,)
    assert abs(adv[0] - 0.8) < 1e-12       # track 1
    assert abs(ret[1] - 2.0) < 1e-12       # track 2 rewards-to-go


# ---------------------------------------------------------------------------
# rollout collection
# ---------------------------------------------------------------------------


def _make_envs(n_envs, seed, scenario=HEAD_ON):
    children = np.random.SeedSequence(seed).spawn(n_envs)
    return [SectorEnv(scenario, np.random.default_rng(ss), reward_params=RewardParams()) for ss in children]


def test_collect_accounting_every_active_agent_every_step():
    params = init_params(SMOKE_NET, np.random.default_rng(0))
    envs = _make_envs(2, 42)
    per_step_counts = []
    original_observe = SectorEnv.observe

    def counting_observe(self):
        obs = original_observe(self)
        per_step_counts.append(len(obs))
        return obs

    SectorEnv.observe = counting_observe
    try:
        buf = collect_rollouts(envs, params, horizon=80, rng=np.random.default_rng(7))
    finally:
        SectorEnv.observe = original_observe
    assert len(buf) == sum(per_step_counts)
    assert len(buf) == sum(len(t) for t in buf.tracks)


def test_collect_is_deterministic_and_bootstraps_open_tracks():
    def run():
        params = init_params(SMOKE_NET, np.random.default_rng(3))
        envs = _make_envs(2, 11)
        buf = collect_rollouts(envs, params, horizon=60, rng=np.random.default_rng(5))
        return params, envs, buf

    params_a, envs_a, buf_a = run()
    params_b, envs_b, buf_b = run()
    assert len(buf_a) == len(buf_b) > 0
    for ta, tb in zip(buf_a.tracks, buf_b.tracks):
        assert (ta.env_index, ta.episode, ta.agent_id) == (tb.env_index, tb.episode, tb.agent_id)
        assert ta.actions == tb.actions
        assert ta.log_probs == tb.log_probs
        assert ta.rewards == tb.rewards
        assert ta.values == tb.values
        assert ta.dones == tb.dones
        assert ta.bootstrap_value == tb.bootstrap_value
        for oa, ob in zip(ta.observations, tb.observations):
            assert np.array_equal(oa.ownship, ob.ownship)
            assert np.array_equal(oa.intruders, ob.intruders)

    # open (truncated) tracks carry the value of their final observation
    open_tracks = [t for t in buf_a.tracks if not t.dones[-1]]
    assert open_tracks
    for t in open_tracks:
        env = envs_a[t.env_index]
        assert env.episode == t.episode
        obs = featurize(env.world, t.agent_id)
        _, v = forward(obs, params_a)
        assert t.bootstrap_value == v
    # closed tracks are terminal with bootstrap 0
    for t in buf_a.tracks:
        if t.dones[-1]:
            assert t.bootstrap_value == 0.0


# ---------------------------------------------------------------------------
# update mechanics
# ---------------------------------------------------------------------------


def test_normalize_advantages_invariant():
    rng = np.random.default_rng(8)
    for _ in range(20):
        adv = rng.standard_normal(rng.integers(4, 200)) * rng.uniform(0.1, 30)
        out = normalize_advantages(adv)
        assert abs(out.mean()) < 1e-9
        assert abs(out.var() - 1.0) < 1e-6


def test_clip_arithmetic():
    ratio = nm.Tensor(1.5)
    adv = 2.0
    surrogate = nm.minimum(ratio * adv, nm.clip(ratio, 0.8, 1.2) * adv)
    assert float(surrogate.data) == 2.4


def test_clipped_surrogate_never_exceeds_unclipped():
    rng = np.random.default_rng(9)
    eps = 0.2
    for _ in range(300):
        r = float(rng.uniform(0.0, 3.0))
        a = float(rng.standard_normal() * 2)
        clipped = min(r * a, min(max(r, 1 - eps), 1 + eps) * a)
        assert clipped <= r * a + 1e-12


def test_clip_grad_norm():
    rng = np.random.default_rng(10)
    params = [nm.Tensor(rng.standard_normal((5, 5)), requires_grad=True) for _ in range(4)]
    for p in params:
        p.grad = rng.standard_normal((5, 5)) * 3
    pre = math.sqrt(sum(float((p.grad**2).sum()) for p in params))
    reported = clip_grad_norm(params, 0.5)
    post = math.sqrt(sum(float((p.grad**2).sum()) for p in params))
    assert abs(reported - pre) < 1e-12
    assert post <= 0.5 + 1e-9


def test_adam_single_step_matches_formula():
    p = nm.Tensor(np.array([1.0, -2.0]), requires_grad=True)
    p.grad = np.array([0.1, -0.2])
    opt = Adam([p], lr=1e-2)
    opt.step()
    m = 0.1 * np.array([0.1, -0.2])
    v = 0.001 * np.array([0.1, -0.2]) ** 2
    mhat = m / (1 - 0.9)
    vhat = v / (1 - 0.999)
    expected = np.array([1.0, -2.0]) - 1e-2 * mhat / (np.sqrt(vhat) + 1e-8)
    assert np.max(np.abs(p.data - expected)) < 1e-15


def _collected_buffer(params, seed=21, horizon=50):
    envs = _make_envs(2, seed)
    buf = collect_rollouts(envs, params, horizon=horizon, rng=np.random.default_rng(seed + 1))
    compute_gae(buf, 0.99, 0.95)
    return buf


def test_ppo_update_zero_lr_leaves_params_bit_identical():
    params = init_params(SMOKE_NET, np.random.default_rng(12))
    buf = _collected_buffer(params)
    before = {k: t.data.copy() for k, t in params.named_parameters().items()}
    hp = HyperParams(updates=1, n_envs=2, horizon=50, batch_size=32, epochs=2, learning_rate=0.0)
    stats = ppo_update(params, buf, hp, np.random.default_rng(0), Adam(params.tensors(), lr=0.0))
    for k, t in params.named_parameters().items():
        assert np.array_equal(before[k], t.data), k
    assert math.isfinite(stats.total_loss)
    assert 0.0 <= stats.mean_entropy <= math.log(3.0) + 1e-9


def test_ppo_update_requires_gae():
    params = init_params(SMOKE_NET, np.random.default_rng(13))
    envs = _make_envs(1, 3)
    buf = collect_rollouts(envs, params, horizon=10, rng=np.random.default_rng(0))
    hp = HyperParams(updates=1, n_envs=1, horizon=10, batch_size=8)
    with pytest.raises(ValueError):
        ppo_update(params, buf, hp, np.random.default_rng(0), Adam(params.tensors()))


def test_ppo_update_moves_params_and_reports_stats():
    params = init_params(SMOKE_NET, np.random.default_rng(14))
    buf = _collected_buffer(params, seed=31)
    before = {k: t.data.copy() for k, t in params.named_parameters().items()}
    hp = HyperParams(updates=1, n_envs=2, horizon=50, batch_size=32, epochs=2, learning_rate=3e-4)
    stats = ppo_update(params, buf, hp, np.random.default_rng(1), Adam(params.tensors(), lr=3e-4))
    moved = any(not np.array_equal(before[k], t.data) for k, t in params.named_parameters().items())
    assert moved
    assert stats.grad_norm >= 0.0
    assert 0.0 <= stats.clip_fraction <= 1.0
    assert stats.mean_lambda_return == pytest.approx(float(buf.lambda_returns.mean()))


def test_hyper_params_validation():
    with pytest.raises(ValueError):
        HyperParams(gamma=1.5)
    with pytest.raises(ValueError):
        HyperParams(clip_eps=0.0)
    with pytest.raises(ValueError):
        HyperParams(n_envs=0)


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------


def _tiny_config(seed=5, updates=2):
    return training_config_from_dict(
        {
            "seed": seed,
            "scenario": {"env": "headon"},
            "network": {"d_emb": 16, "d_ff": 32, "heads": 4, "layers": 1},
            "ppo": {"updates": updates, "n_envs": 2, "horizon": 24, "batch_size": 16, "epochs": 1},
            "checkpoint_every": 1,
        }
    )


def test_train_writes_stats_and_checkpoints(tmp_path):
    result = train(_tiny_config(), tmp_path / "run")
    lines = result.stats_path.read_text().splitlines()
    assert lines[0] == "update,mean_lambda_return,mean_entropy,policy_loss,value_loss,clip_fraction,grad_norm"
    assert len(lines) == 1 + 2
    # per-update checkpoints plus the final one
    assert len(result.checkpoint_paths) == 3
    for p in result.checkpoint_paths:
        assert p.exists()


def test_train_resume_from_checkpoint(tmp_path):
    result = train(_tiny_config(updates=1), tmp_path / "first")
    cfg = _tiny_config(updates=1)
    import dataclasses

    cfg = dataclasses.replace(cfg, init_checkpoint=str(result.checkpoint_paths[-1]))
    resumed = train(cfg, tmp_path / "second")
    assert resumed.stats_path.exists()

    bad = dataclasses.replace(
        cfg, network=PolicyConfig(d_emb=8, d_ff=16, heads=2, layers=1)
    )
    with pytest.raises(ValueError):
        train(bad, tmp_path / "third")


def test_scenario_spec_from_config_table_values():
    cfg = training_config_from_dict(
        {
            "seed": 1,
            "scenario": {"env": "training"},
            "ppo": {
                "updates": 200, "n_envs": 8, "horizon": 4096, "batch_size": 128,
                "epochs": 4, "gamma": 0.99, "gae_lambda": 0.95, "clip_eps": 0.2,
                "entropy_coef": 0.01, "vf_coef": 0.5, "max_grad_norm": 0.5,
                "advantage_normalization": True, "value_clipping": True,
            },
        }
    )
    hp = cfg.hyper
    assert (hp.updates, hp.n_envs, hp.horizon, hp.batch_size, hp.epochs) == (200, 8, 4096, 128, 4)
    assert (hp.gamma, hp.gae_lambda, hp.clip_eps) == (0.99, 0.95, 0.2)
    assert (hp.entropy_coef, hp.vf_coef, hp.max_grad_norm) == (0.01, 0.5, 0.5)
    assert hp.advantage_normalization and hp.value_clipping
