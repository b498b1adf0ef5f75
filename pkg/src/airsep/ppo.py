"""Clipped-surrogate PPO with GAE over parallel sector environments.

One parameter set serves every agent in every environment. Each environment
contributes a fixed-length stream of steps per update; every active agent
contributes one transition per step, and removals terminate an agent's track
(bootstrap 0) while horizon truncation bootstraps the value of the last
observation. Transitions from all agents and envs are pooled, shuffled and
optimized in minibatches.
"""

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import airspace, numerics as nm, policy as policy_mod
from .airspace import EnvKind, SectorParams, make_world
from .featurize import featurize
from .policy import PolicyConfig, forward_tensors, init_params
from .reward import RewardParams, compute_reward

STATS_HEADER = (
    "update",
    "mean_lambda_return",
    "mean_entropy",
    "policy_loss",
    "value_loss",
    "clip_fraction",
    "grad_norm",
)


@dataclass(frozen=True)
class HyperParams:
    updates: int = 200
    n_envs: int = 8
    horizon: int = 4096
    batch_size: int = 128
    epochs: int = 4
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_eps: float = 0.2
    entropy_coef: float = 0.01
    vf_coef: float = 0.5
    max_grad_norm: float = 0.5
    learning_rate: float = 3e-4
    advantage_normalization: bool = True
    value_clipping: bool = True

    def __post_init__(self):
        if not (0.0 <= self.gamma <= 1.0 and 0.0 <= self.gae_lambda <= 1.0):
            raise ValueError("gamma and gae_lambda must lie in [0, 1]")
        if self.clip_eps <= 0.0:
            raise ValueError("clip_eps must be positive")
        if min(self.updates, self.n_envs, self.horizon, self.batch_size, self.epochs) < 1:
            raise ValueError("counts must be >= 1")


@dataclass(frozen=True)
class ScenarioSpec:
    """Which scenario the environments run, and under what sector parameters."""

    env_kind: EnvKind = EnvKind.TRAINING
    sector: SectorParams = field(default_factory=SectorParams)
    n_aircraft: int | None = None


@dataclass(frozen=True)
class TrainConfig:
    seed: int = 0
    hyper: HyperParams = field(default_factory=HyperParams)
    network: PolicyConfig = field(default_factory=PolicyConfig)
    reward: RewardParams = field(default_factory=RewardParams)
    scenario: ScenarioSpec = field(default_factory=ScenarioSpec)
    checkpoint_every: int = 50
    init_checkpoint: str | None = None


@dataclass
class TrainStats:
    update: int
    mean_lambda_return: float
    mean_entropy: float
    policy_loss: float
    value_loss: float
    total_loss: float
    clip_fraction: float
    grad_norm: float

    def csv_row(self):
        return [
            self.update,
            repr(self.mean_lambda_return),
            repr(self.mean_entropy),
            repr(self.policy_loss),
            repr(self.value_loss),
            repr(self.clip_fraction),
            repr(self.grad_norm),
        ]


# ---------------------------------------------------------------------------
# environment wrapper
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EnvStep:
    rewards: dict
    dones: dict
    events: tuple
    removals: tuple


class SectorEnv:
    """One independent world stream that regenerates a fresh scenario per episode."""

    def __init__(self, scenario, rng, reward_params=None):
        self.scenario = scenario
        self.rng = rng
        self.reward_params = reward_params or RewardParams()
        self.episode = -1
        self.world = None
        self.regenerate()

    def regenerate(self):
        self.episode += 1
        self.world = make_world(
            self.scenario.env_kind,
            self.rng,
            sector=self.scenario.sector,
            n_aircraft=self.scenario.n_aircraft,
        )

    def observe(self):
        """Egocentric observations of all active aircraft, id-sorted."""
        return {
            aid: featurize(self.world, aid)
            for aid in sorted(self.world.active_ids())
        }

    def step(self, actions):
        result = airspace.step(self.world, actions)
        rewards = {
            aid: compute_reward(
                result.post_move, aid, result.events, self.reward_params, self.world.sector
            )
            for aid in actions
        }
        removed = {r.aircraft.aircraft_id for r in result.removals}
        dones = {aid: 1.0 if aid in removed else 0.0 for aid in actions}
        return EnvStep(rewards=rewards, dones=dones, events=result.events, removals=result.removals)


# ---------------------------------------------------------------------------
# rollout collection
# ---------------------------------------------------------------------------


@dataclass
class Track:
    """Contiguous per-agent transition record within one env episode."""

    env_index: int
    episode: int
    agent_id: str
    observations: list = field(default_factory=list)
    actions: list = field(default_factory=list)
    log_probs: list = field(default_factory=list)
    rewards: list = field(default_factory=list)
    values: list = field(default_factory=list)
    dones: list = field(default_factory=list)
    bootstrap_value: float = 0.0

    def __len__(self):
        return len(self.rewards)


class RolloutBuffer:
    """Pooled transitions of all agents across all envs for one update."""

    def __init__(self):
        self.tracks = []
        self.advantages = None
        self.lambda_returns = None

    def __len__(self):
        return sum(len(t) for t in self.tracks)

    def flat_fields(self):
        """(observations, actions, log_probs, values) flattened in track order."""
        obs, acts, logps, vals = [], [], [], []
        for t in self.tracks:
            obs.extend(t.observations)
            acts.extend(t.actions)
            logps.extend(t.log_probs)
            vals.extend(t.values)
        return obs, np.array(acts, dtype=np.int64), np.array(logps), np.array(vals)


def collect_rollouts(envs, params, horizon, rng):
    """Simulate ``horizon`` steps in every env, sampling actions from the policy.

    Agents removed mid-horizon close their track with done = 1 (terminal,
    bootstrap 0); agents still active at the end get a truncation bootstrap
    from the value head. Envs whose episode finishes regenerate immediately.
    """
    buffer = RolloutBuffer()
    open_tracks = {}
    for _ in range(horizon):
        for env_index, env in enumerate(envs):
            if env.world.is_done():
                env.regenerate()
            obs_map = env.observe()
            actions, chosen = {}, {}
            for aid, obs in obs_map.items():
                advisory, log_prob, value = policy_mod.act(obs, params, rng, "sample")
                actions[aid] = advisory
                chosen[aid] = (int(advisory), log_prob, value)
            env_step = env.step(actions)
            for aid, obs in obs_map.items():
                key = (env_index, env.episode, aid)
                track = open_tracks.get(key)
                if track is None:
                    track = Track(env_index=env_index, episode=env.episode, agent_id=aid)
                    open_tracks[key] = track
                    buffer.tracks.append(track)
                action, log_prob, value = chosen[aid]
                track.observations.append(obs)
                track.actions.append(action)
                track.log_probs.append(log_prob)
                track.values.append(value)
                track.rewards.append(env_step.rewards[aid])
                done = env_step.dones[aid]
                track.dones.append(done)
                if done:
                    track.bootstrap_value = 0.0
                    del open_tracks[key]
    for (env_index, _, aid), track in open_tracks.items():
        world = envs[env_index].world
        obs = featurize(world, aid)
        _, track.bootstrap_value = policy_mod.forward(obs, params)
    return buffer


def compute_gae(buffer, gamma, lam):
    """Backward-recursion advantages and lambda-returns, per contiguous track.

    delta_t = r_t + gamma * V(s_{t+1}) * (1 - done_t) - V(s_t), advantage
    A_t = delta_t + gamma * lam * (1 - done_t) * A_{t+1}; the lambda-return is
    A_t + V(s_t). Results are stored on the buffer (flat, in track order) and
    returned.
    """
    advantages, returns = [], []
    for track in buffer.tracks:
        n = len(track)
        if any(track.dones[k] and k != n - 1 for k in range(n)):
            raise ValueError("done flag inside a track: contiguity broken")
        adv = np.empty(n)
        next_value = track.bootstrap_value
        acc = 0.0
        for k in reversed(range(n)):
            nonterminal = 1.0 - track.dones[k]
            delta = track.rewards[k] + gamma * next_value * nonterminal - track.values[k]
            acc = delta + gamma * lam * nonterminal * acc
            adv[k] = acc
            next_value = track.values[k]
        advantages.append(adv)
        returns.append(adv + np.asarray(track.values))
    buffer.advantages = np.concatenate(advantages) if advantages else np.zeros(0)
    buffer.lambda_returns = np.concatenate(returns) if returns else np.zeros(0)
    return buffer.advantages, buffer.lambda_returns


# ---------------------------------------------------------------------------
# optimization
# ---------------------------------------------------------------------------


class Adam:
    """Adaptive-moment estimation over a list of parameter tensors."""

    def __init__(self, params, lr=3e-4, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self._m, self._v):
            if p.grad is None:
                continue
            m *= self.beta1
            m += (1.0 - self.beta1) * p.grad
            v *= self.beta2
            v += (1.0 - self.beta2) * (p.grad * p.grad)
            p.data = p.data - self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def zero_grad(self):
        nm.zero_grads(self.params)


def normalize_advantages(adv):
    """Zero-mean unit-variance rescaling with the standard 1e-8 guard."""
    return (adv - adv.mean()) / (adv.std() + 1e-8)


def clip_grad_norm(params, max_norm):
    """Scale all gradients so their global L2 norm is at most ``max_norm``.

    Returns the pre-clip norm.
    """
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float((p.grad * p.grad).sum())
    norm = math.sqrt(total)
    if norm > max_norm:
        scale = max_norm / norm
        for p in params:
            if p.grad is not None:
                p.grad *= scale
    return norm


def ppo_update(params, buffer, hparams, rng, optimizer):
    """One PPO optimization pass over a collected buffer with GAE attached.

    Per epoch the pooled transitions are shuffled and consumed in minibatches;
    advantages are normalized per minibatch, the clipped surrogate and clipped
    value loss are combined with an entropy bonus, gradients are norm-clipped,
    and the optimizer steps.
    """
    if buffer.advantages is None:
        raise ValueError("compute_gae must run before ppo_update")
    obs_list, actions, logp_old, values_old = buffer.flat_fields()
    adv_all = buffer.advantages
    ret_all = buffer.lambda_returns
    n = len(obs_list)
    if n == 0:
        raise ValueError("empty rollout buffer")
    eps = hparams.clip_eps
    tensors = params.tensors()

    pol_hist, val_hist, tot_hist, ent_hist, clip_hist, norm_hist = [], [], [], [], [], []
    for _ in range(hparams.epochs):
        perm = rng.permutation(n)
        for start in range(0, n, hparams.batch_size):
            idx = perm[start:start + hparams.batch_size]
            mb_adv = adv_all[idx]
            if hparams.advantage_normalization:
                mb_adv = normalize_advantages(mb_adv)
            surrogate_terms, value_terms, entropy_terms = [], [], []
            ratios = np.empty(len(idx))
            for j, s in enumerate(idx):
                logits, value = forward_tensors(obs_list[s], params)
                lsm = nm.log_softmax(logits)
                log_prob = nm.pick(lsm, actions[s])
                ratio = nm.exp(log_prob - float(logp_old[s]))
                ratios[j] = float(ratio.data)
                a = float(mb_adv[j])
                surrogate_terms.append(nm.minimum(ratio * a, nm.clip(ratio, 1.0 - eps, 1.0 + eps) * a))
                probs = nm.exp(lsm)
                entropy_terms.append(nm.neg(nm.tsum(nm.mul(probs, lsm))))
                v_err = value - float(ret_all[s])
                if hparams.value_clipping:
                    v_clip_err = nm.clip(value - float(values_old[s]), -eps, eps) + (
                        float(values_old[s]) - float(ret_all[s])
                    )
                    value_terms.append(nm.maximum(nm.square(v_err), nm.square(v_clip_err)))
                else:
                    value_terms.append(nm.square(v_err))
            policy_loss = nm.neg(nm.tmean(nm.stack(surrogate_terms)))
            value_loss = nm.tmean(nm.stack(value_terms)) * 0.5
            entropy = nm.tmean(nm.stack(entropy_terms))
            total = policy_loss + value_loss * hparams.vf_coef - entropy * hparams.entropy_coef
            nm.zero_grads(tensors)
            nm.backward(total)
            norm_hist.append(clip_grad_norm(tensors, hparams.max_grad_norm))
            optimizer.step()
            pol_hist.append(float(policy_loss.data))
            val_hist.append(float(value_loss.data))
            tot_hist.append(float(total.data))
            ent_hist.append(float(entropy.data))
            clip_hist.append(float(np.mean(np.abs(ratios - 1.0) > eps)))

    return TrainStats(
        update=-1,
        mean_lambda_return=float(ret_all.mean()),
        mean_entropy=float(np.mean(ent_hist)),
        policy_loss=float(np.mean(pol_hist)),
        value_loss=float(np.mean(val_hist)),
        total_loss=float(np.mean(tot_hist)),
        clip_fraction=float(np.mean(clip_hist)),
        grad_norm=float(np.mean(norm_hist)),
    )


# ---------------------------------------------------------------------------
# training orchestration
# ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    stats: list
    params: object
    stats_path: Path
    checkpoint_paths: list


def checkpoint_metadata(config, update):
    """Metadata echoed into every checkpoint so evaluation matches training."""
    sector = config.scenario.sector
    return {
        "seed": config.seed,
        "env_kind": config.scenario.env_kind.value,
        "update": update,
        "sector_si": {
            "sector_radius": sector.sector_radius,
            "r_pz": sector.r_pz,
            "r_nmac": sector.r_nmac,
            "v_min": sector.v_min,
            "v_max": sector.v_max,
            "speed_increment": sector.speed_increment,
            "decision_interval": sector.decision_interval,
            "lookahead": sector.lookahead,
            "arrival_capture_radius": sector.arrival_capture_radius,
            "timeout_buffer": sector.timeout_buffer,
        },
        "normalization": {
            "distance_scale_m": 2.0 * sector.sector_radius,
            "speed_scale_ms": sector.v_max,
            "speed_dev_scale_ms": sector.v_max - sector.v_min,
        },
        "reward": {
            "alpha_v": config.reward.alpha_v,
            "alpha_conflict": config.reward.alpha_conflict,
            "alpha_los": config.reward.alpha_los,
            "alpha_nmac": config.reward.alpha_nmac,
        },
        "hyper": {
            "updates": config.hyper.updates,
            "n_envs": config.hyper.n_envs,
            "horizon": config.hyper.horizon,
            "batch_size": config.hyper.batch_size,
            "epochs": config.hyper.epochs,
            "gamma": config.hyper.gamma,
            "gae_lambda": config.hyper.gae_lambda,
            "clip_eps": config.hyper.clip_eps,
            "entropy_coef": config.hyper.entropy_coef,
            "vf_coef": config.hyper.vf_coef,
            "max_grad_norm": config.hyper.max_grad_norm,
            "learning_rate": config.hyper.learning_rate,
            "advantage_normalization": config.hyper.advantage_normalization,
            "value_clipping": config.hyper.value_clipping,
        },
    }


def train(config, out_dir, log=None):
    """Full training loop: collect, GAE, update; stats CSV and checkpoints on disk."""
    hp = config.hyper
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    root = np.random.SeedSequence(config.seed)
    init_ss, action_ss, shuffle_ss, *env_ss = root.spawn(3 + hp.n_envs)
    if config.init_checkpoint:
        params, _ = policy_mod.load_policy(config.init_checkpoint)
        if params.config != config.network:
            raise ValueError("init checkpoint network config disagrees with training config")
    else:
        params = init_params(config.network, np.random.default_rng(init_ss))
    envs = [
        SectorEnv(config.scenario, np.random.default_rng(ss), reward_params=config.reward)
        for ss in env_ss
    ]
    action_rng = np.random.default_rng(action_ss)
    shuffle_rng = np.random.default_rng(shuffle_ss)
    optimizer = Adam(params.tensors(), lr=hp.learning_rate)

    stats_path = out / "training_stats.csv"
    checkpoint_paths = []
    stats = []
    with open(stats_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(STATS_HEADER)
        for update in range(hp.updates):
            buffer = collect_rollouts(envs, params, hp.horizon, action_rng)
            compute_gae(buffer, hp.gamma, hp.gae_lambda)
            st = ppo_update(params, buffer, hp, shuffle_rng, optimizer)
            st.update = update
            stats.append(st)
            writer.writerow(st.csv_row())
            fh.flush()
            if config.checkpoint_every and (update + 1) % config.checkpoint_every == 0:
                path = policy_mod.save_policy(
                    out / f"checkpoint_{update + 1:04d}", params, checkpoint_metadata(config, update)
                )
                checkpoint_paths.append(Path(path))
            if log:
                log(
                    f"update {update + 1}/{hp.updates}: "
                    f"return {st.mean_lambda_return:.3f} entropy {st.mean_entropy:.3f} "
                    f"transitions {len(buffer)}"
                )
    final = policy_mod.save_policy(
        out / "checkpoint_final", params, checkpoint_metadata(config, hp.updates - 1)
    )
    checkpoint_paths.append(Path(final))
    return TrainResult(stats=stats, params=params, stats_path=stats_path, checkpoint_paths=checkpoint_paths)
