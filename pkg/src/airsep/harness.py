"""Evaluation harness: episode metrics, curve smoothing, CSV reports, gradient
suite, and the command-line entry point (train / eval / gradcheck / rollout-dump).
"""

import argparse
import csv
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import airspace, config as config_mod, numerics as nm, policy as policy_mod, ppo
from .airspace import KT, Advisory, EnvKind, SectorParams, make_world, write_event_log
from .featurize import EgoObservation, featurize
from .numerics import Tensor, finite_diff_check
from .policy import PolicyConfig, forward_tensors, init_params

ADHERENCE_TOLERANCE = 10.0 * KT
GRADIENT_TOLERANCE = 1e-4

EPISODES_HEADER = ("episode", "nmac_count", "los_seconds", "speed_adherence", "max_density")
AGGREGATE_HEADER = (
    "scope",
    "episodes",
    "mean_nmac_count",
    "mean_los_seconds",
    "mean_speed_adherence",
    "mean_max_density",
)
TRAJECTORY_HEADER = ("time_s", "aircraft_id", "x_m", "y_m", "cas_ms", "v_des_ms", "heading_rad")


@dataclass(frozen=True)
class EpisodeMetrics:
    """Safety and adherence counters for one episode.

    ``nmac_count`` counts pair-entries into the NMAC radius (infringing pairs
    are removed on detection, so each entry is counted once). ``los_seconds``
    counts (timestep, pair) occurrences with separation inside the protection
    zone, at one decision interval each; NMAC timesteps are inside the zone and
    therefore count too. ``speed_adherence`` is the fraction of
    (aircraft, timestep) pairs within 10 kt of the desired cruising speed.
    """

    nmac_count: int
    los_seconds: float
    speed_adherence: float
    max_density: int


def run_episode(world, action_fn, max_steps=200_000, trajectory=None, events_out=None):
    """Drive one world to termination under ``action_fn(aircraft_id, obs) -> Advisory``.

    Optionally appends trajectory rows / safety events to the provided lists.
    """
    sector = world.sector
    dt = sector.decision_interval
    nmac_count = 0
    los_seconds = 0.0
    adherent_steps = 0
    agent_steps = 0
    max_density = len(world.aircraft)
    steps = 0
    while not world.is_done():
        if steps >= max_steps:
            raise RuntimeError(f"episode did not terminate within {max_steps} steps")
        steps += 1
        max_density = max(max_density, len(world.aircraft))
        obs_map = {aid: featurize(world, aid) for aid in sorted(world.active_ids())}
        actions = {aid: action_fn(aid, obs) for aid, obs in obs_map.items()}
        result = airspace.step(world, actions)
        for event in result.events:
            if event.kind is airspace.EventKind.NMAC:
                nmac_count += 1
                los_seconds += dt
            elif event.kind is airspace.EventKind.LOS:
                los_seconds += dt
        for aid, state in sorted(result.post_move.items()):
            agent_steps += 1
            if abs(state.cas - state.v_des) <= ADHERENCE_TOLERANCE:
                adherent_steps += 1
            if trajectory is not None:
                pos = state.position
                trajectory.append(
                    (world.clock, aid, pos[0], pos[1], state.cas, state.v_des, state.heading)
                )
        if events_out is not None:
            events_out.extend(result.events)
    adherence = adherent_steps / agent_steps if agent_steps else 0.0
    return EpisodeMetrics(
        nmac_count=nmac_count,
        los_seconds=los_seconds,
        speed_adherence=adherence,
        max_density=max_density,
    )


def greedy_action_fn(params):
    return lambda aid, obs: policy_mod.act(obs, params, mode="greedy")[0]


def sampling_action_fn(params, rng):
    return lambda aid, obs: policy_mod.act(obs, params, rng, mode="sample")[0]


def random_action_fn(rng):
    return lambda aid, obs: Advisory(int(rng.integers(len(Advisory))))


@dataclass
class EvaluationResult:
    episodes: list
    aggregate: dict
    per_density: dict


def _aggregate(metrics):
    return {
        "episodes": len(metrics),
        "mean_nmac_count": float(np.mean([m.nmac_count for m in metrics])),
        "mean_los_seconds": float(np.mean([m.los_seconds for m in metrics])),
        "mean_speed_adherence": float(np.mean([m.speed_adherence for m in metrics])),
        "mean_max_density": float(np.mean([m.max_density for m in metrics])),
    }


def evaluate(params, env_kind, n_episodes, seed, sector=None, n_aircraft=None, action_mode="greedy"):
    """Run ``n_episodes`` of a scenario and aggregate episode metrics.

    Cases a/b draw a fresh uniform rotation every episode (inside scenario
    generation). ``action_mode`` is ``greedy`` (default for evaluation),
    ``sample`` (stochastic policy) or ``random`` (uniform advisories,
    ignoring ``params``).
    """
    env_kind = EnvKind(env_kind)
    children = np.random.SeedSequence(seed).spawn(n_episodes)
    metrics = []
    for child in children:
        rng = np.random.default_rng(child)
        world = make_world(env_kind, rng, sector=sector, n_aircraft=n_aircraft)
        if action_mode == "greedy":
            fn = greedy_action_fn(params)
        elif action_mode == "sample":
            fn = sampling_action_fn(params, rng)
        elif action_mode == "random":
            fn = random_action_fn(rng)
        else:
            raise ValueError(f"unknown action_mode {action_mode!r}")
        metrics.append(run_episode(world, fn))
    per_density = {}
    for density in sorted({m.max_density for m in metrics}):
        per_density[density] = _aggregate([m for m in metrics if m.max_density == density])
    return EvaluationResult(episodes=metrics, aggregate=_aggregate(metrics), per_density=per_density)


# ---------------------------------------------------------------------------
# curve smoothing and reports
# ---------------------------------------------------------------------------


def smooth_curve(series, alpha):
    """Exponential moving average: y_0 = x_0, y_t = alpha x_t + (1 - alpha) y_{t-1}."""
    if not 0.0 < alpha <= 1.0:
        raise ValueError("alpha must lie in (0, 1]")
    x = np.asarray(series, dtype=np.float64)
    out = np.empty_like(x)
    if x.size == 0:
        return out
    out[0] = x[0]
    for t in range(1, x.size):
        out[t] = alpha * x[t] + (1.0 - alpha) * out[t - 1]
    return out


def emit_report(metrics, out_dir):
    """Write per-episode and aggregate CSVs; rows are deterministic for a fixed input.

    The aggregate file carries one ``overall`` row followed by one row per
    observed peak-traffic density, ascending.
    """
    if not metrics:
        raise ValueError("no episode metrics to report")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    episodes_path = out / "episodes.csv"
    aggregate_path = out / "aggregate.csv"
    with open(episodes_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(EPISODES_HEADER)
        for i, m in enumerate(metrics):
            writer.writerow([i, m.nmac_count, repr(m.los_seconds), repr(m.speed_adherence), m.max_density])

    def agg_row(scope, sub):
        agg = _aggregate(sub)
        return [
            scope,
            agg["episodes"],
            repr(agg["mean_nmac_count"]),
            repr(agg["mean_los_seconds"]),
            repr(agg["mean_speed_adherence"]),
            repr(agg["mean_max_density"]),
        ]

    with open(aggregate_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(AGGREGATE_HEADER)
        writer.writerow(agg_row("overall", metrics))
        for density in sorted({m.max_density for m in metrics}):
            sub = [m for m in metrics if m.max_density == density]
            writer.writerow(agg_row(f"density={density}", sub))
    return episodes_path, aggregate_path


# ---------------------------------------------------------------------------
# gradient suite
# ---------------------------------------------------------------------------


def _scalarize(rng, build):
    """Deterministic scalar loss from an op builder: fixed random weights times output."""
    probe = build()
    w = Tensor(rng.standard_normal(probe.data.shape))
    return lambda: nm.tsum(nm.mul(build(), w))


def _op_gradient_checks(seed, n_seeds):
    """Finite-difference every differentiable primitive over many random draws.

    Kinked ops (clip, minimum, maximum) get operands kept away from their
    kinks so the central difference stays valid.
    """
    worst = {}

    def record(name, build, params):
        err = finite_diff_check(_scalarize(rng, build), params)
        worst[name] = max(worst.get(name, 0.0), err)

    for s in range(n_seeds):
        rng = np.random.default_rng((seed, s))

        def t(shape, scale=1.0):
            return Tensor(scale * rng.standard_normal(shape), requires_grad=True)

        a, b = t((4, 5)), t((5, 3))
        record("matmul", lambda: nm.matmul(a, b), [a, b])
        x, bias = t((3, 4)), t((4,))
        record("add_broadcast", lambda: nm.add(x, bias), [x, bias])
        u, v = t((6,)), t((6,))
        record("mul", lambda: nm.mul(u, v), [u, v])
        g = t((7,))
        record("gelu", lambda: nm.gelu(g), [g])
        xs, gain, beta = t((3, 6)), t((6,), 0.5), t((6,))
        record("layer_norm", lambda: nm.layer_norm(xs, gain, beta), [xs, gain, beta])
        sm = t((2, 5))
        record("softmax", lambda: nm.softmax(sm), [sm])
        ls = t((5,))
        record("log_softmax", lambda: nm.log_softmax(ls), [ls])
        ex = t((4,), 0.5)
        record("exp", lambda: nm.exp(ex), [ex])
        sq = t((4,))
        record("square", lambda: nm.square(sq), [sq])
        # keep |entries| in [0.6, 1.5] so clip bounds at +/-0.5 are never near a kink
        signs = np.where(rng.uniform(size=8) < 0.5, -1.0, 1.0)
        cl = Tensor(signs * rng.uniform(0.6, 1.5, size=8), requires_grad=True)
        record("clip", lambda: nm.clip(cl, -0.5, 0.5), [cl])
        base = rng.standard_normal(6)
        offs = np.where(rng.uniform(size=6) < 0.5, -1.0, 1.0) * rng.uniform(0.3, 1.0, size=6)
        ma = Tensor(base, requires_grad=True)
        mb = Tensor(base + offs, requires_grad=True)
        record("minimum", lambda: nm.minimum(ma, mb), [ma, mb])
        record("maximum", lambda: nm.maximum(ma, mb), [ma, mb])
        nr = t((4, 5))
        record("narrow_concat", lambda: nm.concat([nm.narrow(nr, 0, 0, 2), nm.narrow(nr, 0, 2, 2)]), [nr])
        pk = t((5,))
        record("pick_stack", lambda: nm.stack([nm.pick(pk, 1), nm.pick(pk, 3)]), [pk])
        mn = t((3, 4))
        worst["mean"] = max(worst.get("mean", 0.0), finite_diff_check(lambda: nm.tmean(mn), [mn]))
        q, k, vv = t((4, 8), 0.7), t((4, 8), 0.7), t((4, 8), 0.7)
        record("mha_core", lambda: nm.mha_core(q, k, vv, 2), [q, k, vv])
        tokens = t((3, 8), 0.7)
        attn = nm.AttentionParams.create(rng, 8)
        record(
            "self_attention",
            lambda: nm.self_attention(tokens, attn, 2),
            [tokens] + list(attn.tensors().values()),
        )
    return worst


def _random_observation(rng, n_intruders):
    ownship = rng.uniform(0.0, 1.0, size=2)
    intruders = np.empty((n_intruders, 7))
    if n_intruders:
        theta = rng.uniform(-np.pi, np.pi, size=n_intruders)
        intruders[:, 0] = rng.uniform(0.0, 0.5, size=n_intruders)
        intruders[:, 1] = intruders[:, 0] - 0.08
        intruders[:, 2] = np.sin(theta)
        intruders[:, 3] = np.cos(theta)
        intruders[:, 4] = (rng.uniform(size=n_intruders) < 0.3).astype(float)
        intruders[:, 5] = rng.uniform(-1.0, 1.0, size=n_intruders)
        intruders[:, 6] = rng.uniform(-1.0, 1.0, size=n_intruders)
    return EgoObservation(ownship=ownship, intruders=intruders)


def _policy_loss_fn(obs, params):
    """PPO-flavored scalar touching every parameter of the network."""

    def f():
        logits, value = forward_tensors(obs, params)
        lsm = nm.log_softmax(logits)
        log_prob = nm.pick(lsm, 1)
        ratio = nm.exp(log_prob - (-1.2))
        surrogate = nm.minimum(ratio * 0.7, nm.clip(ratio, 0.8, 1.2) * 0.7)
        entropy = nm.neg(nm.tsum(nm.mul(nm.exp(lsm), lsm)))
        value_term = nm.square(value - 0.4)
        return nm.neg(surrogate) + value_term * 0.5 - entropy * 0.01

    return f


def _policy_gradient_check(config, seed, max_entries_per_param=None):
    rng = np.random.default_rng(seed)
    params = init_params(config, rng)
    obs = _random_observation(rng, 3)
    return finite_diff_check(
        _policy_loss_fn(obs, params),
        params.tensors(),
        max_entries_per_param=max_entries_per_param,
        rng=np.random.default_rng((seed, 1)),
    )


def run_gradient_suite(seed=0, op_seeds=100, io=None):
    """Finite-difference the whole stack: every primitive, the full network at a
    compact width (every parameter), and the production widths for 1/2/3 encoder
    layers (sampled entries per tensor). Returns {check_name: max relative error}.
    """

    def emit(line):
        if io is not None:
            print(line, file=io)

    results = dict(_op_gradient_checks(seed, op_seeds))
    for name in sorted(results):
        emit(f"  op {name}: {results[name]:.3e}")
    small = PolicyConfig(d_emb=16, d_ff=32, heads=4, layers=1)
    results["policy_m1_compact_all_params"] = _policy_gradient_check(small, seed)
    emit(f"  policy compact (every parameter): {results['policy_m1_compact_all_params']:.3e}")
    for m in (1, 2, 3):
        cfg = PolicyConfig(d_emb=128, d_ff=512, heads=16, layers=m)
        key = f"policy_m{m}_full_scale_sampled"
        results[key] = _policy_gradient_check(cfg, seed, max_entries_per_param=6)
        emit(f"  policy {m}-layer full width (sampled entries): {results[key]:.3e}")
    return results


# ---------------------------------------------------------------------------
# command-line interface
# ---------------------------------------------------------------------------

_CASE_CHOICES = ("a", "b", "c", "training", "headon")


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="airsep",
        description="Speed-advisory separation assurance: training, evaluation, diagnostics.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run PPO training from a YAML config")
    p_train.add_argument("--config", required=True, help="training config path")
    p_train.add_argument("--out", default="runs/train", help="output directory")
    p_train.add_argument("--seed", type=int, default=None, help="override the config seed")

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint with greedy advisories")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--case", choices=_CASE_CHOICES, default="a")
    p_eval.add_argument("--episodes", type=int, default=100)
    p_eval.add_argument("--seed", type=int, default=0)
    p_eval.add_argument("--out", default="runs/eval")

    p_grad = sub.add_parser("gradcheck", help="finite-difference the numerics and policy stack")
    p_grad.add_argument("--seed", type=int, default=0)
    p_grad.add_argument("--op-seeds", type=int, default=100)

    p_dump = sub.add_parser("rollout-dump", help="write one episode's event log and trajectory")
    p_dump.add_argument("--checkpoint", default=None, help="policy checkpoint (fresh init if omitted)")
    p_dump.add_argument("--case", choices=_CASE_CHOICES, default="training")
    p_dump.add_argument("--seed", type=int, default=0)
    p_dump.add_argument("--out", default="runs/rollout")
    return parser


def _sector_from_meta(meta):
    si = meta.get("sector_si")
    return SectorParams(**si) if si else SectorParams()


def _cmd_train(args):
    cfg = config_mod.load_training_config(args.config)
    if args.seed is not None:
        import dataclasses

        cfg = dataclasses.replace(cfg, seed=args.seed)
    result = ppo.train(cfg, args.out, log=print)
    print(f"stats: {result.stats_path}")
    print(f"final checkpoint: {result.checkpoint_paths[-1]}")
    return 0


def _cmd_eval(args):
    params, meta = policy_mod.load_policy(args.checkpoint)
    sector = _sector_from_meta(meta)
    result = evaluate(params, args.case, args.episodes, args.seed, sector=sector)
    episodes_path, aggregate_path = emit_report(result.episodes, args.out)
    agg = result.aggregate
    print(
        f"case {args.case}: {agg['episodes']} episodes | "
        f"mean NMACs {agg['mean_nmac_count']:.3f} | "
        f"mean LoS seconds {agg['mean_los_seconds']:.1f} | "
        f"mean speed adherence {agg['mean_speed_adherence']:.3f}"
    )
    print(f"wrote {episodes_path} and {aggregate_path}")
    return 0


def _cmd_gradcheck(args):
    results = run_gradient_suite(seed=args.seed, op_seeds=args.op_seeds, io=sys.stdout)
    worst = max(results.values())
    print(f"max relative error: {worst:.3e} (tolerance {GRADIENT_TOLERANCE:.0e})")
    return 0 if worst < GRADIENT_TOLERANCE else 1


def _cmd_rollout_dump(args):
    if args.checkpoint:
        params, meta = policy_mod.load_policy(args.checkpoint)
        sector = _sector_from_meta(meta)
    else:
        params = init_params(PolicyConfig(), np.random.default_rng(args.seed))
        sector = SectorParams()
    world = make_world(args.case, np.random.default_rng(args.seed), sector=sector)
    trajectory, events = [], []
    metrics = run_episode(world, greedy_action_fn(params), trajectory=trajectory, events_out=events)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    events_path = write_event_log(events, out / "events.csv")
    trajectory_path = out / "trajectory.csv"
    with open(trajectory_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRAJECTORY_HEADER)
        for row in trajectory:
            writer.writerow([repr(float(row[0])), row[1]] + [repr(float(x)) for x in row[2:]])
    print(
        f"episode finished: {metrics.nmac_count} NMACs, {metrics.los_seconds:.0f} LoS seconds, "
        f"peak density {metrics.max_density}"
    )
    print(f"wrote {events_path} and {trajectory_path}")
    return 0


def cli(argv=None):
    """Parse and dispatch; returns the process exit code (2 on usage errors)."""
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else 0
    handlers = {
        "train": _cmd_train,
        "eval": _cmd_eval,
        "gradcheck": _cmd_gradcheck,
        "rollout-dump": _cmd_rollout_dump,
    }
    try:
        return handlers[args.command](args)
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main():
    raise SystemExit(cli())


if __name__ == "__main__":
    main()
