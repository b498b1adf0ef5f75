"""End-to-end mini training run on the head-on scenario, followed by greedy
evaluation and CSV report emission. A scaled-down version of the full smoke
configuration in configs/smoke_headon.yaml; expect a few minutes of CPU time.

Run: python demos/05_train_and_evaluate.py [out_dir]
"""

import sys

from airsep.config import training_config_from_dict
from airsep.harness import emit_report, evaluate, smooth_curve
from airsep.ppo import train


def main():
    out = sys.argv[1] if len(sys.argv) > 1 else "runs/demo05"
    config = training_config_from_dict(
        {
            "seed": 7,
            "scenario": {"env": "headon", "sector": {"timeout_buffer_min": 5.0}},
            "network": {"d_emb": 128, "d_ff": 512, "heads": 16, "layers": 1},
            "ppo": {
                "updates": 12, "n_envs": 2, "horizon": 256, "batch_size": 128,
                "epochs": 4, "learning_rate": 3.0e-4, "vf_coef": 0.1,
            },
            "checkpoint_every": 0,
        }
    )
    print("training 12 updates on the two-aircraft head-on scenario...")
    result = train(config, out, log=print)

    returns = [s.mean_lambda_return for s in result.stats]
    smoothed = smooth_curve(returns, 0.05)
    print(f"\nsmoothed return: {smoothed[0]:+.2f} -> {smoothed[-1]:+.2f}")

    print("\ngreedy evaluation, 20 episodes:")
    ev = evaluate(result.params, "headon", n_episodes=20, seed=99,
                  sector=config.scenario.sector)
    agg = ev.aggregate
    print(f"  mean NMACs {agg['mean_nmac_count']:.2f} | mean LoS {agg['mean_los_seconds']:.0f} s"
          f" | speed adherence {agg['mean_speed_adherence']:.2f}")
    episodes_path, aggregate_path = emit_report(ev.episodes, out)
    print(f"  reports: {episodes_path}, {aggregate_path}")
    print(f"  checkpoint: {result.checkpoint_paths[-1]}")


if __name__ == "__main__":
    main()
