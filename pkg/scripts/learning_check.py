"""Train one coop_nav run at desk scale and report the numbers behind the
learning criterion: evaluation return against the random policy and against
the first 200 training episodes.

    python scripts/learning_check.py --algo hrtmaddpg --seed 0 --out runs/check
"""
import argparse
import sys
import time

from hrtmaddpg import harness


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--algo", default="hrtmaddpg", choices=("maddpg", "rmaddpg", "hrtmaddpg"))
    p.add_argument("--depth", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--episodes", type=int, default=2000)
    p.add_argument("--out", default="runs/check")
    args = p.parse_args(argv)

    cfg = harness.ExperimentConfig(scenario="coop_nav", algo=args.algo, depth=args.depth, seed=args.seed,
                                   train_episodes=args.episodes, eval_episodes=200, out=args.out)
    t0 = time.perf_counter()
    m = harness.run_training(cfg, progress=lambda ep, r: print(f"episode {ep} mean_return {r:.3f}", flush=True))
    report = harness.run_evaluation(cfg, f"{args.out}/checkpoint.ckpt")
    minutes = (time.perf_counter() - t0) / 60
    random = harness.run_evaluation(cfg, None).overall_mean
    first = float(m.mean_return[:200].mean())
    best = max(report.overall_mean, float(m.moving_mean.max()))
    margin = 0.2 * (best - random)
    print(f"eval {report.overall_mean:.3f}  random {random:.3f}  first200 {first:.3f}  best {best:.3f}")
    print(f"required margin {margin:.3f}: over random {report.overall_mean - random:.3f}, "
          f"over first200 {report.overall_mean - first:.3f}; {minutes:.1f} min")
    return 0


if __name__ == "__main__":
    sys.exit(main())
