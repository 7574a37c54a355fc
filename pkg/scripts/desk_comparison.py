"""Train every algorithm on one scenario over several seeds, then write the
comparison table and a reward-curve figure.

    python scripts/desk_comparison.py --scenario coop_nav --seeds 0 1 2 --out runs/compare

Runs that already have a final checkpoint are reused, so an interrupted sweep
can be restarted with the same command.
"""
import argparse
import sys
from pathlib import Path

import numpy as np

from hrtmaddpg import cli, envs, harness


def variants(depths):
    yield "maddpg", 1
    yield "rmaddpg", 1
    for d in depths:
        yield "hrtmaddpg", d


def run_name(algo, depth, seed):
    tag = f"t{depth}hrt" if algo == "hrtmaddpg" else algo
    return f"{tag}_seed{seed}"


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--scenario", default="coop_nav", choices=envs.SCENARIOS)
    p.add_argument("--seeds", type=int, nargs="+", default=[0])
    p.add_argument("--depths", type=int, nargs="+", default=[1, 2])
    p.add_argument("--episodes", type=int, default=2000)
    p.add_argument("--eval-episodes", type=int, default=200)
    p.add_argument("--out", default="runs/compare")
    args = p.parse_args(argv)

    root = Path(args.out)
    by_variant = {}
    for algo, depth in variants(args.depths):
        for seed in args.seeds:
            out = root / run_name(algo, depth, seed)
            cfg = harness.ExperimentConfig(scenario=args.scenario, algo=algo, depth=depth, seed=seed,
                                           train_episodes=args.episodes, eval_episodes=args.eval_episodes,
                                           out=str(out))
            if not (out / "checkpoint.ckpt").exists():
                print(f"training {out.name}", flush=True)
                harness.run_training(cfg, progress=lambda ep, r: print(f"  episode {ep} mean_return {r:.3f}",
                                                                       flush=True))
            if not (out / "eval_report.json").exists():
                harness.run_evaluation(cfg, out / "checkpoint.ckpt").write(out / "eval_report.json")
            by_variant.setdefault((algo, depth), []).append(out)

    baseline = harness.run_evaluation(harness.ExperimentConfig(scenario=args.scenario,
                                                               eval_episodes=args.eval_episodes))
    print(f"\nrandom policy: {baseline.overall_mean:.3f}")
    for (algo, depth), outs in by_variant.items():
        evals = [harness.EvalReport.read(o / "eval_report.json").overall_mean for o in outs]
        label = f"T{depth}-HRTMADDPG" if algo == "hrtmaddpg" else algo.upper()
        print(f"{label:<14} median eval {np.median(evals):9.3f}  per seed " + " ".join(f"{v:.3f}" for v in evals))

    first_seed = [outs[0] for outs in by_variant.values()]
    print()
    print(cli.format_table(cli.compare_table(first_seed)))
    labels = [o.name for o in first_seed]
    (root / "curves.svg").write_text(cli.render_svg(
        [harness.read_metrics(o / "metrics.csv").moving_mean for o in first_seed], labels))
    print(f"\nwrote {root / 'curves.svg'}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
