"""Plan through the learned option dynamics and execute the plan with the learned policy.

    python3 demos/04_plan_to_waypoint.py [--seed 0] [--epochs 60]
"""
import argparse

import numpy as np

from podnet import data, planner, training


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--epochs", type=int, default=60)
    args = ap.parse_args()

    spec = data.make_env("waypoint2d", K_true=3, seed=args.seed)
    train = data.generate_dataset(spec, 200, seed=args.seed)
    ckpt, _ = training.train(train, training.TrainConfig(seed=args.seed, epochs=args.epochs))

    cfg = planner.PlannerConfig()
    rng = np.random.default_rng(args.seed)
    reached = 0
    for ep in range(10):
        s0 = rng.uniform(spec.low, spec.high)
        goal = np.asarray(spec.waypoints[int(rng.integers(spec.K_true))])
        p = planner.plan(ckpt, s0, goal, cfg)
        trace = planner.execute(ckpt, spec, s0, goal, cfg)
        reached += trace.reached
        end = np.linalg.norm(trace.states[-1] - goal)
        print(f"episode {ep}: plan {p.options}  steps {len(trace.actions):4d}  "
              f"replans {len(trace.plans) - 1}  final distance {end:.2f}  reached {trace.reached}")
    print(f"reached {reached}/10")


if __name__ == "__main__":
    main()
