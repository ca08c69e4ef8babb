"""Train on waypoint2d demonstrations and compare discovered options with the true targets.

    python3 demos/02_segment_waypoints.py [--seed 0] [--epochs 60]

The default config takes about a minute on one CPU.
"""
import argparse

import numpy as np

from podnet import data, evaluation, training


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--epochs", type=int, default=60)
    args = ap.parse_args()

    spec = data.make_env("waypoint2d", K_true=3, seed=args.seed)
    train = data.generate_dataset(spec, 200, seed=args.seed)
    test = data.generate_dataset(spec, 50, seed=10_000 + args.seed)
    print("waypoints:", np.round(spec.waypoints, 2).tolist())

    ckpt, history = training.train(train, training.TrainConfig(seed=args.seed, epochs=args.epochs))
    last = history[-1]
    print(f"final epoch: odc {last.odc:.4f}  bc {last.bc:.4f}  kl {last.kl:.4f}  held-out bc {last.heldout_bc:.4f}")

    seg = evaluation.segment(ckpt, test)
    r = seg.report
    print(f"matched accuracy {r.matched_accuracy:.3f}  NMI {r.nmi:.3f}  boundary F1 {r.boundary_f1:.3f}")
    first = next(iter(seg.labels))
    print("true  ", "".join(map(str, seg.true_labels[first][:60])))
    print("found ", "".join(map(str, seg.labels[first][:60])))
    print(f"dynamics option sensitivity {evaluation.dynamics_option_sensitivity(ckpt, test):.2f}")


if __name__ == "__main__":
    main()
