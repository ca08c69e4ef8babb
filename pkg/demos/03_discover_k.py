"""Hill-climb the number of options on held-out behavior-cloning loss.

    python3 demos/03_discover_k.py [--seed 0] [--epochs 60]

Each candidate K is a full training run, so expect a few minutes.
"""
import argparse

from podnet import data, training


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--epochs", type=int, default=60)
    args = ap.parse_args()

    spec = data.make_env("waypoint2d", K_true=3, seed=args.seed)
    train = data.generate_dataset(spec, 200, seed=args.seed)
    cfg = training.TrainConfig(K=4, seed=args.seed, epochs=args.epochs)
    best, table = training.discover_num_options(train, cfg, 2, 6, progress=True)
    for k, score in table:
        print(f"K={k}  held-out bc {score:.5f}")
    print("chosen K:", best, "(true number of waypoints: 3)")


if __name__ == "__main__":
    main()
