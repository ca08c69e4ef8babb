"""Command-line interface.

Exit codes: 0 success, 1 runtime or data failure, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import data, evaluation, planner, training

log = logging.getLogger("podnet")

ENV_KEYS = {"name", "K_true", "seed", "max_speed", "noise_std", "arrival_radius", "low", "high",
            "waypoints", "traj_steps"}
PATH_KEYS = {"data", "out", "checkpoint", "env_spec"}


class ConfigError(ValueError):
    """Invalid configuration or arguments (exit code 2)."""


@dataclass
class RunConfig:
    env: dict = field(default_factory=lambda: {"name": "waypoint2d", "K_true": 3, "seed": 0})
    train: training.TrainConfig = field(default_factory=training.TrainConfig)
    planner: planner.PlannerConfig = field(default_factory=planner.PlannerConfig)
    paths: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, doc):
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        unknown = sorted(set(doc) - {"env", "train", "planner", "paths"})
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        env = dict(cls().env)
        env.update(_strict(doc.get("env", {}), ENV_KEYS, "env"))
        paths = _strict(doc.get("paths", {}), PATH_KEYS, "paths")
        try:
            train = training.TrainConfig(**_strict(doc.get("train", {}),
                                                   {f.name for f in fields(training.TrainConfig)},
                                                   "train"))
            plan_cfg = planner.PlannerConfig(**_strict(doc.get("planner", {}),
                                                       {f.name for f in fields(planner.PlannerConfig)},
                                                       "planner"))
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
        return cls(env, train, plan_cfg, paths)

    def to_dict(self):
        return {"env": self.env, "train": self.train.to_dict(),
                "planner": asdict(self.planner), "paths": self.paths}


def _strict(section, allowed, name):
    if not isinstance(section, dict):
        raise ConfigError(f"config section {name!r} must be an object")
    unknown = sorted(set(section) - allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in {name!r}: {', '.join(unknown)}")
    return dict(section)


def load_run_config(path, seed_flag=None):
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg})") from None
    cfg = RunConfig.from_dict(doc)
    env_seed = os.environ.get("PODNET_SEED")
    if seed_flag is not None:
        cfg.train.seed = seed_flag
    elif env_seed not in (None, ""):
        try:
            cfg.train.seed = int(env_seed)
        except ValueError:
            raise ConfigError(f"PODNET_SEED must be an integer, got {env_seed!r}") from None
    return cfg


def _vector(text):
    try:
        return np.array([float(x) for x in text.split(",")])
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def env_spec_path(data_path):
    p = Path(data_path)
    return p.with_name(p.stem + ".env.json")


def _write(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


# ---------------------------------------------------------------------------
# commands


def cmd_gen_data(args):
    if args.n < 1:
        raise ConfigError("--n must be at least 1")
    spec = data.make_env(args.env, K_true=args.k_true, seed=args.seed)
    ds = data.generate_dataset(spec, args.n, args.seed)
    _write(args.out, data.dumps_dataset(ds))
    data.save_env_spec(spec, env_spec_path(args.out))
    print(f"wrote {len(ds)} trajectories to {args.out}")


def cmd_train(args):
    cfg = load_run_config(args.config, args.seed)
    ds = data.load_dataset(args.data)
    ckpt, history = training.train(ds, cfg.train, progress=args.verbose)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    training.save_checkpoint(ckpt, out / "checkpoint.json")
    _write(out / "history.csv", history.to_csv())
    _write(out / "config.resolved.json", json.dumps(cfg.to_dict(), indent=2) + "\n")
    last = history[-1]
    print(f"trained K={cfg.train.K}: total={last.total:.5f} heldout_bc={last.heldout_bc:.5f}")


def cmd_discover_k(args):
    if args.kmin > args.kmax or args.kmin < 2:
        raise ConfigError(f"invalid K range [{args.kmin}, {args.kmax}] (need 2 <= kmin <= kmax)")
    cfg = load_run_config(args.config, args.seed)
    start = min(max(cfg.train.K, args.kmin), args.kmax)
    cfg.train.K = start
    ds = data.load_dataset(args.data)
    best, table = training.discover_num_options(ds, cfg.train, args.kmin, args.kmax,
                                                progress=args.verbose)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["K", "heldout_bc"])
    for k, v in table:
        w.writerow([k, repr(float(v))])
    _write(args.out, buf.getvalue())
    for k, v in table:
        print(f"K={k}\theldout_bc={v:.6f}")
    print(f"K_best={best}")


def _segment_csv(ckpt, ds, result):
    processed = ckpt.preprocess(ds)
    d = processed.d
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["id", "step", *[f"s{i}" for i in range(d)], "label", "true_label"])
    for tr in processed:
        states = ckpt.norm.denormalize_states(tr.states)
        for t, lab in enumerate(result.labels[tr.id]):
            truth = "" if tr.true_labels is None else int(tr.true_labels[t])
            w.writerow([tr.id, t, *map(repr, map(float, states[t])), int(lab), truth])
    return buf.getvalue()


def cmd_segment(args):
    ckpt = training.load_checkpoint(args.checkpoint)
    ds = data.load_dataset(args.data)
    result = evaluation.segment(ckpt, ds, stride=args.stride, tol=args.tol)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    evaluation.save_labels_jsonl(result.labels, args.out)
    if args.csv:
        _write(args.csv, _segment_csv(ckpt, ds, result))
    if result.report is not None and args.report:
        evaluation.save_report(result.report, args.report)
    print(f"labelled {len(result.labels)} trajectories")


def cmd_eval(args):
    ckpt = training.load_checkpoint(args.checkpoint)
    ds = data.load_dataset(args.data)
    if not ds.has_labels:
        raise ValueError("eval needs ground-truth labels on every trajectory")
    result = evaluation.segment(ckpt, ds, tol=args.tol)
    doc = result.report.to_dict()
    doc["heldout_bc"] = training.evaluate_bc_loss(ckpt, ds)
    doc["dynamics_option_sensitivity"] = evaluation.dynamics_option_sensitivity(ckpt, ds)
    _write(args.out, json.dumps(doc, indent=2) + "\n")
    print(f"matched_accuracy={doc['matched_accuracy']:.4f} nmi={doc['nmi']:.4f} "
          f"boundary_f1={doc['boundary_f1']:.4f}")


def cmd_plan(args):
    ckpt = training.load_checkpoint(args.checkpoint)
    cfg = load_run_config(args.config).planner if args.config else planner.PlannerConfig()
    d = ckpt.model.d
    if len(args.start) != d or len(args.goal) != d:
        raise ValueError(f"--start and --goal need {d} components for this checkpoint")
    p = planner.plan(ckpt, args.start, args.goal, cfg)
    doc = p.to_dict()
    doc["predicted_states_raw"] = ckpt.norm.denormalize_states(p.predicted_states).tolist()
    if args.execute:
        spec_file = args.env_spec
        if spec_file is None:
            raise ConfigError("--execute needs --env-spec")
        spec = data.load_env_spec(spec_file)
        trace = planner.execute(ckpt, spec, args.start, args.goal, cfg)
        doc["execution"] = trace.to_dict()
        if args.trace_csv:
            _write(args.trace_csv, trace.to_csv())
    _write(args.out, json.dumps(doc, indent=2) + "\n")
    msg = f"plan options={p.options} feasible={p.feasible} distance={p.terminal_distance:.4f}"
    if args.execute:
        msg += f" reached={doc['execution']['reached']}"
    print(msg)


# ---------------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(prog="podnet", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate synthetic demonstrations")
    p.add_argument("--env", required=True, choices=data.ENV_NAMES)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--k-true", type=int, default=3)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train the option model offline")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("discover-k", help="search the number of options on held-out BC loss")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--kmin", type=int, required=True)
    p.add_argument("--kmax", type=int, required=True)
    p.add_argument("--out", default="discover_k.csv")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_discover_k)

    p = sub.add_parser("segment", help="label trajectories with discovered options")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="labels JSONL")
    p.add_argument("--report", help="report JSON (written only when ground truth exists)")
    p.add_argument("--csv", help="per-step CSV for plotting")
    p.add_argument("--stride", type=int)
    p.add_argument("--tol", type=int, default=1)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("eval", help="segmentation metrics on labelled data")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--tol", type=int, default=1)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("plan", help="plan an option sequence to a goal state")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--start", type=_vector, required=True)
    p.add_argument("--goal", type=_vector, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="run config whose planner section is used")
    p.add_argument("--execute", action="store_true", help="also run the plan in the environment")
    p.add_argument("--env-spec")
    p.add_argument("--trace-csv")
    p.set_defaults(func=cmd_plan)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s")
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"podnet: error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, FloatingPointError) as exc:
        print(f"podnet: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
