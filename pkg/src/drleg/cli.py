"""Command line entry point: ``drleg <subcommand> ...``.

Exit codes: 0 success, 1 run failure (aborted training, bad files), 2 config error.
Output goes under ``--out``, else ``$DRLEG_OUTPUT_DIR``, else ``./runs``.
"""

import argparse
import json
import os
import sys
from pathlib import Path

from .envs import ENVIRONMENTS, make_env
from .harness import (
    ConfigError, TrainConfig, TrainingAborted, bc_pretrain, collect_expert_demos, compare, evaluate_agent,
    export, read_json, train, write_json,
)
from .numerics import make_rng
from .replay import DemoSet, FileFormatError
from .sac import SacAgent

OUTPUT_ENV = "DRLEG_OUTPUT_DIR"


def output_dir(arg):
    path = Path(arg or os.environ.get(OUTPUT_ENV) or "runs")
    path.mkdir(parents=True, exist_ok=True)
    return path


def load_config_file(path):
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} not found")
    text = path.read_text()
    try:
        if path.suffix in (".yaml", ".yml"):
            import yaml
            return yaml.safe_load(text) or {}
        return json.loads(text)
    except Exception as e:
        raise ConfigError(f"cannot parse {path}: {e}") from e


def parse_override(item):
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not key=value")
    key, raw = item.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw  # bare strings such as env names
    return key.strip(), value


def build_config(d, overrides=()):
    d = dict(d)
    for item in overrides:
        k, v = parse_override(item)
        d[k] = v
    try:
        return TrainConfig.from_dict(d)
    except TypeError as e:
        raise ConfigError(str(e)) from e


def cmd_train(args, log):
    base = load_config_file(args.config) if args.config else {}
    config = build_config(base, args.set)
    demos = DemoSet.load(args.demos) if args.demos else None
    out = output_dir(args.out)
    record, _ = train(config, demos, out_dir=out, save_checkpoints=args.checkpoints, log=log)
    log(f"final R_pi {record.final_return:.3f}; wrote {out / 'record.json'}")


def cmd_compare(args, log):
    spec = load_config_file(args.config)
    entries = spec["configs"] if isinstance(spec, dict) else spec
    seeds = args.seeds if args.seeds else (spec.get("seeds", [0, 1, 2]) if isinstance(spec, dict) else [0, 1, 2])
    configs = [build_config(e, args.set) for e in entries]
    demos = DemoSet.load(args.demos) if args.demos else None
    comp = compare(configs, seeds, demos, n_jobs=args.jobs, log=log)
    out = output_dir(args.out)
    write_json(comp, out / "comparison.json")
    export(comp, out / "curves.csv")
    for m, row in comp.final_table().items():
        log(f"{m:>12s}  final R_pi mean {row['mean']:.3f}  min {row['min']:.3f}  max {row['max']:.3f}")
    if comp.partial:
        for key, err in comp.failed:
            log(f"failed: {key}: {err}")
        return 1
    return 0


def cmd_collect(args, log):
    demos = collect_expert_demos(args.env, args.pairs, args.seed)
    out = Path(args.file) if args.file else output_dir(args.out) / f"demos_{args.env}.bin"
    demos.save(out)
    if args.csv:
        demos.to_csv(Path(args.csv))
    log(f"{len(demos)} pairs, R_demo {demos.r_demo:.3f}; wrote {out}")


def cmd_bc(args, log):
    demos = DemoSet.load(args.demos)
    env_name = args.env or demos.env_name
    config = TrainConfig(name="bc", env=env_name, seed=args.seed, hidden=args.hidden)
    spec = make_env(env_name).spec
    agent = SacAgent(spec.obs_dim, spec.act_dim, spec.action_low, spec.action_high, config.hidden,
                     rng=make_rng(args.seed, 0))
    history = bc_pretrain(agent.policy, demos, args.epochs, args.lr, make_rng(args.seed, 6))
    out = output_dir(args.out) / "bc_checkpoint"
    agent.save(out, config.hash)
    r = evaluate_agent(make_env(env_name), agent.policy, args.episodes, args.seed)
    log(f"BC loss {history[-1] if history else float('nan'):.5f}  R_pi {r:.3f}; wrote {out}")


def cmd_eval(args, log):
    agent = SacAgent.load(args.checkpoint)
    r = evaluate_agent(make_env(args.env), agent.policy, args.episodes, args.seed)
    log(f"R_pi {r:.6f}")
    print(json.dumps({"env": args.env, "episodes": args.episodes, "seed": args.seed, "r_pi": r}))


def cmd_export(args, log):
    obj = read_json(args.input)
    path = export(obj, args.output, args.format)
    log(f"wrote {path}")


def make_parser():
    p = argparse.ArgumentParser(prog="drleg", description="SAC with demonstration-guided exploration")
    p.add_argument("-q", "--quiet", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train one config on one seed")
    t.add_argument("--config", help="JSON or YAML config file")
    t.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    t.add_argument("--demos", help="demonstration file (overrides demo_path)")
    t.add_argument("--out")
    t.add_argument("--checkpoints", action="store_true", help="checkpoint at every evaluation")
    t.set_defaults(func=cmd_train)

    c = sub.add_parser("compare", help="train several configs over several seeds")
    c.add_argument("--config", required=True, help="list of configs, or {configs: [...], seeds: [...]}")
    c.add_argument("--seeds", type=int, nargs="+")
    c.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    c.add_argument("--demos")
    c.add_argument("--jobs", type=int, default=1)
    c.add_argument("--out")
    c.set_defaults(func=cmd_compare)

    d = sub.add_parser("collect-demos", help="record scripted-expert demonstrations")
    d.add_argument("--env", required=True, choices=sorted(ENVIRONMENTS))
    d.add_argument("--pairs", type=int, default=1000)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--file", help="output path (default <out>/demos_<env>.bin)")
    d.add_argument("--csv", help="also write a CSV copy")
    d.add_argument("--out")
    d.set_defaults(func=cmd_collect)

    b = sub.add_parser("bc-pretrain", help="behavior-clone a policy and checkpoint it")
    b.add_argument("--demos", required=True)
    b.add_argument("--env")
    b.add_argument("--epochs", type=int, default=100)
    b.add_argument("--lr", type=float, default=1e-3)
    b.add_argument("--hidden", type=int, nargs="+", default=[64, 64])
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--episodes", type=int, default=10)
    b.add_argument("--out")
    b.set_defaults(func=cmd_bc)

    e = sub.add_parser("eval", help="deterministic return of a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--env", required=True, choices=sorted(ENVIRONMENTS))
    e.add_argument("--episodes", type=int, default=10)
    e.add_argument("--seed", type=int, default=0)
    e.set_defaults(func=cmd_eval)

    x = sub.add_parser("export", help="convert record/comparison JSON to CSV or JSON")
    x.add_argument("--input", required=True)
    x.add_argument("--output", required=True)
    x.add_argument("--format", choices=("csv", "json"), default="csv")
    x.set_defaults(func=cmd_export)
    return p


def main(argv=None):
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 2 if e.code else 0
    log = (lambda m: None) if args.quiet else (lambda m: print(m, file=sys.stderr, flush=True))
    try:
        return args.func(args, log) or 0
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except TrainingAborted as e:
        print(f"run aborted: {e}", file=sys.stderr)
        return 1
    except (FileFormatError, FileNotFoundError, ValueError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
