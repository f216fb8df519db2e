"""Command-line entry point: train / eval / verify / plot / sweep.

Exit codes: 0 success, 1 failed verification, 2 invalid configuration or
input, 3 training aborted on a non-finite loss (metrics flushed, last good
checkpoint retained).
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys

import numpy as np

from .agent import (
    Agent,
    ENV_DEFAULTS,
    NonFiniteLossError,
    TrainConfig,
    evaluate_policy,
    train,
)
from .envs import make_env
from .graph import TopologyError, factorization_string, resolve_topology
from .mlp import mlp_forward
from .runio import (
    MetricsWriter,
    agent_from_checkpoint,
    load_checkpoint,
    save_checkpoint,
    strip_timing,
    write_run_record,
)
from .svg import MetricsError, plot_files

CONFIG_KEYS = {f.name for f in TrainConfig.__dataclass_fields__.values()}


def _parse_hidden(text: str) -> tuple[int, ...]:
    return tuple(int(p) for p in text.split(",") if p)


def add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file; flags override it")
    p.add_argument("--env", help="environment id")
    p.add_argument("--topology", help="'single', a preset name, or a file path")
    p.add_argument("--seed", type=int)
    p.add_argument("--steps", type=int, dest="total_steps")
    p.add_argument("--start-steps", type=int, dest="start_steps")
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--lr", type=float, help="sets all three learning rates")
    p.add_argument("--lr-v", type=float, dest="lr_v")
    p.add_argument("--lr-q", type=float, dest="lr_q")
    p.add_argument("--lr-pi", type=float, dest="lr_pi")
    p.add_argument("--gamma", type=float)
    p.add_argument("--tau", type=float)
    p.add_argument("--reward-scale", type=float, dest="reward_scale")
    p.add_argument("--buffer-capacity", type=int, dest="buffer_capacity")
    p.add_argument("--target-update-interval", type=int, dest="target_update_interval")
    p.add_argument("--gradient-steps", type=int, dest="gradient_steps")
    p.add_argument("--eval-interval", type=int, dest="eval_interval")
    p.add_argument("--eval-episodes", type=int, dest="eval_episodes")
    p.add_argument("--hidden", type=_parse_hidden, dest="hidden_sizes",
                   help="comma-separated layer widths, e.g. 64,64")
    p.add_argument("--detach-parent-actions", action="store_true", default=None,
                   dest="detach_parent_actions")


def resolve_config(args) -> TrainConfig:
    """Precedence: flags > config file > per-env defaults > dataclass defaults."""
    file_doc = {}
    if args.config:
        with open(args.config) as fh:
            file_doc = json.load(fh)
        unknown = set(file_doc) - CONFIG_KEYS - {"out_dir", "checkpoint_interval",
                                                 "metrics_flush_interval"}
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
    env_id = args.env or file_doc.get("env") or "pendulum"
    merged = dict(ENV_DEFAULTS.get(env_id, {}))
    merged["env"] = env_id
    merged.update({k: v for k, v in file_doc.items() if k in CONFIG_KEYS})
    for key in CONFIG_KEYS:
        val = getattr(args, key, None)
        if val is not None:
            merged[key] = val
    if getattr(args, "lr", None) is not None:
        for k in ("lr_v", "lr_q", "lr_pi"):
            if getattr(args, k, None) is None:
                merged[k] = args.lr
    if "hidden_sizes" in merged:
        merged["hidden_sizes"] = tuple(merged["hidden_sizes"])
    return TrainConfig(**merged).validate()


def cmd_train(args) -> int:
    try:
        cfg = resolve_config(args)
        env = make_env(cfg.env)
        graph = resolve_topology(cfg.topology, env.spec.action_dim)
    except (ValueError, TopologyError, OSError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2

    out_dir = args.out_dir
    os.makedirs(out_dir, exist_ok=True)
    agent = Agent(env.spec, graph, cfg)
    fact = factorization_string(graph)
    print(f"env={cfg.env} topology={cfg.topology} seed={cfg.seed} "
          f"factorization={fact}")
    write_run_record(os.path.join(out_dir, "run.json"), cfg, graph, fact, out_dir,
                     extras={"checkpoint_interval": args.checkpoint_interval})
    metrics = MetricsWriter(os.path.join(out_dir, "metrics.csv"),
                            args.metrics_flush_interval)
    ckpt_interval = args.checkpoint_interval
    state = {"last_eval": None}

    def on_episode(rec, losses):
        metrics.write_row(rec.env_step, rec.episode, rec.episode_return,
                          rec.avg_return_100, losses, rec.wall_ms)

    def on_eval(ev):
        state["last_eval"] = ev
        print(f"eval step={ev.env_step} mean={ev.mean_return:.2f} "
              f"std={ev.std_return:.2f}")

    steps_seen = {"n": 0}
    if ckpt_interval > 0:
        orig_update = agent.update

        def counting_update():
            rep = orig_update()
            steps_seen["n"] += 1
            if steps_seen["n"] % ckpt_interval == 0:
                save_checkpoint(os.path.join(out_dir, f"ckpt_{steps_seen['n']}.json"),
                                agent, steps_seen["n"])
            return rep

        agent.update = counting_update

    try:
        log = train(agent, env, cfg, on_episode=on_episode, on_eval=on_eval)
    except NonFiniteLossError as e:
        metrics.close()
        print(f"error: training aborted: {e}", file=sys.stderr)
        return 3
    metrics.close()
    save_checkpoint(os.path.join(out_dir, f"ckpt_{cfg.total_steps}.json"),
                    agent, cfg.total_steps)
    if args.strip_timing:
        strip_timing(os.path.join(out_dir, "metrics.csv"),
                     os.path.join(out_dir, "metrics.noclock.csv"))
    n_ep = len(log.episodes)
    final = log.episodes[-1].avg_return_100 if n_ep else float("nan")
    print(f"done: {n_ep} episodes, final avg_return_100={final:.2f}")
    return 0


def cmd_eval(args) -> int:
    try:
        doc = load_checkpoint(args.checkpoint)
    except (OSError, ValueError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    if doc.get("kind") == "linear-gain":
        return _eval_linear_gain(doc, args)
    try:
        agent = agent_from_checkpoint(doc)
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    rec = evaluate_policy(lambda: make_env(doc["env"]), agent.policies,
                          args.episodes, args.seed)
    print(json.dumps({"env": doc["env"], "episodes": args.episodes,
                      "seed": args.seed, "mean": rec.mean_return,
                      "std": rec.std_return, "min": rec.min_return,
                      "max": rec.max_return}, sort_keys=True))
    return 0


def _eval_linear_gain(doc: dict, args) -> int:
    from .envs import rollout_lqr

    env = make_env(doc["env"])
    gain = np.array(doc["gain"], dtype=np.float64)
    if gain.shape != (env.spec.action_dim, env.spec.state_dim):
        print(f"error: gain shaped {gain.shape} does not fit {doc['env']}",
              file=sys.stderr)
        return 2
    returns = []
    for k in range(args.episodes):
        x0 = env.reset(seed=(args.seed, k))
        returns.append(rollout_lqr(env, gain, x0))
    arr = np.array(returns)
    print(json.dumps({"env": doc["env"], "episodes": args.episodes,
                      "seed": args.seed, "mean": float(arr.mean()),
                      "std": float(arr.std()) if args.episodes > 1 else 0.0,
                      "min": float(arr.min()), "max": float(arr.max())},
                     sort_keys=True))
    return 0


def cmd_verify(args) -> int:
    from .verify import run_all

    results = run_all(args.seed)
    failed = [r for r in results if not r.passed]
    for r in results:
        print(r.line())
    if failed:
        print(f"{len(failed)} of {len(results)} checks failed: "
              + ", ".join(r.name for r in failed), file=sys.stderr)
        return 1
    print(f"all {len(results)} checks passed")
    return 0


def cmd_plot(args) -> int:
    try:
        plot_files(args.metrics, args.out, title=args.title or "")
    except (MetricsError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    print(f"wrote {args.out}")
    return 0


def cmd_sweep(args) -> int:
    topologies = args.topologies.split(",")
    seeds = [int(s) for s in args.seeds.split(",")]
    os.makedirs(args.out_dir, exist_ok=True)
    jobs = []
    for topo in topologies:
        for seed in seeds:
            run_dir = os.path.join(args.out_dir, f"{topo}_seed{seed}")
            cmd = [sys.executable, "-m", "dagsac", "train",
                   "--env", args.env, "--topology", topo, "--seed", str(seed),
                   "--steps", str(args.steps), "--out-dir", run_dir,
                   "--eval-interval", str(args.eval_interval)]
            if args.start_steps is not None:
                cmd += ["--start-steps", str(args.start_steps)]
            if args.reward_scale is not None:
                cmd += ["--reward-scale", str(args.reward_scale)]
            jobs.append((run_dir, cmd))
    running: list[tuple[str, subprocess.Popen]] = []
    failures = 0
    pending = list(jobs)
    max_par = max(1, args.jobs)
    while pending or running:
        while pending and len(running) < max_par:
            run_dir, cmd = pending.pop(0)
            running.append((run_dir, subprocess.Popen(cmd)))
        run_dir, proc = running.pop(0)
        if proc.wait() != 0:
            print(f"error: run {run_dir} exited {proc.returncode}", file=sys.stderr)
            failures += 1
    if failures:
        return 1
    metrics_files = [os.path.join(d, "metrics.csv") for d, _ in jobs]
    out_svg = os.path.join(args.out_dir, "overlay.svg")
    plot_files(metrics_files, out_svg,
               title=f"{args.env}: {' vs '.join(topologies)}")
    print(f"wrote {out_svg}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dagsac",
                                description="factored soft actor-critic trainer")
    sub = p.add_subparsers(dest="command", required=True)

    pt = sub.add_parser("train", help="run one training job")
    add_train_flags(pt)
    pt.add_argument("--out-dir", required=True)
    pt.add_argument("--checkpoint-interval", type=int, default=0,
                    help="updates between checkpoints; 0 = final only")
    pt.add_argument("--metrics-flush-interval", type=int, default=25)
    pt.add_argument("--strip-timing", action="store_true",
                    help="also write metrics.noclock.csv without wall_ms")
    pt.set_defaults(fn=cmd_train)

    pe = sub.add_parser("eval", help="deterministic evaluation of a checkpoint")
    pe.add_argument("--checkpoint", required=True)
    pe.add_argument("--episodes", type=int, default=10)
    pe.add_argument("--seed", type=int, default=0)
    pe.set_defaults(fn=cmd_eval)

    pv = sub.add_parser("verify", help="run the certificate suite")
    pv.add_argument("--seed", type=int, default=0)
    pv.set_defaults(fn=cmd_verify)

    pp = sub.add_parser("plot", help="render metrics files to one SVG")
    pp.add_argument("metrics", nargs="+")
    pp.add_argument("--out", required=True)
    pp.add_argument("--title")
    pp.set_defaults(fn=cmd_plot)

    ps = sub.add_parser("sweep", help="seed/topology sweep as separate processes")
    ps.add_argument("--env", required=True)
    ps.add_argument("--topologies", required=True,
                    help="comma-separated topology specs")
    ps.add_argument("--seeds", required=True, help="comma-separated seeds")
    ps.add_argument("--steps", type=int, required=True)
    ps.add_argument("--start-steps", type=int, default=None)
    ps.add_argument("--reward-scale", type=float, default=None)
    ps.add_argument("--eval-interval", type=int, default=5000)
    ps.add_argument("--out-dir", required=True)
    ps.add_argument("--jobs", type=int, default=1)
    ps.set_defaults(fn=cmd_sweep)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
