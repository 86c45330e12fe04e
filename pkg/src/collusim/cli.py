"""Command-line entry point.

All numeric hyperparameters live in the scenario YAML; flags only select
commands, paths and seeds. Every artifact-writing command emits a run
manifest with the embedded scenario and output hashes, so `replay
--manifest` can re-execute it byte-identically; `replay --trace` recomputes
metrics from a trace file.

Exit codes: 0 ok, 1 verification mismatch, 2 usage, 3 config invalid,
4 I/O, 5 training diverged.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .atcs import fixed_time_controller, load_atcs, make_controller, train_atcs
from .baselines import parse_arm
from .collusion import save_collusion, train_collusion
from .errors import CheckpointError, CollusimError, ConfigError, TrainingDiverged, ValidationError
from .harness import (
    ABLATION_ARMS,
    ArmRow,
    aggregate,
    attack_training_job,
    evaluate_arm,
    file_sha256,
    load_manifest,
    pool_map,

    write_action_sweep_csv,
    write_curve_csv,
    write_manifest,
    write_metrics_csv,
    write_size_sweep_csv,
)
from .harness import sweep_collusion_size, sweep_action_space
from .network import build_network, serialize_network
from .scenario import ScenarioConfig, desk_scenario, load_scenario, scenario_to_yaml

EXIT_OK = 0
EXIT_VERIFY = 1
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_IO = 4
EXIT_DIVERGED = 5


def _err(kind: str, message: str) -> None:
    print(json.dumps({"error": kind, "detail": message}), file=sys.stderr)


def _seeds(args, cfg: ScenarioConfig) -> list[int]:
    if getattr(args, "seeds", None):
        return [int(s) for s in args.seeds.split(",")]
    env = os.environ.get("COLLUSIM_SEED")
    if env is not None:
        return [int(env)]
    return list(cfg.seeds)


def _load_cfg(path: str) -> ScenarioConfig:
    if not os.path.exists(path):
        raise OSError(f"config file not found: {path}")
    return load_scenario(path)


def _atcs_inputs(atcs_dir: str, network) -> dict[str, str]:
    return {
        f"atcs/{f}": file_sha256(os.path.join(atcs_dir, f))
        for f in sorted(os.listdir(atcs_dir))
        if f.endswith(".ckpt")
    }


def cmd_gen_scenario(args) -> int:
    cfg = desk_scenario(rows=args.rows, cols=args.cols,
                        total_vehicles=args.vehicles, collusion_size=args.collusion)
    text = scenario_to_yaml(cfg)
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    if args.network_out:
        with open(args.network_out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(serialize_network(build_network(cfg.network)))
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_train_atcs(args) -> int:
    cfg = _load_cfg(args.config)
    network = build_network(cfg.network)
    os.makedirs(args.out, exist_ok=True)
    seed = int(args.seed) if args.seed is not None else None
    policy, curve = train_atcs(network, cfg, seed=seed)
    from .atcs import save_atcs

    save_atcs(policy, args.out)
    curve_path = os.path.join(args.out, "atcs_curve.csv")
    write_curve_csv(curve_path, curve)
    outputs = [curve_path] + [
        os.path.join(args.out, f) for f in sorted(os.listdir(args.out)) if f.endswith(".ckpt")
    ]
    write_manifest(args.out, "train-atcs", {"seed": seed, "config": args.config}, cfg, outputs)
    print(f"trained {len(policy.agents)} signal policies -> {args.out}")
    return EXIT_OK


def cmd_train_attack(args) -> int:
    cfg = _load_cfg(args.config)
    network = build_network(cfg.network)
    controller = make_controller(load_atcs(args.atcs, network))
    seeds = _seeds(args, cfg)
    os.makedirs(args.out, exist_ok=True)
    outputs = []
    for seed in seeds:
        out_dir = os.path.join(args.out, f"seed_{seed}")
        model, curve = train_collusion(
            network, cfg, controller, seed, arch=args.arm,
            collusion_size=args.size, a_max=args.a_max,
            episodes=args.episodes, ckpt_dir=out_dir,
        )
        save_collusion(model, out_dir)
        curve_path = os.path.join(out_dir, "attack_curve.csv")
        write_curve_csv(curve_path, curve)
        outputs += [curve_path] + [
            os.path.join(out_dir, f) for f in sorted(os.listdir(out_dir)) if f.endswith(".ckpt")
        ]
    write_manifest(
        args.out, "train-attack",
        {"seeds": seeds, "arm": args.arm, "size": args.size,
         "a_max": args.a_max, "episodes": args.episodes, "config": args.config},
        cfg, outputs, inputs=_atcs_inputs(args.atcs, network),
    )
    print(f"trained attack ({args.arm}) for seeds {seeds} -> {args.out}")
    return EXIT_OK


def _controller_for(args, cfg, network):
    if args.atcs == "fixed-time":
        return fixed_time_controller(network), {}
    return make_controller(load_atcs(args.atcs, network)), _atcs_inputs(args.atcs, network)


def cmd_eval(args) -> int:
    cfg = _load_cfg(args.config)
    network = build_network(cfg.network)
    controller, inputs = _controller_for(args, cfg, network)
    seeds = _seeds(args, cfg)
    parse_arm(args.policy, cfg.a_max)  # fail fast on a bad selector
    os.makedirs(args.out, exist_ok=True)
    trace_dir = os.path.join(args.out, "traces")
    rows, agg = evaluate_arm(network, cfg, controller, args.policy, seeds, trace_dir=trace_dir)
    metrics_path = os.path.join(args.out, "metrics.csv")
    write_metrics_csv(metrics_path, rows, [agg], cfg.seconds_per_step)
    outputs = [metrics_path]
    if os.path.isdir(trace_dir):
        outputs += [os.path.join(trace_dir, f) for f in sorted(os.listdir(trace_dir))]
    write_manifest(
        args.out, "eval",
        {"seeds": seeds, "policy": args.policy, "atcs": args.atcs, "config": args.config},
        cfg, outputs, inputs=inputs,
    )
    if agg.failed_seeds:
        _err("arm-failed", f"seeds failed: {agg.failed_seeds}")
        return EXIT_CONFIG
    print(f"evaluated {args.policy} on seeds {seeds} -> {metrics_path}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _load_cfg(args.config)
    network = build_network(cfg.network)
    inputs = _atcs_inputs(args.atcs, network)
    seeds = _seeds(args, cfg)
    os.makedirs(args.out, exist_ok=True)
    scenario_yaml = cfg.canonical_yaml()
    tasks = [
        (scenario_yaml, args.atcs, arch, seed, None, None, args.episodes, None)
        for arch in ABLATION_ARMS
        for seed in seeds
    ]
    results = pool_map(attack_training_job, tasks, jobs=args.jobs)
    rows_by_arch: dict[str, list[ArmRow]] = {a: [] for a in ABLATION_ARMS}
    outputs = []
    for arch, seed, metrics, curve in results:
        rows_by_arch[arch].append(ArmRow(arch, seed, metrics))
        curve_path = os.path.join(args.out, f"curve_{arch}_seed{seed}.csv")
        write_curve_csv(curve_path, curve)
        outputs.append(curve_path)
    all_rows = []
    aggs = []
    for arch in ABLATION_ARMS:
        all_rows += rows_by_arch[arch]
        aggs.append(aggregate(arch, rows_by_arch[arch]))
    metrics_path = os.path.join(args.out, "ablation.csv")
    write_metrics_csv(metrics_path, all_rows, aggs, cfg.seconds_per_step)
    outputs.append(metrics_path)
    write_manifest(
        args.out, "ablate",
        {"seeds": seeds, "episodes": args.episodes, "config": args.config, "atcs": args.atcs},
        cfg, outputs, inputs=inputs,
    )
    print(f"ablation over {ABLATION_ARMS} seeds {seeds} -> {metrics_path}")
    return EXIT_OK


def cmd_sweep_size(args) -> int:
    cfg = _load_cfg(args.config)
    network = build_network(cfg.network)
    controller, inputs = _controller_for(args, cfg, network)
    sizes = [int(s) for s in args.sizes.split(",")]
    seed = int(args.seed)
    os.makedirs(args.out, exist_ok=True)
    rows = sweep_collusion_size(network, cfg, controller, sizes, seed, episodes=args.episodes)
    path = os.path.join(args.out, "size_sweep.csv")
    write_size_sweep_csv(path, rows)
    write_manifest(
        args.out, "sweep-size",
        {"seed": seed, "sizes": sizes, "episodes": args.episodes,
         "config": args.config, "atcs": args.atcs},
        cfg, [path], inputs=inputs,
    )
    print(f"size sweep {sizes} -> {path}")
    return EXIT_OK


def cmd_sweep_action(args) -> int:
    cfg = _load_cfg(args.config)
    network = build_network(cfg.network)
    controller, inputs = _controller_for(args, cfg, network)
    caps = [int(c) for c in args.caps.split(",")]
    seed = int(args.seed)
    os.makedirs(args.out, exist_ok=True)
    rows = sweep_action_space(network, cfg, controller, caps, seed, episodes=args.episodes)
    path = os.path.join(args.out, "action_sweep.csv")
    write_action_sweep_csv(path, rows)
    write_manifest(
        args.out, "sweep-action",
        {"seed": seed, "caps": caps, "episodes": args.episodes,
         "config": args.config, "atcs": args.atcs},
        cfg, [path], inputs=inputs,
    )
    print(f"action sweep {caps} -> {path}")
    return EXIT_OK


def cmd_replay(args) -> int:
    if bool(args.trace) == bool(args.manifest):
        raise ConfigError("replay needs exactly one of --trace or --manifest")
    if args.trace:
        from .trace import parse_trace, replay_metrics

        if not os.path.exists(args.trace):
            raise OSError(f"trace file not found: {args.trace}")
        metrics = replay_metrics(parse_trace(args.trace))
        print(json.dumps({
            "reward": metrics.reward,
            "col_travel_avg": metrics.col_travel_avg,
            "col_wait_avg": metrics.col_wait_avg,
            "oth_travel_avg": metrics.oth_travel_avg,
            "oth_wait_avg": metrics.oth_wait_avg,
        }, sort_keys=True))
        return EXIT_OK

    if not os.path.exists(args.manifest):
        raise OSError(f"manifest not found: {args.manifest}")
    manifest = load_manifest(args.manifest)
    outdir = args.out
    if not outdir:
        raise ConfigError("replay --manifest needs --out")
    os.makedirs(outdir, exist_ok=True)
    cfg_path = os.path.join(outdir, "scenario.yaml")
    with open(cfg_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(manifest["scenario_yaml"])
    margs = manifest["args"]
    command = manifest["command"]
    replay_argv = ["--config", cfg_path, "--out", outdir]
    if command == "eval":
        replay_argv = ["eval", *replay_argv, "--policy", margs["policy"],
                       "--atcs", margs["atcs"],
                       "--seeds", ",".join(str(s) for s in margs["seeds"])]
    elif command == "train-atcs":
        replay_argv = ["train-atcs", *replay_argv]
        if margs.get("seed") is not None:
            replay_argv += ["--seed", str(margs["seed"])]
    elif command == "train-attack":
        replay_argv = ["train-attack", *replay_argv, "--atcs", margs["atcs"],
                       "--arm", margs.get("arm", "full"),
                       "--seeds", ",".join(str(s) for s in margs["seeds"])]
        if margs.get("episodes"):
            replay_argv += ["--episodes", str(margs["episodes"])]
    elif command == "ablate":
        replay_argv = ["ablate", *replay_argv, "--atcs", margs["atcs"],
                       "--seeds", ",".join(str(s) for s in margs["seeds"])]
        if margs.get("episodes"):
            replay_argv += ["--episodes", str(margs["episodes"])]
    elif command == "sweep-size":
        replay_argv = ["sweep-size", *replay_argv, "--atcs", margs["atcs"],
                       "--seed", str(margs["seed"]),
                       "--sizes", ",".join(str(s) for s in margs["sizes"])]
        if margs.get("episodes"):
            replay_argv += ["--episodes", str(margs["episodes"])]
    elif command == "sweep-action":
        replay_argv = ["sweep-action", *replay_argv, "--atcs", margs["atcs"],
                       "--seed", str(margs["seed"]),
                       "--caps", ",".join(str(c) for c in margs["caps"])]
        if margs.get("episodes"):
            replay_argv += ["--episodes", str(margs["episodes"])]
    else:
        raise ConfigError(f"manifest command {command!r} is not replayable")
    code = main(replay_argv)
    if code != EXIT_OK:
        return code
    mismatches = []
    for rel, sha in manifest["outputs"].items():
        path = os.path.join(outdir, rel)
        if not os.path.exists(path):
            mismatches.append(f"{rel}: missing")
        elif file_sha256(path) != sha:
            mismatches.append(f"{rel}: hash differs")
    if mismatches:
        _err("replay-mismatch", "; ".join(mismatches))
        return EXIT_VERIFY
    print(f"replay verified: {len(manifest['outputs'])} outputs byte-identical")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="collusim",
        description="Queue-world traffic control and falsified-report collusion experiments.",
    )
    p.add_argument("--verbose", "-v", action="store_true", help="chatty logging")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-scenario", help="write a scenario config file")
    g.add_argument("--out", required=True)
    g.add_argument("--rows", type=int, default=3)
    g.add_argument("--cols", type=int, default=3)
    g.add_argument("--vehicles", type=int, default=500)
    g.add_argument("--collusion", type=int, default=20)
    g.add_argument("--network-out", default=None, help="also write the built network file")
    g.set_defaults(fn=cmd_gen_scenario)

    t = sub.add_parser("train-atcs", help="train and freeze the signal policies")
    t.add_argument("--config", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--seed", default=None)
    t.set_defaults(fn=cmd_train_atcs)

    a = sub.add_parser("train-attack", help="train the collusion group per seed")
    a.add_argument("--config", required=True)
    a.add_argument("--atcs", required=True)
    a.add_argument("--out", required=True)
    a.add_argument("--seeds", default=None, help="comma-separated; default: scenario seeds")
    a.add_argument("--arm", default="full", choices=list(ABLATION_ARMS))
    a.add_argument("--size", type=int, default=None, help="override collusion size")
    a.add_argument("--a-max", type=int, default=None, help="override action cap")
    a.add_argument("--episodes", type=int, default=None)
    a.set_defaults(fn=cmd_train_attack)

    e = sub.add_parser("eval", help="evaluate a vehicle policy across seeds")
    e.add_argument("--config", required=True)
    e.add_argument("--atcs", required=True, help="checkpoint dir or 'fixed-time'")
    e.add_argument("--policy", required=True, help="none | all:<k> | random:<cap> | learned:<dir>")
    e.add_argument("--seeds", default=None)
    e.add_argument("--out", required=True)
    e.set_defaults(fn=cmd_eval)

    b = sub.add_parser("ablate", help="train and evaluate all four architecture arms")
    b.add_argument("--config", required=True)
    b.add_argument("--atcs", required=True)
    b.add_argument("--out", required=True)
    b.add_argument("--seeds", default=None)
    b.add_argument("--episodes", type=int, default=None)
    b.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    b.set_defaults(fn=cmd_ablate)

    ss = sub.add_parser("sweep-size", help="nested collusion-size sweep")
    ss.add_argument("--config", required=True)
    ss.add_argument("--atcs", required=True)
    ss.add_argument("--sizes", required=True)
    ss.add_argument("--seed", required=True)
    ss.add_argument("--episodes", type=int, default=None)
    ss.add_argument("--out", required=True)
    ss.set_defaults(fn=cmd_sweep_size)

    sa = sub.add_parser("sweep-action", help="learned vs greedy across action caps")
    sa.add_argument("--config", required=True)
    sa.add_argument("--atcs", required=True)
    sa.add_argument("--caps", required=True)
    sa.add_argument("--seed", required=True)
    sa.add_argument("--episodes", type=int, default=None)
    sa.add_argument("--out", required=True)
    sa.set_defaults(fn=cmd_sweep_action)

    r = sub.add_parser("replay", help="recompute metrics from a trace, or re-run a manifest")
    r.add_argument("--trace", default=None)
    r.add_argument("--manifest", default=None)
    r.add_argument("--out", default=None)
    r.set_defaults(fn=cmd_replay)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code not in (0,) else EXIT_OK
    try:
        return args.fn(args)
    except (ConfigError, ValidationError, CheckpointError) as e:
        _err("config-invalid", str(e))
        return EXIT_CONFIG
    except TrainingDiverged as e:
        _err("training-diverged", f"{e} {e.diagnostics}")
        return EXIT_DIVERGED
    except OSError as e:
        _err("io-error", str(e))
        return EXIT_IO
    except CollusimError as e:
        _err("error", str(e))
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
