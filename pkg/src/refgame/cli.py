"""Command-line entry points for the simulation lab."""
from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .colors import Condition, generate_context, read_contexts, write_contexts
from .experiments import (
    ExperimentConfig,
    evaluate,
    fit_end_turn_threshold,
    make_test_contexts,
    policy_grid,
    resolve_policy,
    reward_space_analysis,
    sweep,
    write_csv,
    write_manifest,
    _flatten,
)
from .grammar import load_grammar, parse as parse_utterance
from .lexicon import load_lexicon
from .matcher import MatcherKind
from .policies import PolicySpec, PolicyKind
from .rl.dqn import DialogueEnv, TrainConfig, train
from .rl.network import QNetwork


def _load_config(path: str | None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    with open(path) as fh:
        return ExperimentConfig.from_json(json.load(fh))


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_generate_contexts(args) -> int:
    rng = np.random.default_rng(args.seed)
    per = args.count // 3
    extra = args.count - per * 3
    contexts = []
    for i, cond in enumerate(Condition):
        n = per + (1 if i < extra else 0)
        contexts.extend(generate_context(cond, rng) for _ in range(n))
    write_contexts(args.out, contexts)
    print(f"wrote {len(contexts)} contexts to {args.out}")
    return 0


def _contexts_for(args, config: ExperimentConfig):
    if args.contexts:
        return list(read_contexts(args.contexts))
    return make_test_contexts(config.test_contexts, config.seed)


def cmd_evaluate(args) -> int:
    config = _load_config(args.config)
    lexicon = load_lexicon()
    contexts = _contexts_for(args, config)
    out = _out_dir(args)
    rows = []
    for name in args.policy or config.policies:
        policy = resolve_policy(name, lexicon)
        profile = config.profile(kind=MatcherKind(args.matcher or config.matcher))
        result = evaluate(policy, profile, contexts, lexicon, seed=config.eval_seed)
        rows.append({"policy": name, **{k: v for k, v in _flatten(result).items() if k != "policy"}})
        print(
            f"{name:>10}: success {result.success_rate:.3f} +/- {result.ci_half_width:.3f} "
            f"reward {result.avg_reward:.4f} clarifications {result.clarification_rate:.3f}"
        )
    path = out / "evaluation.csv"
    write_csv(path, rows)
    write_manifest(out, config, [path])
    return 0


def cmd_sweep(args) -> int:
    config = _load_config(args.config)
    lexicon = load_lexicon()
    contexts = _contexts_for(args, config)
    grid = {
        "threshold": config.threshold_grid,
        "tau": config.tau_grid,
        "alpha": config.alpha_grid,
    }[args.kind]
    rows = sweep(args.kind, grid, args.policy or config.policies, config, contexts, lexicon)
    out = _out_dir(args)
    path = out / f"sweep_{args.kind}.csv"
    write_csv(path, rows)
    write_manifest(out, config, [path])
    print(f"wrote {len(rows)} rows to {path}")
    return 0


def cmd_train(args) -> int:
    config = _load_config(args.config)
    lexicon = load_lexicon()
    kind = MatcherKind(args.matcher or config.matcher)
    profile = config.profile(kind=kind)
    if args.contexts:
        contexts = list(read_contexts(args.contexts))
    else:
        contexts = make_test_contexts(config.train_contexts, config.seed)
    lr = args.lr if args.lr is not None else (1e-2 if kind is MatcherKind.ALWAYS_SELECT else 7.5e-5)
    train_config = TrainConfig(lr=lr, episodes=args.episodes, seed=config.seed)
    env = DialogueEnv(contexts, profile, lexicon)
    result = train(env, train_config)
    out = _out_dir(args)
    weights_path = out / "weights.json"
    result.network.save(weights_path, seed=config.seed, config_hash=train_config.config_hash())
    log_path = out / "training_log.csv"
    with open(log_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["episode", "reward", "success", "epsilon", "loss"])
        for row in result.log:
            writer.writerow([row.episode, repr(row.reward), int(row.success), repr(row.epsilon), repr(row.loss)])
    write_manifest(out, config, [weights_path, log_path])
    print(f"trained {args.episodes} episodes vs {kind.value}; weights at {weights_path}")
    print(f"weight checksum: {result.network.checksum()}")
    return 0


def cmd_reward_space(args) -> int:
    config = _load_config(args.config)
    lexicon = load_lexicon()
    contexts = _contexts_for(args, config)
    profile = config.profile(kind=MatcherKind(args.matcher or "clarifying"))
    stats = {}
    for name in ("direct", "extended", "mixed"):
        result = evaluate(PolicyKind(name), profile, contexts, lexicon, seed=config.eval_seed)
        stats[name] = (result.success_rate, result.avg_terms)
        print(f"{name:>9}: success {result.success_rate:.3f} avg terms {result.avg_terms:.2f}")
    grid = np.linspace(config.r_term_grid_min, config.r_term_grid_max, config.r_term_grid_steps)
    analysis = reward_space_analysis(stats, grid)
    out = _out_dir(args)
    path = out / "reward_space.csv"
    write_csv(path, analysis["rows"])
    interval = analysis["mixed_dominant_interval"]
    summary_path = out / "reward_space_summary.json"
    with open(summary_path, "w") as fh:
        json.dump({"mixed_dominant_interval": interval, "stats": stats}, fh, indent=1)
    write_manifest(out, config, [path, summary_path])
    if interval:
        print(f"mixed dominates for r_term in [{interval[0]:.4f}, {interval[1]:.4f}]")
    else:
        print("mixed never dominates on this grid")
    return 0


def cmd_policy_grid(args) -> int:
    config = _load_config(args.config)
    network = QNetwork.load(args.weights)
    rng = np.random.default_rng(config.seed)
    context = generate_context(Condition.CLOSE, rng)
    rows = policy_grid(network, context, resolution=args.resolution)
    out = _out_dir(args)
    path = out / "policy_grid.csv"
    write_csv(path, rows)
    theta, consistency = fit_end_turn_threshold(rows)
    summary = {"end_turn_threshold": theta, "step_consistency": consistency}
    summary_path = out / "policy_grid_summary.json"
    with open(summary_path, "w") as fh:
        json.dump(summary, fh, indent=1)
    write_manifest(out, config, [path, summary_path])
    print(f"end-turn threshold ~{theta:.3f} (step fit explains {consistency:.1%} of cells)")
    return 0


def cmd_parse(args) -> int:
    lexicon = load_lexicon()
    grammar = load_grammar()
    try:
        results = parse_utterance(args.utterance, grammar, lexicon)
    except ValueError as exc:
        print(json.dumps({"error": str(exc)}))
        return 1
    print(
        json.dumps(
            [{"lf": lf.to_json(), "probability": prob} for lf, prob in results],
            indent=1,
        )
    )
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    app = create_app(policy_dir=args.policy_dir, static_dir=args.static_dir)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="refgame", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-contexts", help="write a JSONL context file")
    p.add_argument("--count", type=int, default=1000)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate_contexts)

    p = sub.add_parser("evaluate", help="run policies against a matcher")
    p.add_argument("--config")
    p.add_argument("--contexts")
    p.add_argument("--policy", action="append")
    p.add_argument("--matcher", choices=[k.value for k in MatcherKind])
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="parameter sweep with paired seeds")
    p.add_argument("--kind", choices=("threshold", "tau", "alpha"), required=True)
    p.add_argument("--config")
    p.add_argument("--contexts")
    p.add_argument("--policy", action="append")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("train", help="train the value-network director")
    p.add_argument("--config")
    p.add_argument("--contexts")
    p.add_argument("--matcher", choices=[k.value for k in MatcherKind])
    p.add_argument("--episodes", type=int, default=30_000)
    p.add_argument("--lr", type=float)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("reward-space", help="expected reward vs term penalty")
    p.add_argument("--config")
    p.add_argument("--contexts")
    p.add_argument("--matcher", choices=[k.value for k in MatcherKind])
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_reward_space)

    p = sub.add_parser("policy-grid", help="greedy action map of trained weights")
    p.add_argument("--weights", required=True)
    p.add_argument("--config")
    p.add_argument("--resolution", type=int, default=40)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_policy_grid)

    p = sub.add_parser("parse", help="parse one matcher utterance")
    p.add_argument("--utterance", required=True)
    p.set_defaults(func=cmd_parse)

    p = sub.add_parser("serve", help="run the live session service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--policy-dir")
    p.add_argument("--static-dir")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
