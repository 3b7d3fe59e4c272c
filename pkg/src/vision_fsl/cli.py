"""Command-line interface.

Subcommands: prepare, train, eval, gen-tasks, verify-anchors, ablate.
Options may also come from a ``key = value`` config file (``--config``);
flags given on the command line win. The seed falls back to ``VISION_SEED``.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, ParseError, VisionError
from .features import load_or_compute
from .graph import load_dataset
from .model import NetConfig, init_params
from .ndmath import OptimizerState
from .tasks import (
    TaskGenConfig,
    anchor_distinct_probability,
    anchor_diversity_monte_carlo,
    dump_episodes,
    gen_eval_episode,
    gen_pseudo_task,
)
from .training import TrainConfig, load_checkpoint, meta_test, save_checkpoint, train

log = logging.getLogger("vision_fsl")

# (classes, ways) pairs tabulated by default
ANCHOR_TABLE = ((7, 2), (6, 2), (40, 5), (70, 5))

ABLATIONS = {
    "full": {},
    "no_local": {"no_local": True},
    "no_global": {"no_global": True},
    "no_task_context": {"no_task_context": True},
    "no_local_no_global": {"no_local": True, "no_global": True},
}


def read_config(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment, dashes in keys become underscores."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep or not key.strip():
                raise ParseError(path, lineno, f"expected 'key = value', got {line!r}")
            out[key.strip().replace("-", "_")] = value.strip()
    return out


def _parse_bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigurationError(f"not a boolean: {text!r}")


def _apply_config(parser: argparse.ArgumentParser, config: dict) -> None:
    actions = {a.dest: a for a in parser._actions}
    defaults = {}
    for key, value in config.items():
        if key == "config":
            continue
        if key not in actions:
            raise ConfigurationError(f"unknown config key {key!r}")
        actions[key].required = False
        if isinstance(actions[key], argparse._StoreTrueAction):
            defaults[key] = _parse_bool(value)
        else:
            defaults[key] = value  # converted by argparse like a command-line string
    parser.set_defaults(**defaults)


def _add_data(p):
    p.add_argument("--data", required=True, help="dataset directory (features.txt, edges.txt, labels.txt, split.txt)")
    p.add_argument("--cache", default=None, help="directory for the adaptive-feature cache")


def _add_seed(p):
    p.add_argument("--seed", type=int, default=None, help="RNG seed (default: $VISION_SEED, else 0)")


def _add_episode(p, m_default):
    p.add_argument("--n-way", type=int, default=2)
    p.add_argument("--k-shot", type=int, default=5)
    p.add_argument("--m-query", type=int, default=m_default)


def _add_training(p):
    d = TrainConfig()
    p.add_argument("--episodes", type=int, default=d.episodes_total)
    p.add_argument("--lr", type=float, default=d.lr)
    p.add_argument("--weight-decay", type=float, default=d.weight_decay)
    p.add_argument("--label-smoothing", type=float, default=d.label_smoothing)
    p.add_argument("--lam", type=float, default=d.lam, help="contrastive loss weight")
    p.add_argument("--con-tau", type=float, default=d.con_tau, help="contrastive temperature")
    p.add_argument("--noise-std", type=float, default=d.noise_std)
    p.add_argument("--eval-every", type=int, default=d.eval_every)
    p.add_argument("--val-episodes", type=int, default=d.val_episodes)
    p.add_argument("--train-inputs", choices=("adaptive", "raw"), default=d.train_inputs)
    n = NetConfig(in_dim=1)
    p.add_argument("--hidden-dim", type=int, default=n.hidden_dim)
    p.add_argument("--attn-heads", type=int, default=n.attn_heads)
    p.add_argument("--layers", type=int, default=n.num_layers)
    p.add_argument("--ffn-dim", type=int, default=n.ffn_dim)
    p.add_argument("--readout-heads", type=int, default=n.readout_heads)
    p.add_argument("--readout-dim", type=int, default=n.readout_dim)
    p.add_argument("--k-neigh", type=int, default=n.k_neigh)


def _add_eval(p, separate_query=False):
    p.add_argument("--runs", type=int, default=5)
    p.add_argument("--eval-episodes", type=int, default=100)
    if separate_query:
        p.add_argument("--eval-m-query", type=int, default=10, help="queries per class at meta-test")
    p.add_argument("--features", choices=("raw", "adaptive"), default="raw", help="network inputs at meta-test")
    p.add_argument("--workers", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="vision-fsl", description="Unsupervised few-shot node classification")
    ap.add_argument("--config", default=None, help="key = value file; command-line flags override it")
    ap.add_argument("--log-level", default="WARNING")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="build the adaptive-feature cache")
    _add_data(p)

    p = sub.add_parser("train", help="unsupervised meta-training")
    _add_data(p)
    _add_seed(p)
    _add_episode(p, 5)
    _add_training(p)
    for flag in ("--no-local", "--no-global", "--no-task-context"):
        p.add_argument(flag, action="store_true")
    p.add_argument("--out", required=True, help="checkpoint path")

    p = sub.add_parser("eval", help="fine-tuning-free meta-testing")
    _add_data(p)
    _add_seed(p)
    _add_episode(p, 10)
    _add_eval(p)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--phase", choices=("val", "test"), default="test")
    p.add_argument("--out", default=None, help="result file (JSON); a .txt table row is written beside it")

    p = sub.add_parser("gen-tasks", help="write episodes as JSON lines")
    _add_data(p)
    _add_seed(p)
    _add_episode(p, 5)
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--phase", choices=("pseudo", "train", "val", "test"), default="pseudo")
    p.add_argument("--pool-size", type=int, default=4096)
    p.add_argument("--out", required=True)

    p = sub.add_parser("verify-anchors", help="anchor class-diversity statistics")
    p.add_argument("--classes", type=int, default=None)
    p.add_argument("--ways", type=int, default=None)
    p.add_argument("--data", default=None, help="also run the Monte Carlo estimate on this dataset")
    p.add_argument("--trials", type=int, default=10000)
    p.add_argument("--all-labeled", action="store_true", help="draw from every labeled node, not only train classes")
    _add_seed(p)

    p = sub.add_parser("ablate", help="train and evaluate the full model and its four ablations")
    _add_data(p)
    _add_seed(p)
    _add_episode(p, 5)
    _add_training(p)
    _add_eval(p, separate_query=True)
    p.add_argument("--out", required=True, help="output directory")
    return ap


def _resolve_seed(args) -> int:
    if getattr(args, "seed", None) is not None:
        return args.seed
    env = os.environ.get("VISION_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ConfigurationError(f"VISION_SEED must be an integer, got {env!r}") from None
    return 0


def _load(args):
    g, split = load_dataset(args.data)
    return g, split


def _net_config(args, in_dim, **flags) -> NetConfig:
    return NetConfig(in_dim=in_dim, hidden_dim=args.hidden_dim, attn_heads=args.attn_heads,
                     num_layers=args.layers, ffn_dim=args.ffn_dim, readout_heads=args.readout_heads,
                     readout_dim=args.readout_dim, k_neigh=args.k_neigh, max_way=max(10, args.n_way), **flags)


def _train_config(args, seed) -> TrainConfig:
    return TrainConfig(episodes_total=args.episodes, lr=args.lr, weight_decay=args.weight_decay,
                       label_smoothing=args.label_smoothing, lam=args.lam, con_tau=args.con_tau,
                       noise_std=args.noise_std, eval_every=args.eval_every, val_episodes=args.val_episodes,
                       n_way=args.n_way, k_shot=args.k_shot, m_query=args.m_query,
                       train_inputs=args.train_inputs, seed=seed)


def _provenance(args) -> dict:
    """Every flag except the output path, so identical runs give identical files."""
    return {k: v for k, v in sorted(vars(args).items()) if k != "out"}


def _run_training(g, split, af, net_cfg, tcfg):
    params = init_params(net_cfg, np.random.default_rng([tcfg.seed, 3]))
    opt = OptimizerState(lr=tcfg.lr, weight_decay=tcfg.weight_decay, lr_floor=tcfg.lr_floor,
                         horizon=tcfg.episodes_total)
    return train(g, af, params, opt, net_cfg, tcfg, split)


def cmd_prepare(args) -> int:
    g, _ = _load(args)
    af = load_or_compute(g, args.cache or Path(args.data) / "cache")
    print(f"adaptive features: {g.num_nodes} nodes, mean gate {float(np.mean(af.gate)):.4f}, hash {af.graph_hash[:16]}")
    return 0


def cmd_train(args) -> int:
    seed = _resolve_seed(args)
    g, split = _load(args)
    af = load_or_compute(g, args.cache)
    flags = {k: getattr(args, k) for k in ("no_local", "no_global", "no_task_context")}
    net_cfg = _net_config(args, g.num_features, **flags)
    tcfg = _train_config(args, seed)
    res = _run_training(g, split, af, net_cfg, tcfg)
    out = Path(args.out)
    save_checkpoint(out, res.params, net_cfg, {
        "seed": seed, "train": asdict(tcfg), "best_val": res.best_val, "best_step": res.best_step,
        "args": _provenance(args),
    })
    with open(out.with_suffix(".log.jsonl"), "w", encoding="utf-8") as fh:
        for rec in res.log:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    print(f"checkpoint {out} (best val {res.best_val} at step {res.best_step}); param digest {res.params.digest()[:16]}")
    return 0


def _evaluate(args, g, split, params, net_cfg, seed, dataset):
    features = g.features if args.features == "raw" else load_or_compute(g, args.cache).x_task
    m_query = args.eval_m_query if args.command == "ablate" else args.m_query
    return meta_test(g, split, params, net_cfg, args.n_way, args.k_shot, m_query, runs=args.runs,
        episodes=args.eval_episodes, seed=seed, features=features, phase=getattr(args, "phase", "test"),
        dataset=dataset, workers=args.workers, config=_provenance(args))


def cmd_eval(args, parser) -> int:
    if not args.checkpoint:
        parser.error("eval requires --checkpoint")
    if not Path(args.checkpoint).exists():
        parser.error(f"checkpoint not found: {args.checkpoint}")
    seed = _resolve_seed(args)
    g, split = _load(args)
    if split is None:
        raise ConfigurationError(f"{args.data} has no split.txt")
    params, net_cfg, _ = load_checkpoint(args.checkpoint)
    report = _evaluate(args, g, split, params, net_cfg, seed, Path(args.data).name)
    if args.out:
        report.write(args.out)
    print(report.table_row())
    print("per-run: " + " ".join(f"{a:.4f}" for a in report.run_accuracies))
    return 0


def cmd_gen_tasks(args) -> int:
    seed = _resolve_seed(args)
    g, split = _load(args)
    eps = []
    if args.phase == "pseudo":
        af = load_or_compute(g, args.cache)
        pool = min(args.pool_size, g.num_nodes - args.n_way)
        cfg = TaskGenConfig(args.n_way, args.k_shot, args.m_query, pool, seed)
        for i in range(args.count):
            eps.append(gen_pseudo_task(af, cfg, np.random.default_rng([seed, i])))
    else:
        if split is None:
            raise ConfigurationError(f"{args.data} has no split.txt")
        for i in range(args.count):
            eps.append(gen_eval_episode(g, split, args.phase, args.n_way, args.k_shot, args.m_query,
                                        np.random.default_rng([seed, i])))
    dump_episodes(eps, args.out)
    print(f"wrote {len(eps)} episodes to {args.out}")
    return 0


def cmd_verify_anchors(args, parser) -> int:
    if args.classes is not None and args.ways is None:
        parser.error("--classes needs --ways")
    if args.classes is not None:
        print(f"{anchor_distinct_probability(args.classes, args.ways):.6f}")
    elif args.data is None:
        print("classes ways P(all distinct)")
        for c, n in ANCHOR_TABLE:
            print(f"{c:7d} {n:4d} {anchor_distinct_probability(c, n):.6f}")
    if args.data is not None:
        g, split = _load(args)
        classes = None
        if not args.all_labeled:
            if split is None:
                raise ConfigurationError(f"{args.data} has no split.txt; pass --all-labeled")
            classes = split.train_classes
        n = args.ways or 2
        mean = anchor_diversity_monte_carlo(g, n, args.trials, np.random.default_rng(_resolve_seed(args)), classes)
        print(f"{Path(args.data).name}: mean distinct classes over {args.trials} draws of {n}: {mean:.4f}")
    return 0


def cmd_ablate(args) -> int:
    seed = _resolve_seed(args)
    g, split = _load(args)
    if split is None:
        raise ConfigurationError(f"{args.data} has no split.txt")
    af = load_or_compute(g, args.cache)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    tcfg = _train_config(args, seed)
    rows = []
    for name, flags in ABLATIONS.items():
        net_cfg = _net_config(args, g.num_features, **flags)
        res = _run_training(g, split, af, net_cfg, tcfg)
        save_checkpoint(out / f"{name}.bin", res.params, net_cfg, {"seed": seed, "train": asdict(tcfg)})
        report = _evaluate(args, g, split, res.params, net_cfg, seed, f"{Path(args.data).name}:{name}")
        report.write(out / f"{name}.json")
        rows.append(report.table_row())
        print(rows[-1])
    (out / "ablation.txt").write_text("\n".join(rows) + "\n", encoding="utf-8")
    return 0


def _scan(argv, parser):
    """Find the --config value and the subcommand without a full parse."""
    commands = parser._subparsers._group_actions[0].choices
    config_path = command = None
    for i, tok in enumerate(argv):
        if tok == "--config" and i + 1 < len(argv):
            config_path = argv[i + 1]
        elif tok.startswith("--config="):
            config_path = tok.split("=", 1)[1]
        elif tok in commands and command is None and (i == 0 or argv[i - 1] != "--config"):
            command = tok
    return config_path, command


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        config_path, command = _scan(argv, parser)
        if config_path and command:
            _apply_config(parser._subparsers._group_actions[0].choices[command], read_config(config_path))
        args = parser.parse_args(argv)
        logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                            format="%(levelname)s %(name)s: %(message)s")
        if args.command == "prepare":
            return cmd_prepare(args)
        if args.command == "train":
            return cmd_train(args)
        if args.command == "eval":
            return cmd_eval(args, parser)
        if args.command == "gen-tasks":
            return cmd_gen_tasks(args)
        if args.command == "verify-anchors":
            return cmd_verify_anchors(args, parser)
        return cmd_ablate(args)
    except (VisionError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
