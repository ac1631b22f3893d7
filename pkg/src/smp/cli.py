"""Command line entry point: ``smp train|eval|enumerate|reroot|analyze``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .errors import SmpError
from .morphology import (VariantSet, default_feasibility, enumerate_variants, graph_from_dict,
                         load_morphology, max_children, min_limbs)
from .sim import EnvConfig

log = logging.getLogger("smp")


def _variant_set(path) -> VariantSet:
    with open(path) as fh:
        doc = json.load(fh)
    if "variants" in doc:
        return VariantSet.from_dict(doc)
    g = graph_from_dict(doc)
    return VariantSet(g, [g], [0], [])


def _env_config(args) -> EnvConfig:
    if getattr(args, "env_config", None):
        return EnvConfig.from_json(Path(args.env_config).read_text())
    return EnvConfig()


def cmd_train(args):
    from .trainer import TrainConfig, train_joint
    graphs, bases = [], []
    for path in args.variants:
        vs = _variant_set(path)
        graphs += vs.train
        bases.append(vs.base)
    cfg = TrainConfig(scheme=args.scheme, arch=args.arch, total_steps=args.steps, seed=args.seed,
                      hidden=args.hidden, warmup_steps=args.warmup,
                      eval_interval=args.eval_interval, eval_episodes=args.eval_episodes,
                      concurrent=args.concurrent, env=_env_config(args),
                      c_max=max_children(bases))
    rec = train_joint(graphs, cfg, args.out, log=log.info)
    print(json.dumps(rec.final_eval(), indent=2, sort_keys=True))


def cmd_eval(args):
    from .trainer import evaluate, load_actor
    vs = _variant_set(args.variants)
    graphs = vs.heldout if args.heldout_only else vs.variants
    actor = load_actor(args.checkpoint)
    res = evaluate(actor, graphs, args.episodes, args.seed, _env_config(args))
    rows = [(name, mean, std) for name, (mean, std) in res.items()]
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        with open(args.out, "w") as fh:
            fh.write("variant,mean_return,std_return\n")
            for r in rows:
                fh.write(f"{r[0]},{r[1]!r},{r[2]!r}\n")
    for r in rows:
        print(f"{r[0]}\t{r[1]:.3f}\t{r[2]:.3f}")


def cmd_enumerate(args):
    base = load_morphology(args.base)
    feas = min_limbs(args.min_limbs) if args.min_limbs else default_feasibility
    vs = enumerate_variants(base, feas, args.heldout_fraction, args.seed)
    Path(args.out).write_text(vs.to_json())
    print(f"{len(vs.variants)} variants ({len(vs.train_split)} train, "
          f"{len(vs.heldout_split)} held out)")


def cmd_reroot(args):
    from .trainer import TrainConfig, reroot_experiment
    base = load_morphology(args.base)
    cfg = TrainConfig(scheme=args.scheme, total_steps=args.steps, seed=args.seed,
                      hidden=args.hidden, warmup_steps=args.warmup,
                      eval_interval=args.eval_interval, env=_env_config(args))
    _, _, summary = reroot_experiment(base, args.root, cfg, args.out)
    print(json.dumps(summary, indent=2, sort_keys=True))


def cmd_analyze(args):
    from .analysis import (PROJECTION_NOTE, dominant_period, message_range_correlation,
                           record_messages, root_message_projection)
    from .trainer import load_actor
    g = _variant_set(args.variant).variants[0]
    actor = load_actor(args.checkpoint)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    mlog = record_messages(actor, g, args.episodes, args.seed, _env_config(args),
                           out / "messages.csv")
    z = root_message_projection(mlog, g.root)
    with open(out / "projection.csv", "w") as fh:
        fh.write(f"# {PROJECTION_NOTE}\n")
        fh.write("t,root_message_1d\n")
        for t, v in enumerate(z):
            fh.write(f"{t},{v!r}\n")
    message_range_correlation(mlog, g, out / "correlation.csv")
    print(f"root message period: {dominant_period(z)} steps")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="smp", description="Shared modular policies for planar agents")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, steps=True):
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--env-config", help="JSON file with simulator settings")
        if steps:
            sp.add_argument("--scheme", default="both_way",
                            choices=["none", "bottom_up", "top_down", "both_way"])
            sp.add_argument("--steps", type=int, default=100_000)
            sp.add_argument("--hidden", type=int, default=256)
            sp.add_argument("--warmup", type=int, default=10_000)
            sp.add_argument("--eval-interval", type=int, default=10_000)

    sp = sub.add_parser("train", help="train one shared policy on several morphologies")
    sp.add_argument("--variants", nargs="+", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--arch", default="modular", choices=["modular", "monolithic"])
    sp.add_argument("--eval-episodes", type=int, default=1)
    sp.add_argument("--concurrent", action="store_true")
    common(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a saved actor")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--variants", required=True)
    sp.add_argument("--heldout-only", action="store_true")
    sp.add_argument("--episodes", type=int, default=5)
    sp.add_argument("--out")
    common(sp, steps=False)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("enumerate", help="list feasible variants of a base morphology")
    sp.add_argument("--base", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--min-limbs", type=int)
    sp.add_argument("--heldout-fraction", type=float, default=0.2)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_enumerate)

    sp = sub.add_parser("reroot", help="compare torso-rooted and re-rooted message trees")
    sp.add_argument("--base", required=True)
    sp.add_argument("--root", required=True)
    sp.add_argument("--out")
    common(sp)
    sp.set_defaults(func=cmd_reroot)

    sp = sub.add_parser("analyze", help="record and project messages of a trained policy")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--variant", required=True)
    sp.add_argument("--episodes", type=int, default=1)
    sp.add_argument("--out", required=True)
    common(sp, steps=False)
    sp.set_defaults(func=cmd_analyze)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s")
    try:
        args.func(args)
    except (SmpError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
