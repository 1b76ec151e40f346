"""Command-line entry point: ``c3dm {gen-data,train,eval,ablate}``.

Exit codes: 0 success, 2 configuration error, 3 divergence (non-finite loss
or action), 4 I/O error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .. import nn
from ..fddp import MODES, DivergenceError, train
from ..nn import WeightFormatError
from ..schedules import NoiseVariant
from .config import ConfigError, ExperimentConfig, load_config, save_config
from .data import build_demos, read_dataset, write_dataset
from .experiments import (ABLATIONS, ModelActor, ModelCache, OracleActor, RandomActor, evaluate, run_ablation,
                          train_config_for)
from .metrics import SUMMARY_SEED, read_loss_csv, summarize, write_loss_csv, write_metrics

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_IO = 0, 2, 3, 4

log = logging.getLogger("c3dm")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON experiment config")
    p.add_argument("--seed", type=int)
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--variant", choices=[v.value for v in NoiseVariant])
    p.add_argument("--n-steps", type=int)
    p.add_argument("--n-demos", type=int)
    p.add_argument("--out", type=Path)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="c3dm", description="Fixation-while-denoising diffusion policy workbench")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write oracle demonstrations and a manifest")
    _common(g)

    t = sub.add_parser("train", help="train a policy; writes weights.c3w and loss.csv")
    _common(t)
    t.add_argument("--data", type=Path, help="dataset directory from gen-data (default: generate from --seed)")
    t.add_argument("--epochs", type=int)
    t.add_argument("--resume", type=Path, help="checkpoint to continue from")

    e = sub.add_parser("eval", help="evaluate a policy; writes metrics.csv")
    _common(e)
    who = e.add_mutually_exclusive_group(required=True)
    who.add_argument("--weights", type=Path)
    who.add_argument("--oracle-policy", action="store_true")
    who.add_argument("--random-policy", action="store_true")
    e.add_argument("--n-eval", type=int, help="episodes per seed")
    e.add_argument("--n-seeds", type=int)
    e.add_argument("--ood", action="store_true", help="swap distractors for unseen shapes and colours")
    e.add_argument("--traces", action="store_true", help="write one PPM per denoising step")
    e.add_argument("--experiment", default="eval")

    a = sub.add_parser("ablate", help="run an ablation matrix over seeds")
    _common(a)
    a.add_argument("--which", choices=ABLATIONS, required=True)
    a.add_argument("--n-seeds", type=int)
    a.add_argument("--n-eval", type=int)
    a.add_argument("--epochs", type=int)
    a.add_argument("--weights-dir", type=Path, help="cache trained weights here")
    return ap


def resolve_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    return cfg.with_overrides(seed=args.seed, mode=args.mode, n_steps=args.n_steps, n_demos=args.n_demos,
                              out=args.out, variant=args.variant,
                              n_eval_episodes=getattr(args, "n_eval", None),
                              n_seeds=getattr(args, "n_seeds", None), epochs=getattr(args, "epochs", None))


def cmd_gen_data(cfg: ExperimentConfig, args) -> int:
    manifest = write_dataset(cfg.output_dir, cfg.task, cfg.seed, cfg.n_demos)
    print(manifest)
    return EXIT_OK


def cmd_train(cfg: ExperimentConfig, args) -> int:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    if args.data is not None:
        task, demos = read_dataset(args.data)
        cfg = replace(cfg, task=task, n_demos=len(demos))
    else:
        demos = build_demos(cfg.task, cfg.seed, cfg.n_demos)
    params, adam, start_epoch, history = None, None, 0, []
    if args.resume is not None:
        params, step, (m, v) = nn.load_checkpoint(args.resume)
        adam = nn.AdamState(lr=cfg.train.lr, step=step, m=m, v=v)
        loss_path = Path(args.resume).with_name("loss.csv")
        if loss_path.exists():
            history = [v for _, v in read_loss_csv(loss_path)]
            start_epoch = len(history)
        log.info("resuming from %s at optimiser step %d, epoch %d", args.resume, step, start_epoch)
    res = train(demos, train_config_for(cfg, cfg.seed), cfg.model, params, adam,
                progress=lambda ep, loss: log.info("epoch %d loss %.5g", start_epoch + ep, loss))
    nn.save_params(res.params, out / "weights.c3w", res.adam)
    write_loss_csv(out / "loss.csv", history + res.loss_curve)
    save_config(cfg, out / "config.json")
    print(f"step {res.adam.step} loss {res.loss_curve[-1] if res.loss_curve else float('nan'):.6g}")
    return EXIT_OK


def cmd_eval(cfg: ExperimentConfig, args) -> int:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    if args.oracle_policy:
        actor, variant = OracleActor(), "oracle"
    elif args.random_policy:
        actor, variant = RandomActor(), "random"
    else:
        actor, variant = ModelActor(nn.load_params(args.weights)), None
    rows = []
    for seed in cfg.seeds:
        trace_dir = out / "traces" / f"seed{seed}" if args.traces else None
        row = evaluate(actor, cfg, seed, args.experiment, ood=args.ood, trace_dir=trace_dir)
        if variant is not None:
            row = replace(row, variant=variant)
        rows.append(row)
        print(f"seed {seed}: success {row.success_rate:.3f} pick {row.pick_err_m:.4f} m "
              f"place {row.place_err_m:.4f} m")
    write_metrics(out / "metrics.csv", rows + (summarize(rows) if len(rows) > 1 else []))
    return EXIT_OK


def cmd_ablate(cfg: ExperimentConfig, args) -> int:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    cache = ModelCache(cfg, weights_dir=args.weights_dir, log=log.info)
    rows = run_ablation(args.which, cfg, cache, log=log.info)
    write_metrics(out / "metrics.csv", rows)
    for seed in cfg.seeds:
        write_metrics(out / f"metrics_seed{seed}.csv", [r for r in rows if r.seed == seed])
    for r in rows:
        if r.seed == SUMMARY_SEED:
            print(f"{r.experiment}: median success {r.success_rate:.3f}")
    return EXIT_OK


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "eval": cmd_eval, "ablate": cmd_ablate}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s", stream=sys.stderr)
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (OSError, WeightFormatError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
