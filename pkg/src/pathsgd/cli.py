"""Command-line interface.

Subcommands:
  train        fit a task with sgd / adam / path_sgd / path_adam
  verify       run the randomized correctness properties
  kappa-ratio  tabulate ||kappa2|| / ||kappa1|| across sizes and lengths
  gen-data     write task datasets or a synthetic corpus to disk

Exit codes: 0 success, 1 usage or configuration error, 2 verification
failure, 3 training diverged.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import optim, pathnorm, tasks, verify
from .compute import ComputeError
from .config import (
    ConfigError,
    RunConfig,
    config_text,
    load_checkpoint,
    load_config,
    metrics_header,
    metrics_row,
    parse_block_ranges,
    save_checkpoint,
    write_metrics,
)
from .graph import GraphError, RnnLayout, RnnSpec, build_rnn

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VERIFY = 2
EXIT_DIVERGED = 3


def make_task(cfg: RunConfig):
    if cfg.task == "addition":
        return tasks.AdditionTask(length=cfg.seq_len, eval_size=cfg.eval_size,
                                  eval_seed=cfg.data_seed)
    if cfg.task == "seqclass":
        return tasks.SeqClassTask(size=cfg.image_size, num_classes=cfg.num_classes,
                                  n=cfg.data_size, test_frac=cfg.test_frac,
                                  data_seed=cfg.data_seed)
    if cfg.task == "charlm":
        path = cfg.corpus or tasks.bundled_corpus_path()
        corpus = tasks.load_char_corpus(path)
        return tasks.CharLmTask(corpus, unroll=cfg.seq_len)
    return tasks.LinRegTask(slope=cfg.slope)


def make_net(cfg: RunConfig, task):
    if cfg.task == "linreg":
        return task.make_net()
    spec = RnnSpec(task.input_dim, cfg.hidden, task.output_dim,
                   task.length, bias=cfg.bias)
    return build_rnn(spec)


def init_params(cfg: RunConfig, net) -> np.ndarray:
    rng = optim.rng_for(cfg.seed, optim.STREAM_INIT)
    if cfg.init == "identity":
        return optim.init_identity(net, rng, cfg.init_range)
    per_block = parse_block_ranges(cfg.init_ranges) if cfg.init_ranges else None
    return optim.init_uniform(net, rng, cfg.init_range, per_block=per_block)


def cmd_train(args) -> int:
    overrides = dict(kv.split("=", 1) for kv in args.set)
    cfg = load_config(args.config, overrides)
    task = make_task(cfg)
    net = make_net(cfg, task)

    if args.resume:
        start_step, p, opt = load_checkpoint(args.resume, net)
    else:
        start_step = 0
        p = init_params(cfg, net)
        opt = optim.OptimizerState(kind=cfg.optimizer, eta=cfg.lr,
                                   kappa_mode=cfg.kappa_mode, eps=cfg.epsilon)

    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(config_text(cfg))

    tc = optim.TrainConfig(steps=cfg.steps, batch_size=cfg.batch_size,
                           eval_interval=cfg.eval_interval, seed=cfg.seed,
                           kappa_every=cfg.kappa_every,
                           target_loss=cfg.target_loss,
                           target_test_metric=cfg.target_test_metric,
                           record_kappa_ratio=cfg.record_kappa_ratio,
                           timing=cfg.timing)

    print(metrics_header(cfg.record_kappa_ratio))

    def on_eval(row, pp, oo):
        print(metrics_row(row, cfg.record_kappa_ratio))
        sys.stdout.flush()
        if (cfg.checkpoint_interval and row["step"]
                and row["step"] % cfg.checkpoint_interval == 0):
            save_checkpoint(out / f"checkpoint_{row['step']}.txt",
                            row["step"], net, pp, oo)

    result = optim.train_loop(net, task, tc, p, opt,
                              start_step=start_step, on_eval=on_eval)
    write_metrics(out / "metrics.csv", result.history, cfg.record_kappa_ratio)
    save_checkpoint(out / "checkpoint.txt", result.steps_done, net,
                    result.params, result.opt)
    (out / "status.txt").write_text(result.status + "\n")
    summary = f"status: {result.status} after {result.steps_done} steps"
    if result.history:
        summary += (f" ({task.metric_name} on held-out data: "
                    f"{result.history[-1]['test_metric']:.6g})")
    print(summary)
    return EXIT_DIVERGED if result.status == "diverged" else EXIT_OK


def cmd_verify(args) -> int:
    results = verify.run_all(level=args.level, seed=args.seed,
                             kappa_scale=args.tamper_kappa)
    for res in results:
        print(res.line())
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} properties passed")
    return EXIT_VERIFY if failed else EXIT_OK


def cmd_kappa_ratio(args) -> int:
    hiddens = [int(tok) for tok in args.hidden.split(",")]
    lengths = [int(tok) for tok in args.lengths.split(",")]
    if any(h < 1 for h in hiddens) or any(t < 1 for t in lengths):
        raise ConfigError("hidden sizes and lengths must be positive")
    rows = []
    print("hidden,length,mean_ratio,sd_ratio")
    for h in hiddens:
        for t in lengths:
            spec = RnnSpec(args.input_dim, (h,), args.output_dim, t)
            layout = RnnLayout.from_spec(spec)
            ratios = []
            for s in range(args.seeds):
                rng = optim.rng_for(args.seed, optim.STREAM_INIT, s)
                p = rng.uniform(-args.init_range, args.init_range, layout.m)
                k1 = pathnorm.kappa1_layout(layout, p)
                k2 = pathnorm.kappa2_layout(layout, p)
                n1 = float(np.linalg.norm(k1))
                if n1 == 0.0:
                    raise ConfigError("kappa1 is identically zero; increase init_range")
                ratios.append(float(np.linalg.norm(k2)) / n1)
                if args.crosscheck:
                    net = build_rnn(spec)
                    k2b = pathnorm.kappa2_bruteforce(net, p)
                    gap = float(np.max(np.abs(k2 - k2b)))
                    if gap > 1e-10 * max(1.0, float(np.max(np.abs(k2b)))):
                        print(f"crosscheck FAILED at H={h} T={t} seed={s}: {gap:.3e}",
                              file=sys.stderr)
                        return EXIT_VERIFY
            mean = float(np.mean(ratios))
            sd = float(np.std(ratios))
            rows.append((h, t, mean, sd))
            print(f"{h},{t},{mean:.6g},{sd:.6g}")
            sys.stdout.flush()
    if args.csv:
        lines = ["hidden,length,mean_ratio,sd_ratio"]
        lines.extend(f"{h},{t},{mean:.6g},{sd:.6g}" for h, t, mean, sd in rows)
        Path(args.csv).write_text("\n".join(lines) + "\n")
    return EXIT_OK


def cmd_gen_data(args) -> int:
    rng = np.random.default_rng(args.seed)
    out = Path(args.out)
    if out.parent and not out.parent.exists():
        out.parent.mkdir(parents=True, exist_ok=True)
    if args.task == "addition":
        ds = tasks.gen_addition(args.seq_len, args.n, rng)
        tasks.save_addition(ds, out)
    elif args.task == "seqclass":
        ds = tasks.synthetic_glyphs(args.n, args.image_size, args.num_classes, rng)
        tasks.save_seq_class(ds, out)
    else:
        out.write_text(tasks.make_synthetic_corpus(args.chars, seed=args.seed))
    print(f"wrote {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pathsgd", description=__doc__,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = ap.add_subparsers(dest="command", required=True)

    tp = sub.add_parser("train", help="train a task")
    tp.add_argument("--config", default=None, help="key = value config file")
    tp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                    help="override one config key (repeatable)")
    tp.add_argument("--resume", default=None, help="checkpoint file to resume from")
    tp.set_defaults(fn=cmd_train)

    vp = sub.add_parser("verify", help="run correctness properties")
    vp.add_argument("--level", choices=("quick", "full"), default="quick")
    vp.add_argument("--seed", type=int, default=0)
    vp.add_argument("--tamper-kappa", type=float, default=1.0,
                    help=argparse.SUPPRESS)  # fault injection for testing verify
    vp.set_defaults(fn=cmd_verify)

    kp = sub.add_parser("kappa-ratio",
                        help="relative size of the kappa2 interaction term")
    kp.add_argument("--hidden", default="20,100", help="comma list of widths")
    kp.add_argument("--lengths", default="10,20", help="comma list of unroll lengths")
    kp.add_argument("--input-dim", type=int, default=10)
    kp.add_argument("--output-dim", type=int, default=10)
    kp.add_argument("--init-range", type=float, default=0.1)
    kp.add_argument("--seeds", type=int, default=5)
    kp.add_argument("--seed", type=int, default=0)
    kp.add_argument("--csv", default=None, help="also write the table here")
    kp.add_argument("--crosscheck", action="store_true",
                    help="compare against brute-force enumeration (small sizes only)")
    kp.set_defaults(fn=cmd_kappa_ratio)

    gp = sub.add_parser("gen-data", help="write datasets to disk")
    gp.add_argument("--task", choices=("addition", "seqclass", "corpus"),
                    required=True)
    gp.add_argument("--out", required=True)
    gp.add_argument("--seed", type=int, default=0)
    gp.add_argument("-n", type=int, default=1024, help="number of examples")
    gp.add_argument("--seq-len", type=int, default=40)
    gp.add_argument("--image-size", type=int, default=8)
    gp.add_argument("--num-classes", type=int, default=4)
    gp.add_argument("--chars", type=int, default=100_000,
                    help="corpus size in characters")
    gp.set_defaults(fn=cmd_gen_data)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, GraphError, ComputeError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
