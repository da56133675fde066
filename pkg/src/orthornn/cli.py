"""Command-line entry point.

Subcommands:
    train        run an experiment, write metrics CSV and a checkpoint
    gradcheck    finite-difference suites over every cell variant
    gen          emit task samples in the line-delimited dataset format
    probe-gates  update-gate activation fractions from a checkpoint
    params       parameter counts for a model configuration

numpy is imported only after the BLAS thread count is pinned to 1, which
keeps runs bit-reproducible (and is faster at these matrix sizes anyway).
"""

from __future__ import annotations

import argparse
import os
import sys


def _add_model_args(p: argparse.ArgumentParser):
    p.add_argument("--model", default="goru",
                   choices=["vanilla", "gru", "lstm", "eurnn", "goru"])
    p.add_argument("--hidden", type=int, default=64, help="hidden state size")
    p.add_argument("--layout", default="full",
                   help="rotation layout: full, fft, or a layer count")
    p.add_argument("--no-reset-gate", action="store_true", dest="no_reset")
    p.add_argument("--no-update-gate", action="store_true", dest="no_update")
    p.add_argument("--gate-bias-init", type=float, default=0.0)


def _add_task_args(p: argparse.ArgumentParser):
    p.add_argument("--task", default="copy", choices=["copy", "denoise", "paren", "charlm"])
    p.add_argument("--t", type=int, default=50, help="delay / sequence length T")
    p.add_argument("--n-data", type=int, default=8, help="data alphabet size n")
    p.add_argument("--k", type=int, default=10, help="number of data tokens K")
    p.add_argument("--corpus", default=None, help="corpus file (charlm)")
    p.add_argument("--seq-len", type=int, default=50, help="charlm unroll length")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="orthornn",
                                 description="recurrent-network lab: orthogonal and gated cells")
    sub = ap.add_subparsers(dest="command", required=True)

    tr = sub.add_parser("train", help="train a model on a task")
    _add_task_args(tr)
    _add_model_args(tr)
    tr.add_argument("--batch", type=int, default=128)
    tr.add_argument("--optimizer", default="rmsprop", choices=["rmsprop", "adam"])
    tr.add_argument("--lr", type=float, default=None,
                    help="learning rate (default 0.001; 0.01 for denoise)")
    tr.add_argument("--decay", type=float, default=0.9, help="rmsprop decay rate")
    tr.add_argument("--steps", type=int, default=2000)
    tr.add_argument("--seed", type=int, default=0)
    tr.add_argument("--clip", type=float, default=None, help="max gradient norm (off by default)")
    tr.add_argument("--metrics-out", default=None)
    tr.add_argument("--checkpoint-out", default=None)
    tr.add_argument("--log-interval", type=int, default=20)
    tr.add_argument("--dtype", default="float64", choices=["float64", "float32"])
    tr.add_argument("--dump-config", action="store_true",
                    help="echo the resolved config as a comment atop the metrics CSV")
    tr.add_argument("--timing", action="store_true",
                    help="record real wallclock in the CSV (breaks byte-reproducibility)")
    tr.add_argument("--quiet", action="store_true")

    gc = sub.add_parser("gradcheck", help="finite-difference gradient suites")
    gc.add_argument("--seeds", type=int, default=2, help="random instances per variant")

    gn = sub.add_parser("gen", help="emit task samples to a dataset file")
    _add_task_args(gn)
    gn.add_argument("--count", type=int, default=100)
    gn.add_argument("--seed", type=int, default=0)
    gn.add_argument("--out", required=True)

    pg = sub.add_parser("probe-gates", help="update-gate activation fractions")
    _add_task_args(pg)
    _add_model_args(pg)
    pg.add_argument("--checkpoint", required=True)
    pg.add_argument("--threshold", type=float, default=0.7)
    pg.add_argument("--samples", type=int, default=64)
    pg.add_argument("--seed", type=int, default=0)
    pg.add_argument("--out", default=None)

    pc = sub.add_parser("params", help="parameter counts")
    _add_task_args(pc)
    _add_model_args(pc)
    return ap


def _cmd_train(args) -> int:
    from . import harness, train
    from .checkpoint import save_checkpoint
    from .config import RunConfig

    cfg = RunConfig(task=args.task, model=args.model, T=args.t, n_data=args.n_data,
                    K=args.k, d_h=args.hidden, batch=args.batch,
                    optimizer=args.optimizer, lr=args.lr, decay=args.decay,
                    steps=args.steps, seed=args.seed, clip=args.clip,
                    layout=args.layout, disable_reset=args.no_reset,
                    disable_update=args.no_update, gate_bias_init=args.gate_bias_init,
                    corpus=args.corpus, seq_len=args.seq_len,
                    metrics_out=args.metrics_out, checkpoint_out=args.checkpoint_out,
                    log_interval=args.log_interval, dtype=args.dtype,
                    timing=args.timing)

    def show(row):
        if not args.quiet:
            print(f"step {row.step:6d}  loss {row.loss:.6f}  acc {row.accuracy:.4f}",
                  flush=True)

    result = train.train_loop(cfg, on_metric=show)
    if cfg.metrics_out:
        comment = cfg.describe() if args.dump_config else None
        harness.write_metrics(result.rows, cfg.metrics_out, comment)
    if cfg.checkpoint_out:
        save_checkpoint(cfg.checkpoint_out, train.full_named(result.params, result.out))
    return 0


def _cmd_gradcheck(args) -> int:
    from . import harness
    results = harness.gradcheck_all(n_seeds=args.seeds, verbose=True)
    worst = max(results.values())
    ok = worst <= 1e-5
    print(f"overall worst relative error {worst:.3e}: {'PASS' if ok else 'FAIL'}")
    return 0 if ok else 1


def _cmd_gen(args) -> int:
    from . import tasks
    from .numcore import Prng

    rng = Prng(args.seed)
    samples = []
    for _ in range(args.count):
        if args.task == "copy":
            samples.append(tasks.gen_copy(args.t, args.n_data, args.k, rng))
        elif args.task == "denoise":
            samples.append(tasks.gen_denoise(args.t, args.n_data, args.k, rng))
        elif args.task == "paren":
            samples.append(tasks.gen_paren(args.t, rng))
        else:
            print("gen supports the synthetic tasks only (copy, denoise, paren)",
                  file=sys.stderr)
            return 2
    tasks.write_samples(args.out, samples)
    print(f"wrote {args.count} {args.task} samples to {args.out}")
    return 0


def _cmd_probe_gates(args) -> int:
    import numpy as np

    from . import harness, tasks, train
    from .checkpoint import load_into
    from .config import RunConfig
    from .numcore import Prng

    cfg = RunConfig(task=args.task, model=args.model, T=args.t, n_data=args.n_data,
                    K=args.k, d_h=args.hidden, layout=args.layout,
                    disable_reset=args.no_reset, disable_update=args.no_update,
                    corpus=args.corpus, steps=0)
    vocab = None
    if cfg.task == "charlm":
        _, vocab_bytes = tasks.load_corpus(cfg.corpus)
        vocab = len(vocab_bytes)
    params, out, _ = train.build_model(cfg, vocab)
    load_into(args.checkpoint, train.full_named(params, out))

    noise_ids = harness.noise_token_ids(cfg.task, cfg.n_data)
    rng = Prng(args.seed)
    rows = []
    noise_vals, signal_vals = [], []
    for s in range(args.samples):
        if cfg.task == "copy":
            sample = tasks.gen_copy(cfg.T, cfg.n_data, cfg.K, rng)
        elif cfg.task == "denoise":
            sample = tasks.gen_denoise(cfg.T, cfg.n_data, cfg.K, rng)
        elif cfg.task == "paren":
            sample = tasks.gen_paren(cfg.T, rng)
        else:
            print("probe-gates supports the synthetic tasks only", file=sys.stderr)
            return 2
        fractions, is_noise = harness.probe_update_gate(
            params, sample, threshold=args.threshold, noise_tokens=noise_ids)
        noise_vals.extend(fractions[is_noise])
        signal_vals.extend(fractions[~is_noise])
        rows.extend((s, t, fractions[t], int(is_noise[t])) for t in range(len(fractions)))
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write("sample,step,fraction,is_noise\n")
            for s, t, fr, ns in rows:
                fh.write(f"{s},{t},{fr:.6g},{ns}\n")
    mean_noise = float(np.mean(noise_vals)) if noise_vals else float("nan")
    mean_signal = float(np.mean(signal_vals)) if signal_vals else float("nan")
    print(f"mean update-gate fraction  noise steps {mean_noise:.4f}  "
          f"other steps {mean_signal:.4f}")
    return 0


def _cmd_params(args) -> int:
    from . import tasks
    from .cells import CellConfig, param_count
    from .config import MODEL_TO_KIND

    d_x = tasks.task_vocab(args.task, args.n_data) if args.task != "charlm" else args.n_data
    cfg = CellConfig(MODEL_TO_KIND[args.model], d_x=d_x, d_h=args.hidden,
                     disable_reset=args.no_reset, disable_update=args.no_update,
                     layout=args.layout)
    total, h2h = param_count(cfg)
    print(f"total {total}")
    print(f"hidden_to_hidden {h2h}")
    return 0


def main(argv=None) -> int:
    # pin BLAS threads before numpy loads: bit-reproducible and faster here
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, "1")
    args = build_parser().parse_args(argv)
    handlers = {
        "train": _cmd_train,
        "gradcheck": _cmd_gradcheck,
        "gen": _cmd_gen,
        "probe-gates": _cmd_probe_gates,
        "params": _cmd_params,
    }
    return handlers[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
