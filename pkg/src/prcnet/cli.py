"""Command line interface.

Subcommands: fetch, train, eval, grid, gradcheck, lemma, bench-pool,
probe-invariance, report.  The data root resolves in order: ``--data-dir``
flag, ``PRCNET_DATA`` environment variable, ``./data``.  Grid runs read an
optional JSON config document; flags override its fields.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from pathlib import Path

import numpy as np


def _data_dir(args) -> str:
    return args.data_dir or os.environ.get("PRCNET_DATA") or "data"


def _dtype(args):
    return np.float32 if getattr(args, "float32", False) else np.float64


def _parse_floats(text):
    return tuple(float(v) for v in text.split(",") if v != "")


def _parse_ints(text):
    return tuple(int(v) for v in text.split(",") if v != "")


def _add_data_arg(p):
    p.add_argument("--data-dir", default=None,
                   help="MNIST IDX directory (default $PRCNET_DATA or ./data)")


def cmd_fetch(args):
    from .mnist import DEFAULT_BASE_URL, fetch

    paths = fetch(_data_dir(args), base_url=args.base_url or DEFAULT_BASE_URL)
    for p in paths:
        print(f"verified {p}")
    return 0


def _model_spec(args):
    from .experiments import ModelSpec

    return ModelSpec(name=args.model, randomized=not args.no_randomized,
                     cmp=args.cmp, pool_net=args.pool_net)


def _add_model_args(p):
    p.add_argument("--model", required=True,
                   help="convnet36 | convnet36_fc | convnet512 | nptn(ch,g) | prcn(ch,g)")
    p.add_argument("--no-randomized", action="store_true",
                   help="identity connectome ablation (prcn models)")
    p.add_argument("--cmp", type=int, default=None, help="override channel max pool size")
    p.add_argument("--pool-net", default="none",
                   choices=["none", "two_1x1", "conv1x1_replace_avg"])


def cmd_train(args):
    from .mnist import AugmentSpec, load_dataset
    from .trainer import OptimState, train

    dtype = _dtype(args)
    spec = _model_spec(args)
    model = spec.build(seed=args.seed, dtype=dtype)
    train_ds = load_dataset(_data_dir(args), "train", dtype=dtype).subset(args.train_subset)
    test_ds = load_dataset(_data_dir(args), "test", dtype=dtype).subset(args.test_subset)
    state = OptimState(epochs=args.epochs, lr=args.lr, clip_norm=args.clip_norm)
    metrics = train(
        model, train_ds, test_ds, state, seed=args.seed,
        augment=AugmentSpec(args.rot, args.trans),
        metrics_path=args.metrics, checkpoint_path=args.checkpoint,
        checkpoint_every=args.checkpoint_every, log=print,
    )
    print(f"final test error {metrics.final_test_err:.4f}")
    return 0


def cmd_eval(args):
    from .mnist import AugmentSpec, augment_batch, load_dataset
    from .network import load_checkpoint
    from .rng import Rng
    from .trainer import evaluate

    dtype = _dtype(args)
    model = _model_spec(args).build(seed=args.seed, dtype=dtype)
    load_checkpoint(args.checkpoint, model)
    test_ds = load_dataset(_data_dir(args), "test", dtype=dtype).subset(args.test_subset)
    images = augment_batch(test_ds.images, AugmentSpec(args.rot, args.trans),
                           Rng(args.seed).spawn(3))
    err = evaluate(model, images, test_ds.labels)
    print(f"test error {err:.4f}")
    return 0


def cmd_grid(args):
    from .experiments import ExperimentConfig, ModelSpec, run

    if args.config:
        config = ExperimentConfig.from_json(Path(args.config).read_text())
    else:
        config = ExperimentConfig()
    updates = {}
    if args.models:
        updates["models"] = tuple(ModelSpec(name) for name in args.models.split(","))
    if args.rotations or args.translations:
        rots = _parse_floats(args.rotations) if args.rotations else (0.0,)
        trans = _parse_ints(args.translations) if args.translations else (0,) * len(rots)
        if len(trans) == 1 and len(rots) > 1:
            trans = trans * len(rots)
        if len(rots) == 1 and len(trans) > 1:
            rots = rots * len(trans)
        if len(rots) != len(trans):
            raise SystemExit("--rotations and --translations must pair up")
        updates["augments"] = tuple(zip(rots, trans))
    if args.seeds:
        updates["seeds"] = _parse_ints(args.seeds)
    if args.epochs is not None:
        updates["epochs"] = args.epochs
    if args.train_subset is not None:
        updates["train_subset"] = args.train_subset
    if args.test_subset is not None:
        updates["test_subset"] = args.test_subset
    if args.data_dir or os.environ.get("PRCNET_DATA"):
        updates["data_dir"] = _data_dir(args)
    if args.out_dir:
        updates["out_dir"] = args.out_dir
    if updates:
        from dataclasses import replace

        config = replace(config, **updates)
    table = run(config, log=print, dtype=_dtype(args))
    agg = table.aggregate()
    for (model, theta, trans), (mean, std, n) in agg.items():
        print(f"{model:24s} rot {theta:5.1f} trans {trans:2d}: "
              f"{mean:.4f} +/- {std:.4f} ({n} seeds)")
    return 1 if table.any_errors else 0


def cmd_gradcheck(args):
    from .gradcheck import standard_suite

    failures = 0
    for res in standard_suite(n_random=args.count, seed=args.seed):
        ok = res.passed(args.tol)
        failures += 0 if ok else 1
        print(f"{'PASS' if ok else 'FAIL'}  {res.name:48s} max rel err {res.max_error:.3e}")
    print(f"{failures} failures")
    return 1 if failures else 0


def cmd_lemma(args):
    from .invariance import mc_var_max_uniform, var_max_closed_form
    from .rng import Rng

    rng = Rng(args.seed)
    rows = []
    for n in _parse_ints(args.n):
        est, se = mc_var_max_uniform(n, args.samples, rng.spawn(n))
        rows.append((n, var_max_closed_form(n), est, se))
        print(f"n={n:3d}  closed={rows[-1][1]:.8f}  mc={est:.8f}  stderr={se:.2e}")
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        with open(out, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(("n", "closed_form", "mc_estimate", "stderr"))
            for row in rows:
                w.writerow([row[0], repr(row[1]), repr(row[2]), repr(row[3])])
        print(f"wrote {out}")
    return 0


def cmd_bench_pool(args):
    from .poolkernel import PoolPlan, bench
    from .rng import Rng

    perm = Rng(args.seed).permutation(args.expansion)
    plan = PoolPlan(expansion=args.expansion, cmp=args.cmp, perm=perm,
                    channel_tile=args.channel_tile, row_tile=args.row_tile)
    report = bench(plan, (args.batch, args.expansion, args.size, args.size),
                   reps=args.reps, rng_seed=args.seed, dtype=_dtype(args))
    rows = report.rows()
    print(f"expanded tensor: {report.expanded_bytes} bytes")
    for config, path, ns, peak, speedup in rows:
        extra = f"  speedup {speedup}" if speedup else ""
        print(f"{path:8s} median {ns / 1e6:8.3f} ms  peak transient {peak:>12d} B{extra}")
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        with open(out, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(("config", "path", "median_ns", "peak_transient_bytes", "speedup"))
            w.writerows(rows)
        print(f"wrote {out}")
    return 0


def cmd_probe_invariance(args):
    from .invariance import layer_invariance_probe
    from .mnist import load_dataset
    from .network import load_checkpoint

    dtype = _dtype(args)
    model = _model_spec(args).build(seed=args.seed, dtype=dtype)
    if args.checkpoint:
        load_checkpoint(args.checkpoint, model)
    test_ds = load_dataset(_data_dir(args), "test", dtype=dtype)
    probe = test_ds.images[: args.n_probe]
    lo, hi, step = _parse_floats(args.angles)
    report = layer_invariance_probe(model, probe,
                                    angles=np.arange(lo, hi + step / 2, step),
                                    layer_index=args.layer_index)
    print(f"mean pre-CMP variance  {report.mean_pre:.6e}")
    print(f"mean post-CMP variance {report.mean_post:.6e}")
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        with open(out, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(("stage", "channel", "variance"))
            for stage, ch, var in report.rows():
                w.writerow([stage, ch, repr(float(var))])
        print(f"wrote {out}")
    return 0


def cmd_report(args):
    from .experiments import read_results
    from .report import write_report

    table = read_results(args.results)
    if not table.rows:
        raise SystemExit(f"no rows in {args.results}")
    for p in write_report(table, args.out_dir):
        print(f"wrote {p}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="prcnet",
                                 description="permanent-random-connectome network engine")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fetch", help="download the four IDX files with checksum verification")
    _add_data_arg(p)
    p.add_argument("--base-url", default=None)
    p.set_defaults(fn=cmd_fetch)

    p = sub.add_parser("train", help="train one model")
    _add_model_args(p)
    _add_data_arg(p)
    p.add_argument("--rot", type=float, default=0.0)
    p.add_argument("--trans", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--clip-norm", type=float, default=1.0)
    p.add_argument("--train-subset", type=int, default=10_000)
    p.add_argument("--test-subset", type=int, default=2_000)
    p.add_argument("--metrics", default=None, help="per-epoch metrics CSV path")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--checkpoint-every", type=int, default=0)
    p.add_argument("--float32", action="store_true")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on the augmented test set")
    _add_model_args(p)
    _add_data_arg(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--rot", type=float, default=0.0)
    p.add_argument("--trans", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--test-subset", type=int, default=2_000)
    p.add_argument("--float32", action="store_true")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("grid", help="run a model x augmentation x seed grid, resumably")
    _add_data_arg(p)
    p.add_argument("--config", default=None, help="JSON experiment config")
    p.add_argument("--models", default=None, help="comma separated model names")
    p.add_argument("--rotations", default=None, help="comma separated degrees")
    p.add_argument("--translations", default=None, help="comma separated pixels")
    p.add_argument("--seeds", default=None, help="comma separated seeds")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--train-subset", type=int, default=None)
    p.add_argument("--test-subset", type=int, default=None)
    p.add_argument("--out-dir", default=None)
    p.add_argument("--float32", action="store_true")
    p.set_defaults(fn=cmd_grid)

    p = sub.add_parser("gradcheck", help="finite-difference checks for every layer")
    p.add_argument("--count", type=int, default=20, help="random configs per layer family")
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("lemma", help="closed-form vs Monte Carlo pooled-max variance")
    p.add_argument("--n", default="1,2,4,8", help="pool sizes")
    p.add_argument("--samples", type=int, default=1_000_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="CSV output path")
    p.set_defaults(fn=cmd_lemma)

    p = sub.add_parser("bench-pool", help="indirect vs naive channel pooling benchmark")
    p.add_argument("--expansion", type=int, default=288)
    p.add_argument("--cmp", type=int, default=2)
    p.add_argument("--batch", type=int, default=16)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--reps", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--channel-tile", type=int, default=None)
    p.add_argument("--row-tile", type=int, default=None)
    p.add_argument("--float32", action="store_true")
    p.add_argument("--out", default=None, help="CSV output path")
    p.set_defaults(fn=cmd_bench_pool)

    p = sub.add_parser("probe-invariance",
                       help="activation variance across a rotation sweep, pre vs post CMP")
    _add_model_args(p)
    _add_data_arg(p)
    p.add_argument("--checkpoint", default=None, help="trained weights (default: fresh init)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-probe", type=int, default=16)
    p.add_argument("--angles", default="-90,90,15", help="lo,hi,step in degrees")
    p.add_argument("--layer-index", type=int, default=None)
    p.add_argument("--float32", action="store_true")
    p.add_argument("--out", default=None, help="CSV output path")
    p.set_defaults(fn=cmd_probe_invariance)

    p = sub.add_parser("report", help="aggregate a results CSV and plot SVG charts")
    p.add_argument("--results", required=True)
    p.add_argument("--out-dir", default="results/report")
    p.set_defaults(fn=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
