"""Command-line entry point.

Subcommands: train, eval, gradcheck, bench, gen-data, inspect. All accept a
JSON config plus dotted-path overrides (``--model.bridge.depth=4`` or the
shorthand ``--bridge.depth=4``). Exit codes: 0 success, 1 runtime failure,
2 configuration error.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .bench import BENCH_HEADER, COMPLEXITY_NOTE, run_bench, write_bench_csv
from .config import RunConfig, apply_overrides, load_config, save_config
from .data import gen_dataset, save_dataset
from .model import ModelConfig, load_checkpoint, restore_model
from .tensor import ConfigError
from .train import evaluate, train
from .verify import MODEL_TOL, OP_TOL, run_suite
from .metrics import append_metrics_csv, metric_rows


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="missformer", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train on synthetic data, write metrics + checkpoint")
    p_train.add_argument("-c", "--config", required=True, help="JSON run config")
    p_train.add_argument("-o", "--out-dir", default=None, help="output directory (overrides config)")

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on its dataset")
    p_eval.add_argument("--checkpoint", required=True, help="checkpoint directory")
    p_eval.add_argument("-c", "--config", default=None, help="run config for the dataset (optional)")
    p_eval.add_argument("--split", choices=("train", "val", "both"), default="val")
    p_eval.add_argument("--out", default=None, help="CSV output path")

    p_grad = sub.add_parser("gradcheck", help="finite-difference checks for every op family")
    p_grad.add_argument("--model-coords", type=int, default=None,
                        help="sample this many input coordinates for the end-to-end model check")
    p_grad.add_argument("--seed", type=int, default=0)

    p_bench = sub.add_parser("bench", help="attention FLOP/time comparison")
    p_bench.add_argument("-n", "--tokens", default="256,1024,4096", help="comma-separated token counts")
    p_bench.add_argument("-r", "--ratios", default="1,2,4,8", help="comma-separated reduction ratios")
    p_bench.add_argument("--channels", type=int, default=32)
    p_bench.add_argument("--heads", type=int, default=4)
    p_bench.add_argument("--repeats", type=int, default=5)
    p_bench.add_argument("--out", default=None, help="CSV output path")

    p_gen = sub.add_parser("gen-data", help="materialize a seeded synthetic dataset")
    p_gen.add_argument("-c", "--config", default=None, help="JSON run config (data section)")
    p_gen.add_argument("-o", "--out-dir", required=True)

    p_inspect = sub.add_parser("inspect", help="print a checkpoint's config and layout")
    p_inspect.add_argument("--checkpoint", required=True)
    p_inspect.add_argument("--params", action="store_true", help="also list every parameter shape")

    return parser


def _load_with_overrides(path: str | None, overrides: list[str]) -> RunConfig:
    base = load_config(path).to_dict() if path else RunConfig().to_dict()
    return RunConfig.from_dict(apply_overrides(base, overrides))


def cmd_train(args, overrides) -> int:
    config = _load_with_overrides(args.config, overrides)
    out_dir = args.out_dir or config.out_dir
    config.out_dir = out_dir
    os.makedirs(out_dir, exist_ok=True)
    save_config(config, os.path.join(out_dir, "config.json"))
    result = train(config.model, config.data, config.train, out_dir=out_dir)
    if result.aborted:
        print(f"training aborted: {result.abort_reason}", file=sys.stderr)
        print(f"last-good checkpoint: {result.checkpoint_dir}", file=sys.stderr)
        return 1
    print(f"best val DSC {result.best_dsc:.4f} at epoch {result.best_epoch}")
    print(f"metrics: {result.metrics_path}")
    print(f"checkpoint: {result.checkpoint_dir}")
    return 0


def cmd_eval(args, overrides) -> int:
    model, extra = restore_model(args.checkpoint)
    if args.config:
        config = _load_with_overrides(args.config, overrides)
        data_spec = config.data
    else:
        from .data import SynthSpec

        if "data" not in extra:
            raise ConfigError("checkpoint stores no dataset spec; pass --config")
        data_spec = SynthSpec.from_dict(extra["data"])
    train_samples, val_samples = gen_dataset(data_spec)
    chosen = {"train": [("train", train_samples)], "val": [("val", val_samples)]}.get(
        args.split, [("train", train_samples), ("val", val_samples)]
    )
    rows = []
    for split, samples in chosen:
        result = evaluate(model, samples)
        rows.extend(metric_rows(result, extra.get("epoch", -1), split))
        print(f"[{split}] mean: dsc={result['mean'][0]:.4f} hd95={result['mean'][1]:.3f} "
              f"hd100={result['mean'][2]:.3f}")
        for k, (dsc, hd95, hd100) in sorted(result["per_class"].items()):
            print(f"[{split}] class {k}: dsc={dsc:.4f} hd95={hd95:.3f} hd100={hd100:.3f}")
    out = args.out or os.path.join(args.checkpoint, "eval_metrics.csv")
    if os.path.exists(out):
        os.remove(out)
    append_metrics_csv(out, rows)
    print(f"wrote {out}")
    return 0


def cmd_gradcheck(args, overrides) -> int:
    reports = run_suite(seed=args.seed, model_coords=args.model_coords)
    failures = []
    for report in reports:
        print(report.summary())
        if not report.passed:
            failures.append(report.name)
    print(f"tolerances: ops < {OP_TOL:.0e}, end-to-end model < {MODEL_TOL:.0e}")
    if failures:
        print(f"FAILED op families: {', '.join(failures)}", file=sys.stderr)
        return 1
    print("all gradient checks passed")
    return 0


def cmd_bench(args, overrides) -> int:
    tokens = [int(v) for v in args.tokens.split(",") if v]
    ratios = [int(v) for v in args.ratios.split(",") if v]
    rows, warnings = run_bench(
        tokens, ratios, channels=args.channels, heads=args.heads, repeats=args.repeats
    )
    for warning in warnings:
        print(f"warning: {warning}", file=sys.stderr)
    print(",".join(BENCH_HEADER))
    for row in rows:
        print(",".join(str(v) for v in row.as_tuple()))
    print(COMPLEXITY_NOTE)
    if args.out:
        write_bench_csv(args.out, rows)
        print(f"wrote {args.out}")
    return 0


def cmd_gen_data(args, overrides) -> int:
    config = _load_with_overrides(args.config, overrides)
    train_samples, val_samples = gen_dataset(config.data)
    save_dataset(args.out_dir, config.data, train_samples, val_samples)
    print(f"wrote {len(train_samples)} train / {len(val_samples)} val samples to {args.out_dir}")
    return 0


def cmd_inspect(args, overrides) -> int:
    config, extra, arrays = load_checkpoint(args.checkpoint)
    print(json.dumps(config.to_dict(), indent=1, sort_keys=True))
    total = sum(int(np.prod(a.shape)) for a in arrays.values())
    print(f"parameters: {total}")
    if extra:
        print(f"extra: {json.dumps(extra, sort_keys=True)}")
    for i, spec in enumerate(config.stage_specs(), start=1):
        gh, gw = spec.grid
        print(
            f"encoder stage {i}: grid {gh}x{gw}, channels {spec.channels}, "
            f"heads {spec.heads}, reduction {spec.reduction}, blocks {spec.blocks}"
        )
    if args.params:
        for name, arr in arrays.items():
            print(f"{name}: {tuple(arr.shape)}")
    return 0


_COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "bench": cmd_bench,
    "gen-data": cmd_gen_data,
    "inspect": cmd_inspect,
}


def main(argv=None) -> int:
    parser = _build_parser()
    args, unknown = parser.parse_known_args(argv)
    overrides = []
    for item in unknown:
        if item.startswith("--") and "=" in item:
            overrides.append(item[2:])
        else:
            print(f"unrecognized argument: {item}", file=sys.stderr)
            return 2
    try:
        return _COMMANDS[args.command](args, overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure contract: exit 1
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
