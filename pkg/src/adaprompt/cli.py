"""Command-line harness: gen-data, train, eval, ablate, export-masks.

Exit codes: 0 success, 1 contract/config errors, 2 I/O and format errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields as dc_fields, replace
from pathlib import Path

from .errors import (ConfigError, ContractViolation, DataError, FormatError,
                     NumericError)
from .experiment import (ExperimentConfig, METRICS_COLUMNS, ablate, evaluate,
                         export_masks, load_experiment_config, train)
from .synth import SynthConfig, save_dataset


def _load_synth_config(path) -> SynthConfig:
    raw = json.loads(Path(path).read_text())
    known = {f.name for f in dc_fields(SynthConfig)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown dataset config keys: {sorted(unknown)}")
    cfg = SynthConfig(**raw)
    cfg.validate()
    return cfg


def _cmd_gen_data(args) -> None:
    save_dataset(_load_synth_config(args.config), args.out)
    print(f"dataset written to {args.out}")


def _cmd_train(args) -> None:
    cfg = load_experiment_config(args.config)
    if args.out:
        cfg = replace(cfg, output_dir=args.out)
    ckpt, rows = train(cfg)
    final = rows[-1] if rows else None
    print(f"checkpoint written to {ckpt}")
    if final is not None:
        print(f"final test accuracy: {final.accuracy:.4f}")


def _cmd_eval(args) -> None:
    row = evaluate(args.checkpoint, args.data, args.split)
    print(",".join(METRICS_COLUMNS))
    print(",".join(row.as_csv()))


def _cmd_ablate(args) -> None:
    cfg = load_experiment_config(args.config)
    values = [v for v in args.values.split(",") if v]
    csv_path, _ = ablate(cfg, args.axis, values, args.out)
    print(f"ablation table written to {csv_path}")


def _cmd_export_masks(args) -> None:
    written = export_masks(args.checkpoint, args.data, args.count, args.out)
    print(f"wrote {len(written)} files to {args.out}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="adaprompt",
        description="Region-adaptive visual prompting experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate the synthetic benchmark")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train", help="train a prompting model")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default="")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", required=True, choices=("train", "test"))
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("ablate", help="run a one-axis ablation grid")
    p.add_argument("--config", required=True)
    p.add_argument("--axis", required=True)
    p.add_argument("--values", required=True,
                   help="comma-separated axis values")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("export-masks", help="export masks and prompt renders")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_export_masks)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (ContractViolation, ConfigError, DataError, NumericError,
            json.JSONDecodeError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (FormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
