"""Command-line entry point.

Exit codes: 0 success, 1 validation error, 2 numerical-check failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bench import (class_counts, evaluate, generate_domains, pretrain_source,
                    read_dataset_csv, write_dataset_csv)
from .config import KEYS, RunConfig, format_value, load_config
from .engine import STAGES, adapt, series_csv
from .errors import ProtoAlignError
from .gradcheck import format_table, run_all
from .model import load_checkpoint, save_checkpoint

log = logging.getLogger("protoalign")

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 1, 2

SPLITS = ("source_train", "source_eval", "target_train", "target_eval")
STAGE_CONDITIONS = {"both": "full", "pfa": "w/o CL", "cl": "w/o PFA"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; 2 is reserved for numerical failures here
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2) + "\n")


def _config(args) -> RunConfig:
    cfg = load_config(args.config)
    return cfg.with_overrides(seed=getattr(args, "seed", None))


def _data_path(cfg: RunConfig, given, split: str) -> Path:
    return Path(given) if given else Path(cfg["data_dir"]) / f"{split}.csv"


def _sibling(path: Path, suffix: str) -> Path:
    return path.with_name(path.stem + suffix)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    cfg = _config(args)
    spec = cfg.domain_spec()
    out = Path(args.out or cfg["data_dir"])
    out.mkdir(parents=True, exist_ok=True)
    data = generate_domains(spec)
    files = {}
    for split in SPLITS:
        path = out / f"{split}.csv"
        write_dataset_csv(data[split], path)
        files[split] = {
            "path": path.name,
            "rows": len(data[split]),
            "class_counts": np.bincount(data[split].labels, minlength=spec.num_classes).tolist(),
        }
    for split in SPLITS:
        domain, part = split.split("_")
        expected = class_counts(spec.proportions(domain), getattr(spec, f"n_{split}")).tolist()
        if files[split]["class_counts"] != expected:
            raise ProtoAlignError(f"{split}: class counts {files[split]['class_counts']} != {expected}")
    _write_json(out / "manifest.json", {"config": cfg.to_dict(), "seed": cfg["seed"], "files": files})
    print(f"wrote {len(SPLITS)} datasets and manifest.json to {out}")
    return EXIT_OK


def cmd_pretrain(args) -> int:
    cfg = _config(args)
    data = read_dataset_csv(_data_path(cfg, args.data, "source_train"))
    result = pretrain_source(data, cfg.extractor_sizes(), cfg["num_classes"],
                             epochs=cfg["pretrain_epochs"], lr=cfg["pretrain_lr"],
                             batch_size=cfg["pretrain_batch_size"], tau=cfg["tau"], seed=cfg["seed"])
    out = Path(args.out or Path(cfg["out_dir"]) / "source.ckpt")
    out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(result.model, out)
    _write_json(Path(args.log) if args.log else _sibling(out, ".log.json"), {
        "config": cfg.to_dict(),
        "status": result.status,
        "train_accuracy": result.train_accuracy,
        "losses": result.losses,
    })
    print(f"source train accuracy {result.train_accuracy:.4f} ({result.status}); checkpoint {out}")
    return EXIT_OK if result.status == "ok" else EXIT_NUMERICAL


def _adapt_once(cfg: RunConfig, args, model, x, eval_data):
    acfg = cfg.adaptation_config()
    final, reports = adapt(model, x, acfg, stage=args.stage)
    metrics = evaluate(final, eval_data) if eval_data is not None else None
    return final, reports, metrics


def cmd_adapt(args) -> int:
    cfg = _config(args)
    model = load_checkpoint(args.checkpoint)
    if model.extractor.input_dim != cfg["input_dim"] or model.protos.num_classes != cfg["num_classes"]:
        raise ProtoAlignError("checkpoint shape does not match input_dim/num_classes in the config")
    x = read_dataset_csv(_data_path(cfg, args.target, "target_train")).inputs
    eval_path = args.eval
    if args.alpha_sweep and not eval_path:
        eval_path = str(_data_path(cfg, None, "target_eval"))
    eval_data = read_dataset_csv(eval_path) if eval_path else None

    if args.alpha_sweep:
        return _alpha_sweep(cfg, args, model, x, eval_data)

    final, reports, metrics = _adapt_once(cfg, args, model, x, eval_data)
    out = Path(args.out or Path(cfg["out_dir"]) / f"adapted_{args.stage}.ckpt")
    out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(final, out)
    report = {
        "config": cfg.to_dict(),
        "stage": args.stage,
        "condition": STAGE_CONDITIONS[args.stage],
        "stages": [_stable(r.to_dict()) for r in reports],
        "eval_metrics": metrics,
    }
    _write_json(Path(args.report) if args.report else _sibling(out, ".report.json"), report)
    # wall time kept apart so the report itself is reproducible byte for byte
    _write_json(_sibling(out, ".timing.json"),
                {r.stage: r.elapsed_seconds for r in reports})
    series = Path(args.series) if args.series else _sibling(out, ".series.csv")
    series.write_text(series_csv(reports))
    for r in reports:
        if r.status != "ok":
            print(f"{r.stage}: {r.status}", file=sys.stderr)
    summary = f"adapted ({STAGE_CONDITIONS[args.stage]}); checkpoint {out}"
    if metrics:
        summary += f"; target accuracy {metrics['accuracy']:.4f}"
    print(summary)
    return EXIT_OK


def _stable(report: dict) -> dict:
    report = dict(report)
    report.pop("elapsed_seconds", None)
    return report


def _alpha_sweep(cfg: RunConfig, args, model, x, eval_data) -> int:
    alphas = [float(a) for a in args.alpha_sweep.split(",")]
    rows = []
    for a in alphas:
        run = cfg.with_overrides(alpha=(a,))
        _, reports, metrics = _adapt_once(run, args, model, x, eval_data)
        rows.append({"alpha": a, "accuracy": metrics["accuracy"], "macro_dice": metrics["macro_dice"],
                     "macro_recall": metrics["macro_recall"],
                     "status": ";".join(r.status for r in reports)})
    out = Path(args.out or Path(cfg["out_dir"]) / "alpha_sweep.json")
    _write_json(out, {"config": cfg.to_dict(), "stage": args.stage, "rows": rows})
    table = ["alpha,accuracy,macro_dice,macro_recall"]
    table += [f"{r['alpha']:g},{r['accuracy']:.4f},{r['macro_dice']:.4f},{r['macro_recall']:.4f}"
              for r in rows]
    _sibling(out, ".csv").write_text("\n".join(table) + "\n")
    print("\n".join(table))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    model = load_checkpoint(args.checkpoint)
    data = read_dataset_csv(args.data)
    metrics = evaluate(model, data)
    if args.out:
        _write_json(Path(args.out), metrics)
    print(json.dumps({k: metrics[k] for k in ("n", "accuracy", "macro_recall", "macro_dice")}))
    return EXIT_OK


def cmd_grad_check(args) -> int:
    if args.seeds < 1:
        raise UsageError("--seeds must be positive")
    results = run_all(args.seeds)
    print(format_table(results))
    return EXIT_OK if all(r.passed for r in results) else EXIT_NUMERICAL


def cmd_show_config(args) -> int:
    cfg = _config(args)
    if args.describe:
        for k in KEYS:
            print(f"# {k.doc}")
            print(f"{k.name} = {format_value(cfg[k.name])}")
    else:
        print(cfg.dumps(), end="")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="protoalign", description="Source-free domain adaptation on synthetic shifts.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def with_config(sp, seed=True):
        sp.add_argument("--config", help="config file, or a built-in scenario name (s1, s2, em_recovery)")
        if seed:
            sp.add_argument("--seed", type=int, help="override the config seed")
        return sp

    sp = with_config(sub.add_parser("gen-data", help="write the four dataset CSVs and a manifest"))
    sp.add_argument("--out", help="output directory (default: data_dir)")
    sp.set_defaults(func=cmd_gen_data)

    sp = with_config(sub.add_parser("pretrain", help="supervised source training"))
    sp.add_argument("--data", help="source training CSV (default: data_dir/source_train.csv)")
    sp.add_argument("--out", help="checkpoint path (default: out_dir/source.ckpt)")
    sp.add_argument("--log", help="training log JSON (default: next to the checkpoint)")
    sp.set_defaults(func=cmd_pretrain)

    sp = with_config(sub.add_parser("adapt", help="source-free adaptation of a checkpoint"))
    sp.add_argument("--checkpoint", required=True, help="source checkpoint")
    sp.add_argument("--target", help="target CSV; labels are ignored (default: data_dir/target_train.csv)")
    sp.add_argument("--eval", help="labelled CSV to evaluate the adapted model on")
    sp.add_argument("--stage", choices=STAGES, default="both")
    sp.add_argument("--alpha-sweep", metavar="A,B,...",
                    help="run once per alpha and emit an accuracy table instead of a checkpoint")
    sp.add_argument("--out", help="output checkpoint (or sweep JSON with --alpha-sweep)")
    sp.add_argument("--report", help="report JSON (default: next to the checkpoint)")
    sp.add_argument("--series", help="per-iteration CSV (default: next to the checkpoint)")
    sp.set_defaults(func=cmd_adapt)

    sp = sub.add_parser("evaluate", help="metrics report for a checkpoint on a labelled CSV")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--data", required=True, help="labelled CSV")
    sp.add_argument("--out", help="metrics JSON path")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("grad-check", help="finite-difference gradient suites")
    sp.add_argument("--seeds", type=int, default=20)
    sp.set_defaults(func=cmd_grad_check)

    sp = with_config(sub.add_parser("show-config", help="print the resolved configuration"), seed=True)
    sp.add_argument("--describe", action="store_true", help="include the documentation of every key")
    sp.set_defaults(func=cmd_show_config)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ProtoAlignError, ValueError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
