"""Command-line entry point: ``nrvqa train | eval | score | ablate``.

Exit codes: 0 success, 1 partial failure or unexpected error, 2 config,
3 data, 4 numeric, 5 I/O (checkpoints, weights, output files).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import config_keys, load_config
from .data import ClipLoader, VideoRecord, load_manifest, ingest_vmaf_scores
from .errors import DataError, NRVQAError
from .training import evaluate, fit, load_checkpoint, predict, prepare_records, run_ablation

logger = logging.getLogger("nrvqa")

EXIT_PARTIAL = 1
EXIT_IO = 5


def _keys_epilog() -> str:
    lines = ["config keys (usable in the config file and as key=value overrides):"]
    for key, default in config_keys():
        lines.append(f"  {key:<28} default: {json.dumps(default)}")
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    epilog = _keys_epilog()
    fmt = argparse.RawDescriptionHelpFormatter
    parser = argparse.ArgumentParser(prog="nrvqa", description=__doc__, epilog=epilog, formatter_class=fmt)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model", epilog=epilog, formatter_class=fmt)
    p.add_argument("--config", required=True, help="YAML or JSON config file")
    p.add_argument("overrides", nargs="*", metavar="key=value", help="config overrides")

    p = sub.add_parser("eval", help="evaluate a checkpoint", epilog=epilog, formatter_class=fmt)
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--output", help="write the EvalReport JSON record here")
    p.add_argument("--split", choices=("val", "all"), default="val",
                   help="'val': validation manifest or held-out split; 'all': every manifest record")
    p.add_argument("--logistic", action="store_true", help="PLCC after a 4-parameter logistic fit")
    p.add_argument("overrides", nargs="*", metavar="key=value")

    p = sub.add_parser("score", help="score videos with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--output", help="write 'video_id,score' lines here instead of stdout")
    p.add_argument("--backbone-weights", help="relocated pretrained backbone weights")
    p.add_argument("videos", nargs="+")

    p = sub.add_parser("ablate", help="full objective vs MSE + L1 only", epilog=epilog, formatter_class=fmt)
    p.add_argument("--config", required=True)
    p.add_argument("--output", help="comparison table path (default <checkpoint_dir>/ablation.csv)")
    p.add_argument("overrides", nargs="*", metavar="key=value")
    return parser


def run_train(args) -> int:
    cfg = load_config(args.config, args.overrides)
    result = fit(cfg)
    rep = result.final_report
    print(f"trained {result.state.epoch} epochs, {result.state.step} steps; "
          f"final srocc={rep.srocc:.4f} plcc={rep.plcc:.4f}; checkpoints in {cfg.checkpoint_dir}")
    return 0


def run_eval(args) -> int:
    cfg = load_config(args.config, args.overrides)
    loaded = load_checkpoint(args.checkpoint, expected=cfg, backbone_weights=cfg.model.backbone_weights)
    if args.split == "all":
        records = load_manifest(cfg.data.manifest) if cfg.data.manifest else []
        if cfg.data.vmaf_scores:
            records = ingest_vmaf_scores(cfg.data.vmaf_scores, records).records
    else:
        train, val = prepare_records(cfg)
        records = val or train
    if not records:
        raise DataError("no records to evaluate")
    loader = ClipLoader(cfg.data.frame_count, tuple(cfg.model.input_size), cfg.data.workers)
    report = evaluate(loaded.model, records, loader, apply_logistic=args.logistic)
    record = {"checkpoint": str(args.checkpoint), "split": args.split, **report.as_dict()}
    if args.output:
        _write(args.output, json.dumps(record) + "\n")
    print(f"n={report.n} srocc={report.srocc:.4f} plcc={report.plcc:.4f}"
          + (" (undefined: constant predictions)" if report.undefined else ""))
    return 0


def run_score(args) -> int:
    loaded = load_checkpoint(args.checkpoint, backbone_weights=args.backbone_weights)
    cfg = loaded.config
    loader = ClipLoader(cfg.data.frame_count, tuple(cfg.model.input_size))
    lines, failures = [], 0
    for video in args.videos:
        path = Path(video)
        record = VideoRecord(path.stem, path, 1, 0)
        try:
            score = float(predict(loaded.model, [record], loader)[0])
        except DataError as exc:
            failures += 1
            print(f"nrvqa score error: {video}: {exc}", file=sys.stderr)
            continue
        lines.append(f"{record.video_id},{score:.6f}")
    text = "video_id,score\n" + "".join(line + "\n" for line in lines)
    if args.output:
        _write(args.output, text)
    else:
        sys.stdout.write(text)
    if failures == len(args.videos):
        return DataError.exit_code
    return EXIT_PARTIAL if failures else 0


def run_ablate(args) -> int:
    cfg = load_config(args.config, args.overrides)
    result = run_ablation(cfg)
    table = result.to_table()
    out = Path(args.output) if args.output else Path(cfg.checkpoint_dir) / "ablation.csv"
    _write(out, table)
    orders = result.batch_orders()
    _write(Path(cfg.checkpoint_dir) / "batch_order.json", json.dumps(orders))
    sys.stdout.write(table)
    return 0


def _write(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


COMMANDS = {"train": run_train, "eval": run_eval, "score": run_score, "ablate": run_ablate}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except NRVQAError as exc:
        print(f"nrvqa {args.command} failed [{exc.stage}]: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"nrvqa {args.command} failed [io]: {exc}", file=sys.stderr)
        return EXIT_IO
    except Exception as exc:  # last-resort one-line diagnostic instead of a traceback
        print(f"nrvqa {args.command} failed [internal]: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
