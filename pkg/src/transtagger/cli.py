"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig
from .data import label_posts, load_pois, load_posts, save_pois, save_posts, split
from .grid import run_grid
from .synth import SynthConfig, gen_synthetic
from .training import evaluate, train

log = logging.getLogger("transtagger")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="transtagger", description="POI-level post geolocation with transformer feature fusion.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("gen-synth", help="generate a synthetic POI list and post corpus")
    p.add_argument("--config", help="SynthConfig JSON (defaults if omitted)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int)

    p = sub.add_parser("prepare", help="label posts with their nearest POI within 100 m")
    p.add_argument("--posts", required=True)
    p.add_argument("--pois", required=True)
    p.add_argument("--out", required=True, help="labelled posts (JSON lines)")

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    p.add_argument("--config", help="RunConfig JSON (defaults if omitted)")
    p.add_argument("--data", help="labelled posts; overrides config")
    p.add_argument("--pois", help="POI file; overrides config")
    p.add_argument("--out", help="checkpoint directory; overrides config")
    p.add_argument("--seed", type=int)

    p = sub.add_parser("eval", help="evaluate a checkpoint on labelled posts")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", help="write the report as JSON here too")

    p = sub.add_parser("grid", help="run the representation x ablation grid")
    p.add_argument("--config", help="RunConfig JSON (defaults if omitted)")
    p.add_argument("--data", help="labelled posts; overrides config")
    p.add_argument("--pois", help="POI file; overrides config")
    p.add_argument("--out", help="output directory; overrides config")
    p.add_argument("--seed", type=int)
    return parser


def _run_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    for key in ("data", "pois", "out"):
        if getattr(args, key) is not None:
            setattr(cfg, key, getattr(args, key))
    if args.seed is not None:
        cfg.seed = args.seed
    missing = [k for k in ("data", "pois", "out") if getattr(cfg, k) is None]
    if missing:
        raise UsageError(f"missing {', '.join('--' + k for k in missing)} (or set them in --config)")
    return cfg


def _splits(cfg: RunConfig):
    posts = load_posts(cfg.data)
    pois = load_pois(cfg.pois)
    train_posts, val_posts, test_posts = split(posts, cfg.split, cfg.seed)
    return pois, train_posts, val_posts, test_posts


def cmd_gen_synth(args) -> None:
    cfg = SynthConfig.from_dict(json.loads(Path(args.config).read_text())) if args.config else SynthConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    pois, posts = gen_synthetic(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_pois(pois, out / "pois.json")
    # labels are recovered by `prepare`, as they would be for crawled data
    for p in posts:
        p.label = None
    save_posts(posts, out / "posts.jsonl")
    print(f"wrote {len(pois)} POIs and {len(posts)} posts to {out}")


def cmd_prepare(args) -> None:
    posts = load_posts(args.posts)
    pois = load_pois(args.pois)
    labeled = label_posts(posts, pois)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    save_posts(labeled, args.out)
    print(f"labelled {len(labeled)} of {len(posts)} posts ({len(posts) - len(labeled)} dropped) -> {args.out}")


def cmd_train(args) -> None:
    cfg = _run_config(args)
    pois, train_posts, val_posts, test_posts = _splits(cfg)
    result = train(cfg, train_posts, val_posts, pois)
    out = Path(cfg.out)
    save_checkpoint(result.tagger, out)
    save_posts(val_posts, out / "val.jsonl")
    save_posts(test_posts, out / "test.jsonl")
    with open(out / "history.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["epoch", "batch_loss", "train_loss", "val_acc1"], lineterminator="\n")
        writer.writeheader()
        writer.writerows(result.history)
    print(f"initial loss: {result.initial_loss}")
    for row in result.history:
        print(f"epoch {row['epoch']}: train_loss={row['train_loss']:.4f} val_acc1={row['val_acc1']:.4f}")
    print(f"checkpoint written to {out}")


def cmd_eval(args) -> None:
    tagger = load_checkpoint(args.checkpoint)
    report = evaluate(tagger, load_posts(args.data))
    text = json.dumps(report.as_dict(), indent=2)
    print(text)
    if args.out:
        Path(args.out).write_text(text + "\n")


def cmd_grid(args) -> None:
    cfg = _run_config(args)
    pois, train_posts, val_posts, _ = _splits(cfg)
    report = run_grid(cfg, train_posts, val_posts, pois)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "grid.txt").write_text(report.to_text() + "\n")
    (out / "grid.csv").write_text(report.to_csv())
    print(report.to_text())


COMMANDS = {
    "gen-synth": cmd_gen_synth,
    "prepare": cmd_prepare,
    "train": cmd_train,
    "eval": cmd_eval,
    "grid": cmd_grid,
}


def main(argv=None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help(sys.stderr)
            return 1
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"transtagger {args.command}: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - report and map to exit code 2
        log.debug("command failed", exc_info=True)
        print(f"transtagger {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
