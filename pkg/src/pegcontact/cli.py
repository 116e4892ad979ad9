"""Command line entry point.

All commands share one run directory (``--out``)::

    OUT/data/        collect
    OUT/model/       train (model.bin, history.csv, train_report.txt)
    OUT/crosssize/   crosssize
    OUT/assemble/    assemble
    OUT/render/      render
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

from . import harness
from .classifier import load_model
from .config import RunConfig, dump_config, load_config
from .errors import PegContactError


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.episodes is not None:
        cfg = replace(cfg, data=replace(cfg.data, num_episodes=args.episodes))
    if args.trials is not None:
        cfg = replace(cfg, trials=args.trials)
    return cfg.validate()


def _out(args, cfg: RunConfig) -> Path:
    return Path(args.out if args.out else cfg.output_dir)


def _model(args, out: Path, cfg: RunConfig):
    path = Path(args.model) if args.model else out / "model" / "model.bin"
    return load_model(path, cfg.geometry.build().num_classes)


def cmd_collect(args) -> int:
    cfg = _config(args)
    out = _out(args, cfg)
    t0 = time.perf_counter()
    data = harness.collect(cfg, out / "data", workers=args.workers,
                           write_traces=not args.no_traces)
    (out / "data" / "config_snapshot.cfg").write_text(dump_config(cfg))
    print(f"collected {len(data)} episodes in {time.perf_counter() - t0:.1f} s")
    print("label histogram:", " ".join(str(v) for v in harness.label_histogram(data)))
    return 0


def cmd_train(args) -> int:
    cfg = _config(args)
    out = _out(args, cfg)
    geom = cfg.geometry.build()
    data = harness.load_dataset(out / "data", geom.num_classes)
    _, report = harness.train_model(cfg, data, out / "model", geom)
    print(report.text(), end="")
    return 0


def cmd_crosssize(args) -> int:
    cfg = _config(args)
    out = _out(args, cfg)
    model = _model(args, out, cfg)
    acc, _ = harness.crosssize(cfg, model, out / "crosssize", workers=args.workers)
    print(f"cross-size accuracy ({cfg.alt.shape} {cfg.alt.hole_side * 1e3:g} mm): {acc:.4f}")
    return 0


def cmd_assemble(args) -> int:
    cfg = _config(args)
    out = _out(args, cfg)
    model = _model(args, out, cfg)
    report = harness.assemble(cfg, model, out / "assemble", workers=args.workers)
    print((out / "assemble" / "report.txt").read_text(), end="")
    print(f"wall clock: {report.timings['assemble_seconds']:.1f} s")
    return 0


def cmd_render(args) -> int:
    cfg = _config(args)
    out = _out(args, cfg)
    paths = harness.render(args.input, out / "render")
    print(f"wrote {len(paths)} images to {out / 'render'}")
    return 0


def cmd_check(args) -> int:
    from .oracles import run_all

    ok = True
    for name, passed, detail in run_all(seed=args.seed or 0):
        ok &= passed
        print(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pegcontact",
                                description="Contact-pattern peg-in-hole simulation and learning")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="run directory (default: output_dir from the config)")
    common.add_argument("--trials", type=int, help="assembly trials")
    common.add_argument("--episodes", type=int, help="collection episodes")
    common.add_argument("--model", help="model file (default OUT/model/model.bin)")
    common.add_argument("--workers", type=int, default=1, help="worker processes")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    c = sub.add_parser("collect", parents=[common], help="approach + sweep episodes to a dataset")
    c.add_argument("--no-traces", action="store_true", help="skip per-episode trace CSVs")
    c.set_defaults(func=cmd_collect)
    sub.add_parser("train", parents=[common], help="train the classifier on OUT/data"
                   ).set_defaults(func=cmd_train)
    sub.add_parser("crosssize", parents=[common], help="evaluate on the alternate geometry"
                   ).set_defaults(func=cmd_crosssize)
    sub.add_parser("assemble", parents=[common], help="full assembly trials"
                   ).set_defaults(func=cmd_assemble)
    r = sub.add_parser("render", parents=[common], help="trace CSV or pattern .npy to PGM images")
    r.add_argument("input")
    r.set_defaults(func=cmd_render)
    sub.add_parser("check", parents=[common], help="run the built-in oracle checks"
                   ).set_defaults(func=cmd_check)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (PegContactError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
