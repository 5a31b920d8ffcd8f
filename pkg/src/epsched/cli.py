"""Command-line entry point: ``epsched {run,matrix,emit,report-delay,gradcheck}``."""

from __future__ import annotations

import argparse
import glob
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from .errors import ConfigError, ContractError
from .gradcheck import gradcheck_suite
from .harness import delay_severity_report, emit_curves, load_config, load_record, matrix, run
from .harness.figures import FORMATS

OUT_ENV = "EPSCHED_OUT"
GRADCHECK_TOL = 1e-4


def _out(args) -> Path:
    return Path(args.out or os.environ.get(OUT_ENV) or "epsched-out")


def _config(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seeds=(args.seed,))
    return cfg


def cmd_run(args) -> int:
    rec = run(_config(args), _out(args))
    s = rec.summary()
    print(f"{rec.directory}")
    print(f"clean {s['clean']:.4f}  adv {s['adv']:.4f}  e_adv {s['e_adv']:.4f}")
    return 0


def cmd_matrix(args) -> int:
    res = matrix(_config(args), _out(args), workers=args.workers)
    for r in res.rows:
        if r.status == "complete":
            flag = "  near-chance" if r.near_chance else ""
            print(f"{r.schedule:>16} {r.task:>8} {r.eps:>9}  clean {r.clean:.4f}  adv {r.adv:.4f}  e_adv {r.e_adv:.4f}{flag}")
        else:
            print(f"{r.schedule:>16} {r.task:>8} {r.eps:>9}  FAILED {r.error}")
    for w in res.winners:
        print(f"wins {w['metric']:>6} {w['schedule']:>16} {w['wins']}/{w['groups']}")
    print(res.directory)
    return 0 if all(r.status == "complete" for r in res.rows) else 1


def cmd_emit(args) -> int:
    for p in emit_curves(load_record(args.record), args.format, args.dest):
        print(p)
    return 0


def cmd_report_delay(args) -> int:
    paths = sorted(glob.glob(args.pattern, recursive=True))
    records = [load_record(p) for p in paths if Path(p).is_dir() or Path(p).name == "record.json"]
    rep = delay_severity_report(records)
    if args.csv:
        rep.write(args.csv)
    for r in rep.rows:
        mark = "" if r.adapted else " (never adapted)"
        print(f"{r.name} seed={r.seed} eps={r.eps:.4g} delay={r.delay_epoch}{mark} final_clean={r.final_clean:.4f} severity={r.severity:.4f}")
    print(f"pearson(delay, final_clean) = {rep.correlation:.4f}")
    return 0


def cmd_gradcheck(args) -> int:
    seeds = range(args.seed, args.seed + 10) if args.seed is not None else range(10)
    worst = gradcheck_suite(seeds)
    for name, err in worst.items():
        print(f"{name:24s} {err:.3e}")
    ok = max(worst.values()) < GRADCHECK_TOL
    print("ok" if ok else "FAILED")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="run a single seed instead of the config's list")
    common.add_argument("--out", help=f"output root (default: ${OUT_ENV} or ./epsched-out)")
    common.add_argument("--workers", type=int, default=1, help="parallel matrix cells")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="epsched", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("run", parents=[common], help="run one experiment")
    s.add_argument("config")
    s.set_defaults(fn=cmd_run)
    s = sub.add_parser("matrix", parents=[common], help="run a schedule x task x eps grid")
    s.add_argument("config")
    s.set_defaults(fn=cmd_matrix)
    s = sub.add_parser("emit", parents=[common], help="write curve CSVs or an SVG chart for a record")
    s.add_argument("record", help="record directory or its record.json")
    s.add_argument("--format", choices=FORMATS, default="csv")
    s.add_argument("--dest", help="directory for the files (default: <record>/figures)")
    s.set_defaults(fn=cmd_emit)
    s = sub.add_parser("report-delay", parents=[common], help="delay vs final clean accuracy over records")
    s.add_argument("pattern", help="glob matching record directories, e.g. 'out/runs/*'")
    s.add_argument("--csv", help="also write the table here")
    s.set_defaults(fn=cmd_report_delay)
    s = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of all gradients")
    s.set_defaults(fn=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except (ConfigError, ContractError, FileNotFoundError) as exc:
        print(f"epsched: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
