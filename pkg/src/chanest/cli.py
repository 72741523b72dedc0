"""Command-line entry points: run, summarize, replay."""

from __future__ import annotations

import argparse
import sys

from .errors import ChanestError
from .harness import (
    parse_config,
    read_records,
    replay_row,
    run_experiment,
    summarize,
    write_summary_csv,
)


def _cmd_run(args) -> int:
    cfg = parse_config(args.config, args.override)
    records = run_experiment(cfg, progress=not args.quiet)
    n_err = sum(1 for r in records if isinstance(r.nmse_db, str))
    print(f"wrote {len(records)} rows to {cfg.output_path} ({n_err} errors)")
    return 0


def _cmd_summarize(args) -> int:
    rows = summarize(read_records(args.input))
    write_summary_csv(args.output, rows)
    print(f"wrote {len(rows)} summary rows to {args.output}")
    return 0


def _cmd_replay(args) -> int:
    cfg = parse_config(args.config, args.override)
    orig, new = replay_row(cfg, args.row)
    match = float(orig.nmse_db) == float(new.nmse_db)
    print(f"row {args.row}: recorded nmse_db={orig.nmse_db!r} replayed nmse_db={new.nmse_db!r}")
    print("bit-exact" if match else "MISMATCH")
    return 0 if match else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="chanest",
        description="Quantized MIMO channel estimation experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run the configured experiment sweep")
    p_run.add_argument("--config", required=True, help="flat key=value config file")
    p_run.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config entry (repeatable)")
    p_run.add_argument("--quiet", action="store_true", help="suppress progress lines")
    p_run.set_defaults(func=_cmd_run)

    p_sum = sub.add_parser("summarize", help="aggregate a results CSV into per-cell means")
    p_sum.add_argument("--in", dest="input", required=True)
    p_sum.add_argument("--out", dest="output", required=True)
    p_sum.set_defaults(func=_cmd_summarize)

    p_rep = sub.add_parser("replay", help="recompute one CSV row and check bit-exactness")
    p_rep.add_argument("--config", required=True)
    p_rep.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")
    p_rep.add_argument("--row", type=int, required=True, help="0-based data row index")
    p_rep.set_defaults(func=_cmd_replay)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ChanestError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
