"""Command line interface: ``run``, ``sweep`` and ``analyze``."""
from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path
from typing import Optional, Sequence

from .core import PRESETS, PROTOCOL_IDS, derive_params, resolve_overrides
from .harness import (
    ExperimentConfig,
    result_row,
    rows_to_csv,
    run_seed,
    run_sweep,
    simulate,
    summarize,
    write_outputs,
)


def _size(text: str) -> int:
    """An integer, or a power of two written ``2^k``."""
    if "^" in text:
        base, exp = text.split("^", 1)
        return int(base) ** int(exp)
    return int(text)


def _override(text: str) -> tuple:
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    key, val = text.split("=", 1)
    try:
        return key.strip(), float(val)
    except ValueError as err:
        raise argparse.ArgumentTypeError(f"override value for {key!r} is not a number") from err


def _common(p: argparse.ArgumentParser, *, many_n: bool) -> None:
    # sweep leaves defaults unset so that a --config file can supply them
    p.add_argument("--protocol", choices=PROTOCOL_IDS, help="protocol id")
    if many_n:
        p.add_argument("--n", type=_size, nargs="+", help="population sizes (e.g. 1024 2^12)")
    else:
        p.add_argument("--n", type=_size, help="population size (e.g. 1024 or 2^12)")
    p.add_argument("--epsilon", type=float, default=None if many_n else 0.2,
                   help="advantage parameter in (0, 1/4); default 0.2")
    p.add_argument("--preset", choices=sorted(PRESETS), default=None if many_n else "desk",
                   help="named scale bundle; default desk")
    p.add_argument("--override", type=_override, action="append", default=[], metavar="KEY=VAL",
                   help="scale factor on top of the preset (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="memconsensus", description="Majority consensus simulations.")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="simulate single runs and print their metrics")
    _common(run, many_n=False)
    run.add_argument("--p", type=float, default=0.75, help="fraction of nodes holding the majority bit")
    run.add_argument("--seeds", type=int, default=1, help="number of runs")
    run.add_argument("--seed-base", type=int, default=0)
    run.add_argument("--horizon", type=float, default=None)
    run.add_argument("--audit", action="store_true", help="record observed states")
    run.add_argument("--out", type=Path, default=None, help="CSV path (a JSON sidecar is written next to it)")

    sweep = sub.add_parser("sweep", help="run a grid of (n, p, seed) and write CSV plus JSON sidecar")
    _common(sweep, many_n=True)
    sweep.add_argument("--p", type=float, nargs="+", default=None, help="majority fractions")
    sweep.add_argument("--seeds", type=int, default=None, help="repetitions per cell")
    sweep.add_argument("--seed-base", type=int, default=None)
    sweep.add_argument("--horizon", type=float, default=None)
    sweep.add_argument("--audit", action="store_true")
    sweep.add_argument("--config", type=Path, default=None, help="JSON config; flags given override it")
    sweep.add_argument("--workers", type=int, default=1, help="worker processes")
    sweep.add_argument("--out", type=Path, default=None, help="CSV path; stdout when omitted")

    an = sub.add_parser("analyze", help="reachable sets and state classification")
    _common(an, many_n=False)
    an.add_argument("--mode", choices=("async", "sync"), default=None, help="default: the protocol's model")
    an.add_argument("--round-exact", action="store_true",
                    help="synchronous recurrence that follows the round semantics exactly")
    an.add_argument("--max-states", type=int, default=None)
    an.add_argument("--out", type=Path, default=None, help="JSON report path")
    return ap


def _need(args, *names) -> None:
    missing = [f"--{n.replace('_', '-')}" for n in names if getattr(args, n) in (None, [])]
    if missing:
        raise SystemExit(f"error: missing {', '.join(missing)}")


def _cmd_run(args) -> int:
    _need(args, "protocol", "n")
    cfg = ExperimentConfig(
        protocol_id=args.protocol,
        n_list=(args.n,),
        p_list=(args.p,),
        epsilon=args.epsilon,
        seed_base=args.seed_base,
        repetitions=args.seeds,
        preset=args.preset,
        overrides=dict(args.override),
        horizon=args.horizon,
        audit=args.audit,
    )
    rows = []
    for rep in range(args.seeds):
        seed = run_seed(cfg.seed_base, cfg.protocol_id, args.n, args.p, rep)
        res = simulate(cfg.protocol_id, args.n, args.p, cfg.epsilon, seed,
                       preset=cfg.preset, overrides=cfg.overrides, horizon=cfg.horizon, audit=cfg.audit)
        row = result_row(cfg, args.n, args.p, rep, res)
        rows.append(row)
        print(json.dumps({k: (None if isinstance(v, float) and math.isinf(v) else v) for k, v in row.items()
                          if k not in ("csv_version", "error")}))
    if args.out is not None:
        write_outputs(cfg, rows, csv_path=args.out)
    return 0


def _cmd_sweep(args) -> int:
    base = {}
    if args.config is not None:
        base = ExperimentConfig.from_json(args.config.read_text(encoding="utf-8")).to_dict()
        base.pop("config_version", None)
    flags = {
        "protocol_id": args.protocol,
        "n_list": args.n,
        "p_list": args.p,
        "repetitions": args.seeds,
        "seed_base": args.seed_base,
        "horizon": args.horizon,
        "epsilon": args.epsilon,
        "preset": args.preset,
    }
    for k, v in flags.items():
        if v is not None:
            base[k] = v
    if args.override:
        base["overrides"] = {**base.get("overrides", {}), **dict(args.override)}
    if args.audit:
        base["audit"] = True
    if "protocol_id" not in base or "n_list" not in base:
        raise SystemExit("error: --protocol and --n are required unless given by --config")
    cfg = ExperimentConfig.from_dict(base)
    rows = run_sweep(cfg, workers=args.workers)
    out = args.out or (Path(cfg.out_csv) if cfg.out_csv else None)
    if out is None:
        sys.stdout.write(rows_to_csv(rows))
    else:
        write_outputs(cfg, rows, csv_path=out, json_path=cfg.out_json)
        for s in summarize(rows):
            print(json.dumps(s))
    return 0


def _cmd_analyze(args) -> int:
    _need(args, "protocol", "n")
    from . import analyzer
    from .protocols import build_protocol

    scales = resolve_overrides(args.protocol, args.preset, dict(args.override))
    protocol = build_protocol(derive_params(args.protocol, args.n, args.epsilon, scales))
    kw = {} if args.max_states is None else {"max_states": args.max_states}
    report = analyzer.analyze(protocol, args.mode, round_exact=args.round_exact, **kw)
    data = report.to_dict(protocol)
    if args.out is not None:
        args.out.write_text(json.dumps(data, indent=1), encoding="utf-8")
    summary = {k: data[k] for k in ("protocol", "async_mode", "fixed_point_index", "period", "counts")}
    summary["universe_size"] = protocol.universe_size
    print(json.dumps(summary))
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "sweep":
            return _cmd_sweep(args)
        return _cmd_analyze(args)
    except ValueError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
