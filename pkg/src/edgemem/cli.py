"""Command line entry point: ``edgemem {ingest,query,bench,feasibility}``.

Exit status is 0 only on full success; errors go to stderr.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .config import ConfigError, PipelineConfig, load_config, parse_override, validate_config
from .pipeline import load_memory_config, run_ingestion, run_query
from .simulator import STRATEGIES, Scenario, check_realtime_feasibility, measure_sparsification, simulate_strategies
from .sources import StreamSource

log = logging.getLogger("edgemem")


def _config(args, memory: Optional[str] = None) -> PipelineConfig:
    overrides = dict(parse_override(s) for s in args.set or ())
    if args.config:
        return load_config(args.config, overrides)
    base = (load_memory_config(memory) if memory else None) or PipelineConfig()
    return base.with_overrides(overrides) if overrides else base


def _source(spec: str, fps: Optional[float]) -> StreamSource:
    if spec.startswith("synthetic:"):
        src = StreamSource.from_file(spec[len("synthetic:"):])
        return src if fps is None else StreamSource.from_dict({**src.to_dict(), "fps": fps})
    return StreamSource.image_directory(spec, fps or 1.0)


def _emit(obj, args, text: str) -> None:
    if getattr(args, "json", False):
        print(json.dumps(obj, sort_keys=True))
    else:
        print(text)


def cmd_ingest(args) -> int:
    config = _config(args)
    report, store = run_ingestion(_source(args.source, args.fps), config, args.memory)
    d = report.to_dict(include_timings=not args.no_timings)
    _emit(d, args, f"ingested {report.frames} frames -> {report.partitions} partitions, "
                   f"{report.indexed_frames} indexed frames (ratio {d['sparsification_ratio']})")
    return 0


def cmd_query(args) -> int:
    overrides = {}
    if args.strategy:
        overrides["retrieval.strategy"] = args.strategy
    if args.seed is not None:
        overrides["retrieval.seed"] = args.seed
    config = _config(args, args.memory)
    if overrides:
        config = config.with_overrides(overrides)
    rec = run_query(args.text, args.memory, config, arrival_s=args.arrival)
    d = rec.to_dict(include_timings=not args.no_timings)
    _emit(d, args, f"{len(rec.result.keyframe_ids)} keyframes {list(rec.result.keyframe_ids)}; "
                   f"latency {rec.latency.total_s:.3f}s; answer: {rec.answer or rec.error}")
    return 0 if rec.error is None else 1


def cmd_bench(args) -> int:
    scenario = Scenario.from_file(args.scenario)
    strategies = [s.strip() for s in args.strategies.split(",") if s.strip()]
    config = validate_config(scenario.config)
    if args.set:
        config = config.with_overrides(dict(parse_override(s) for s in args.set))
    report = simulate_strategies(scenario, strategies=strategies, config=config)
    d = report.to_dict()
    if not args.per_query:
        d.pop("per_query")
    text = json.dumps(d, indent=1, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    lines = [f"{'strategy':15s} {'frames':>10s} {'bytes':>14s} {'total_s':>10s} {'hit_rate':>8s}"]
    for name, row in report.rows.items():
        hr = "-" if row.hit_rate is None else f"{row.hit_rate:.3f}"
        lines.append(f"{name:15s} {row.frames_sent:10.2f} {row.bytes_sent:14.0f} {row.total_s:10.3f} {hr:>8s}")
    _emit(d, args, "\n".join(lines))
    return 0


def cmd_feasibility(args) -> int:
    profile = json.loads(Path(args.profile).read_text("utf-8"))
    ratio = profile.pop("sparsification_ratio", None)
    cost = validate_config({"simulator": profile}).simulator
    if args.scenario:
        ratio = measure_sparsification(Scenario.from_file(args.scenario).stream)
    if args.per_frame:
        ratio = None
    lo, hi = (float(x) for x in args.fps_range.split(":"))
    fps = np.round(np.arange(lo, hi + args.step / 2, args.step), 6).tolist()
    report = check_realtime_feasibility(fps, cost, ratio)
    lines = [f"max sustainable fps: {report.max_sustainable_fps:.3f}"]
    lines += [f"{r.fps:8.2f} fps  util {r.utilization:8.3f}  {'ok' if r.sustainable else 'backlog'}"
              for r in report.rows]
    _emit(report.to_dict(), args, "\n".join(lines))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="edgemem", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        sp.add_argument("--json", action="store_true", help="machine-readable output")
        if config:
            sp.add_argument("--config", help="TOML or JSON configuration file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override one configuration key, e.g. retrieval.temperature=0.5")

    sp = sub.add_parser("ingest", help="segment, cluster, embed and store a stream")
    sp.add_argument("--source", required=True, help="image directory or synthetic:<script.json>")
    sp.add_argument("--memory", required=True, help="memory root directory")
    sp.add_argument("--fps", type=float, help="stream rate override")
    sp.add_argument("--no-timings", action="store_true", help="omit wall-clock fields")
    common(sp)
    sp.set_defaults(func=cmd_ingest)

    sp = sub.add_parser("query", help="retrieve keyframes for a text query")
    sp.add_argument("--memory", required=True)
    sp.add_argument("--text", required=True)
    sp.add_argument("--strategy", choices=["akr", "fixed", "topk"])
    sp.add_argument("--seed", type=int)
    sp.add_argument("--arrival", type=float, help="query arrival time in stream seconds")
    sp.add_argument("--no-timings", action="store_true", help="omit wall-clock fields")
    common(sp)
    sp.set_defaults(func=cmd_query)

    sp = sub.add_parser("bench", help="compare strategies on a scenario")
    sp.add_argument("--scenario", required=True)
    sp.add_argument("--strategies", default=",".join(STRATEGIES))
    sp.add_argument("--out")
    sp.add_argument("--per-query", action="store_true", help="include per-query rows in the report")
    common(sp, config=False)
    sp.set_defaults(func=cmd_bench)

    sp = sub.add_parser("feasibility", help="real-time ingestion check over an FPS sweep")
    sp.add_argument("--profile", required=True, help="device cost profile (JSON)")
    sp.add_argument("--fps-range", required=True, metavar="LO:HI")
    sp.add_argument("--step", type=float, default=1.0)
    sp.add_argument("--scenario", help="measure the sparsification ratio on this scenario's stream")
    sp.add_argument("--per-frame", action="store_true", help="embed every frame (no sparsification)")
    sp.add_argument("--json", action="store_true")
    sp.set_defaults(func=cmd_feasibility)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return 2
    except Exception as exc:
        if args.verbose:
            log.exception("command failed")
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
